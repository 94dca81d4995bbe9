//! Register assignments of the command protocol between a control connection and the controller.
//!
//! | register            | meaning                                                    |
//! |---------------------|------------------------------------------------------------|
//! | `input_int[0]`      | opcode                                                     |
//! | `input_int[1]`      | sequence number; a new value starts a command              |
//! | `input_int[2]`      | async flag (non-zero: asynchronous)                        |
//! | `input_float[0..6]` | joint targets, pose target or twist                        |
//! | `input_float[6]`    | speed                                                      |
//! | `input_float[7]`    | acceleration (deceleration for STOPJ)                      |
//! | `input_float[18]`   | extension trigger (extension id)                           |
//! | `output_int[0]`     | sequence number of the last successfully completed command |
//! | `output_int[1]`     | error code of the last failed command                      |
//! | `output_int[2]`     | sequence number the error code refers to                   |
//! | `output_int[3]`     | contact flag of the last MOVE_UNTIL_CONTACT                |
//! | `output_float[18]`  | extension completion (id, or −id when the snippet failed)  |
//!
//! Registers 19–23 of every bank are free for extension parameters and results.

use crate::wire::REGISTER_COUNT;

pub const OPCODE_REG: usize = 0;
pub const SEQ_REG: usize = 1;
pub const ASYNC_REG: usize = 2;
pub const TARGET_REGS: std::ops::Range<usize> = 0..6;
pub const SPEED_REG: usize = 6;
pub const ACCEL_REG: usize = 7;

pub const DONE_SEQ_REG: usize = 0;
pub const ERROR_CODE_REG: usize = 1;
pub const ERROR_SEQ_REG: usize = 2;
pub const CONTACT_REG: usize = 3;

/// Registers of each bank reserved for extensions (trigger/completion at 18, parameters from 19).
pub const EXTENSION_REGS: std::ops::Range<usize> = 18..REGISTER_COUNT;

/// Wrench norm (N) at which MOVE_UNTIL_CONTACT reports contact. Deliberately not a parameter.
pub const CONTACT_THRESHOLD: f64 = 10.0;
/// Joint deceleration (rad/s²) MOVE_UNTIL_CONTACT uses to stop.
pub const CONTACT_DECEL: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Opcode {
    Noop = 0,
    MoveJ = 1,
    MoveL = 2,
    ServoJ = 3,
    StopJ = 4,
    ZeroFt = 5,
    MoveUntilContact = 6,
}

impl Opcode {
    pub fn from_code(code: i32) -> Option<Opcode> {
        Some(match code {
            0 => Opcode::Noop,
            1 => Opcode::MoveJ,
            2 => Opcode::MoveL,
            3 => Opcode::ServoJ,
            4 => Opcode::StopJ,
            5 => Opcode::ZeroFt,
            6 => Opcode::MoveUntilContact,
            _ => return None,
        })
    }
}

/// Values of `output_int[1]`.
pub mod error_code {
    pub const NONE: i32 = 0;
    pub const UNKNOWN_OPCODE: i32 = 1;
    /// A synchronous command is still running.
    pub const BUSY: i32 = 2;
    /// An asynchronous command was replaced by a newer one.
    pub const PREEMPTED: i32 = 3;
    pub const INVALID_TARGET: i32 = 4;
    pub const INVALID_PARAMETER: i32 = 5;
    /// Cartesian tracking diverged or did not settle on the target.
    pub const TRACKING: i32 = 6;

    pub fn describe(code: i32) -> &'static str {
        match code {
            NONE => "no error",
            UNKNOWN_OPCODE => "unknown opcode",
            BUSY => "busy: a synchronous command is running",
            PREEMPTED => "preempted by a newer command",
            INVALID_TARGET => "invalid target",
            INVALID_PARAMETER => "invalid parameter",
            TRACKING => "tracking error",
            _ => "unrecognized error code",
        }
    }
}

fn int_regs(idx: impl IntoIterator<Item = usize>, prefix: &str) -> Vec<String> {
    idx.into_iter().map(|i| format!("{prefix}{i}")).collect()
}

/// Input fields a control connection writes.
pub fn control_input_fields() -> Vec<String> {
    let mut v = int_regs([0, 1, 2], "input_int_register_");
    v.extend(int_regs(EXTENSION_REGS, "input_int_register_"));
    v.extend(int_regs(0..8, "input_double_register_"));
    v.extend(int_regs(EXTENSION_REGS, "input_double_register_"));
    v.push("standard_digital_output_mask".into());
    v.push("standard_digital_output".into());
    v
}

/// Output fields a control connection receives after every step.
pub fn control_output_fields() -> Vec<String> {
    let mut v: Vec<String> = [
        "timestamp",
        "actual_q",
        "actual_qd",
        "actual_TCP_pose",
        "actual_TCP_force",
        "actual_digital_input_bits",
        "actual_digital_output_bits",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    v.extend(int_regs(0..4, "output_int_register_"));
    v.extend(int_regs(EXTENSION_REGS, "output_int_register_"));
    v.extend(int_regs(EXTENSION_REGS, "output_double_register_"));
    v
}

/// The input field whose presence in a recipe claims the control role.
pub const CONTROL_CLAIM_FIELD: &str = "input_int_register_0";
