//! Client sessions for the controller: exclusive control, state receive, I/O and dashboard.

mod control;
mod dashboard;
mod io;
mod link;
mod receive;
mod script;

pub use control::{CommandOutcome, ControlSession};
pub use dashboard::DashboardSession;
pub use io::IoSession;
pub use receive::{default_fields, ReceiveSession};
pub use script::ControlScript;

use crate::kinematics::Pose6;
use crate::wire::{FieldValue, Recipe, WireError, REGISTER_COUNT};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("controller refused protocol version {0}")]
    VersionRefused(u16),
    #[error("control connection refused: {0}")]
    ControlBusy(String),
    #[error("recipe rejected: {0}")]
    RecipeRejected(String),
    #[error("control script rejected: {0}")]
    ScriptRejected(String),
    #[error("command {seq} failed with error {code}: {message}")]
    Command { seq: i32, code: i32, message: &'static str },
    #[error("timed out after {ticks} ticks waiting for {what}")]
    Timeout { what: String, ticks: u64 },
    #[error("extension {0} reported failure")]
    ExtensionFailed(u32),
    #[error("no data received yet")]
    NoData,
    #[error("digital output pin {0} out of range 0..=7")]
    PinOutOfRange(u8),
    #[error("register {0} is not part of the session recipe")]
    RegisterNotInRecipe(String),
    #[error("operation cancelled")]
    Cancelled,
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("connection closed by controller")]
    Closed,
}

/// Robot state decoded from one data package.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct RobotSnapshot {
    pub timestamp: f64,
    pub q: [f64; 6],
    pub qd: [f64; 6],
    pub tcp_pose: Pose6,
    pub tcp_force: [f64; 6],
    pub digital_in: u64,
    pub digital_out: u64,
    pub output_int: [i32; REGISTER_COUNT],
    pub output_float: [f64; REGISTER_COUNT],
}

impl Default for RobotSnapshot {
    fn default() -> Self {
        RobotSnapshot {
            timestamp: 0.0,
            q: [0.0; 6],
            qd: [0.0; 6],
            tcp_pose: Pose6::identity(),
            tcp_force: [0.0; 6],
            digital_in: 0,
            digital_out: 0,
            output_int: [0; REGISTER_COUNT],
            output_float: [0.0; REGISTER_COUNT],
        }
    }
}

impl RobotSnapshot {
    /// Fills the fields present in `recipe`; absent ones stay zero.
    pub fn from_values(recipe: &Recipe, values: &[FieldValue]) -> RobotSnapshot {
        let mut s = RobotSnapshot::default();
        for (spec, value) in recipe.fields.iter().zip(values) {
            match (spec.name.as_str(), *value) {
                ("timestamp", FieldValue::Double(v)) => s.timestamp = v,
                ("actual_q", FieldValue::Vector6D(v)) => s.q = v,
                ("actual_qd", FieldValue::Vector6D(v)) => s.qd = v,
                ("actual_TCP_pose", FieldValue::Vector6D(v)) => s.tcp_pose = Pose6::from_array(v),
                ("actual_TCP_force", FieldValue::Vector6D(v)) => s.tcp_force = v,
                ("actual_digital_input_bits", FieldValue::UInt64(v)) => s.digital_in = v,
                ("actual_digital_output_bits", FieldValue::UInt64(v)) => s.digital_out = v,
                (name, FieldValue::Int32(v)) => {
                    if let Some(i) = index_of(name, "output_int_register_") {
                        s.output_int[i] = v;
                    }
                }
                (name, FieldValue::Double(v)) => {
                    if let Some(i) = index_of(name, "output_double_register_") {
                        s.output_float[i] = v;
                    }
                }
                _ => {}
            }
        }
        s
    }
}

fn index_of(name: &str, prefix: &str) -> Option<usize> {
    name.strip_prefix(prefix)?.parse().ok().filter(|i| *i < REGISTER_COUNT)
}
