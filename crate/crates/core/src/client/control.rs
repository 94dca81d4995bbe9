use std::net::ToSocketAddrs;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Mutex, MutexGuard};

use super::link::Link;
use super::{ClientError, RobotSnapshot};
use crate::controller::layout::{self, error_code, Opcode};
use crate::kinematics::Pose6;
use crate::wire::messages::{parse_start_reply, ScriptReply};
use crate::wire::{Bank, FieldValue, PacketType, Recipe, Register, RegisterValue, EXTENSION_TRIGGER_REGISTER};

/// Output-recipe frequency requested by control sessions; replies are per request anyway.
const CONTROL_FREQUENCY: f64 = 500.0;
/// Ticks allowed for the controller to clear its completion register after an acknowledgement.
const ACK_TICKS: u64 = 50;

/// Result of a command issued through a [`ControlSession`].
#[derive(Debug, Clone, PartialEq)]
pub struct CommandOutcome {
    pub seq: i32,
    /// False for asynchronous commands that were only started.
    pub completed: bool,
    /// MOVE_UNTIL_CONTACT only: whether contact stopped the motion.
    pub contact: Option<bool>,
}

struct Inner {
    link: Link,
    input: Recipe,
    output: Recipe,
    values: Vec<FieldValue>,
    next_seq: i32,
    last: RobotSnapshot,
    ticks: u64,
    tap: Option<Vec<Vec<(String, FieldValue)>>>,
}

/// The exclusive command connection.
///
/// Every [`ControlSession::step`] sends the whole input recipe and receives one reply
/// package; in virtual-time mode each step is exactly one controller tick. Methods
/// take `&self` and serialize on an internal lock, so overlapping calls queue up.
pub struct ControlSession {
    inner: Mutex<Inner>,
    frequency: f64,
    extension_ids: Vec<u32>,
}

impl ControlSession {
    /// Connects with an empty control script.
    pub fn connect(addr: impl ToSocketAddrs) -> Result<ControlSession, ClientError> {
        ControlSession::connect_with_script(addr, "")
    }

    /// Connects, claims the control role and uploads `script`.
    pub fn connect_with_script(addr: impl ToSocketAddrs, script: &str) -> Result<ControlSession, ClientError> {
        let mut link = Link::connect(addr)?;
        let output = link.setup_outputs(&layout::control_output_fields(), CONTROL_FREQUENCY)?;
        let input = match link.setup_inputs(&layout::control_input_fields())? {
            Ok(r) => r,
            Err(reason) if reason.contains("control connection") => return Err(ClientError::ControlBusy(reason)),
            Err(reason) => return Err(ClientError::RecipeRejected(reason)),
        };
        let (ok, rate) = parse_start_reply(&link.request(PacketType::Start, &[])?)?;
        if !ok {
            return Err(ClientError::Protocol("controller refused START".into()));
        }
        let reply = ScriptReply::decode(&link.request(PacketType::ControlScript, script.as_bytes())?)?;
        if !reply.accepted {
            return Err(ClientError::ScriptRejected(reply.text));
        }
        let values = input
            .fields
            .iter()
            .map(|f| match f.kind {
                crate::wire::FieldKind::Int32 => FieldValue::Int32(0),
                crate::wire::FieldKind::UInt64 => FieldValue::UInt64(0),
                _ => FieldValue::Double(0.0),
            })
            .collect();
        let session = ControlSession {
            inner: Mutex::new(Inner {
                link,
                input,
                output,
                values,
                next_seq: 1,
                last: RobotSnapshot::default(),
                ticks: 0,
                tap: None,
            }),
            frequency: rate.unwrap_or(CONTROL_FREQUENCY),
            extension_ids: reply.installed_ids(),
        };
        let s = session.step()?;
        // Registers survive earlier sessions; continue above any sequence they mention.
        session.lock().next_seq = s.output_int[layout::DONE_SEQ_REG].max(s.output_int[layout::ERROR_SEQ_REG]).max(0) + 1;
        Ok(session)
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Controller tick rate reported at START.
    pub fn frequency(&self) -> f64 {
        self.frequency
    }

    /// Extension ids installed by this session's control script.
    pub fn extension_ids(&self) -> &[u32] {
        &self.extension_ids
    }

    /// Most recent state received.
    pub fn snapshot(&self) -> RobotSnapshot {
        self.lock().last.clone()
    }

    /// Steps exchanged since connecting.
    pub fn steps(&self) -> u64 {
        self.lock().ticks
    }

    /// Sends the current inputs and waits for the resulting state (one tick).
    pub fn step(&self) -> Result<RobotSnapshot, ClientError> {
        self.lock().step()
    }

    /// Steps `n` times and returns the final state.
    pub fn idle(&self, n: u64) -> Result<RobotSnapshot, ClientError> {
        let mut inner = self.lock();
        for _ in 0..n {
            inner.step()?;
        }
        Ok(inner.last.clone())
    }

    /// Starts recording every input package sent, as `(field, value)` lists.
    pub fn set_wire_tap(&self, enabled: bool) {
        self.lock().tap = enabled.then(Vec::new);
    }

    pub fn take_wire_log(&self) -> Vec<Vec<(String, FieldValue)>> {
        self.lock().tap.as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// Writes an input register in the next package (and every later one).
    pub fn write_register(&self, register: Register, value: RegisterValue) -> Result<(), ClientError> {
        self.lock().set_register(register, value)
    }

    pub fn move_j(&self, q: &[f64], speed: f64, accel: f64, asynchronous: bool) -> Result<CommandOutcome, ClientError> {
        self.command(Opcode::MoveJ, q, speed, accel, asynchronous, None)
    }

    pub fn move_l(&self, pose: &Pose6, speed: f64, accel: f64, asynchronous: bool) -> Result<CommandOutcome, ClientError> {
        self.command(Opcode::MoveL, &pose.to_array(), speed, accel, asynchronous, None)
    }

    /// Streams a new servo target; returns after one tick.
    pub fn servo_j(&self, q: &[f64]) -> Result<(), ClientError> {
        let mut inner = self.lock();
        inner.issue(Opcode::ServoJ, q, 0.0, 0.0, true)?;
        Ok(())
    }

    pub fn stop_j(&self, decel: f64) -> Result<CommandOutcome, ClientError> {
        self.command(Opcode::StopJ, &[], 0.0, decel, false, None)
    }

    pub fn zero_ft_sensor(&self) -> Result<CommandOutcome, ClientError> {
        self.command(Opcode::ZeroFt, &[], 0.0, 0.0, false, None)
    }

    pub fn move_until_contact(&self, twist: [f64; 6]) -> Result<CommandOutcome, ClientError> {
        self.command(Opcode::MoveUntilContact, &twist, 0.0, 0.0, false, None)
    }

    /// Like [`ControlSession::move_until_contact`] but gives up with [`ClientError::Cancelled`]
    /// (leaving the motion running) once `cancel` is set.
    pub fn move_until_contact_cancellable(
        &self,
        twist: [f64; 6],
        cancel: &AtomicBool,
    ) -> Result<CommandOutcome, ClientError> {
        self.command(Opcode::MoveUntilContact, &twist, 0.0, 0.0, false, Some(cancel))
    }

    /// Issues a raw command and, unless asynchronous, waits for its outcome.
    pub fn command(
        &self,
        op: Opcode,
        params: &[f64],
        speed: f64,
        accel: f64,
        asynchronous: bool,
        cancel: Option<&AtomicBool>,
    ) -> Result<CommandOutcome, ClientError> {
        let mut inner = self.lock();
        let seq = inner.issue(op, params, speed, accel, asynchronous)?;
        if asynchronous {
            return Ok(CommandOutcome {
                seq,
                completed: false,
                contact: None,
            });
        }
        inner.wait(seq, op, None, cancel)
    }

    /// Waits for an asynchronous command to finish.
    pub fn wait_for(&self, seq: i32, timeout_ticks: Option<u64>, cancel: Option<&AtomicBool>) -> Result<CommandOutcome, ClientError> {
        self.lock().wait(seq, Opcode::Noop, timeout_ticks, cancel)
    }

    /// Runs the extension handshake: parameters, then the trigger, then completion and acknowledgement.
    ///
    /// Returns the values of `reads` (output registers) as seen when the extension completed.
    pub fn trigger_extension(
        &self,
        id: u32,
        pre_writes: &[(Register, RegisterValue)],
        reads: &[Register],
        timeout_ticks: u64,
    ) -> Result<Vec<RegisterValue>, ClientError> {
        let mut inner = self.lock();
        for r in reads {
            if r.bank.is_input() || inner.output.field_index(&r.bank.field_name(r.index)).is_none() {
                return Err(ClientError::RegisterNotInRecipe(r.bank.field_name(r.index)));
            }
        }
        for (r, v) in pre_writes {
            inner.set_register(*r, *v)?;
        }
        if !pre_writes.is_empty() {
            inner.step()?;
        }
        let trigger = Register::new(Bank::InputFloat, EXTENSION_TRIGGER_REGISTER);
        inner.set_register(trigger, RegisterValue::Float(id as f64))?;
        let mut result = None;
        for _ in 0..timeout_ticks {
            let s = inner.step()?;
            let done = s.output_float[EXTENSION_TRIGGER_REGISTER];
            if done == id as f64 || done == -(id as f64) {
                result = Some((done > 0.0, s));
                break;
            }
        }
        inner.set_register(trigger, RegisterValue::Float(0.0))?;
        let Some((ok, snapshot)) = result else {
            inner.step()?;
            return Err(ClientError::Timeout {
                what: format!("extension {id}"),
                ticks: timeout_ticks,
            });
        };
        let mut cleared = false;
        for _ in 0..ACK_TICKS {
            if inner.step()?.output_float[EXTENSION_TRIGGER_REGISTER] == 0.0 {
                cleared = true;
                break;
            }
        }
        if !cleared {
            return Err(ClientError::Timeout {
                what: format!("extension {id} acknowledgement"),
                ticks: ACK_TICKS,
            });
        }
        if !ok {
            return Err(ClientError::ExtensionFailed(id));
        }
        Ok(reads
            .iter()
            .map(|r| match r.bank {
                Bank::OutputInt => RegisterValue::Int(snapshot.output_int[r.index]),
                _ => RegisterValue::Float(snapshot.output_float[r.index]),
            })
            .collect())
    }

    /// Sets or clears one standard digital output; applied on the next tick.
    pub fn set_standard_digital_out(&self, pin: u8, value: bool) -> Result<RobotSnapshot, ClientError> {
        if pin > 7 {
            return Err(ClientError::PinOutOfRange(pin));
        }
        let mut inner = self.lock();
        let mask = 1u64 << pin;
        inner.set_field("standard_digital_output_mask", FieldValue::UInt64(mask))?;
        let i = inner
            .input
            .field_index("standard_digital_output")
            .ok_or_else(|| ClientError::RegisterNotInRecipe("standard_digital_output".into()))?;
        let FieldValue::UInt64(bits) = inner.values[i] else { unreachable!("recipe kind is UINT64") };
        inner.values[i] = FieldValue::UInt64(if value { bits | mask } else { bits & !mask });
        inner.step()
    }

    /// Outcome of command `seq` according to the latest state, without stepping.
    ///
    /// `Ok(None)` while it is still running.
    pub fn poll(&self, seq: i32) -> Result<Option<CommandOutcome>, ClientError> {
        match self.lock().wait(seq, Opcode::Noop, Some(0), None) {
            Ok(o) => Ok(Some(o)),
            Err(ClientError::Timeout { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Closes the connection, releasing the control role.
    pub fn close(self) {}
}

impl Drop for ControlSession {
    fn drop(&mut self) {
        self.lock().link.close();
    }
}

impl Inner {
    fn step(&mut self) -> Result<RobotSnapshot, ClientError> {
        let payload = self.input.pack(&self.values)?;
        if let Some(tap) = &mut self.tap {
            tap.push(self.input.fields.iter().map(|f| f.name.clone()).zip(self.values.iter().copied()).collect());
        }
        self.link.send(PacketType::DataPackage, &payload)?;
        // Digital-output writes are one-shot; the mask must not re-apply them.
        if let Some(i) = self.input.field_index("standard_digital_output_mask") {
            self.values[i] = FieldValue::UInt64(0);
        }
        loop {
            let frame = self.link.recv()?;
            if frame.kind != PacketType::DataPackage {
                return Err(ClientError::Protocol(format!("unexpected {:?} while stepping", frame.kind)));
            }
            if frame.payload.first() == Some(&self.output.id) {
                let values = self.output.unpack(&frame.payload)?;
                self.last = RobotSnapshot::from_values(&self.output, &values);
                self.ticks += 1;
                return Ok(self.last.clone());
            }
        }
    }

    fn set_field(&mut self, name: &str, value: FieldValue) -> Result<(), ClientError> {
        let i = self
            .input
            .field_index(name)
            .ok_or_else(|| ClientError::RegisterNotInRecipe(name.to_string()))?;
        self.values[i] = value;
        Ok(())
    }

    fn set_register(&mut self, register: Register, value: RegisterValue) -> Result<(), ClientError> {
        let name = register.bank.field_name(register.index);
        if !register.bank.is_input() {
            return Err(ClientError::RegisterNotInRecipe(name));
        }
        let v = match register.bank {
            Bank::InputInt => FieldValue::Int32(match value {
                RegisterValue::Int(i) => i,
                RegisterValue::Float(f) => f as i32,
            }),
            _ => FieldValue::Double(value.as_f64()),
        };
        self.set_field(&name, v)
    }

    /// Writes parameters, opcode and a fresh sequence number in one package.
    fn issue(&mut self, op: Opcode, params: &[f64], speed: f64, accel: f64, asynchronous: bool) -> Result<i32, ClientError> {
        if params.len() > 6 {
            return Err(ClientError::Protocol(format!("{} command parameters, at most 6", params.len())));
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        for (i, v) in params.iter().enumerate() {
            self.set_register(Register::new(Bank::InputFloat, i), RegisterValue::Float(*v))?;
        }
        self.set_register(Register::new(Bank::InputFloat, layout::SPEED_REG), RegisterValue::Float(speed))?;
        self.set_register(Register::new(Bank::InputFloat, layout::ACCEL_REG), RegisterValue::Float(accel))?;
        self.set_register(Register::new(Bank::InputInt, layout::ASYNC_REG), RegisterValue::Int(asynchronous as i32))?;
        self.set_register(Register::new(Bank::InputInt, layout::OPCODE_REG), RegisterValue::Int(op as i32))?;
        self.set_register(Register::new(Bank::InputInt, layout::SEQ_REG), RegisterValue::Int(seq))?;
        let s = self.step()?;
        // Synchronous commands are checked by `wait`; here only immediate rejections matter.
        if asynchronous && s.output_int[layout::ERROR_SEQ_REG] == seq {
            return Err(command_error(seq, s.output_int[layout::ERROR_CODE_REG]));
        }
        Ok(seq)
    }

    fn wait(
        &mut self,
        seq: i32,
        op: Opcode,
        timeout_ticks: Option<u64>,
        cancel: Option<&AtomicBool>,
    ) -> Result<CommandOutcome, ClientError> {
        let mut waited = 0u64;
        let mut s = self.last.clone();
        loop {
            let done = s.output_int[layout::DONE_SEQ_REG];
            let err_seq = s.output_int[layout::ERROR_SEQ_REG];
            if err_seq == seq {
                return Err(command_error(seq, s.output_int[layout::ERROR_CODE_REG]));
            }
            if done == seq {
                return Ok(CommandOutcome {
                    seq,
                    completed: true,
                    contact: (op == Opcode::MoveUntilContact).then(|| s.output_int[layout::CONTACT_REG] != 0),
                });
            }
            if done > seq || err_seq > seq {
                // A later command finished first, so this one was replaced.
                return Err(command_error(seq, error_code::PREEMPTED));
            }
            if cancel.is_some_and(|c| c.load(Ordering::SeqCst)) {
                return Err(ClientError::Cancelled);
            }
            if timeout_ticks.is_some_and(|t| waited >= t) {
                return Err(ClientError::Timeout {
                    what: format!("command {seq}"),
                    ticks: waited,
                });
            }
            s = self.step()?;
            waited += 1;
        }
    }
}

fn command_error(seq: i32, code: i32) -> ClientError {
    ClientError::Command {
        seq,
        code,
        message: error_code::describe(code),
    }
}
