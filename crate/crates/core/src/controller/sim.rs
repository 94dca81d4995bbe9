use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use nalgebra::Vector6;

use super::command::{Active, ContactMove, Ctx, LinearMove, Motion, Step};
use super::dashboard::Dashboard;
use super::layout::*;
use super::snippet::{Progress, SnippetRun};
use super::{ControllerConfig, ControllerError, ForceEnv};
use crate::kinematics::{fk, Chain, Pose6};
use crate::motion::JointSegment;
use crate::script::{compile, evaluate, Builtin, Env, ScriptHost, StmtKind};
use crate::wire::{
    Bank, FieldValue, Recipe, Register, RegisterFile, RegisterSnapshot, RegisterValue, WireError,
    EXTENSION_TRIGGER_REGISTER, REGISTER_COUNT,
};

/// Identifies a connection's data-package subscription.
pub type ConnId = u64;

/// A queued write applied at the start of the next tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InputWrite {
    Register(Register, RegisterValue),
    DigitalOut { mask: u64, values: u64 },
}

/// Published robot state; every field comes from the same tick.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerSnapshot {
    pub timestamp: f64,
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub tcp_pose: Pose6,
    pub tcp_force: [f64; 6],
    pub registers: RegisterSnapshot,
}

fn pad6(v: &[f64]) -> [f64; 6] {
    let mut out = [0.0; 6];
    out[..v.len()].copy_from_slice(v);
    out
}

fn register_suffix(name: &str, prefix: &str) -> Option<usize> {
    name.strip_prefix(prefix)?.parse().ok().filter(|i| *i < REGISTER_COUNT)
}

impl ControllerSnapshot {
    /// Value of an output field by its recipe name.
    pub fn field(&self, name: &str) -> Option<FieldValue> {
        Some(match name {
            "timestamp" => FieldValue::Double(self.timestamp),
            "actual_q" => FieldValue::Vector6D(pad6(&self.q)),
            "actual_qd" => FieldValue::Vector6D(pad6(&self.qd)),
            "actual_TCP_pose" => FieldValue::Vector6D(self.tcp_pose.to_array()),
            "actual_TCP_force" => FieldValue::Vector6D(self.tcp_force),
            "actual_digital_input_bits" => FieldValue::UInt64(self.registers.digital_in_bits),
            "actual_digital_output_bits" => FieldValue::UInt64(self.registers.digital_out_bits),
            n => {
                if let Some(i) = register_suffix(n, "output_int_register_") {
                    FieldValue::Int32(self.registers.output_int[i])
                } else if let Some(i) = register_suffix(n, "output_double_register_") {
                    FieldValue::Double(self.registers.output_float[i])
                } else {
                    return None;
                }
            }
        })
    }

    /// Data-package payload for an output recipe.
    pub fn pack(&self, recipe: &Recipe) -> Result<Vec<u8>, WireError> {
        let values = recipe
            .fields
            .iter()
            .map(|f| self.field(&f.name).ok_or_else(|| WireError::UnknownField(f.name.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        recipe.pack(&values)
    }
}

struct Subscription {
    recipe: Recipe,
    decimation: u64,
    counter: u64,
    started: bool,
}

enum SnippetState {
    Idle,
    Running { id: u32, run: SnippetRun, wake_at: u64 },
    AwaitAck { id: u32 },
}

/// Host used while a control script's top-level statements run at install time.
struct InstallHost<'a> {
    log: &'a mut Vec<String>,
}

impl ScriptHost for InstallHost<'_> {
    fn sleep(&mut self, _seconds: f64) -> Result<(), String> {
        Err("sleep is only allowed inside extension snippets".into())
    }

    fn log(&mut self, message: &str) {
        self.log.push(message.to_string());
    }
}

/// The simulated controller: a deterministic, single-owner state machine advanced by [`Controller::tick`].
pub struct Controller {
    chain: Chain,
    frequency: f64,
    dt: f64,
    force: ForceEnv,
    registers: Arc<RegisterFile>,
    q: Vec<f64>,
    qd: Vec<f64>,
    ticks: u64,
    active: Option<Active>,
    last_seq: i32,
    bias: Vector6<f64>,
    wrench: Vector6<f64>,
    zero_pending: Option<i32>,
    pending: Vec<InputWrite>,
    extras: Vec<(String, Builtin)>,
    script_env: Env,
    extension_ids: BTreeSet<u32>,
    snippet: SnippetState,
    step_budget: u64,
    dashboard: Dashboard,
    log: Vec<String>,
    subscriptions: BTreeMap<ConnId, Subscription>,
    published: ControllerSnapshot,
}

impl Controller {
    pub fn new(config: &ControllerConfig) -> Result<Self, ControllerError> {
        Controller::with_extras(config, Vec::new())
    }

    /// A controller whose snippets can also call the device instructions in `extras`.
    pub fn with_extras(config: &ControllerConfig, extras: Vec<(String, Builtin)>) -> Result<Self, ControllerError> {
        config.validate()?;
        let file = config.load_chain()?;
        let chain = file.chain;
        if chain.dof() > 6 {
            return Err(ControllerError::Config(format!(
                "chains with more than 6 joints are not supported (got {})",
                chain.dof()
            )));
        }
        let q = config
            .home
            .clone()
            .or(file.home)
            .unwrap_or_else(|| vec![0.0; chain.dof()]);
        chain.check_dim(&q)?;
        if !chain.within_limits(&q) {
            return Err(ControllerError::Config("home configuration violates joint limits".into()));
        }
        let registers = Arc::new(RegisterFile::new());
        let mut script_env = Env::new();
        script_env
            .register_builtins(registers.clone(), extras.clone())
            .map_err(|e| ControllerError::Config(e.to_string()))?;
        script_env.step_budget = config.step_budget;
        let dof = chain.dof();
        let mut c = Controller {
            frequency: config.frequency,
            dt: 1.0 / config.frequency,
            force: config.force.clone().validated()?,
            registers,
            qd: vec![0.0; dof],
            q,
            ticks: 0,
            active: None,
            last_seq: 0,
            bias: Vector6::zeros(),
            wrench: Vector6::zeros(),
            zero_pending: None,
            pending: Vec::new(),
            extras,
            script_env,
            extension_ids: BTreeSet::new(),
            snippet: SnippetState::Idle,
            step_budget: config.step_budget,
            dashboard: Dashboard::default(),
            log: Vec::new(),
            subscriptions: BTreeMap::new(),
            published: ControllerSnapshot {
                timestamp: 0.0,
                q: Vec::new(),
                qd: Vec::new(),
                tcp_pose: Pose6::identity(),
                tcp_force: [0.0; 6],
                registers: RegisterFile::new().snapshot(),
            },
            chain,
        };
        c.wrench = c.force.raw_wrench(c.tcp().position.z, 0.0);
        c.publish();
        Ok(c)
    }

    pub fn chain(&self) -> &Chain {
        &self.chain
    }

    pub fn frequency(&self) -> f64 {
        self.frequency
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Ticks executed so far.
    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    /// Simulated time: exactly `ticks / frequency`.
    pub fn sim_time(&self) -> f64 {
        self.ticks as f64 / self.frequency
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn qd(&self) -> &[f64] {
        &self.qd
    }

    pub fn tcp(&self) -> Pose6 {
        fk(&self.chain, &self.q).expect("q has chain dimension")
    }

    /// Reported wrench of the last tick.
    pub fn wrench(&self) -> [f64; 6] {
        self.wrench.into()
    }

    pub fn registers(&self) -> Arc<RegisterFile> {
        self.registers.clone()
    }

    pub fn force_env(&self) -> &ForceEnv {
        &self.force
    }

    pub fn snapshot(&self) -> &ControllerSnapshot {
        &self.published
    }

    pub fn log(&self) -> &[String] {
        &self.log
    }

    pub fn dashboard(&self) -> &Dashboard {
        &self.dashboard
    }

    pub fn extension_ids(&self) -> Vec<u32> {
        self.extension_ids.iter().copied().collect()
    }

    /// Whether a command (other than streaming servo) is in progress.
    pub fn is_busy(&self) -> bool {
        self.active.as_ref().is_some_and(|a| !a.motion.is_servo())
    }

    fn note(&mut self, message: impl Into<String>) {
        let message = message.into();
        log::info!("[t={:.3}] {message}", self.sim_time());
        self.log.push(format!("[t={:.3}] {message}", self.sim_time()));
    }

    /// Queues a write for step (1) of the next tick.
    pub fn queue_write(&mut self, write: InputWrite) -> Result<(), ControllerError> {
        if let InputWrite::Register(r, _) = write {
            if !r.bank.is_input() {
                return Err(ControllerError::Rejected(format!("{} is not an input register", r.bank)));
            }
            if r.index >= REGISTER_COUNT {
                return Err(WireError::RegisterOutOfRange(r.index).into());
            }
        }
        self.pending.push(write);
        Ok(())
    }

    /// Queues every field of an input data package.
    pub fn submit_input(&mut self, recipe: &Recipe, values: &[FieldValue]) -> Result<(), ControllerError> {
        if values.len() != recipe.fields.len() {
            return Err(WireError::ArityMismatch {
                expected: recipe.fields.len(),
                got: values.len(),
            }
            .into());
        }
        let mut mask = None;
        let mut bits = None;
        for (spec, value) in recipe.fields.iter().zip(values) {
            let name = spec.name.as_str();
            match (name, *value) {
                ("standard_digital_output_mask", FieldValue::UInt64(m)) => mask = Some(m),
                ("standard_digital_output", FieldValue::UInt64(v)) => bits = Some(v),
                (n, FieldValue::Int32(v)) if register_suffix(n, "input_int_register_").is_some() => {
                    let i = register_suffix(n, "input_int_register_").unwrap();
                    self.pending
                        .push(InputWrite::Register(Register::new(Bank::InputInt, i), RegisterValue::Int(v)));
                }
                (n, FieldValue::Double(v)) if register_suffix(n, "input_double_register_").is_some() => {
                    let i = register_suffix(n, "input_double_register_").unwrap();
                    self.pending.push(InputWrite::Register(
                        Register::new(Bank::InputFloat, i),
                        RegisterValue::Float(v),
                    ));
                }
                (n, v) => {
                    return Err(WireError::KindMismatch {
                        field: n.to_string(),
                        expected: spec.kind,
                        got: v.kind(),
                    }
                    .into())
                }
            }
        }
        if let Some(mask) = mask {
            if mask != 0 {
                self.pending.push(InputWrite::DigitalOut {
                    mask,
                    values: bits.unwrap_or(0),
                });
            }
        }
        Ok(())
    }

    /// Registers an output recipe for decimated data packages (sent once started).
    pub fn subscribe(&mut self, conn: ConnId, recipe: Recipe) {
        let decimation = recipe.decimation(self.frequency);
        self.subscriptions.insert(
            conn,
            Subscription {
                recipe,
                decimation,
                counter: 0,
                started: false,
            },
        );
    }

    pub fn start(&mut self, conn: ConnId) -> bool {
        match self.subscriptions.get_mut(&conn) {
            Some(s) => {
                s.started = true;
                s.counter = 0;
                true
            }
            None => false,
        }
    }

    pub fn pause(&mut self, conn: ConnId) -> bool {
        match self.subscriptions.get_mut(&conn) {
            Some(s) => {
                s.started = false;
                true
            }
            None => false,
        }
    }

    pub fn unsubscribe(&mut self, conn: ConnId) {
        self.subscriptions.remove(&conn);
    }

    pub fn dashboard_line(&mut self, line: &str) -> String {
        let reply = self.dashboard.handle_line(line);
        self.note(format!("dashboard: {} -> {reply}", line.trim()));
        reply
    }

    /// Parses and installs a control script, replacing the previous one.
    ///
    /// Functions named `ext_<ID>` (ID ≥ 256) become extension snippets; other
    /// definitions and top-level statements form the preamble.
    pub fn install_script(&mut self, text: &str) -> Result<Vec<u32>, ControllerError> {
        let program = compile(text).map_err(|e| ControllerError::Script(e.to_string()))?;
        let mut ids = BTreeSet::new();
        for stmt in &program.body {
            if let StmtKind::FuncDef { name, params, .. } = &stmt.kind {
                let Some(id) = name.strip_prefix("ext_") else { continue };
                let id: u32 = id.parse().map_err(|_| {
                    ControllerError::Script(format!("line {}: bad extension name '{name}'", stmt.line))
                })?;
                if id < 256 {
                    return Err(ControllerError::Script(format!(
                        "line {}: extension id {id} is below 256",
                        stmt.line
                    )));
                }
                if !params.is_empty() {
                    return Err(ControllerError::Script(format!(
                        "line {}: extension '{name}' must not take parameters",
                        stmt.line
                    )));
                }
                if !ids.insert(id) {
                    return Err(ControllerError::Script(format!(
                        "line {}: duplicate extension id {id}",
                        stmt.line
                    )));
                }
            }
        }
        let mut env = Env::new();
        env.register_builtins(self.registers.clone(), self.extras.clone())
            .map_err(|e| ControllerError::Script(e.to_string()))?;
        env.step_budget = self.step_budget;
        let mut messages = Vec::new();
        evaluate(&program, &mut env, &mut InstallHost { log: &mut messages })
            .map_err(|e| ControllerError::Script(e.to_string()))?;
        self.script_env = env;
        self.extension_ids = ids;
        for m in messages {
            self.note(format!("script: {m}"));
        }
        let list: Vec<String> = self.extension_ids.iter().map(|i| i.to_string()).collect();
        self.note(format!("control script installed; extensions [{}]", list.join(", ")));
        Ok(self.extension_ids())
    }

    /// Advances the loop by one period and returns the data packages due, per subscription.
    pub fn tick(&mut self) -> Vec<(ConnId, Vec<u8>)> {
        self.apply_pending();
        self.process_cmd();
        self.integrate();
        self.compute_wrench();
        let packages = self.publish();
        self.ticks += 1;
        packages
    }

    fn apply_pending(&mut self) {
        for w in std::mem::take(&mut self.pending) {
            match w {
                InputWrite::Register(r, v) => {
                    self.registers.set(r.bank, r.index, v).expect("validated when queued");
                }
                InputWrite::DigitalOut { mask, values } => self.registers.write_digital_out(mask, values),
            }
        }
    }

    fn in_int(&self, i: usize) -> i32 {
        self.registers.get_int(Bank::InputInt, i).expect("index in range")
    }

    fn in_float(&self, i: usize) -> f64 {
        self.registers.get_float(Bank::InputFloat, i).expect("index in range")
    }

    fn set_out_int(&self, i: usize, v: i32) {
        self.registers.set_int(Bank::OutputInt, i, v).expect("index in range");
    }

    fn complete(&mut self, seq: i32) {
        self.set_out_int(DONE_SEQ_REG, seq);
    }

    fn fail(&mut self, seq: i32, code: i32) {
        self.set_out_int(ERROR_CODE_REG, code);
        self.set_out_int(ERROR_SEQ_REG, seq);
        self.note(format!("command {seq}: {}", error_code::describe(code)));
    }

    fn targets(&self) -> [f64; 6] {
        std::array::from_fn(|i| self.in_float(TARGET_REGS.start + i))
    }

    fn process_cmd(&mut self) {
        let seq = self.in_int(SEQ_REG);
        if seq != self.last_seq {
            self.last_seq = seq;
            let op = self.in_int(OPCODE_REG);
            self.dispatch(op, seq);
        }
        self.process_extension();
    }

    fn preempt(&mut self) {
        if let Some(old) = self.active.take() {
            if !old.motion.is_servo() {
                self.fail(old.seq, error_code::PREEMPTED);
            }
        }
    }

    fn dispatch(&mut self, code: i32, seq: i32) {
        let asynchronous = self.in_int(ASYNC_REG) != 0;
        let Some(op) = Opcode::from_code(code) else {
            self.fail(seq, error_code::UNKNOWN_OPCODE);
            return;
        };
        if op == Opcode::StopJ {
            let decel = self.in_float(ACCEL_REG);
            if !(decel > 0.0) {
                self.fail(seq, error_code::INVALID_PARAMETER);
                return;
            }
            self.preempt();
            self.active = Some(Active {
                seq,
                asynchronous,
                motion: Motion::Stop { decel },
            });
            return;
        }
        if self.active.as_ref().is_some_and(|a| !a.asynchronous && !a.motion.is_servo()) {
            self.fail(seq, error_code::BUSY);
            return;
        }
        let motion = match op {
            Opcode::Noop => {
                self.complete(seq);
                return;
            }
            Opcode::ZeroFt => {
                self.zero_pending = Some(seq);
                return;
            }
            Opcode::StopJ => unreachable!("handled above"),
            Opcode::MoveJ => match self.plan_movej() {
                Ok(m) => m,
                Err(code) => return self.fail(seq, code),
            },
            Opcode::MoveL => match self.plan_movel() {
                Ok(m) => m,
                Err(code) => return self.fail(seq, code),
            },
            Opcode::ServoJ => {
                let n = self.chain.dof();
                let mut target = self.targets()[..n].to_vec();
                self.chain.clamp(&mut target);
                Motion::Servo { target }
            }
            Opcode::MoveUntilContact => {
                let twist = self.targets();
                if twist.iter().any(|v| !v.is_finite()) {
                    return self.fail(seq, error_code::INVALID_PARAMETER);
                }
                self.set_out_int(CONTACT_REG, 0);
                Motion::Contact(ContactMove::new(&self.tcp(), twist))
            }
        };
        // A servo stream replaces the previous servo target without reporting preemption.
        self.preempt();
        self.active = Some(Active {
            seq,
            asynchronous,
            motion,
        });
    }

    fn speed_accel(&self) -> Result<(f64, f64), i32> {
        let speed = self.in_float(SPEED_REG);
        let accel = self.in_float(ACCEL_REG);
        if speed > 0.0 && accel > 0.0 && speed.is_finite() && accel.is_finite() {
            Ok((speed, accel))
        } else {
            Err(error_code::INVALID_PARAMETER)
        }
    }

    fn plan_movej(&self) -> Result<Motion, i32> {
        let (speed, accel) = self.speed_accel()?;
        let n = self.chain.dof();
        let target = self.targets()[..n].to_vec();
        if !self.chain.within_limits(&target) {
            return Err(error_code::INVALID_TARGET);
        }
        let v: Vec<f64> = self.chain.joints.iter().map(|j| speed.min(j.v_max)).collect();
        let a: Vec<f64> = self.chain.joints.iter().map(|j| accel.min(j.a_max)).collect();
        let segment =
            JointSegment::plan(&self.q, &target, &v, &a, self.dt).map_err(|_| error_code::INVALID_PARAMETER)?;
        Ok(Motion::Joint { segment, step: 0 })
    }

    fn plan_movel(&self) -> Result<Motion, i32> {
        let (speed, accel) = self.speed_accel()?;
        let target = Pose6::from_array(self.targets());
        if target.position.norm() > self.chain.reach() + self.chain.base.position.norm() {
            return Err(error_code::INVALID_TARGET);
        }
        LinearMove::plan(&self.tcp(), &target, speed, accel)
            .map(Motion::Linear)
            .ok_or(error_code::INVALID_PARAMETER)
    }

    fn process_extension(&mut self) {
        let trigger = self.in_float(EXTENSION_TRIGGER_REGISTER);
        match &mut self.snippet {
            SnippetState::Idle => {
                if trigger < 256.0 || trigger.fract() != 0.0 || trigger > u32::MAX as f64 {
                    return;
                }
                let id = trigger as u32;
                if !self.extension_ids.contains(&id) {
                    return;
                }
                match SnippetRun::spawn(&self.script_env, format!("ext_{id}"), self.frequency) {
                    Ok(run) => {
                        self.note(format!("extension {id} started"));
                        self.snippet = SnippetState::Running {
                            id,
                            run,
                            wake_at: self.ticks,
                        };
                        self.resume_snippet();
                    }
                    Err(e) => {
                        self.note(format!("extension {id} could not start: {e}"));
                        self.finish_snippet(id, false);
                    }
                }
            }
            SnippetState::Running { wake_at, .. } => {
                if self.ticks >= *wake_at {
                    self.resume_snippet();
                }
            }
            SnippetState::AwaitAck { id } => {
                if trigger != *id as f64 {
                    self.registers
                        .set_float(Bank::OutputFloat, EXTENSION_TRIGGER_REGISTER, 0.0)
                        .expect("index in range");
                    self.snippet = SnippetState::Idle;
                }
            }
        }
    }

    fn resume_snippet(&mut self) {
        let SnippetState::Running { id, run, wake_at } = &mut self.snippet else {
            return;
        };
        let id = *id;
        let mut lines = Vec::new();
        let progress = run.run(&mut |m| lines.push(m));
        if let Progress::Sleeping(n) = progress {
            *wake_at = self.ticks + n;
        }
        for l in lines {
            self.note(format!("ext_{id}: {l}"));
        }
        if let Progress::Finished(result) = progress {
            let ok = match result {
                Ok(()) => true,
                Err(e) => {
                    self.note(format!("extension {id} failed: {e}"));
                    false
                }
            };
            self.finish_snippet(id, ok);
        }
    }

    fn finish_snippet(&mut self, id: u32, ok: bool) {
        let value = if ok { id as f64 } else { -(id as f64) };
        self.registers
            .set_float(Bank::OutputFloat, EXTENSION_TRIGGER_REGISTER, value)
            .expect("index in range");
        self.snippet = SnippetState::AwaitAck { id };
    }

    fn integrate(&mut self) {
        let Some(mut active) = self.active.take() else {
            self.qd.iter_mut().for_each(|v| *v = 0.0);
            return;
        };
        let ctx = Ctx {
            chain: &self.chain,
            dt: self.dt,
            wrench: &self.wrench,
        };
        match active.motion.step(&mut self.q, &mut self.qd, &ctx) {
            Step::Running => self.active = Some(active),
            Step::Done => {
                self.qd.iter_mut().for_each(|v| *v = 0.0);
                self.complete(active.seq);
            }
            Step::DoneContact(contact) => {
                self.qd.iter_mut().for_each(|v| *v = 0.0);
                self.set_out_int(CONTACT_REG, contact as i32);
                self.note(format!("command {}: contact={contact}", active.seq));
                self.complete(active.seq);
            }
            Step::Failed(code) => {
                self.qd.iter_mut().for_each(|v| *v = 0.0);
                self.fail(active.seq, code);
            }
        }
    }

    fn compute_wrench(&mut self) {
        let raw = self.force.raw_wrench(self.tcp().position.z, self.sim_time());
        if let Some(seq) = self.zero_pending.take() {
            self.bias = raw;
            self.complete(seq);
        }
        self.wrench = raw - self.bias;
    }

    fn publish(&mut self) -> Vec<(ConnId, Vec<u8>)> {
        self.published = ControllerSnapshot {
            timestamp: self.sim_time(),
            q: self.q.clone(),
            qd: self.qd.clone(),
            tcp_pose: self.tcp(),
            tcp_force: self.wrench.into(),
            registers: self.registers.snapshot(),
        };
        let mut out = Vec::new();
        for (conn, sub) in self.subscriptions.iter_mut().filter(|(_, s)| s.started) {
            sub.counter += 1;
            if sub.counter % sub.decimation == 0 {
                match self.published.pack(&sub.recipe) {
                    Ok(p) => out.push((*conn, p)),
                    Err(e) => log::warn!("connection {conn}: {e}"),
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::JointSegment;
    use crate::wire::RecipeRegistry;

    fn controller() -> Controller {
        Controller::new(&ControllerConfig::default()).unwrap()
    }

    fn write_i(c: &mut Controller, i: usize, v: i32) {
        c.queue_write(InputWrite::Register(Register::new(Bank::InputInt, i), RegisterValue::Int(v)))
            .unwrap();
    }

    fn write_f(c: &mut Controller, i: usize, v: f64) {
        c.queue_write(InputWrite::Register(Register::new(Bank::InputFloat, i), RegisterValue::Float(v)))
            .unwrap();
    }

    fn command(c: &mut Controller, op: Opcode, seq: i32, targets: &[f64], speed: f64, accel: f64, asynchronous: bool) {
        for (i, v) in targets.iter().enumerate() {
            write_f(c, i, *v);
        }
        write_f(c, SPEED_REG, speed);
        write_f(c, ACCEL_REG, accel);
        write_i(c, ASYNC_REG, asynchronous as i32);
        write_i(c, OPCODE_REG, op as i32);
        write_i(c, SEQ_REG, seq);
    }

    fn out_int(c: &Controller, i: usize) -> i32 {
        c.registers().get_int(Bank::OutputInt, i).unwrap()
    }

    fn run_until_done(c: &mut Controller, seq: i32, max_ticks: u64) -> u64 {
        for n in 1..=max_ticks {
            c.tick();
            if out_int(c, DONE_SEQ_REG) == seq {
                return n;
            }
            assert_ne!(out_int(c, ERROR_SEQ_REG), seq, "command failed: {}", out_int(c, ERROR_CODE_REG));
        }
        panic!("command {seq} did not finish in {max_ticks} ticks");
    }

    #[test]
    fn idle_ticks_advance_exact_time_and_decimate() {
        let mut c = controller();
        let mut reg = RecipeRegistry::new();
        c.subscribe(1, reg.output(&["timestamp"], 500.0).unwrap());
        c.subscribe(2, reg.output(&["timestamp"], 125.0).unwrap());
        c.start(1);
        c.start(2);
        let mut counts = [0, 0];
        for _ in 0..500 {
            for (conn, _) in c.tick() {
                counts[conn as usize - 1] += 1;
            }
        }
        assert_eq!(c.sim_time(), 1.0);
        assert_eq!(counts, [500, 125]);
        assert!(c.qd().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn movej_follows_trapezoid_oracle() {
        let mut c = controller();
        let start = c.q().to_vec();
        let mut target = start.clone();
        target[0] += 0.5;
        target[2] -= 0.2;
        command(&mut c, Opcode::MoveJ, 1, &target, 1.0, 2.0, false);
        let oracle = JointSegment::plan(&start, &target, &[1.0; 6], &[2.0; 6], c.dt()).unwrap();
        for step in 1..=oracle.steps {
            c.tick();
            let (q, _) = oracle.at_step(step);
            for (a, b) in c.q().iter().zip(&q) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert_eq!(out_int(&c, DONE_SEQ_REG), 1);
        assert_eq!(c.q(), &target[..]);
        assert!(c.qd().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn movej_to_current_q_completes_immediately() {
        let mut c = controller();
        let q = c.q().to_vec();
        command(&mut c, Opcode::MoveJ, 7, &q, 1.0, 1.0, false);
        c.tick();
        assert_eq!(out_int(&c, DONE_SEQ_REG), 7);
    }

    #[test]
    fn movej_outside_limits_is_rejected() {
        let mut c = controller();
        let mut q = c.q().to_vec();
        q[0] = 100.0;
        command(&mut c, Opcode::MoveJ, 3, &q, 1.0, 1.0, false);
        c.tick();
        assert_eq!(out_int(&c, ERROR_CODE_REG), error_code::INVALID_TARGET);
        assert_eq!(out_int(&c, ERROR_SEQ_REG), 3);
    }

    #[test]
    fn stopj_from_half_rad_per_second() {
        let mut c = controller();
        let mut target = c.q().to_vec();
        target[0] += 3.0;
        command(&mut c, Opcode::MoveJ, 1, &target, 0.5, 10.0, true);
        for _ in 0..100 {
            c.tick();
        }
        assert!((c.qd()[0] - 0.5).abs() < 1e-12);
        let q0 = c.q()[0];
        command(&mut c, Opcode::StopJ, 2, &[], 0.0, 5.0, false);
        let ticks = run_until_done(&mut c, 2, 1000);
        assert_eq!(ticks, 50);
        assert!((c.q()[0] - q0 - 0.025).abs() < 1e-9);
        assert_eq!(out_int(&c, ERROR_CODE_REG), error_code::PREEMPTED);
        assert_eq!(out_int(&c, ERROR_SEQ_REG), 1);
    }

    #[test]
    fn stopj_at_rest_takes_one_tick() {
        let mut c = controller();
        command(&mut c, Opcode::StopJ, 1, &[], 0.0, 5.0, false);
        assert_eq!(run_until_done(&mut c, 1, 10), 1);
    }

    #[test]
    fn unknown_opcode_sets_error() {
        let mut c = controller();
        let q = c.q().to_vec();
        write_i(&mut c, OPCODE_REG, 99);
        write_i(&mut c, SEQ_REG, 4);
        c.tick();
        assert_eq!(out_int(&c, ERROR_CODE_REG), error_code::UNKNOWN_OPCODE);
        assert_eq!(out_int(&c, ERROR_SEQ_REG), 4);
        assert_eq!(c.q(), &q[..]);
    }

    #[test]
    fn synchronous_command_makes_others_busy() {
        let mut c = controller();
        let mut target = c.q().to_vec();
        target[0] += 1.0;
        command(&mut c, Opcode::MoveJ, 1, &target, 1.0, 1.0, false);
        c.tick();
        command(&mut c, Opcode::MoveJ, 2, &target, 1.0, 1.0, false);
        c.tick();
        assert_eq!(out_int(&c, ERROR_CODE_REG), error_code::BUSY);
        assert_eq!(out_int(&c, ERROR_SEQ_REG), 2);
        assert!(c.is_busy());
        run_until_done(&mut c, 1, 10_000);
    }

    #[test]
    fn zero_ft_bias() {
        let mut cfg = ControllerConfig::default();
        let z = Controller::new(&cfg).unwrap().tcp().position.z;
        cfg.force.plane_z = z + 0.005;
        let mut c = Controller::new(&cfg).unwrap();
        c.tick();
        assert!((c.wrench()[2] - 5.0).abs() < 1e-9);
        command(&mut c, Opcode::ZeroFt, 1, &[], 0.0, 0.0, false);
        c.tick();
        assert_eq!(c.wrench(), [0.0; 6]);
        assert_eq!(out_int(&c, DONE_SEQ_REG), 1);
        command(&mut c, Opcode::ZeroFt, 2, &[], 0.0, 0.0, false);
        c.tick();
        assert_eq!(c.wrench(), [0.0; 6]);
        // Descend 2 cm: raw 25 N, reported 20 N.
        let mut target = c.tcp().to_array();
        target[2] -= 0.02;
        command(&mut c, Opcode::MoveL, 3, &target, 0.05, 0.5, false);
        run_until_done(&mut c, 3, 5000);
        assert!((c.wrench()[2] - 20.0).abs() < 1e-3);
    }

    #[test]
    fn movel_one_metre_down() {
        let mut cfg = ControllerConfig::default();
        cfg.force.stiffness = 0.0;
        let mut c = Controller::new(&cfg).unwrap();
        let mut target = c.tcp().to_array();
        target[2] -= 1.0;
        command(&mut c, Opcode::MoveL, 1, &target, 0.1, 0.1, true);
        let ticks = run_until_done(&mut c, 1, 20_000);
        let t = ticks as f64 * c.dt();
        assert!((t - 11.0).abs() < 0.1, "took {t} s");
        let err = (c.tcp().position - Pose6::from_array(target).position).norm();
        assert!(err < 1e-4, "final error {err}");
    }

    #[test]
    fn move_until_contact_stops_at_plane() {
        let mut c = controller();
        command(&mut c, Opcode::MoveUntilContact, 1, &[0.0, 0.0, -0.05, 0.0, 0.0, 0.0], 0.0, 0.0, false);
        run_until_done(&mut c, 1, 20_000);
        assert_eq!(out_int(&c, CONTACT_REG), 1);
        let z = c.tcp().position.z;
        assert!(z < 0.2 - 0.01 && z > 0.2 - 0.012, "stopped at z={z}");
    }

    #[test]
    fn move_until_contact_away_from_plane_reports_no_contact() {
        let mut c = controller();
        command(&mut c, Opcode::MoveUntilContact, 1, &[0.0, 0.0, 0.5, 0.0, 0.0, 0.0], 0.0, 0.0, false);
        run_until_done(&mut c, 1, 50_000);
        assert_eq!(out_int(&c, CONTACT_REG), 0);
    }

    #[test]
    fn servo_stream_respects_velocity_bound() {
        let mut c = controller();
        let mut target = c.q().to_vec();
        target[0] += 1.0;
        target[1] -= 1.0;
        let v = c.chain().v_max();
        for seq in 1..=300 {
            let before = c.q().to_vec();
            command(&mut c, Opcode::ServoJ, seq, &target, 0.0, 0.0, false);
            c.tick();
            for j in 0..6 {
                assert!((c.q()[j] - before[j]).abs() <= v[j] * c.dt() + 1e-12);
            }
        }
        assert_eq!(c.q(), &target[..]);
        assert_eq!(out_int(&c, ERROR_CODE_REG), 0);
    }

    const FIG3: &str = "def sg_grip(width):\n  return width\nend\ndef ext_256():\n  width = read_input_integer_register(19)\n  achieved = sg_grip(width)\n  sleep(0.01)\n  write_output_integer_register(19, achieved)\nend\n";

    #[test]
    fn extension_handshake() {
        let mut c = controller();
        assert_eq!(c.install_script(FIG3).unwrap(), vec![256]);
        write_i(&mut c, 19, 40);
        c.tick();
        write_f(&mut c, EXTENSION_TRIGGER_REGISTER, 256.0);
        let trigger_out = |c: &Controller| c.registers().get_float(Bank::OutputFloat, EXTENSION_TRIGGER_REGISTER).unwrap();
        let mut n = 0;
        while trigger_out(&c) != 256.0 {
            c.tick();
            n += 1;
            assert!(n < 100);
        }
        assert_eq!(n, 6, "sleep(0.01) at 500 Hz consumes 5 ticks");
        assert_eq!(out_int(&c, 19), 40);
        // Re-trigger before acknowledging is ignored.
        c.tick();
        assert_eq!(trigger_out(&c), 256.0);
        write_f(&mut c, EXTENSION_TRIGGER_REGISTER, 0.0);
        c.tick();
        assert_eq!(trigger_out(&c), 0.0);
    }

    #[test]
    fn unknown_extension_is_ignored_and_failures_are_negative() {
        let mut c = controller();
        c.install_script("def ext_300():\n  x = 1 / 0\nend\n").unwrap();
        write_f(&mut c, EXTENSION_TRIGGER_REGISTER, 999.0);
        c.tick();
        let out = |c: &Controller| c.registers().get_float(Bank::OutputFloat, EXTENSION_TRIGGER_REGISTER).unwrap();
        assert_eq!(out(&c), 0.0);
        write_f(&mut c, EXTENSION_TRIGGER_REGISTER, 300.0);
        c.tick();
        assert_eq!(out(&c), -300.0);
    }

    #[test]
    fn script_installation_errors() {
        let mut c = controller();
        let err = c.install_script("x = 1\ny = 2\nz = (\n").unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        let err = c
            .install_script("def ext_256():\nend\ndef ext_256():\nend\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 3"), "{err}");
        assert!(c.install_script("def ext_12():\nend\n").is_err());
        assert_eq!(c.install_script("").unwrap(), Vec::<u32>::new());
        command(&mut c, Opcode::Noop, 1, &[], 0.0, 0.0, false);
        c.tick();
        assert_eq!(out_int(&c, DONE_SEQ_REG), 1);
    }

    #[test]
    fn identical_inputs_give_identical_streams() {
        let run = || {
            let mut c = controller();
            c.install_script(FIG3).unwrap();
            let mut reg = RecipeRegistry::new();
            let names = crate::controller::layout::control_output_fields();
            c.subscribe(1, reg.output(&names, 250.0).unwrap());
            c.start(1);
            let mut stream = Vec::new();
            let mut target = c.tcp().to_array();
            target[2] -= 0.1;
            for k in 0..1500u32 {
                match k {
                    10 => command(&mut c, Opcode::MoveL, 1, &target, 0.1, 0.5, true),
                    20 => {
                        write_i(&mut c, 19, 55);
                        write_f(&mut c, EXTENSION_TRIGGER_REGISTER, 256.0);
                    }
                    600 => command(&mut c, Opcode::StopJ, 2, &[], 0.0, 5.0, false),
                    _ => {}
                }
                stream.extend(c.tick().into_iter().flat_map(|(_, p)| p));
            }
            stream
        };
        assert_eq!(run(), run());
    }
}
