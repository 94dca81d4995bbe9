//! Built-in plugins. Each one serves a single action; goals and results are JSON objects.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};

use nalgebra::Vector3;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use super::manifest::{PluginEntry, PluginKind};
use super::ServiceError;
use crate::client::{ClientError, ControlSession, DashboardSession, RobotSnapshot};
use crate::controller::ControllerConfig;
use crate::kinematics::{Chain, Pose6};
use crate::motion::parameterize_path;
use crate::wire::{Bank, Register, RegisterValue, EXTENSION_PARAM_REGISTER};

/// Default deceleration (rad/s²) used to stop the robot when a goal is cancelled.
pub const DEFAULT_CANCEL_DECEL: f64 = 2.0;
/// Ticks between feedback messages of long-running actions.
const FEEDBACK_TICKS: u64 = 50;

/// Plugin names accepted in a manifest, with their kind and action name.
pub const BUILTIN_PLUGINS: &[(&str, PluginKind, &str)] = &[
    ("MoveJ", PluginKind::Command, "move_j"),
    ("MoveL", PluginKind::Command, "move_l"),
    ("MoveUntilContact", PluginKind::Command, "move_until_contact"),
    ("SetDigitalOut", PluginKind::Command, "set_digital_out"),
    ("ExecuteTrajectory", PluginKind::Command, "execute_trajectory"),
    ("MoveDownUntilForce", PluginKind::Command, "move_down_until_force"),
    ("GripperGrip", PluginKind::Extension, "gripper_grip"),
    ("DashboardPlay", PluginKind::Dashboard, "dashboard_play"),
    ("DashboardStop", PluginKind::Dashboard, "dashboard_stop"),
    ("DashboardQuery", PluginKind::Dashboard, "dashboard_query"),
];

/// Why an action did not succeed.
#[derive(Debug)]
pub enum ActionError {
    /// Stopped on request; carries result fields describing where it stopped.
    Cancelled(Value),
    Failed(String),
}

impl From<ClientError> for ActionError {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::Cancelled => ActionError::Cancelled(json!({})),
            e => ActionError::Failed(e.to_string()),
        }
    }
}

/// What a plugin may use while executing a goal.
pub struct ActionContext<'a> {
    pub control: Option<&'a ControlSession>,
    pub dashboard: Option<&'a mut DashboardSession>,
    pub cancel: &'a AtomicBool,
    pub feedback: &'a mut dyn FnMut(Value),
}

impl<'a> ActionContext<'a> {
    pub fn control(&self) -> Result<&'a ControlSession, ActionError> {
        self.control
            .ok_or_else(|| ActionError::Failed("no control connection available".into()))
    }

    pub fn dashboard(&mut self) -> Result<&mut DashboardSession, ActionError> {
        self.dashboard
            .as_deref_mut()
            .ok_or_else(|| ActionError::Failed("no dashboard connection available".into()))
    }

    pub fn cancelled(&self) -> bool {
        self.cancel.load(Ordering::SeqCst)
    }
}

pub trait Plugin: Send {
    /// Name of the action this plugin serves.
    fn action(&self) -> &str;
    fn kind(&self) -> PluginKind;
    /// Helper definitions added to the control script before all snippets.
    fn preamble(&self) -> Option<String> {
        None
    }
    /// Body of the extension snippet (extension plugins only).
    fn snippet(&self) -> Option<String> {
        None
    }
    /// Called once with the extension id assigned from the manifest order.
    fn bind_extension(&mut self, _id: u32) {}
    fn execute(&mut self, ctx: &mut ActionContext, goal: &Value) -> Result<Value, ActionError>;
}

/// Typed access to a manifest entry's parameters; unknown keys are rejected.
struct Params<'a> {
    entry: &'a PluginEntry,
    known: Vec<&'static str>,
}

impl<'a> Params<'a> {
    fn new(entry: &'a PluginEntry) -> Self {
        Params { entry, known: Vec::new() }
    }

    fn error(&self, message: String) -> ServiceError {
        ServiceError::Plugin {
            plugin: self.entry.name.clone(),
            message,
        }
    }

    fn f64(&mut self, key: &'static str, default: f64) -> Result<f64, ServiceError> {
        self.known.push(key);
        match self.entry.parameters.get(key) {
            None => Ok(default),
            Some(toml::Value::Float(v)) => Ok(*v),
            Some(toml::Value::Integer(v)) => Ok(*v as f64),
            Some(v) => Err(self.error(format!("parameter '{key}' must be a number, got {v}"))),
        }
    }

    fn positive(&mut self, key: &'static str, default: f64) -> Result<f64, ServiceError> {
        let v = self.f64(key, default)?;
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(self.error(format!("parameter '{key}' must be positive, got {v}")))
        }
    }

    fn string(&mut self, key: &'static str, default: &str) -> Result<String, ServiceError> {
        self.known.push(key);
        match self.entry.parameters.get(key) {
            None => Ok(default.to_string()),
            Some(toml::Value::String(s)) => Ok(s.clone()),
            Some(v) => Err(self.error(format!("parameter '{key}' must be a string, got {v}"))),
        }
    }

    fn finish(self) -> Result<(), ServiceError> {
        match self.entry.parameters.keys().find(|k| !self.known.contains(&k.as_str())) {
            Some(k) => Err(self.error(format!("unknown parameter '{k}'"))),
            None => Ok(()),
        }
    }
}

/// Instantiates the built-in plugin named by `entry`.
pub fn builtin_plugin(entry: &PluginEntry) -> Result<Box<dyn Plugin>, ServiceError> {
    let Some((_, kind, action)) = BUILTIN_PLUGINS.iter().find(|(n, _, _)| *n == entry.name) else {
        let names: Vec<&str> = BUILTIN_PLUGINS.iter().map(|(n, _, _)| *n).collect();
        return Err(ServiceError::Plugin {
            plugin: entry.name.clone(),
            message: format!("unknown plugin (available: {})", names.join(", ")),
        });
    };
    if *kind != entry.kind {
        return Err(ServiceError::Plugin {
            plugin: entry.name.clone(),
            message: format!("is a {kind:?} plugin, manifest says {:?}", entry.kind).to_lowercase(),
        });
    }
    let mut p = Params::new(entry);
    let plugin: Box<dyn Plugin> = match entry.name.as_str() {
        "MoveJ" | "MoveL" | "MoveUntilContact" => Box::new(Motion {
            action,
            cancel_decel: p.positive("cancel_decel", DEFAULT_CANCEL_DECEL)?,
        }),
        "SetDigitalOut" => Box::new(SetDigitalOut),
        "ExecuteTrajectory" => {
            let chain_name = p.string("chain", &ControllerConfig::default().chain)?;
            let chain = ControllerConfig {
                chain: chain_name,
                ..ControllerConfig::default()
            }
            .load_chain()
            .map_err(|e| p.error(e.to_string()))?
            .chain;
            Box::new(ExecuteTrajectory {
                chain,
                cancel_decel: p.positive("cancel_decel", DEFAULT_CANCEL_DECEL)?,
            })
        }
        "MoveDownUntilForce" => Box::new(MoveDownUntilForce {
            defaults: ForceDescent {
                threshold_n: p.positive("threshold_n", 20.0)?,
                speed: p.positive("speed", 0.1)?,
                accel: p.positive("accel", 0.1)?,
                decel: p.positive("decel", 5.0)?,
                descent_m: p.positive("descent_m", 1.0)?,
                poll_s: p.positive("poll_s", 0.002)?,
            },
            cancel_decel: p.positive("cancel_decel", DEFAULT_CANCEL_DECEL)?,
        }),
        "GripperGrip" => Box::new(GripperGrip {
            id: 0,
            timeout_ticks: p.positive("timeout_ticks", 500.0)? as u64,
        }),
        "DashboardPlay" => Box::new(DashboardLine {
            action,
            line: Some("play"),
        }),
        "DashboardStop" => Box::new(DashboardLine {
            action,
            line: Some("stop"),
        }),
        "DashboardQuery" => Box::new(DashboardLine { action, line: None }),
        _ => unreachable!("listed in BUILTIN_PLUGINS"),
    };
    p.finish()?;
    Ok(plugin)
}

fn parse_goal<T: DeserializeOwned>(goal: &Value) -> Result<T, ActionError> {
    let goal = if goal.is_null() { json!({}) } else { goal.clone() };
    serde_json::from_value(goal).map_err(|e| ActionError::Failed(format!("invalid goal: {e}")))
}

fn snapshot_json(s: &RobotSnapshot) -> Value {
    json!({
        "timestamp": s.timestamp,
        "q": s.q,
        "qd": s.qd,
        "tcp_pose": s.tcp_pose,
        "tcp_force": s.tcp_force,
    })
}

/// Waits for `seq`; on cancellation stops the robot and reports where it stopped.
fn await_motion(ctx: &ActionContext, seq: i32, cancel_decel: f64) -> Result<crate::client::CommandOutcome, ActionError> {
    let control = ctx.control()?;
    match control.wait_for(seq, None, Some(ctx.cancel)) {
        Err(ClientError::Cancelled) => {
            control.stop_j(cancel_decel)?;
            Err(ActionError::Cancelled(json!({ "snapshot": snapshot_json(&control.snapshot()) })))
        }
        other => Ok(other?),
    }
}

struct Motion {
    action: &'static str,
    cancel_decel: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JointGoal {
    q: Vec<f64>,
    #[serde(default = "default_joint_speed")]
    speed: f64,
    #[serde(default = "default_joint_accel")]
    accel: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LinearGoal {
    pose: [f64; 6],
    #[serde(default = "default_linear_speed")]
    speed: f64,
    #[serde(default = "default_linear_accel")]
    accel: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ContactGoal {
    twist: [f64; 6],
}

fn default_joint_speed() -> f64 {
    1.05
}
fn default_joint_accel() -> f64 {
    1.4
}
fn default_linear_speed() -> f64 {
    0.25
}
fn default_linear_accel() -> f64 {
    1.2
}

impl Plugin for Motion {
    fn action(&self) -> &str {
        self.action
    }

    fn kind(&self) -> PluginKind {
        PluginKind::Command
    }

    fn execute(&mut self, ctx: &mut ActionContext, goal: &Value) -> Result<Value, ActionError> {
        let control = ctx.control()?;
        let seq = match self.action {
            "move_j" => {
                let g: JointGoal = parse_goal(goal)?;
                control.move_j(&g.q, g.speed, g.accel, true)?.seq
            }
            "move_l" => {
                let g: LinearGoal = parse_goal(goal)?;
                control.move_l(&Pose6::from_array(g.pose), g.speed, g.accel, true)?.seq
            }
            _ => {
                let g: ContactGoal = parse_goal(goal)?;
                let outcome = match control.move_until_contact_cancellable(g.twist, ctx.cancel) {
                    Err(ClientError::Cancelled) => {
                        control.stop_j(self.cancel_decel)?;
                        return Err(ActionError::Cancelled(json!({ "snapshot": snapshot_json(&control.snapshot()) })));
                    }
                    other => other?,
                };
                let s = control.snapshot();
                return Ok(json!({ "contact": outcome.contact == Some(true), "snapshot": snapshot_json(&s) }));
            }
        };
        await_motion(ctx, seq, self.cancel_decel)?;
        Ok(json!({ "snapshot": snapshot_json(&ctx.control()?.snapshot()) }))
    }
}

struct SetDigitalOut;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DigitalGoal {
    pin: u8,
    value: bool,
}

impl Plugin for SetDigitalOut {
    fn action(&self) -> &str {
        "set_digital_out"
    }

    fn kind(&self) -> PluginKind {
        PluginKind::Command
    }

    fn execute(&mut self, ctx: &mut ActionContext, goal: &Value) -> Result<Value, ActionError> {
        let g: DigitalGoal = parse_goal(goal)?;
        let s = ctx.control()?.set_standard_digital_out(g.pin, g.value)?;
        Ok(json!({ "digital_out": s.digital_out }))
    }
}

struct ExecuteTrajectory {
    chain: Chain,
    cancel_decel: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryGoal {
    waypoints: Vec<Vec<f64>>,
    #[serde(default = "one")]
    v_scale: f64,
    #[serde(default = "one")]
    a_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl Plugin for ExecuteTrajectory {
    fn action(&self) -> &str {
        "execute_trajectory"
    }

    fn kind(&self) -> PluginKind {
        PluginKind::Command
    }

    fn execute(&mut self, ctx: &mut ActionContext, goal: &Value) -> Result<Value, ActionError> {
        let g: TrajectoryGoal = parse_goal(goal)?;
        for s in [g.v_scale, g.a_scale] {
            if !(s > 0.0 && s <= 1.0) {
                return Err(ActionError::Failed(format!("scales must lie in (0, 1], got {s}")));
            }
        }
        let dof = self.chain.dof();
        if g.waypoints.len() < 2 {
            return Err(ActionError::Failed("at least 2 waypoints are required".into()));
        }
        if let Some(w) = g.waypoints.iter().find(|w| w.len() != dof) {
            return Err(ActionError::Failed(format!(
                "waypoint has {} values, the chain has {dof} joints",
                w.len()
            )));
        }
        let control = ctx.control()?;
        let dt = 1.0 / control.frequency();
        let v: Vec<f64> = self.chain.v_max().iter().map(|v| v * g.v_scale).collect();
        let a: Vec<f64> = self.chain.a_max().iter().map(|a| a * g.a_scale).collect();
        let traj = parameterize_path(&g.waypoints, &v, &a, dt).map_err(|e| ActionError::Failed(e.to_string()))?;

        let error = |s: &RobotSnapshot, target: &[f64]| {
            target.iter().zip(&s.q).map(|(t, q)| (t - q).abs()).fold(0.0, f64::max)
        };
        // The first sample is the start point; skip it when the robot is already there.
        let first = usize::from(error(&control.snapshot(), &traj.points[0]) < 1e-9);
        let total = traj.points.len() - first;
        let mut max_error: f64 = 0.0;
        let mut waypoint_qd = Vec::new();
        let start_time = control.snapshot().timestamp;
        for (k, target) in traj.points.iter().enumerate().skip(first) {
            if ctx.cancelled() {
                control.stop_j(self.cancel_decel)?;
                return Err(ActionError::Cancelled(json!({
                    "progress": (k - first) as f64 / total as f64,
                    "snapshot": snapshot_json(&control.snapshot()),
                })));
            }
            control.servo_j(target)?;
            let s = control.snapshot();
            max_error = max_error.max(error(&s, target));
            if traj.waypoint_indices.contains(&k) && k > 0 {
                waypoint_qd.push(s.qd[..dof].iter().fold(0.0, |m: f64, v| m.max(v.abs())));
            }
            let done = (k + 1 - first) as u64;
            if done % FEEDBACK_TICKS == 0 {
                (ctx.feedback)(json!({ "progress": done as f64 / total as f64, "ticks": done }));
            }
        }
        let s = control.snapshot();
        let planned: Vec<f64> = traj
            .waypoint_indices
            .iter()
            .map(|&i| traj.velocities[i].iter().fold(0.0, |m: f64, v| m.max(v.abs())))
            .collect();
        Ok(json!({
            "ticks": total,
            "duration": s.timestamp - start_time,
            "max_tracking_error": max_error,
            "final_error": error(&s, traj.points.last().expect("non-empty trajectory")),
            "waypoint_planned_speed": planned,
            "waypoint_measured_speed": waypoint_qd,
            "snapshot": snapshot_json(&s),
        }))
    }
}

/// Parameters of the guarded descent; every field can be overridden per goal.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
struct ForceDescent {
    threshold_n: f64,
    speed: f64,
    accel: f64,
    decel: f64,
    descent_m: f64,
    poll_s: f64,
}

struct MoveDownUntilForce {
    defaults: ForceDescent,
    cancel_decel: f64,
}

/// Force component along the tool flange's Z axis.
pub(crate) fn flange_z_force(s: &RobotSnapshot) -> f64 {
    let axis = s.tcp_pose.rotation_matrix().column(2).into_owned();
    Vector3::new(s.tcp_force[0], s.tcp_force[1], s.tcp_force[2]).dot(&axis)
}

impl Plugin for MoveDownUntilForce {
    fn action(&self) -> &str {
        "move_down_until_force"
    }

    fn kind(&self) -> PluginKind {
        PluginKind::Command
    }

    fn execute(&mut self, ctx: &mut ActionContext, goal: &Value) -> Result<Value, ActionError> {
        let overrides: BTreeMap<String, f64> = parse_goal(goal)?;
        let mut merged = serde_json::to_value(SerializableDescent::from(self.defaults)).expect("plain struct");
        for (k, v) in overrides {
            merged[k] = json!(v);
        }
        let p: ForceDescent = parse_goal(&merged)?;
        if [p.threshold_n, p.speed, p.accel, p.decel, p.descent_m, p.poll_s].iter().any(|v| !(*v > 0.0)) {
            return Err(ActionError::Failed("all parameters must be positive".into()));
        }
        let control = ctx.control()?;
        let poll_ticks = ((p.poll_s * control.frequency()).round() as u64).max(1);

        control.zero_ft_sensor()?;
        let start = control.snapshot().tcp_pose;
        let mut target = start;
        target.position.z -= p.descent_m;
        let seq = control.move_l(&target, p.speed, p.accel, true)?.seq;
        let mut ticks = 0u64;
        loop {
            if ctx.cancelled() {
                control.stop_j(self.cancel_decel)?;
                return Err(ActionError::Cancelled(json!({ "snapshot": snapshot_json(&control.snapshot()) })));
            }
            let s = control.idle(poll_ticks)?;
            ticks += poll_ticks;
            let fz = flange_z_force(&s);
            if fz.abs() > p.threshold_n {
                control.stop_j(p.decel)?;
                let stopped = control.snapshot();
                return Ok(json!({
                    "contact": true,
                    "trigger_force_z": fz,
                    "trigger_wrench": s.tcp_force,
                    "force_z": flange_z_force(&stopped),
                    "wrench": stopped.tcp_force,
                    "pose": stopped.tcp_pose,
                    "snapshot": snapshot_json(&stopped),
                }));
            }
            if control.poll(seq)?.is_some() {
                return Ok(json!({
                    "contact": false,
                    "force_z": fz,
                    "wrench": s.tcp_force,
                    "pose": s.tcp_pose,
                    "snapshot": snapshot_json(&s),
                }));
            }
            if ticks % FEEDBACK_TICKS < poll_ticks {
                (ctx.feedback)(json!({ "z": s.tcp_pose.position.z, "force_z": fz }));
            }
        }
    }
}

#[derive(serde::Serialize)]
struct SerializableDescent {
    threshold_n: f64,
    speed: f64,
    accel: f64,
    decel: f64,
    descent_m: f64,
    poll_s: f64,
}

impl From<ForceDescent> for SerializableDescent {
    fn from(d: ForceDescent) -> Self {
        SerializableDescent {
            threshold_n: d.threshold_n,
            speed: d.speed,
            accel: d.accel,
            decel: d.decel,
            descent_m: d.descent_m,
            poll_s: d.poll_s,
        }
    }
}

/// Simulated gripper driver: `sg_grip` clamps the requested width to [0, 100] mm and reports it.
pub const GRIPPER_PREAMBLE: &str = "\
def sg_grip(width):
  if width < 0:
    width = 0
  end
  if width > 100:
    width = 100
  end
  return width
end
";

/// Fig. 3-style snippet: parameter in input_int[19], achieved width in output_int[19].
pub const GRIPPER_SNIPPET: &str = "\
width = read_input_integer_register(19)
achieved = sg_grip(width)
write_output_integer_register(19, achieved)
";

struct GripperGrip {
    id: u32,
    timeout_ticks: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GripGoal {
    width: i32,
}

impl Plugin for GripperGrip {
    fn action(&self) -> &str {
        "gripper_grip"
    }

    fn kind(&self) -> PluginKind {
        PluginKind::Extension
    }

    fn preamble(&self) -> Option<String> {
        Some(GRIPPER_PREAMBLE.into())
    }

    fn snippet(&self) -> Option<String> {
        Some(GRIPPER_SNIPPET.into())
    }

    fn bind_extension(&mut self, id: u32) {
        self.id = id;
    }

    fn execute(&mut self, ctx: &mut ActionContext, goal: &Value) -> Result<Value, ActionError> {
        let g: GripGoal = parse_goal(goal)?;
        let values = ctx.control()?.trigger_extension(
            self.id,
            &[(Register::new(Bank::InputInt, EXTENSION_PARAM_REGISTER), RegisterValue::Int(g.width))],
            &[Register::new(Bank::OutputInt, EXTENSION_PARAM_REGISTER)],
            self.timeout_ticks,
        )?;
        let achieved = match values[0] {
            RegisterValue::Int(v) => v,
            RegisterValue::Float(v) => v as i32,
        };
        Ok(json!({ "extension_id": self.id, "requested": g.width, "achieved": achieved }))
    }
}

struct DashboardLine {
    action: &'static str,
    /// Fixed request line; `None` takes it from the goal's `query` (default `running?`).
    line: Option<&'static str>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryGoal {
    #[serde(default = "default_query")]
    query: String,
}

fn default_query() -> String {
    "running?".into()
}

impl Plugin for DashboardLine {
    fn action(&self) -> &str {
        self.action
    }

    fn kind(&self) -> PluginKind {
        PluginKind::Dashboard
    }

    fn execute(&mut self, ctx: &mut ActionContext, goal: &Value) -> Result<Value, ActionError> {
        let line = match self.line {
            Some(l) => l.to_string(),
            None => parse_goal::<QueryGoal>(goal)?.query,
        };
        let reply = ctx.dashboard()?.send(&line)?;
        Ok(json!({ "reply": reply }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::script::{compile, evaluate, CollectingHost, Env};

    fn entry(name: &str, kind: PluginKind) -> PluginEntry {
        PluginEntry {
            name: name.into(),
            kind,
            parameters: BTreeMap::new(),
        }
    }

    #[test]
    fn builtin_lookup_checks_kind_and_parameters() {
        assert_eq!(builtin_plugin(&entry("GripperGrip", PluginKind::Extension)).unwrap().action(), "gripper_grip");
        let err = builtin_plugin(&entry("GripperGrip", PluginKind::Command)).err().unwrap().to_string();
        assert!(err.contains("GripperGrip"), "{err}");
        assert!(builtin_plugin(&entry("Nope", PluginKind::Command)).is_err());
        let mut e = entry("MoveDownUntilForce", PluginKind::Command);
        e.parameters.insert("bogus".into(), toml::Value::Integer(1));
        assert!(builtin_plugin(&e).err().unwrap().to_string().contains("bogus"));
        e.parameters.clear();
        e.parameters.insert("threshold_n".into(), toml::Value::Float(-1.0));
        assert!(builtin_plugin(&e).is_err());
    }

    #[test]
    fn gripper_stub_clamps() {
        let program = compile(GRIPPER_PREAMBLE).unwrap();
        let mut env = Env::new();
        let mut host = CollectingHost::default();
        evaluate(&program, &mut env, &mut host).unwrap();
        for (w, expect) in [(40.0, 40.0), (150.0, 100.0), (-5.0, 0.0)] {
            let v = env.call("sg_grip", &[crate::script::Value::Number(w)], &mut host).unwrap();
            assert_eq!(v, crate::script::Value::Number(expect));
        }
        assert!(compile(GRIPPER_SNIPPET).is_ok());
    }

    #[test]
    fn flange_axis_projection() {
        let mut s = RobotSnapshot::default();
        // Tool pointing down: rotation of π about X.
        s.tcp_pose = Pose6::new(Vector3::zeros(), Vector3::new(std::f64::consts::PI, 0.0, 0.0));
        s.tcp_force = [15.0, 0.0, 22.0, 0.0, 0.0, 0.0];
        assert!((flange_z_force(&s) + 22.0).abs() < 1e-9);
    }
}
