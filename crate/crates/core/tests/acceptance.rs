//! End-to-end acceptance checks, one line per criterion.
//!
//! Run with `cargo test -p urstack --test acceptance`; exits non-zero if any criterion fails.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::{json, Value};
use urstack::client::{ClientError, ControlScript, ControlSession, ReceiveSession, RobotSnapshot};
use urstack::controller::{ControllerConfig, ControllerHost, ForceEnv, InjectedEvent, TimeMode};
use urstack::kinematics::{fk, ik_dls, jacobian, matrix_to_rotvec, Chain, DHJoint, IkOptions};
use urstack::motion::plan_trapezoid;
use urstack::script::{compile, evaluate, CollectingHost, Env};
use urstack::services::{
    ActionServer, ActionServerConfig, LineClient, PluginManifest, StateReceiver, StateReceiverConfig,
    GRIPPER_PREAMBLE, GRIPPER_SNIPPET,
};
use urstack::wire::{
    build_input_recipe, build_output_recipe, decode_frames, encode_frame, Bank, FieldValue, Frame, FrameDecoder,
    PacketType, Recipe, Register, RegisterValue,
};

type Outcome = Result<String, String>;

macro_rules! check {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

const WAIT: Duration = Duration::from_secs(30);

fn host_with(chain: &str, force: ForceEnv) -> ControllerHost {
    ControllerHost::spawn(ControllerConfig {
        chain: chain.into(),
        force,
        rtde_port: 0,
        dashboard_port: 0,
        time_mode: TimeMode::Virtual,
        ..ControllerConfig::default()
    })
    .expect("controller starts")
}

fn host() -> ControllerHost {
    host_with("six_dof_example", ForceEnv::default())
}

fn server_config(h: &ControllerHost) -> ActionServerConfig {
    ActionServerConfig {
        robot: Some(h.rtde_addr().to_string()),
        dashboard: Some(h.dashboard_addr().to_string()),
        bind: "127.0.0.1:0".into(),
    }
}

/// Submits one goal and returns its result body.
fn run_goal(server: &ActionServer, action: &str, goal: Value) -> Value {
    let mut c = LineClient::connect(server.addr()).unwrap();
    c.set_timeout(Some(WAIT)).unwrap();
    c.send(&json!({ "id": 1, "phase": "goal", "action": action, "body": goal })).unwrap();
    loop {
        let m = c.recv().unwrap();
        if m["phase"] == "result" {
            return m["body"].clone();
        }
    }
}

/// Collects every package a receive session sees, up to a stamp given at the end.
struct Recorder {
    until: Arc<AtomicU64>,
    handle: thread::JoinHandle<Vec<RobotSnapshot>>,
}

impl Recorder {
    fn start(session: ReceiveSession) -> Recorder {
        let until = Arc::new(AtomicU64::new(f64::NAN.to_bits()));
        let target = until.clone();
        let handle = thread::spawn(move || {
            let mut all: Vec<RobotSnapshot> = Vec::new();
            let deadline = || Instant::now() + WAIT;
            let mut give_up = deadline();
            loop {
                match session.wait_backlog(Duration::from_millis(20)) {
                    Ok(batch) => all.extend(batch),
                    Err(_) => break,
                }
                let stop = f64::from_bits(target.load(Ordering::SeqCst));
                if stop.is_nan() {
                    give_up = deadline();
                } else if all.last().is_some_and(|s| s.timestamp >= stop - 1e-9) || Instant::now() > give_up {
                    break;
                }
            }
            all
        });
        Recorder { until, handle }
    }

    /// Returns the packages once one stamped at or after `until` has arrived.
    fn finish(self, until: f64) -> Vec<RobotSnapshot> {
        self.until.store(until.to_bits(), Ordering::SeqCst);
        self.handle.join().unwrap()
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn wait_until(what: &str, mut cond: impl FnMut() -> bool) {
    let deadline = Instant::now() + WAIT;
    while !cond() {
        assert!(Instant::now() < deadline, "timed out waiting for {what}");
        thread::sleep(Duration::from_millis(1));
    }
}

// ---------------------------------------------------------------------------
// 1. Wire codec

const PACKET_TYPES: [PacketType; 7] = [
    PacketType::ProtocolVersion,
    PacketType::SetupOutputs,
    PacketType::SetupInputs,
    PacketType::Start,
    PacketType::Pause,
    PacketType::DataPackage,
    PacketType::ControlScript,
];

fn random_double(rng: &mut StdRng) -> f64 {
    // Arbitrary bit patterns, NaN payloads and infinities included.
    f64::from_bits(rng.gen())
}

fn random_output_recipe(rng: &mut StdRng) -> Recipe {
    let mut pool: Vec<String> = ["timestamp", "actual_q", "actual_qd", "actual_TCP_pose", "actual_TCP_force"]
        .iter()
        .map(|s| s.to_string())
        .chain(["actual_digital_input_bits".to_string(), "actual_digital_output_bits".to_string()])
        .chain((0..24).map(|i| format!("output_int_register_{i}")))
        .chain((0..24).map(|i| format!("output_double_register_{i}")))
        .collect();
    let n = rng.gen_range(1..=12);
    let mut names = Vec::new();
    for _ in 0..n {
        let i = rng.gen_range(0..pool.len());
        names.push(pool.swap_remove(i));
    }
    build_output_recipe(rng.gen_range(1..=255), &names, rng.gen_range(1.0..=500.0)).unwrap()
}

fn random_input_recipe(rng: &mut StdRng) -> Recipe {
    let mut pool: Vec<String> = ["standard_digital_output_mask".to_string(), "standard_digital_output".to_string()]
        .into_iter()
        .chain((0..24).map(|i| format!("input_int_register_{i}")))
        .chain((0..24).map(|i| format!("input_double_register_{i}")))
        .collect();
    let n = rng.gen_range(1..=12);
    let mut names = Vec::new();
    for _ in 0..n {
        let i = rng.gen_range(0..pool.len());
        names.push(pool.swap_remove(i));
    }
    build_input_recipe(rng.gen_range(1..=255), &names).unwrap()
}

fn random_values(rng: &mut StdRng, recipe: &Recipe) -> Vec<FieldValue> {
    use urstack::wire::FieldKind;
    recipe
        .fields
        .iter()
        .map(|f| match f.kind {
            FieldKind::Double => FieldValue::Double(random_double(rng)),
            FieldKind::Int32 => FieldValue::Int32(rng.gen()),
            FieldKind::UInt32 => FieldValue::UInt32(rng.gen()),
            FieldKind::UInt64 => FieldValue::UInt64(rng.gen()),
            FieldKind::Bool => FieldValue::Bool(rng.gen()),
            FieldKind::Vector6D => FieldValue::Vector6D(std::array::from_fn(|_| random_double(rng))),
        })
        .collect()
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let mut rng = StdRng::seed_from_u64(1);
    let mut frames = Vec::new();
    let mut stream = Vec::new();
    for k in 0..10_000 {
        // Half the frames carry data-package payloads of random recipes.
        let frame = if k % 2 == 0 {
            let recipe = if rng.gen() { random_output_recipe(&mut rng) } else { random_input_recipe(&mut rng) };
            let values = random_values(&mut rng, &recipe);
            let payload = recipe.pack(&values).map_err(|e| e.to_string())?;
            check!(payload.len() == recipe.payload_width(), "payload width");
            let back = recipe.unpack(&payload).map_err(|e| e.to_string())?;
            check!(
                back.len() == values.len() && back.iter().zip(&values).all(|(a, b)| a.bit_eq(b)),
                "payload {k} did not round-trip"
            );
            // A truncated or extended payload is rejected, never decoded.
            let cut = rng.gen_range(0..payload.len());
            check!(recipe.unpack(&payload[..cut]).is_err(), "truncated payload {k} decoded");
            let mut long = payload.clone();
            long.push(0);
            check!(recipe.unpack(&long).is_err(), "extended payload {k} decoded");
            Frame::new(PacketType::DataPackage, payload)
        } else {
            let len = rng.gen_range(0..300);
            let payload: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            Frame::new(PACKET_TYPES[rng.gen_range(0..PACKET_TYPES.len())], payload)
        };
        let bytes = encode_frame(frame.kind, &frame.payload).map_err(|e| e.to_string())?;
        let (decoded, rest) = decode_frames(&bytes).map_err(|e| e.to_string())?;
        check!(decoded == [frame.clone()] && rest.is_empty(), "frame {k} did not round-trip");
        // Every strict prefix is incomplete: no frame, all bytes kept.
        let cut = rng.gen_range(0..bytes.len());
        let (partial, rest) = decode_frames(&bytes[..cut]).map_err(|e| e.to_string())?;
        check!(partial.is_empty() && rest == bytes[..cut], "prefix of frame {k} mis-parsed");
        stream.extend_from_slice(&bytes);
        frames.push(frame);
    }

    // The whole stream, fed in random chunks.
    let mut decoder = FrameDecoder::new();
    let mut out = Vec::new();
    let mut at = 0;
    while at < stream.len() {
        let n = rng.gen_range(1..=64).min(stream.len() - at);
        out.extend(decoder.push(&stream[at..at + n]).map_err(|e| e.to_string())?);
        at += n;
    }
    check!(out == frames && decoder.pending() == 0, "chunked stream decoded differently");

    // A stream truncated anywhere yields exactly the frames wholly before the cut.
    let mut boundaries = vec![0];
    for f in &frames {
        boundaries.push(boundaries.last().unwrap() + f.payload.len() + 3);
    }
    for _ in 0..200 {
        let cut = rng.gen_range(0..stream.len());
        let (got, rest) = decode_frames(&stream[..cut]).map_err(|e| e.to_string())?;
        let complete = boundaries.iter().filter(|b| **b <= cut).count() - 1;
        check!(got.len() == complete && got[..] == frames[..complete], "stream cut at {cut} mis-parsed");
        check!(rest.len() == cut - boundaries[complete], "stream cut at {cut} lost bytes");
    }
    let elapsed = started.elapsed().as_secs_f64();
    check!(elapsed < 10.0, "took {elapsed:.2} s");
    Ok(format!("10000 frames, 5000 payloads round-trip bit-exactly; truncations rejected; {elapsed:.2} s"))
}

// ---------------------------------------------------------------------------
// 2. Kinematics

fn random_chain(rng: &mut StdRng) -> Chain {
    let n = rng.gen_range(1..=7);
    let joints = (0..n)
        .map(|_| {
            DHJoint::new(
                rng.gen_range(-0.6..0.6),
                rng.gen_range(-PI..PI),
                rng.gen_range(-0.4..0.4),
            )
        })
        .collect();
    Chain::new(joints).unwrap()
}

fn criterion_2() -> Outcome {
    let mut rng = StdRng::seed_from_u64(2);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let chain = random_chain(&mut rng);
        let q: Vec<f64> = (0..chain.dof()).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let j = jacobian(&chain, &q).map_err(|e| e.to_string())?;
        for i in 0..chain.dof() {
            let (mut plus, mut minus) = (q.clone(), q.clone());
            plus[i] += h;
            minus[i] -= h;
            let (p, m) = (fk(&chain, &plus).unwrap(), fk(&chain, &minus).unwrap());
            let lin = (p.position - m.position) / (2.0 * h);
            let ang = matrix_to_rotvec(&(p.rotation_matrix() * m.rotation_matrix().transpose())) / (2.0 * h);
            for r in 0..3 {
                worst = worst.max((j[(r, i)] - lin[r]).abs()).max((j[(r + 3, i)] - ang[r]).abs());
            }
        }
    }
    check!(worst < 1e-6, "Jacobian vs finite differences: {worst:e}");

    let robot = Chain::builtin("six_dof_example").unwrap().chain;
    let opts = IkOptions::default();
    let mut converged = 0;
    for _ in 0..100 {
        let q: Vec<f64> = (0..6).map(|_| rng.gen_range(-PI..PI)).collect();
        let target = fk(&robot, &q).unwrap();
        // A perturbation of random direction and norm up to 0.1 rad.
        let dir: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let len = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        let radius = rng.gen_range(0.0..0.1);
        let seed: Vec<f64> = q.iter().zip(&dir).map(|(v, d)| v + d / len * radius).collect();
        let sol = ik_dls(&robot, &seed, &target, opts).map_err(|e| e.to_string())?;
        if sol.converged && sol.error < 1e-6 && sol.iterations <= 200 {
            converged += 1;
        }
    }
    check!(converged >= 95, "IK converged in {converged}/100 trials");
    Ok(format!("Jacobian max error {worst:.1e} over 50 chains; IK converged {converged}/100"))
}

// ---------------------------------------------------------------------------
// 3. Motion

fn criterion_3() -> Outcome {
    let mut rng = StdRng::seed_from_u64(3);
    let (mut worst_dist, mut worst_v, mut worst_a): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..1000 {
        let d = rng.gen_range(-5.0..5.0) * if rng.gen_bool(0.2) { 1e-3 } else { 1.0 };
        let v = rng.gen_range(0.05..3.0);
        let a = rng.gen_range(0.05..10.0);
        let p = plan_trapezoid(d, v, a).map_err(|e| e.to_string())?;
        // Exact area under the piecewise-linear velocity, plus the sampled end point.
        let area = p.v_peak.abs() * (p.t_acc + p.t_cruise);
        worst_dist = worst_dist.max((area - d.abs()).abs()).max((p.sample(p.t_total).0 - d).abs());
        worst_v = worst_v.max(p.v_peak.abs() - v);
        worst_a = worst_a.max(p.accel.abs() - a);
        let steps = 400;
        let dt = p.t_total / steps as f64;
        let mut prev = p.sample(0.0).1;
        for k in 1..=steps {
            let vel = p.sample(k as f64 * dt).1;
            worst_v = worst_v.max(vel.abs() - v);
            if dt > 0.0 {
                worst_a = worst_a.max(((vel - prev) / dt).abs() - a);
            }
            prev = vel;
        }
    }
    check!(worst_dist < 1e-9, "distance error {worst_dist:e}");
    check!(worst_v <= 1e-6 && worst_a <= 1e-6, "limit excess v {worst_v:e}, a {worst_a:e}");
    let t1 = plan_trapezoid(2.0, 1.0, 1.0).unwrap().t_total;
    check!(t1 == 3.0, "(2,1,1) t_total = {t1}");
    let t2 = plan_trapezoid(0.5, 1.0, 1.0).unwrap().t_total;
    check!((t2 - 2.0 * 0.5f64.sqrt()).abs() < 1e-12, "(0.5,1,1) t_total = {t2}");
    Ok(format!("1000 profiles, distance error {worst_dist:.1e}; t(2,1,1) = {t1}; t(0.5,1,1) = {t2}"))
}

// ---------------------------------------------------------------------------
// 4. Extension handshake

const GRIPPER_MANIFEST: &str = r#"
[[plugin]]
name = "GripperGrip"
kind = "extension"
"#;

/// Runs gripper_grip(40) through an action server; returns the result and the trigger
/// register trace seen by a passive receiver.
fn gripper_run() -> (Value, Vec<(u64, u64, i32)>) {
    let h = host();
    let fields = ["timestamp", "output_double_register_18", "output_int_register_19"];
    let recorder = Recorder::start(ReceiveSession::connect(h.rtde_addr(), &fields, 500.0).unwrap());
    let manifest = PluginManifest::from_toml_str(GRIPPER_MANIFEST).unwrap();
    let server = ActionServer::spawn(&manifest, &server_config(&h)).unwrap();
    let result = run_goal(&server, "gripper_grip", json!({ "width": 40 }));
    drop(server);
    let ticks = h.stats().ticks.load(Ordering::SeqCst);
    let trace = recorder.finish(ticks as f64 / h.frequency());
    let trace = trace
        .iter()
        .map(|s| (s.timestamp.to_bits(), s.output_float[18].to_bits(), s.output_int[19]))
        .collect();
    (result, trace)
}

fn criterion_4() -> Outcome {
    let (result, trace) = gripper_run();
    check!(result["status"] == "succeeded", "result {result}");
    check!(result["achieved"] == 40, "achieved {}", result["achieved"]);
    let trigger: Vec<f64> = trace.iter().map(|t| f64::from_bits(t.1)).collect();
    let mut phases: Vec<f64> = Vec::new();
    for v in &trigger {
        if phases.last() != Some(v) {
            phases.push(*v);
        }
    }
    check!(phases == [0.0, 256.0, 0.0], "output_float[18] went through {phases:?}");
    let at_done = trace.iter().find(|t| f64::from_bits(t.1) == 256.0).unwrap();
    check!(at_done.2 == 40, "output_int[19] = {} at completion", at_done.2);

    let (_, again) = gripper_run();
    check!(trace == again, "register traces of two runs differ");

    // Parameter writes reach the wire before the trigger.
    let h = host();
    let mut script = ControlScript::new();
    script.add_preamble(GRIPPER_PREAMBLE);
    script.add_snippet(256, GRIPPER_SNIPPET);
    let c = ControlSession::connect_with_script(h.rtde_addr(), &script.render()).map_err(|e| e.to_string())?;
    c.set_wire_tap(true);
    c.trigger_extension(
        256,
        &[(Register::new(Bank::InputInt, 19), RegisterValue::Int(40))],
        &[Register::new(Bank::OutputInt, 19)],
        500,
    )
    .map_err(|e| e.to_string())?;
    let log = c.take_wire_log();
    let value = |pkg: &Vec<(String, FieldValue)>, name: &str| pkg.iter().find(|(n, _)| n == name).map(|p| p.1);
    let param = log.iter().position(|p| value(p, "input_int_register_19") == Some(FieldValue::Int32(40)));
    let trig = log.iter().position(|p| value(p, "input_double_register_18") == Some(FieldValue::Double(256.0)));
    let (Some(param), Some(trig)) = (param, trig) else {
        return Err("parameter or trigger missing from the wire log".into());
    };
    check!(param < trig, "parameter package {param} not before trigger package {trig}");
    Ok(format!(
        "returned 40; output_float[18] 0→256→0 over {} packages, identical across runs; param package {param} < trigger {trig}",
        trace.len()
    ))
}

// ---------------------------------------------------------------------------
// 5. Force-guarded descent with lateral disturbances

fn criterion_5() -> Outcome {
    let started = Instant::now();
    let windows = [(1.0, 1.5), (2.0, 2.5)];
    let h = host_with(
        "six_dof_example",
        ForceEnv {
            plane_z: 0.2,
            stiffness: 1000.0,
            events: vec![
                InjectedEvent::parse("1.0,1.5,15,0,0,0,0,0").unwrap(),
                InjectedEvent::parse("2.0,2.5,0,15,0,0,0,0").unwrap(),
            ],
        },
    );
    let recorder = Recorder::start(ReceiveSession::connect_default(h.rtde_addr(), 500.0).unwrap());
    let manifest = PluginManifest::from_toml_str("[[plugin]]\nname = \"MoveDownUntilForce\"\nkind = \"command\"\n").unwrap();
    let server = ActionServer::spawn(&manifest, &server_config(&h)).unwrap();
    let r = run_goal(&server, "move_down_until_force", json!({}));
    let wall = started.elapsed().as_secs_f64();
    let stop_time = r["snapshot"]["timestamp"].as_f64().unwrap_or_default();
    let trace = recorder.finish(stop_time);

    check!(r["status"] == "succeeded" && r["contact"] == true, "result {r}");
    let fz = r["force_z"].as_f64().unwrap().abs();
    check!((20.0..=25.0).contains(&fz), "|F_z| = {fz}");
    let qd: Vec<f64> = r["snapshot"]["qd"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    check!(max_abs(&qd) < 1e-6, "joint speed after stop {:e}", max_abs(&qd));
    check!(stop_time > windows[1].1, "stopped at t = {stop_time}, before the second disturbance ended");
    for (t0, t1) in windows {
        let inside: Vec<&RobotSnapshot> = trace.iter().filter(|s| s.timestamp > t0 && s.timestamp < t1).collect();
        check!(!inside.is_empty(), "no packages during [{t0}, {t1})");
        check!(
            inside.iter().all(|s| max_abs(&s.qd) > 1e-3 && max_abs(&s.tcp_force[..2]) >= 14.0),
            "motion not sustained through the disturbance [{t0}, {t1})"
        );
    }
    check!(wall < 5.0, "took {wall:.2} s");
    Ok(format!(
        "stopped at t = {stop_time:.3} s with |F_z| = {fz:.2} N, max |qd| = {:.1e}; both 15 N pulses passed; {wall:.2} s",
        max_abs(&qd)
    ))
}

// ---------------------------------------------------------------------------
// 6. Trajectory execution

fn criterion_6() -> Outcome {
    let h = host_with("one_joint", ForceEnv::default());
    let manifest = PluginManifest::from_toml_str(
        "[[plugin]]\nname = \"ExecuteTrajectory\"\nkind = \"command\"\n[plugin.parameters]\nchain = \"one_joint\"\n",
    )
    .unwrap();
    let server = ActionServer::spawn(&manifest, &server_config(&h)).unwrap();
    let dt = 1.0 / h.frequency();
    let home = run_goal(&server, "execute_trajectory", json!({ "waypoints": [[0.0], [0.0]] }));
    check!(home["status"] == "succeeded", "{home}");

    let r = run_goal(&server, "execute_trajectory", json!({ "waypoints": [[0.0], [1.0]] }));
    check!(r["status"] == "succeeded", "{r}");
    let duration = r["duration"].as_f64().unwrap();
    check!((duration - 2.0).abs() <= dt + 1e-9, "duration {duration}");
    let tracking = r["max_tracking_error"].as_f64().unwrap();
    let terminal = r["final_error"].as_f64().unwrap();
    check!(tracking < 1e-3, "tracking error {tracking:e}");
    check!(terminal < 1e-6, "terminal error {terminal:e}");

    let r = run_goal(&server, "execute_trajectory", json!({ "waypoints": [[1.0], [0.5], [-0.5], [0.0]] }));
    check!(r["status"] == "succeeded", "{r}");
    let planned: Vec<f64> = r["waypoint_planned_speed"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let measured: Vec<f64> = r["waypoint_measured_speed"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    // One entry per waypoint; the ends are at rest anyway.
    check!(planned.len() == 4 && planned.iter().all(|v| *v == 0.0), "planned speeds {planned:?}");
    // Measured at every waypoint after the start, on the tick grid: one tick of acceleration is allowed.
    check!(measured.len() == 3 && measured.iter().all(|v| v.abs() <= 1.0 * dt + 1e-9), "measured speeds {measured:?}");
    check!(r["max_tracking_error"].as_f64().unwrap() < 1e-3, "{r}");
    check!(r["final_error"].as_f64().unwrap() < 1e-6, "{r}");
    Ok(format!(
        "duration {duration:.3} s; tracking {tracking:.1e}; terminal {terminal:.1e}; speeds at waypoints {measured:?}"
    ))
}

// ---------------------------------------------------------------------------
// 7. Exclusivity and fan-out

/// A fixed virtual-time workload; returns every package the control session saw, as bits.
fn workload(observers: bool) -> Result<(Vec<Vec<u64>>, u64), String> {
    let h = host();
    let mut receivers = Vec::new();
    let mut state = None;
    if observers {
        for f in [500.0, 250.0, 125.0] {
            receivers.push(ReceiveSession::connect_default(h.rtde_addr(), f).map_err(|e| e.to_string())?);
        }
        state = Some(
            StateReceiver::spawn(&StateReceiverConfig {
                robot: h.rtde_addr().to_string(),
                frequency: 100.0,
                bind: "127.0.0.1:0".into(),
            })
            .map_err(|e| e.to_string())?,
        );
    }
    let mut script = ControlScript::new();
    script.add_preamble(GRIPPER_PREAMBLE);
    script.add_snippet(256, GRIPPER_SNIPPET);
    let c = ControlSession::connect_with_script(h.rtde_addr(), &script.render()).map_err(|e| e.to_string())?;
    match ControlSession::connect(h.rtde_addr()) {
        Err(ClientError::ControlBusy(_)) => {}
        other => return Err(format!("second control connection: {:?}", other.err())),
    }
    let bits = |s: &RobotSnapshot| -> Vec<u64> {
        let mut v: Vec<u64> = vec![s.timestamp.to_bits()];
        v.extend(s.q.iter().chain(&s.qd).chain(&s.tcp_force).map(|x| x.to_bits()));
        v.extend(s.output_float.iter().map(|x| x.to_bits()));
        v.extend(s.output_int.iter().map(|x| *x as u32 as u64));
        v
    };
    let mut seen = Vec::new();
    let mut target = c.snapshot().q;
    target[0] += 0.4;
    target[2] -= 0.2;
    c.move_j(&target, 1.0, 2.0, true).map_err(|e| e.to_string())?;
    for _ in 0..300 {
        seen.push(bits(&c.step().map_err(|e| e.to_string())?));
    }
    c.trigger_extension(
        256,
        &[(Register::new(Bank::InputInt, 19), RegisterValue::Int(40))],
        &[Register::new(Bank::OutputInt, 19)],
        500,
    )
    .map_err(|e| e.to_string())?;
    for _ in 0..300 {
        seen.push(bits(&c.step().map_err(|e| e.to_string())?));
    }
    let mut streamed = 0;
    if observers {
        for r in &receivers {
            r.wait_received(1, WAIT).map_err(|e| e.to_string())?;
            streamed += r.received();
        }
        let sr = state.as_ref().unwrap();
        wait_until("state receiver cycles", || sr.cycles() > 0);
        streamed += sr.cycles();
    }
    Ok((seen, streamed))
}

fn criterion_7() -> Outcome {
    let (alone, _) = workload(false)?;
    let (observed, streamed) = workload(true)?;
    check!(streamed > 0, "observers received nothing");
    check!(alone == observed, "control outputs differ with observers attached");
    Ok(format!(
        "second control connection refused; {} packages bitwise identical with 3 receivers + 1 state receiver ({streamed} packages streamed)",
        alone.len()
    ))
}

// ---------------------------------------------------------------------------
// 8. Timing

fn criterion_8() -> Outcome {
    let h = host();
    let fast = ReceiveSession::connect(h.rtde_addr(), &["timestamp"], 500.0).map_err(|e| e.to_string())?;
    let slow = ReceiveSession::connect(h.rtde_addr(), &["timestamp"], 125.0).map_err(|e| e.to_string())?;
    let c = ControlSession::connect(h.rtde_addr()).map_err(|e| e.to_string())?;
    let n: u64 = 1000;
    let done = h.stats().ticks.load(Ordering::SeqCst);
    c.idle(n - done).map_err(|e| e.to_string())?;
    let ticks = h.stats().ticks.load(Ordering::SeqCst);
    check!(ticks == n, "controller ran {ticks} ticks");
    fast.wait_received(n, WAIT).map_err(|e| e.to_string())?;
    slow.wait_received(n / 4, WAIT).map_err(|e| e.to_string())?;
    // Give any surplus package time to show up.
    thread::sleep(Duration::from_millis(200));
    let (nf, ns) = (fast.received(), slow.received());
    check!(nf == n && ns == n / 4, "{nf} packages at 500 Hz, {ns} at 125 Hz");
    Ok(format!("{n} ticks → {nf} packages at 500 Hz, {ns} at 125 Hz"))
}

// ---------------------------------------------------------------------------
// 9. Interpreter

const SYNTAX_CORPUS: &[(&str, usize)] = &[
    ("if x > 0:\n y = 1\n", 2),
    ("while True:\n", 1),
    ("def f(:\nend", 1),
    ("def f(a, a):\nend", 1),
    ("def (a):\nend", 1),
    ("x = \n", 1),
    ("x = 1\ny = (2 + 3\n", 2),
    ("x = 1 +* 2", 1),
    ("\n\nend", 3),
    ("x = 1\nelse:\n", 2),
    ("if x\n  y = 1\nend", 1),
    ("x = 1 2", 1),
    ("f(1,,2)", 1),
    ("x = \"open", 1),
    ("a = 1\nb = 2 @ 3", 2),
    ("def f():\n  def g():\n  end\nend", 2),
    ("if x:\n  y = 1\nelif:\n  y = 2\nend", 3),
    ("while x < 3 do\nend", 1),
    ("return return", 1),
    ("x = [1, 2\n\ny = 3", 3),
];

const DEF_BODY: &str = "\
def move_script():
  textmsg(\"moving\")
  i = 0
  while i < 3:
    if i == 1:
      sleep(0.002)
    elif i == 2:
      textmsg(\"last\")
    else:
      i = i + 0
    end
    i = i + 1
  end
  return i
end
";

fn criterion_9() -> Outcome {
    compile(GRIPPER_SNIPPET).map_err(|e| format!("snippet: {e}"))?;
    compile(GRIPPER_PREAMBLE).map_err(|e| format!("preamble: {e}"))?;
    let program = compile(DEF_BODY).map_err(|e| format!("def body: {e}"))?;
    check!(program.functions().count() == 1, "def body defines {} functions", program.functions().count());

    let mut wrong = Vec::new();
    for (src, line) in SYNTAX_CORPUS {
        match compile(src) {
            Err(e) if e.line() == *line => {}
            Err(e) => wrong.push(format!("{src:?}: {e}")),
            Ok(_) => wrong.push(format!("{src:?} parsed")),
        }
    }
    check!(wrong.is_empty(), "{} of 20 misreported: {wrong:?}", wrong.len());

    let mut env = Env::new();
    env.step_budget = 10_000;
    let endless = compile("x = 0\nwhile True:\n  x = x + 1\nend\n").unwrap();
    let err = evaluate(&endless, &mut env, &mut CollectingHost::default());
    check!(
        matches!(&err, Err(e) if e.to_string().contains("step budget")),
        "while True ended with {err:?}"
    );

    // On the controller, a runaway snippet fails its handshake and the loop keeps running.
    let h = ControllerHost::spawn(ControllerConfig {
        rtde_port: 0,
        dashboard_port: 0,
        step_budget: 10_000,
        ..ControllerConfig::default()
    })
    .unwrap();
    let mut script = ControlScript::new();
    script.add_snippet(256, "x = 0\nwhile True:\n  x = x + 1\nend\n");
    let c = ControlSession::connect_with_script(h.rtde_addr(), &script.render()).map_err(|e| e.to_string())?;
    match c.trigger_extension(256, &[], &[], 500) {
        Err(ClientError::ExtensionFailed(256)) => {}
        other => return Err(format!("runaway snippet: {other:?}")),
    }
    c.idle(10).map_err(|e| e.to_string())?;
    Ok("snippet and def body parse; 20/20 syntax errors on the right line; step budget halts while True".into())
}

// ---------------------------------------------------------------------------
// 10. State receiver surface

fn next_joint_state(c: &mut LineClient) -> Value {
    loop {
        let m = c.recv().unwrap();
        if m["topic"] == "joint_states" {
            return m["body"]["position"].clone();
        }
    }
}

fn criterion_10() -> Outcome {
    let h = host();
    let sr = StateReceiver::spawn(&StateReceiverConfig {
        robot: h.rtde_addr().to_string(),
        frequency: 500.0,
        bind: "127.0.0.1:0".into(),
    })
    .map_err(|e| e.to_string())?;
    let mut c = LineClient::connect(sr.addr()).map_err(|e| e.to_string())?;
    c.set_timeout(Some(WAIT)).unwrap();
    let listed = c.call("list_interfaces", Value::Null).map_err(|e| e.to_string())?;
    let mut topics: Vec<&str> = listed["topics"].as_array().unwrap().iter().filter_map(Value::as_str).collect();
    let mut services: Vec<&str> = listed["services"].as_array().unwrap().iter().filter_map(Value::as_str).collect();
    topics.sort();
    services.sort();
    check!(topics == ["io_state", "joint_states", "tcp_pose", "wrench"], "topics {topics:?}");
    check!(
        services == ["get_io_state", "get_joint_state", "get_tcp_pose", "get_wrench"],
        "services {services:?}"
    );

    c.send(&json!({ "subscribe": "joint_states" })).unwrap();
    check!(c.recv().unwrap()["subscribed"] == "joint_states", "subscription not confirmed");
    let control = ControlSession::connect(h.rtde_addr()).map_err(|e| e.to_string())?;
    control.step().map_err(|e| e.to_string())?;
    let live = next_joint_state(&mut c);

    let paused = c.call("pause_joint_updates", json!({ "pause": true })).map_err(|e| e.to_string())?;
    check!(paused["paused"] == true, "pause reply {paused}");
    let mut moved: Vec<f64> = live.as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    moved[0] += 0.2;
    control.move_j(&moved, 1.0, 2.0, false).map_err(|e| e.to_string())?;
    let frozen = next_joint_state(&mut c);
    check!(frozen == live, "joint_states moved while paused: {frozen}");

    let fake = json!([0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
    c.send(&json!({ "publish": "fake_joint_states", "body": { "position": fake } })).unwrap();
    while c.recv().unwrap()["published"] != "fake_joint_states" {}
    control.step().map_err(|e| e.to_string())?;
    let overridden = next_joint_state(&mut c);
    check!(overridden == fake, "fake joint states not published: {overridden}");

    c.call("pause_joint_updates", json!({ "pause": false })).map_err(|e| e.to_string())?;
    let q = control.step().map_err(|e| e.to_string())?.q;
    let resumed = next_joint_state(&mut c);
    check!(resumed == json!(q), "updates did not resume: {resumed}");
    Ok("4 topics + 4 services advertised; pause freezes, fake_joint_states overrides, unpause resumes".into())
}

fn main() {
    let criteria: [(usize, fn() -> Outcome); 10] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
    ];
    let mut failed = 0;
    for (n, run) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|panic| {
            let text = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {text}"))
        });
        match outcome {
            Ok(detail) => println!("criterion {n}: PASS ({detail})"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n}: FAIL ({detail})");
            }
        }
    }
    if failed > 0 {
        println!("{failed} of 10 criteria failed");
        std::process::exit(1);
    }
    println!("all 10 criteria passed");
}
