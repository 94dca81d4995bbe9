//! Force-guarded descent onto a compliant plane with lateral disturbances, run in virtual
//! time against an in-process controller; writes the wrench and joint trace to CSV.

use std::path::PathBuf;
use std::sync::mpsc::channel;
use std::time::{Duration, Instant};

use clap::Args;
use serde_json::{json, Value};
use urstack::controller::{ControllerConfig, ControllerHost, ForceEnv, InjectedEvent, TimeMode};
use urstack::services::{ActionServer, ActionServerConfig, LineClient, PluginManifest, StateReceiver, StateReceiverConfig};

use crate::record::Trace;
use crate::CliError;

const MANIFEST: &str = r#"
[[plugin]]
name = "MoveDownUntilForce"
kind = "command"
"#;

const TRACE_TOPICS: [&str; 2] = ["wrench", "joint_states"];
const STREAM_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Args)]
pub struct DemoArgs {
    /// Output CSV file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.2, allow_negative_numbers = true)]
    plane_z: f64,
    /// Contact stiffness in N/m (0: no plane, the descent runs to completion).
    #[arg(long, default_value_t = 1000.0)]
    stiffness: f64,
    /// Control loop frequency in Hz.
    #[arg(long, default_value_t = 500.0)]
    freq: f64,
    /// Injected wrench "t0,t1,fx,fy,fz,tx,ty,tz" (repeatable; replaces the default pair).
    #[arg(
        long,
        allow_hyphen_values = true,
        default_values_t = ["1.0,1.5,15,0,0,0,0,0".to_string(), "2.0,2.5,0,-15,0,0,0,0".to_string()]
    )]
    inject: Vec<String>,
    /// Goal overrides as JSON, e.g. '{"threshold_n": 30}'.
    #[arg(long, default_value = "{}")]
    goal: String,
}

pub fn run(a: DemoArgs) -> Result<(), CliError> {
    let config_err = |e: &dyn std::fmt::Display| CliError::Config(e.to_string());
    let goal: Value = serde_json::from_str(&a.goal).map_err(|e| CliError::Config(format!("goal is not valid JSON: {e}")))?;
    let events = a
        .inject
        .iter()
        .map(|t| InjectedEvent::parse(t))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| config_err(&e))?;
    let cfg = ControllerConfig {
        frequency: a.freq,
        force: ForceEnv {
            plane_z: a.plane_z,
            stiffness: a.stiffness,
            events,
        },
        rtde_port: 0,
        dashboard_port: 0,
        time_mode: TimeMode::Virtual,
        ..ControllerConfig::default()
    };
    cfg.validate().map_err(|e| config_err(&e))?;
    let wall = Instant::now();
    let host = ControllerHost::spawn(cfg).map_err(|e| config_err(&e))?;
    let robot = host.rtde_addr().to_string();
    let receiver = StateReceiver::spawn(&StateReceiverConfig {
        robot: robot.clone(),
        frequency: a.freq,
        bind: "127.0.0.1:0".into(),
    })?;
    let manifest = PluginManifest::from_toml_str(MANIFEST)?;
    let server = ActionServer::spawn(
        &manifest,
        &ActionServerConfig {
            robot: Some(robot),
            dashboard: None,
            bind: "127.0.0.1:0".into(),
        },
    )?;

    // The server's connection handshake ticks once; wait for it so the trace starts with the goal.
    let deadline = Instant::now() + STREAM_TIMEOUT;
    while receiver.cycles() == 0 {
        if Instant::now() > deadline {
            return Err(CliError::Transport("no state received from the controller".into()));
        }
        std::thread::sleep(Duration::from_millis(1));
    }
    let mut topics = LineClient::connect(receiver.addr())?;
    for t in TRACE_TOPICS {
        topics.send(&json!({ "subscribe": t }))?;
        topics.recv()?;
    }
    let (tx, rx) = channel();
    std::thread::spawn(move || {
        while let Ok(m) = topics.recv() {
            if tx.send(m).is_err() {
                break;
            }
        }
    });

    let mut actions = LineClient::connect(server.addr())?;
    actions.send(&json!({ "id": 1, "phase": "goal", "action": "move_down_until_force", "body": goal }))?;
    let result = loop {
        let m = actions.recv()?;
        if m["phase"] == "result" {
            break m["body"].clone();
        }
    };
    if result["success"] != true {
        return Err(CliError::Failed(format!("descent {}: {}", result["status"], result["error"])));
    }
    let last_stamp = result["snapshot"]["timestamp"].as_f64().unwrap_or_default();

    let names: Vec<String> = TRACE_TOPICS.iter().map(|t| t.to_string()).collect();
    let mut trace = Trace::new(&names);
    loop {
        let m = rx
            .recv_timeout(STREAM_TIMEOUT)
            .map_err(|_| CliError::Transport("state stream ended before the final sample".into()))?;
        let (Some(topic), Some(stamp)) = (m["topic"].as_str(), m["stamp"].as_f64()) else {
            continue;
        };
        trace.push(topic, stamp, &m["body"]);
        if topic == TRACE_TOPICS[0] && stamp >= last_stamp - 1e-9 {
            break;
        }
    }
    trace.save(&a.out)?;
    drop(server);
    drop(receiver);
    host.shutdown();

    let summary = json!({
        "contact": result["contact"],
        "force_z": result["force_z"],
        "trigger_force_z": result["trigger_force_z"],
        "wrench": result["wrench"],
        "tcp_z": result["pose"]["position"][2],
        "sim_time": last_stamp,
        "rows": trace.rows(),
        "wall_s": wall.elapsed().as_secs_f64(),
        "out": a.out.display().to_string(),
    });
    println!("{summary}");
    Ok(())
}
