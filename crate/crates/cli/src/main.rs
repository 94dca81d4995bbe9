mod demo;
mod record;

use std::net::{SocketAddr, ToSocketAddrs};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::mpsc::channel;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use urstack::controller::{ControllerConfig, ControllerHost, InjectedEvent, TimeMode, DEFAULT_DASHBOARD_PORT};
use urstack::services::{
    ActionServer, ActionServerConfig, LineClient, PluginManifest, ServiceError, StateReceiver, StateReceiverConfig,
};
use urstack::wire::DEFAULT_RTDE_PORT;

pub const DEFAULT_STATE_PORT: u16 = 50001;
pub const DEFAULT_COMMAND_PORT: u16 = 50002;

/// Failure classes with stable exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// The action or operation ran and reported failure (exit 1).
    #[error("{0}")]
    Failed(String),
    /// Invalid flags, configuration or manifest (exit 2).
    #[error("{0}")]
    Config(String),
    /// A connection could not be made or was lost (exit 3).
    #[error("{0}")]
    Transport(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Config(_) => 2,
            CliError::Transport(_) => 3,
        }
    }
}

impl From<ServiceError> for CliError {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::Manifest(_) | ServiceError::Plugin { .. } => CliError::Config(e.to_string()),
            ServiceError::Remote(_) => CliError::Failed(e.to_string()),
            _ => CliError::Transport(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "urstack", version, about = "Simulated robot controller, driver services and tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the simulated controller until interrupted.
    Sim(SimArgs),
    /// Publish robot state topics and query services.
    StateReceiver(StateReceiverArgs),
    /// Host the plugins of a manifest as actions.
    CommandServer(CommandServerArgs),
    /// Send one goal to a command server.
    Send(SendArgs),
    /// Record state topics to CSV.
    Record(RecordArgs),
    /// Run the force-guarded descent scenario in virtual time and write its trace.
    DemoContact(demo::DemoArgs),
}

#[derive(Args)]
struct SimArgs {
    /// Controller config file (TOML); flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Data-exchange port (0 picks a free one).
    #[arg(long)]
    port: Option<u16>,
    #[arg(long)]
    dashboard_port: Option<u16>,
    #[arg(long)]
    bind: Option<String>,
    /// Control loop frequency in Hz.
    #[arg(long)]
    freq: Option<f64>,
    /// Built-in chain name or chain file.
    #[arg(long)]
    chain: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    plane_z: Option<f64>,
    /// Contact stiffness in N/m (0 disables the plane).
    #[arg(long)]
    stiffness: Option<f64>,
    /// Injected wrench "t0,t1,fx,fy,fz,tx,ty,tz" (repeatable).
    #[arg(long, allow_hyphen_values = true)]
    inject: Vec<String>,
    /// Advance one tick per control package instead of following the wall clock.
    #[arg(long)]
    virtual_time: bool,
}

#[derive(Args)]
struct StateReceiverArgs {
    /// Controller address (host or host:port).
    #[arg(long, env = "UR_STACK_ROBOT")]
    robot: String,
    #[arg(long, default_value_t = DEFAULT_STATE_PORT)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    bind: String,
    /// State stream frequency in Hz.
    #[arg(long, default_value_t = 125.0)]
    freq: f64,
}

#[derive(Args)]
struct CommandServerArgs {
    /// Controller address (host or host:port).
    #[arg(long, env = "UR_STACK_ROBOT")]
    robot: String,
    /// Dashboard address; defaults to the robot host on the dashboard port.
    #[arg(long)]
    dashboard: Option<String>,
    #[arg(long, default_value_t = DEFAULT_COMMAND_PORT)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    bind: String,
    /// Plugin manifest (TOML).
    #[arg(long)]
    plugins: PathBuf,
}

#[derive(Args)]
struct SendArgs {
    /// Command server address.
    #[arg(long, default_value_t = format!("127.0.0.1:{DEFAULT_COMMAND_PORT}"))]
    server: String,
    /// Action name, e.g. move_down_until_force.
    action: String,
    /// Goal as a JSON object.
    #[arg(default_value = "{}")]
    goal: String,
    /// Print feedback and wait for the result.
    #[arg(long)]
    wait: bool,
    /// Goal id.
    #[arg(long, default_value_t = 1)]
    id: i64,
}

#[derive(Args)]
struct RecordArgs {
    /// State receiver address.
    #[arg(long, default_value_t = format!("127.0.0.1:{DEFAULT_STATE_PORT}"))]
    server: String,
    /// Comma-separated topics; rows follow the first one.
    #[arg(long, value_delimiter = ',', required = true)]
    topics: Vec<String>,
    #[arg(long)]
    csv: PathBuf,
    /// Span of controller time to record, in seconds.
    #[arg(long)]
    duration: f64,
    /// Wall-clock limit in seconds; defaults to duration + 30.
    #[arg(long)]
    timeout: Option<f64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sim(a) => sim(a),
        Command::StateReceiver(a) => state_receiver(a),
        Command::CommandServer(a) => command_server(a),
        Command::Send(a) => send(a),
        Command::Record(a) => record::run(a),
        Command::DemoContact(a) => demo::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// Blocks until SIGINT or SIGTERM.
fn wait_for_signal() -> Result<(), CliError> {
    let (tx, rx) = channel();
    ctrlc::set_handler(move || {
        let _ = tx.send(());
    })
    .map_err(|e| CliError::Failed(format!("cannot install signal handler: {e}")))?;
    let _ = rx.recv();
    Ok(())
}

/// Resolves `host` or `host:port`, using `default_port` when none is given.
fn resolve(addr: &str, default_port: u16) -> Result<SocketAddr, CliError> {
    let with_port = if addr.rsplit_once(':').is_some_and(|(_, p)| p.parse::<u16>().is_ok()) {
        addr.to_string()
    } else {
        format!("{addr}:{default_port}")
    };
    with_port
        .to_socket_addrs()
        .map_err(|e| CliError::Config(format!("bad address '{addr}': {e}")))?
        .next()
        .ok_or_else(|| CliError::Config(format!("address '{addr}' does not resolve")))
}

fn sim_config(a: &SimArgs) -> Result<ControllerConfig, CliError> {
    let mut cfg = match &a.config {
        Some(path) => ControllerConfig::load(path).map_err(|e| CliError::Config(e.to_string()))?,
        None => ControllerConfig {
            time_mode: TimeMode::Wall,
            ..ControllerConfig::default()
        },
    };
    if let Some(v) = a.port {
        cfg.rtde_port = v;
    }
    if let Some(v) = a.dashboard_port {
        cfg.dashboard_port = v;
    }
    if let Some(v) = &a.bind {
        cfg.bind = v.clone();
    }
    if let Some(v) = a.freq {
        cfg.frequency = v;
    }
    if let Some(v) = &a.chain {
        cfg.chain = v.clone();
    }
    if let Some(v) = a.plane_z {
        cfg.force.plane_z = v;
    }
    if let Some(v) = a.stiffness {
        cfg.force.stiffness = v;
    }
    for text in &a.inject {
        cfg.force.events.push(InjectedEvent::parse(text).map_err(|e| CliError::Config(e.to_string()))?);
    }
    if a.virtual_time {
        cfg.time_mode = TimeMode::Virtual;
    }
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    cfg.load_chain().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}

fn sim(a: SimArgs) -> Result<(), CliError> {
    let cfg = sim_config(&a)?;
    let mode = cfg.time_mode;
    let host = ControllerHost::spawn(cfg).map_err(|e| match e {
        urstack::controller::ControllerError::Io(e) => CliError::Transport(e.to_string()),
        e => CliError::Config(e.to_string()),
    })?;
    println!(
        "sim: rtde={} dashboard={} freq={} time={}",
        host.rtde_addr(),
        host.dashboard_addr(),
        host.frequency(),
        if mode == TimeMode::Virtual { "virtual" } else { "wall" }
    );
    wait_for_signal()?;
    host.shutdown();
    Ok(())
}

fn state_receiver(a: StateReceiverArgs) -> Result<(), CliError> {
    if !(a.freq > 0.0 && a.freq <= urstack::wire::MAX_FREQUENCY) {
        return Err(CliError::Config(format!(
            "--freq must be within (0, {}] Hz",
            urstack::wire::MAX_FREQUENCY
        )));
    }
    let robot = resolve(&a.robot, DEFAULT_RTDE_PORT)?;
    let sr = StateReceiver::spawn(&StateReceiverConfig {
        robot: robot.to_string(),
        frequency: a.freq,
        bind: format!("{}:{}", a.bind, a.port),
    })?;
    println!("state-receiver: listening={} robot={robot} freq={}", sr.addr(), a.freq);
    wait_for_signal()?;
    drop(sr);
    Ok(())
}

fn command_server(a: CommandServerArgs) -> Result<(), CliError> {
    let manifest = PluginManifest::load(&a.plugins)?;
    let robot = resolve(&a.robot, DEFAULT_RTDE_PORT)?;
    let dashboard = match &a.dashboard {
        Some(d) => resolve(d, DEFAULT_DASHBOARD_PORT)?,
        None => SocketAddr::new(robot.ip(), DEFAULT_DASHBOARD_PORT),
    };
    let server = ActionServer::spawn(
        &manifest,
        &ActionServerConfig {
            robot: Some(robot.to_string()),
            dashboard: Some(dashboard.to_string()),
            bind: format!("{}:{}", a.bind, a.port),
        },
    )?;
    println!(
        "command-server: listening={} robot={robot} actions={}",
        server.addr(),
        server.actions().join(",")
    );
    wait_for_signal()?;
    drop(server);
    Ok(())
}

fn send(a: SendArgs) -> Result<(), CliError> {
    let goal: Value = serde_json::from_str(&a.goal).map_err(|e| CliError::Config(format!("goal is not valid JSON: {e}")))?;
    let server = resolve(&a.server, DEFAULT_COMMAND_PORT)?;
    let mut client = LineClient::connect(server).map_err(|e| CliError::Transport(format!("{server}: {e}")))?;
    client
        .send(&json!({ "id": a.id, "phase": "goal", "action": a.action, "body": goal }))
        .map_err(CliError::from)?;
    client.set_timeout(Some(Duration::from_secs(3600))).map_err(CliError::from)?;
    loop {
        let m = client.recv().map_err(CliError::from)?;
        if m["id"] != json!(a.id) {
            continue;
        }
        match m["phase"].as_str() {
            Some("goal") => {
                if m["body"]["accepted"] == true {
                    println!("{m}");
                    if !a.wait {
                        return Ok(());
                    }
                }
            }
            Some("feedback") => println!("{m}"),
            Some("result") => {
                println!("{m}");
                return if m["body"]["success"] == true {
                    Ok(())
                } else {
                    let status = m["body"]["status"].as_str().unwrap_or("failed");
                    let detail = m["body"]["error"].as_str().unwrap_or_default();
                    Err(CliError::Failed(format!("{} {status}: {detail}", a.action).trim_end_matches(": ").to_string()))
                };
            }
            _ => {}
        }
    }
}
