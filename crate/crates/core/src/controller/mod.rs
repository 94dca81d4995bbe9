//! Simulated robot controller: a deterministic control loop plus a TCP host speaking
//! the data-exchange protocol and the dashboard text protocol.

mod command;
mod config;
mod dashboard;
mod host;
pub mod layout;
mod sim;
mod snippet;

pub use config::{ControllerConfig, ForceEnv, InjectedEvent, TimeMode, DEFAULT_DASHBOARD_PORT, DEFAULT_FREQUENCY};
pub use dashboard::Dashboard;
pub use host::{ControllerHost, HostStats};
pub use sim::{ConnId, Controller, ControllerSnapshot, InputWrite};

use crate::kinematics::KinematicsError;
use crate::wire::WireError;

#[derive(Debug, thiserror::Error)]
pub enum ControllerError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("script rejected: {0}")]
    Script(String),
    #[error("request rejected: {0}")]
    Rejected(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
