//! Driver services over a JSON-lines transport: a state receiver publishing robot state
//! topics, and action servers hosting command, extension and dashboard plugins.

mod actions;
mod manifest;
mod plugins;
mod state_receiver;
mod transport;

pub use actions::{ActionServer, ActionServerConfig};
pub use manifest::{PluginEntry, PluginKind, PluginManifest, FIRST_EXTENSION_ID};
pub use plugins::{
    builtin_plugin, ActionContext, ActionError, Plugin, BUILTIN_PLUGINS, DEFAULT_CANCEL_DECEL, GRIPPER_PREAMBLE,
    GRIPPER_SNIPPET,
};
pub use state_receiver::{
    StateReceiver, StateReceiverConfig, FAKE_JOINT_STATES, JOINT_NAMES, LIST_SERVICE, PAUSE_SERVICE, SERVICES, TOPICS,
};
pub use transport::{LineClient, LineHandler, LineServer, Peer};

use crate::client::ClientError;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("plugin '{plugin}': {message}")]
    Plugin { plugin: String, message: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("{0}")]
    Remote(String),
}
