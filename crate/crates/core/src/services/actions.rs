//! Action server: hosts plugins over one control connection and runs goals in FIFO order.
//!
//! Protocol (one JSON object per line):
//! - `{"id": N, "phase": "goal", "action": "move_j", "body": {...}}` submits a goal; the
//!   server echoes `{"id", "phase": "goal", "action", "body": {"accepted": bool}}`, may
//!   stream `"phase": "feedback"` messages, and always ends with `"phase": "result"` whose
//!   body carries `status` (`succeeded`, `cancelled`, `aborted` or `rejected`) and `success`.
//! - `{"id": N, "phase": "cancel"}` answers `{"status": "cancelling"}` for a queued or running
//!   goal and `{"status": "no-op"}` otherwise.
//! - `{"service": "list_actions"}` answers `{"result": {"actions": [...], "extensions": {...}}}`.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{channel, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde_json::{json, Map, Value};

use super::manifest::{PluginKind, PluginManifest, FIRST_EXTENSION_ID};
use super::plugins::{builtin_plugin, ActionContext, ActionError, Plugin};
use super::transport::{LineHandler, LineServer, Peer};
use super::ServiceError;
use crate::client::{ControlScript, ControlSession, DashboardSession};
use crate::script::compile;

#[derive(Debug, Clone, PartialEq)]
pub struct ActionServerConfig {
    /// Controller RTDE address; required by command and extension plugins.
    pub robot: Option<String>,
    /// Controller dashboard address; required by dashboard plugins.
    pub dashboard: Option<String>,
    /// Address the JSON-lines server listens on.
    pub bind: String,
}

struct Job {
    peer: Peer,
    id: Value,
    action: String,
    goal: Value,
    cancel: Arc<AtomicBool>,
}

type GoalKey = (u64, String);

struct Shared {
    /// Action name → extension id, or None for non-extension plugins.
    actions: Vec<(String, Option<u32>)>,
    goals: Mutex<HashMap<GoalKey, Arc<AtomicBool>>>,
    jobs: Mutex<Option<Sender<Job>>>,
}

fn envelope(id: &Value, phase: &str, action: &str, body: Value) -> Value {
    json!({ "id": id, "phase": phase, "action": action, "body": body })
}

fn goal_key(peer: &Peer, id: &Value) -> GoalKey {
    (peer.id(), id.to_string())
}

impl LineHandler for Shared {
    fn on_message(&self, peer: &Peer, message: Value) {
        if let Some(service) = message.get("service").and_then(Value::as_str) {
            let reply = match service {
                "list_actions" => {
                    let actions: Vec<&str> = self.actions.iter().map(|(a, _)| a.as_str()).collect();
                    let extensions: Map<String, Value> = self
                        .actions
                        .iter()
                        .filter_map(|(a, id)| id.map(|id| (a.clone(), json!(id))))
                        .collect();
                    json!({ "result": { "actions": actions, "extensions": extensions } })
                }
                other => json!({ "error": format!("unknown service '{other}'") }),
            };
            peer.send(&reply);
            return;
        }
        let id = match message.get("id") {
            Some(id) if id.is_i64() || id.is_u64() || id.is_string() => id.clone(),
            _ => {
                peer.send(&json!({ "error": "message needs an integer or string 'id'" }));
                return;
            }
        };
        match message.get("phase").and_then(Value::as_str) {
            Some("goal") => self.submit(peer, id, &message),
            Some("cancel") => {
                let goals = self.goals.lock().expect("goal table");
                let status = match goals.get(&goal_key(peer, &id)) {
                    Some(flag) => {
                        flag.store(true, Ordering::SeqCst);
                        "cancelling"
                    }
                    None => "no-op",
                };
                // Sent under the lock so it is ordered before the goal's result.
                peer.send(&json!({ "id": id, "phase": "cancel", "body": { "status": status } }));
            }
            other => {
                peer.send(&json!({ "id": id, "error": format!("unknown phase {other:?}") }));
            }
        }
    }
}

impl Shared {
    fn submit(&self, peer: &Peer, id: Value, message: &Value) {
        let action = message.get("action").and_then(Value::as_str).unwrap_or_default().to_string();
        let reject = |reason: String| {
            peer.send(&envelope(&id, "goal", &action, json!({ "accepted": false, "reason": reason })));
            peer.send(&envelope(
                &id,
                "result",
                &action,
                json!({ "status": "rejected", "success": false, "error": reason }),
            ));
        };
        if !self.actions.iter().any(|(a, _)| *a == action) {
            return reject(format!("unknown action '{action}'"));
        }
        let mut goals = self.goals.lock().expect("goal table");
        let key = goal_key(peer, &id);
        if goals.contains_key(&key) {
            drop(goals);
            return reject(format!("goal id {id} is already active"));
        }
        let cancel = Arc::new(AtomicBool::new(false));
        let job = Job {
            peer: peer.clone(),
            id: id.clone(),
            action: action.clone(),
            goal: message.get("body").cloned().unwrap_or(Value::Null),
            cancel: cancel.clone(),
        };
        let queued = match self.jobs.lock().expect("job queue").as_ref() {
            Some(tx) => tx.send(job).is_ok(),
            None => false,
        };
        if !queued {
            drop(goals);
            return reject("server is shutting down".into());
        }
        goals.insert(key, cancel);
        peer.send(&envelope(&id, "goal", &action, json!({ "accepted": true })));
    }
}

/// Hosts the plugins of a manifest behind a JSON-lines action interface.
pub struct ActionServer {
    server: LineServer,
    shared: Arc<Shared>,
    worker: Option<JoinHandle<()>>,
}

impl ActionServer {
    /// Loads the manifest's built-in plugins, connects to the controller and starts serving.
    pub fn spawn(manifest: &PluginManifest, config: &ActionServerConfig) -> Result<ActionServer, ServiceError> {
        manifest.validate()?;
        let plugins = manifest
            .entries
            .iter()
            .map(|e| Ok((e.name.clone(), builtin_plugin(e)?)))
            .collect::<Result<Vec<_>, ServiceError>>()?;
        ActionServer::spawn_plugins(plugins, config)
    }

    /// Serves the given named plugins; extension ids are assigned 256, 257, … in list order.
    ///
    /// Every extension plugin's snippet is checked before anything is uploaded, so a
    /// broken snippet is reported against the plugin that contributed it.
    pub fn spawn_plugins(
        named: Vec<(String, Box<dyn Plugin>)>,
        config: &ActionServerConfig,
    ) -> Result<ActionServer, ServiceError> {
        let mut plugins: Vec<Box<dyn Plugin>> = Vec::new();
        let mut actions = Vec::new();
        let mut script = ControlScript::new();
        let mut needs_robot = None;
        let mut needs_dashboard = None;
        let mut next_id = FIRST_EXTENSION_ID;
        for (name, mut plugin) in named {
            if actions.iter().any(|(a, _)| a == plugin.action()) {
                return Err(ServiceError::Plugin {
                    plugin: name,
                    message: format!("action '{}' is already served", plugin.action()),
                });
            }
            let kind = plugin.kind();
            match kind {
                PluginKind::Dashboard => needs_dashboard = needs_dashboard.or(Some(name.clone())),
                _ => needs_robot = needs_robot.or(Some(name.clone())),
            }
            let mut id = None;
            if kind == PluginKind::Extension {
                plugin.bind_extension(next_id);
                let mut own = ControlScript::new();
                if let Some(p) = plugin.preamble() {
                    own.add_preamble(&p);
                    script.add_preamble(&p);
                }
                let body = plugin.snippet().unwrap_or_default();
                own.add_snippet(next_id, &body);
                script.add_snippet(next_id, &body);
                compile(&own.render()).map_err(|e| ServiceError::Plugin {
                    plugin: name.clone(),
                    message: format!("snippet does not compile: {e}"),
                })?;
                id = Some(next_id);
                next_id += 1;
            }
            actions.push((plugin.action().to_string(), id));
            plugins.push(plugin);
        }

        let control = match (&config.robot, needs_robot) {
            (Some(addr), Some(_)) => Some(ControlSession::connect_with_script(addr.as_str(), &script.render())?),
            (None, Some(plugin)) => {
                return Err(ServiceError::Plugin {
                    plugin,
                    message: "needs a robot address".into(),
                })
            }
            (_, None) => None,
        };
        let dashboard = match (&config.dashboard, needs_dashboard) {
            (Some(addr), Some(_)) => Some(DashboardSession::connect(addr.as_str())?),
            (None, Some(plugin)) => {
                return Err(ServiceError::Plugin {
                    plugin,
                    message: "needs a dashboard address".into(),
                })
            }
            (_, None) => None,
        };

        let (tx, rx) = channel::<Job>();
        let shared = Arc::new(Shared {
            actions,
            goals: Mutex::default(),
            jobs: Mutex::new(Some(tx)),
        });
        let worker = {
            let shared = shared.clone();
            std::thread::Builder::new().name("action-worker".into()).spawn(move || {
                let mut worker = Worker {
                    plugins,
                    control,
                    dashboard,
                };
                for job in rx {
                    worker.run(&shared, job);
                }
            })?
        };
        let server = LineServer::spawn(config.bind.as_str(), shared.clone())?;
        log::info!("action server listening on {}", server.addr());
        Ok(ActionServer {
            server,
            shared,
            worker: Some(worker),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.server.addr()
    }

    /// Names of the actions served, in manifest order.
    pub fn actions(&self) -> Vec<String> {
        self.shared.actions.iter().map(|(a, _)| a.clone()).collect()
    }

    /// Cancels outstanding goals, stops serving and releases the controller connections.
    pub fn shutdown(&mut self) {
        for flag in self.shared.goals.lock().expect("goal table").values() {
            flag.store(true, Ordering::SeqCst);
        }
        self.shared.jobs.lock().expect("job queue").take();
        self.server.shutdown();
        if let Some(h) = self.worker.take() {
            let _ = h.join();
        }
    }
}

impl Drop for ActionServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

struct Worker {
    plugins: Vec<Box<dyn Plugin>>,
    control: Option<ControlSession>,
    dashboard: Option<DashboardSession>,
}

impl Worker {
    fn run(&mut self, shared: &Shared, job: Job) {
        let Job {
            peer,
            id,
            action,
            goal,
            cancel,
        } = job;
        let body = if cancel.load(Ordering::SeqCst) {
            json!({ "status": "cancelled", "success": false })
        } else {
            let plugin = self
                .plugins
                .iter_mut()
                .find(|p| p.action() == action)
                .expect("only known actions are queued");
            let mut feedback = |body: Value| {
                peer.send(&envelope(&id, "feedback", &action, body));
            };
            let mut ctx = ActionContext {
                control: self.control.as_ref(),
                dashboard: self.dashboard.as_mut(),
                cancel: &cancel,
                feedback: &mut feedback,
            };
            match plugin.execute(&mut ctx, &goal) {
                Ok(fields) => with_status(fields, "succeeded", true),
                Err(ActionError::Cancelled(fields)) => with_status(fields, "cancelled", false),
                Err(ActionError::Failed(message)) => {
                    log::warn!("{action} goal {id} aborted: {message}");
                    json!({ "status": "aborted", "success": false, "error": message })
                }
            }
        };
        // Removing the goal and sending the result under one lock orders any later cancel after it.
        let mut goals = shared.goals.lock().expect("goal table");
        goals.remove(&goal_key(&peer, &id));
        peer.send(&envelope(&id, "result", &action, body));
    }
}

fn with_status(fields: Value, status: &str, success: bool) -> Value {
    let mut body = match fields {
        Value::Object(m) => m,
        Value::Null => Map::new(),
        other => Map::from_iter([("value".to_string(), other)]),
    };
    body.insert("status".into(), json!(status));
    body.insert("success".into(), json!(success));
    Value::Object(body)
}
