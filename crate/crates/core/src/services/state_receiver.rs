//! Robot state receiver: reads the state stream and republishes it as topics and services.
//!
//! Wire (one JSON object per line):
//! - `{"subscribe": "joint_states"}` → `{"subscribed": "joint_states"}`, then
//!   `{"topic", "stamp", "body"}` for every cycle. A leading `/` in names is accepted.
//! - `{"service": "get_joint_state"}` → `{"result": {"stamp", "body"}}` or `{"error": "no data yet"}`.
//! - `{"service": "pause_joint_updates", "args": {"pause": true}}` freezes joint_states;
//!   `{"publish": "fake_joint_states", "body": {"position": [...]}}` then overrides it.
//! - When the robot connection is lost every client receives `{"event": "stop", "reason"}`.

use std::collections::{HashMap, HashSet};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::Duration;

use serde_json::{json, Value};

use super::transport::{LineHandler, LineServer, Peer};
use super::ServiceError;
use crate::client::{ReceiveSession, RobotSnapshot};

pub const JOINT_NAMES: [&str; 6] = [
    "shoulder_pan_joint",
    "shoulder_lift_joint",
    "elbow_joint",
    "wrist_1_joint",
    "wrist_2_joint",
    "wrist_3_joint",
];

/// State topics, paired index-wise with [`SERVICES`].
pub const TOPICS: [&str; 4] = ["joint_states", "tcp_pose", "wrench", "io_state"];
/// Query services returning the last message of the matching topic.
pub const SERVICES: [&str; 4] = ["get_joint_state", "get_tcp_pose", "get_wrench", "get_io_state"];
/// Input topic overriding joint_states while updates are paused.
pub const FAKE_JOINT_STATES: &str = "fake_joint_states";
pub const PAUSE_SERVICE: &str = "pause_joint_updates";
/// Service listing the advertised topics and services.
pub const LIST_SERVICE: &str = "list_interfaces";

const POLL_TIMEOUT: Duration = Duration::from_millis(200);

#[derive(Debug, Clone, PartialEq)]
pub struct StateReceiverConfig {
    /// Controller RTDE address.
    pub robot: String,
    /// State stream frequency (Hz).
    pub frequency: f64,
    /// Address the JSON-lines server listens on.
    pub bind: String,
}

#[derive(Default)]
struct JointOverride {
    paused: bool,
    /// Positions published while paused: the last real ones, or the latest fake ones.
    held: Option<Vec<f64>>,
}

#[derive(Default)]
struct State {
    subscribers: Mutex<HashMap<u64, (Peer, HashSet<String>)>>,
    /// Last published message per topic: (stamp, body).
    last: Mutex<HashMap<&'static str, (f64, Value)>>,
    joints: Mutex<JointOverride>,
    cycles: AtomicU64,
    stopped: Mutex<Option<String>>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

fn topic_name(name: &str) -> Option<&'static str> {
    let name = name.strip_prefix('/').unwrap_or(name);
    TOPICS.iter().chain([&FAKE_JOINT_STATES]).find(|t| **t == name).copied()
}

impl State {
    fn publish(&self, topic: &'static str, stamp: f64, body: Value) {
        let message = json!({ "topic": topic, "stamp": stamp, "body": body });
        lock(&self.last).insert(topic, (stamp, body));
        for (peer, topics) in lock(&self.subscribers).values() {
            if topics.contains(topic) {
                peer.try_send(&message);
            }
        }
    }

    fn cycle(&self, s: &RobotSnapshot) {
        let (position, velocity) = {
            let mut joints = lock(&self.joints);
            match (joints.paused, &joints.held) {
                (true, Some(held)) => (held.clone(), vec![0.0; JOINT_NAMES.len()]),
                (true, None) => {
                    joints.held = Some(s.q.to_vec());
                    (s.q.to_vec(), vec![0.0; JOINT_NAMES.len()])
                }
                (false, _) => (s.q.to_vec(), s.qd.to_vec()),
            }
        };
        let stamp = s.timestamp;
        self.publish(
            "joint_states",
            stamp,
            json!({ "name": JOINT_NAMES, "position": position, "velocity": velocity }),
        );
        self.publish("tcp_pose", stamp, json!(s.tcp_pose));
        self.publish(
            "wrench",
            stamp,
            json!({ "force": &s.tcp_force[..3], "torque": &s.tcp_force[3..] }),
        );
        self.publish(
            "io_state",
            stamp,
            json!({ "digital_in": s.digital_in, "digital_out": s.digital_out }),
        );
        self.cycles.fetch_add(1, Ordering::SeqCst);
    }

    fn stop(&self, reason: String) {
        log::warn!("state receiver stopped: {reason}");
        let message = json!({ "event": "stop", "reason": reason });
        for (peer, _) in lock(&self.subscribers).values() {
            peer.send(&message);
        }
        *lock(&self.stopped) = Some(reason);
    }

    fn service(&self, name: &str, args: &Value) -> Result<Value, String> {
        let name = name.strip_prefix('/').unwrap_or(name);
        if let Some(i) = SERVICES.iter().position(|s| *s == name) {
            return match lock(&self.last).get(TOPICS[i]) {
                Some((stamp, body)) => Ok(json!({ "stamp": stamp, "body": body })),
                None => Err("no data yet".into()),
            };
        }
        match name {
            PAUSE_SERVICE => {
                let pause = args
                    .get("pause")
                    .and_then(Value::as_bool)
                    .ok_or("pause_joint_updates needs {\"pause\": bool}")?;
                let mut joints = lock(&self.joints);
                if pause && !joints.paused {
                    joints.held = lock(&self.last)
                        .get("joint_states")
                        .and_then(|(_, b)| serde_json::from_value(b["position"].clone()).ok());
                }
                if !pause {
                    joints.held = None;
                }
                joints.paused = pause;
                Ok(json!({ "paused": pause }))
            }
            LIST_SERVICE => Ok(json!({
                "topics": TOPICS,
                "services": SERVICES,
                "inputs": [FAKE_JOINT_STATES],
                "controls": [PAUSE_SERVICE],
            })),
            other => Err(format!("unknown service '{other}'")),
        }
    }

    fn fake_joint_states(&self, body: &Value) -> Result<(), String> {
        let position: Vec<f64> = serde_json::from_value(body.get("position").cloned().unwrap_or(Value::Null))
            .map_err(|_| "fake_joint_states needs {\"position\": [numbers]}".to_string())?;
        if position.len() != JOINT_NAMES.len() {
            return Err(format!("fake_joint_states needs {} positions, got {}", JOINT_NAMES.len(), position.len()));
        }
        {
            let mut joints = lock(&self.joints);
            if !joints.paused {
                return Err("joint updates are not paused".into());
            }
            joints.held = Some(position.clone());
        }
        let stamp = lock(&self.last).get("joint_states").map_or(0.0, |(s, _)| *s);
        self.publish(
            FAKE_JOINT_STATES,
            stamp,
            json!({ "name": JOINT_NAMES, "position": position }),
        );
        Ok(())
    }
}

impl LineHandler for State {
    fn on_message(&self, peer: &Peer, message: Value) {
        let reply = if let Some(topic) = message.get("subscribe").and_then(Value::as_str) {
            match topic_name(topic) {
                Some(t) => {
                    lock(&self.subscribers)
                        .entry(peer.id())
                        .or_insert_with(|| (peer.clone(), HashSet::new()))
                        .1
                        .insert(t.to_string());
                    json!({ "subscribed": t })
                }
                None => json!({ "error": format!("unknown topic '{topic}'") }),
            }
        } else if let Some(topic) = message.get("unsubscribe").and_then(Value::as_str) {
            let t = topic.strip_prefix('/').unwrap_or(topic);
            if let Some((_, topics)) = lock(&self.subscribers).get_mut(&peer.id()) {
                topics.remove(t);
            }
            json!({ "unsubscribed": t })
        } else if let Some(topic) = message.get("publish").and_then(Value::as_str) {
            match topic.strip_prefix('/').unwrap_or(topic) {
                FAKE_JOINT_STATES => match self.fake_joint_states(message.get("body").unwrap_or(&Value::Null)) {
                    Ok(()) => json!({ "published": FAKE_JOINT_STATES }),
                    Err(e) => json!({ "error": e }),
                },
                other => json!({ "error": format!("topic '{other}' does not accept messages") }),
            }
        } else if let Some(service) = message.get("service").and_then(Value::as_str) {
            match self.service(service, message.get("args").unwrap_or(&Value::Null)) {
                Ok(r) => json!({ "result": r }),
                Err(e) => json!({ "error": e }),
            }
        } else {
            json!({ "error": "expected 'subscribe', 'unsubscribe', 'publish' or 'service'" })
        };
        peer.send(&reply);
    }

    fn on_close(&self, peer: u64) {
        lock(&self.subscribers).remove(&peer);
    }
}

/// Streams robot state from a controller and serves it over JSON lines.
pub struct StateReceiver {
    server: LineServer,
    state: Arc<State>,
    stop: Arc<AtomicBool>,
    poller: Option<JoinHandle<()>>,
}

impl StateReceiver {
    /// Connects a receive session (no control role needed) and starts serving.
    pub fn spawn(config: &StateReceiverConfig) -> Result<StateReceiver, ServiceError> {
        let session = ReceiveSession::connect_default(config.robot.as_str(), config.frequency)?;
        let state = Arc::new(State::default());
        let stop = Arc::new(AtomicBool::new(false));
        let poller = {
            let (state, stop) = (state.clone(), stop.clone());
            std::thread::Builder::new().name("state-receiver".into()).spawn(move || {
                while !stop.load(Ordering::SeqCst) {
                    match session.wait_backlog(POLL_TIMEOUT) {
                        Ok(snapshots) => snapshots.iter().for_each(|s| state.cycle(s)),
                        Err(e) => {
                            state.stop(format!("robot connection lost: {e}"));
                            break;
                        }
                    }
                }
            })?
        };
        let server = LineServer::spawn(config.bind.as_str(), state.clone())?;
        log::info!("state receiver listening on {}", server.addr());
        Ok(StateReceiver {
            server,
            state,
            stop,
            poller: Some(poller),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.server.addr()
    }

    /// State cycles published so far.
    pub fn cycles(&self) -> u64 {
        self.state.cycles.load(Ordering::SeqCst)
    }

    /// Why publishing stopped, once the robot connection is lost.
    pub fn stopped(&self) -> Option<String> {
        lock(&self.state.stopped).clone()
    }

    pub fn shutdown(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.poller.take() {
            let _ = h.join();
        }
        self.server.shutdown();
    }
}

impl Drop for StateReceiver {
    fn drop(&mut self) {
        self.shutdown();
    }
}
