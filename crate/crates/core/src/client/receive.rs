use std::collections::VecDeque;
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use super::link::Link;
use super::{ClientError, RobotSnapshot};
use crate::kinematics::Pose6;
use crate::wire::messages::parse_start_reply;
use crate::wire::{FieldValue, PacketType, Recipe};

#[derive(Default)]
struct Latest {
    values: Option<Vec<FieldValue>>,
    snapshot: Option<RobotSnapshot>,
    received: u64,
    /// Snapshots not yet taken by [`ReceiveSession::wait_backlog`], oldest first.
    backlog: VecDeque<RobotSnapshot>,
    closed: Option<String>,
}

/// Packages kept for [`ReceiveSession::wait_backlog`]; older ones are dropped.
const BACKLOG_LIMIT: usize = 4096;

type Shared = Arc<(Mutex<Latest>, Condvar)>;

/// A read-only subscription to the controller's state stream.
///
/// A background thread decodes packages as they arrive; the accessors return the most
/// recent complete one.
pub struct ReceiveSession {
    recipe: Recipe,
    shared: Shared,
    stream: TcpStream,
    reader: Option<JoinHandle<()>>,
}

impl ReceiveSession {
    pub fn connect<S: AsRef<str>>(
        addr: impl ToSocketAddrs,
        names: &[S],
        frequency: f64,
    ) -> Result<ReceiveSession, ClientError> {
        let names: Vec<String> = names.iter().map(|n| n.as_ref().to_string()).collect();
        let mut link = Link::connect(addr)?;
        let recipe = link.setup_outputs(&names, frequency)?;
        let (ok, _) = parse_start_reply(&link.request(PacketType::Start, &[])?)?;
        if !ok {
            return Err(ClientError::Protocol("controller refused START".into()));
        }
        let stream = link.try_clone_stream()?;
        stream.set_read_timeout(None)?;
        let shared: Shared = Arc::default();
        let reader = {
            let (shared, recipe) = (shared.clone(), recipe.clone());
            std::thread::Builder::new()
                .name("receive-session".into())
                .spawn(move || read_loop(link, recipe, shared))?
        };
        Ok(ReceiveSession {
            recipe,
            shared,
            stream,
            reader: Some(reader),
        })
    }

    /// Connects with the default state fields.
    pub fn connect_default(addr: impl ToSocketAddrs, frequency: f64) -> Result<ReceiveSession, ClientError> {
        ReceiveSession::connect(addr, &default_fields(), frequency)
    }

    pub fn recipe(&self) -> &Recipe {
        &self.recipe
    }

    fn state(&self) -> MutexGuard<'_, Latest> {
        self.shared.0.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Data packages received so far.
    pub fn received(&self) -> u64 {
        self.state().received
    }

    /// The most recent snapshot.
    pub fn snapshot(&self) -> Result<RobotSnapshot, ClientError> {
        self.state().snapshot.clone().ok_or(ClientError::NoData)
    }

    /// Raw field values of the most recent package, in recipe order.
    pub fn values(&self) -> Result<Vec<FieldValue>, ClientError> {
        self.state().values.clone().ok_or(ClientError::NoData)
    }

    pub fn actual_q(&self) -> Result<[f64; 6], ClientError> {
        Ok(self.snapshot()?.q)
    }

    pub fn actual_tcp_pose(&self) -> Result<Pose6, ClientError> {
        Ok(self.snapshot()?.tcp_pose)
    }

    pub fn actual_tcp_force(&self) -> Result<[f64; 6], ClientError> {
        Ok(self.snapshot()?.tcp_force)
    }

    /// Waits for a package newer than any seen when called.
    pub fn wait_next(&self, timeout: Duration) -> Result<RobotSnapshot, ClientError> {
        let seen = self.received();
        self.wait_received(seen + 1, timeout)
    }

    /// Waits until at least `count` packages have arrived in total.
    pub fn wait_received(&self, count: u64, timeout: Duration) -> Result<RobotSnapshot, ClientError> {
        let deadline = Instant::now() + timeout;
        let (lock, cv) = &*self.shared;
        let mut state = lock.lock().unwrap_or_else(|e| e.into_inner());
        while state.received < count {
            if let Some(reason) = &state.closed {
                return Err(ClientError::Protocol(reason.clone()));
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(ClientError::NoData);
            }
            state = cv.wait_timeout(state, deadline - now).unwrap_or_else(|e| e.into_inner()).0;
        }
        state.snapshot.clone().ok_or(ClientError::NoData)
    }

    /// Waits until packages are pending and returns every one not taken before, oldest first.
    ///
    /// Unlike [`ReceiveSession::wait_next`] no package is skipped, as long as the caller
    /// keeps up within the last 4096.
    pub fn wait_backlog(&self, timeout: Duration) -> Result<Vec<RobotSnapshot>, ClientError> {
        let deadline = Instant::now() + timeout;
        let (lock, cv) = &*self.shared;
        let mut state = lock.lock().unwrap_or_else(|e| e.into_inner());
        while state.backlog.is_empty() {
            if let Some(reason) = &state.closed {
                return Err(ClientError::Protocol(reason.clone()));
            }
            let now = Instant::now();
            if now >= deadline {
                return Ok(Vec::new());
            }
            state = cv.wait_timeout(state, deadline - now).unwrap_or_else(|e| e.into_inner()).0;
        }
        Ok(state.backlog.drain(..).collect())
    }
}

/// State fields a receive session subscribes to by default.
pub fn default_fields() -> Vec<&'static str> {
    vec![
        "timestamp",
        "actual_q",
        "actual_qd",
        "actual_TCP_pose",
        "actual_TCP_force",
        "actual_digital_input_bits",
        "actual_digital_output_bits",
    ]
}

fn read_loop(mut link: Link, recipe: Recipe, shared: Shared) {
    let (lock, cv) = &*shared;
    let reason = loop {
        let frame = match link.recv() {
            Ok(f) => f,
            Err(e) => break e.to_string(),
        };
        if frame.kind != PacketType::DataPackage || frame.payload.first() != Some(&recipe.id) {
            continue;
        }
        match recipe.unpack(&frame.payload) {
            Ok(values) => {
                let snapshot = RobotSnapshot::from_values(&recipe, &values);
                let mut state = lock.lock().unwrap_or_else(|e| e.into_inner());
                state.values = Some(values);
                if state.backlog.len() == BACKLOG_LIMIT {
                    state.backlog.pop_front();
                }
                state.backlog.push_back(snapshot.clone());
                state.snapshot = Some(snapshot);
                state.received += 1;
                cv.notify_all();
            }
            Err(e) => log::warn!("receive session: {e}"),
        }
    };
    lock.lock().unwrap_or_else(|e| e.into_inner()).closed = Some(reason);
    cv.notify_all();
}

impl Drop for ReceiveSession {
    fn drop(&mut self) {
        let _ = self.stream.shutdown(Shutdown::Both);
        if let Some(h) = self.reader.take() {
            let _ = h.join();
        }
    }
}
