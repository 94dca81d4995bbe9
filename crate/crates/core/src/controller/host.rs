//! Network front-end of the controller: one loop thread owns the [`Controller`]; every
//! connection talks to it through an ordered mailbox.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::mpsc::{channel, sync_channel, Receiver, RecvTimeoutError, Sender, SyncSender, TrySendError};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use super::layout::CONTROL_CLAIM_FIELD;
use super::sim::ConnId;
use super::{Controller, ControllerConfig, ControllerError, TimeMode};
use crate::script::Builtin;
use crate::wire::messages::{
    accept_reply, parse_setup_inputs_request, parse_setup_outputs_request, parse_version_request,
    start_reply, ScriptReply, SetupReply,
};
use crate::wire::{encode_frame, Frame, FrameDecoder, PacketType, Recipe, RecipeRegistry, PROTOCOL_VERSION};

/// Outgoing frames buffered per connection before packages are dropped.
const OUTBOX_CAPACITY: usize = 4096;
const ACCEPT_POLL: Duration = Duration::from_millis(5);

type Inspector = Box<dyn FnOnce(&mut Controller) + Send>;

enum Event {
    Connected { conn: ConnId, outbox: SyncSender<Vec<u8>> },
    Frame { conn: ConnId, frame: Frame },
    Disconnected(ConnId),
    Dashboard { line: String, reply: Sender<String> },
    Inspect(Inspector),
    Shutdown,
}

/// Connection counters, readable from any thread.
#[derive(Debug, Default)]
pub struct HostStats {
    pub rtde_connections: AtomicUsize,
    pub dashboard_connections: AtomicUsize,
    pub control_connected: AtomicBool,
    pub ticks: AtomicU64,
}

/// Open sockets, so shutdown can unblock their reader threads.
type Streams = Arc<Mutex<HashMap<u64, TcpStream>>>;

/// A running controller serving the data-exchange and dashboard ports.
pub struct ControllerHost {
    rtde_addr: SocketAddr,
    dashboard_addr: SocketAddr,
    frequency: f64,
    events: Sender<Event>,
    stop: Arc<AtomicBool>,
    stats: Arc<HostStats>,
    streams: Streams,
    threads: Vec<JoinHandle<()>>,
}

impl ControllerHost {
    pub fn spawn(config: ControllerConfig) -> Result<ControllerHost, ControllerError> {
        ControllerHost::spawn_with_extras(config, Vec::new())
    }

    /// Binds both ports (0 picks a free port) and starts the control loop.
    pub fn spawn_with_extras(
        config: ControllerConfig,
        extras: Vec<(String, Builtin)>,
    ) -> Result<ControllerHost, ControllerError> {
        let controller = Controller::with_extras(&config, extras)?;
        let rtde = TcpListener::bind((config.bind.as_str(), config.rtde_port))?;
        let dashboard = TcpListener::bind((config.bind.as_str(), config.dashboard_port))?;
        let rtde_addr = rtde.local_addr()?;
        let dashboard_addr = dashboard.local_addr()?;
        rtde.set_nonblocking(true)?;
        dashboard.set_nonblocking(true)?;

        let (tx, rx) = channel();
        let stop = Arc::new(AtomicBool::new(false));
        let stats = Arc::new(HostStats::default());
        let streams: Streams = Arc::default();
        let ids = Arc::new(AtomicU64::new(1));
        let frequency = controller.frequency();
        let mut threads = Vec::new();

        let lp = Loop {
            controller,
            mode: config.time_mode,
            conns: HashMap::new(),
            master: None,
            awaiting_reply: 0,
            stats: stats.clone(),
            streams: streams.clone(),
        };
        threads.push(
            std::thread::Builder::new()
                .name("controller-loop".into())
                .spawn(move || lp.run(rx))?,
        );
        {
            let (tx, stop, stats, streams, ids) = (tx.clone(), stop.clone(), stats.clone(), streams.clone(), ids.clone());
            threads.push(std::thread::Builder::new().name("rtde-accept".into()).spawn(move || {
                accept_loop(rtde, &stop, |stream| {
                    let conn = ids.fetch_add(1, Ordering::Relaxed);
                    serve_rtde(conn, stream, tx.clone(), stats.clone(), streams.clone())
                })
            })?);
        }
        {
            let (tx, stop, stats, streams) = (tx.clone(), stop.clone(), stats.clone(), streams.clone());
            threads.push(std::thread::Builder::new().name("dashboard-accept".into()).spawn(move || {
                accept_loop(dashboard, &stop, |stream| {
                    let id = ids.fetch_add(1, Ordering::Relaxed);
                    serve_dashboard(id, stream, tx.clone(), stats.clone(), streams.clone())
                })
            })?);
        }
        log::info!(
            "controller serving data exchange on {rtde_addr}, dashboard on {dashboard_addr} ({:?} time, {frequency} Hz)",
            config.time_mode
        );
        Ok(ControllerHost {
            rtde_addr,
            dashboard_addr,
            frequency,
            events: tx,
            stop,
            stats,
            streams,
            threads,
        })
    }

    pub fn rtde_addr(&self) -> SocketAddr {
        self.rtde_addr
    }

    pub fn dashboard_addr(&self) -> SocketAddr {
        self.dashboard_addr
    }

    pub fn frequency(&self) -> f64 {
        self.frequency
    }

    pub fn stats(&self) -> &HostStats {
        &self.stats
    }

    /// Runs `f` on the loop thread between two ticks and returns its result.
    pub fn inspect<T: Send + 'static>(&self, f: impl FnOnce(&mut Controller) -> T + Send + 'static) -> Option<T> {
        let (tx, rx) = channel();
        let job: Inspector = Box::new(move |c| {
            let _ = tx.send(f(c));
        });
        self.events.send(Event::Inspect(job)).ok()?;
        rx.recv().ok()
    }

    /// Stops the loop, closes every connection and joins all threads.
    pub fn shutdown(mut self) {
        self.stop_all();
    }

    fn stop_all(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = self.events.send(Event::Shutdown);
        for s in self.streams.lock().expect("stream table").values() {
            let _ = s.shutdown(Shutdown::Both);
        }
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for ControllerHost {
    fn drop(&mut self) {
        self.stop_all();
    }
}

fn accept_loop(listener: TcpListener, stop: &AtomicBool, mut serve: impl FnMut(TcpStream) -> std::io::Result<()>) {
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                log::debug!("connection from {peer}");
                let result = stream
                    .set_nonblocking(false)
                    .and_then(|_| stream.set_nodelay(true))
                    .and_then(|_| serve(stream));
                if let Err(e) = result {
                    log::warn!("could not serve {peer}: {e}");
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => std::thread::sleep(ACCEPT_POLL),
            Err(e) => {
                log::warn!("accept failed: {e}");
                std::thread::sleep(ACCEPT_POLL);
            }
        }
    }
}

fn serve_rtde(
    conn: ConnId,
    stream: TcpStream,
    events: Sender<Event>,
    stats: Arc<HostStats>,
    streams: Streams,
) -> std::io::Result<()> {
    let mut reader = stream.try_clone()?;
    let mut writer = stream.try_clone()?;
    streams.lock().expect("stream table").insert(conn, stream);
    let (outbox, queue) = sync_channel::<Vec<u8>>(OUTBOX_CAPACITY);
    if events.send(Event::Connected { conn, outbox }).is_err() {
        return Ok(());
    }
    stats.rtde_connections.fetch_add(1, Ordering::SeqCst);
    std::thread::Builder::new().name(format!("rtde-write-{conn}")).spawn(move || {
        for bytes in queue {
            if writer.write_all(&bytes).is_err() {
                break;
            }
        }
        let _ = writer.shutdown(Shutdown::Both);
    })?;
    std::thread::Builder::new().name(format!("rtde-read-{conn}")).spawn(move || {
        let mut decoder = FrameDecoder::new();
        let mut buf = [0u8; 8192];
        'read: loop {
            let n = match reader.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => n,
            };
            match decoder.push(&buf[..n]) {
                Ok(frames) => {
                    for frame in frames {
                        if events.send(Event::Frame { conn, frame }).is_err() {
                            break 'read;
                        }
                    }
                }
                Err(e) => {
                    log::warn!("connection {conn}: {e}; closing");
                    break;
                }
            }
        }
        let _ = reader.shutdown(Shutdown::Both);
        streams.lock().expect("stream table").remove(&conn);
        stats.rtde_connections.fetch_sub(1, Ordering::SeqCst);
        let _ = events.send(Event::Disconnected(conn));
    })?;
    Ok(())
}

fn serve_dashboard(
    id: u64,
    stream: TcpStream,
    events: Sender<Event>,
    stats: Arc<HostStats>,
    streams: Streams,
) -> std::io::Result<()> {
    let reader = BufReader::new(stream.try_clone()?);
    let mut writer = stream.try_clone()?;
    streams.lock().expect("stream table").insert(id, stream);
    stats.dashboard_connections.fetch_add(1, Ordering::SeqCst);
    std::thread::Builder::new().name(format!("dashboard-{id}")).spawn(move || {
        for line in reader.lines() {
            let Ok(line) = line else { break };
            let line = line.trim_end_matches('\r').to_string();
            if line.trim() == "quit" {
                let _ = writer.write_all(b"Disconnected\n");
                break;
            }
            let (tx, rx) = channel();
            if events.send(Event::Dashboard { line, reply: tx }).is_err() {
                break;
            }
            let Ok(reply) = rx.recv() else { break };
            if writer.write_all(format!("{reply}\n").as_bytes()).is_err() {
                break;
            }
        }
        let _ = writer.shutdown(Shutdown::Both);
        streams.lock().expect("stream table").remove(&id);
        stats.dashboard_connections.fetch_sub(1, Ordering::SeqCst);
    })?;
    Ok(())
}

struct Conn {
    outbox: SyncSender<Vec<u8>>,
    registry: RecipeRegistry,
    output: Option<Recipe>,
    input: Option<Recipe>,
}

struct Loop {
    controller: Controller,
    mode: TimeMode,
    conns: HashMap<ConnId, Conn>,
    master: Option<ConnId>,
    /// Wall-clock mode: control-connection packages still owed a reply.
    awaiting_reply: usize,
    stats: Arc<HostStats>,
    streams: Streams,
}

impl Loop {
    fn run(mut self, events: Receiver<Event>) {
        let period = Duration::from_secs_f64(1.0 / self.controller.frequency());
        let mut deadline = Instant::now() + period;
        loop {
            let event = match self.mode {
                TimeMode::Virtual => events.recv().map_err(|_| RecvTimeoutError::Disconnected),
                TimeMode::Wall => events.recv_timeout(deadline.saturating_duration_since(Instant::now())),
            };
            match event {
                Ok(Event::Shutdown) | Err(RecvTimeoutError::Disconnected) => break,
                Ok(event) => self.handle(event),
                Err(RecvTimeoutError::Timeout) => {
                    self.tick();
                    for _ in 0..std::mem::take(&mut self.awaiting_reply) {
                        self.reply_to_master();
                    }
                    deadline += period;
                    let now = Instant::now();
                    if deadline + 10 * period < now {
                        log::warn!("control loop overran; resynchronizing clock");
                        deadline = now + period;
                    }
                }
            }
        }
        for s in self.streams.lock().expect("stream table").values() {
            let _ = s.shutdown(Shutdown::Both);
        }
    }

    fn tick(&mut self) {
        for (conn, payload) in self.controller.tick() {
            self.send(conn, PacketType::DataPackage, &payload, false);
        }
        self.stats.ticks.store(self.controller.ticks(), Ordering::SeqCst);
    }

    fn send(&mut self, conn: ConnId, kind: PacketType, payload: &[u8], reply: bool) {
        let Some(c) = self.conns.get(&conn) else { return };
        let bytes = match encode_frame(kind, payload) {
            Ok(b) => b,
            Err(e) => return log::error!("connection {conn}: {e}"),
        };
        match c.outbox.try_send(bytes) {
            Ok(()) => {}
            Err(TrySendError::Full(_)) if !reply => log::warn!("connection {conn} is not reading; package dropped"),
            Err(TrySendError::Full(_)) => log::warn!("connection {conn} is not reading; reply dropped"),
            Err(TrySendError::Disconnected(_)) => {}
        }
    }

    fn reply_to_master(&mut self) {
        let Some(master) = self.master else { return };
        let Some(recipe) = self.conns.get(&master).and_then(|c| c.output.clone()) else { return };
        match self.controller.snapshot().pack(&recipe) {
            Ok(p) => self.send(master, PacketType::DataPackage, &p, true),
            Err(e) => log::error!("connection {master}: {e}"),
        }
    }

    fn handle(&mut self, event: Event) {
        match event {
            Event::Connected { conn, outbox } => {
                self.conns.insert(
                    conn,
                    Conn {
                        outbox,
                        registry: RecipeRegistry::new(),
                        output: None,
                        input: None,
                    },
                );
            }
            Event::Disconnected(conn) => {
                self.conns.remove(&conn);
                self.controller.unsubscribe(conn);
                if self.master == Some(conn) {
                    self.master = None;
                    self.awaiting_reply = 0;
                    self.stats.control_connected.store(false, Ordering::SeqCst);
                    log::info!("control connection {conn} closed");
                }
            }
            Event::Frame { conn, frame } => self.handle_frame(conn, frame),
            Event::Dashboard { line, reply } => {
                let _ = reply.send(self.controller.dashboard_line(&line));
            }
            Event::Inspect(f) => f(&mut self.controller),
            Event::Shutdown => {}
        }
    }

    fn handle_frame(&mut self, conn: ConnId, frame: Frame) {
        let Some(c) = self.conns.get_mut(&conn) else { return };
        let payload = &frame.payload;
        match frame.kind {
            PacketType::ProtocolVersion => {
                let ok = parse_version_request(payload).is_ok_and(|v| v == PROTOCOL_VERSION);
                self.send(conn, frame.kind, &accept_reply(ok), true);
            }
            PacketType::SetupOutputs => {
                let reply = match parse_setup_outputs_request(payload).and_then(|(f, names)| c.registry.output(&names, f)) {
                    Ok(recipe) => {
                        let kinds = recipe.fields.iter().map(|f| f.kind).collect();
                        let id = recipe.id;
                        c.output = Some(recipe.clone());
                        if self.master != Some(conn) {
                            self.controller.subscribe(conn, recipe);
                        }
                        SetupReply::Accepted { recipe_id: id, kinds }
                    }
                    Err(e) => SetupReply::Rejected { reason: e.to_string() },
                };
                self.send(conn, frame.kind, &reply.encode(), true);
            }
            PacketType::SetupInputs => {
                let reply = match parse_setup_inputs_request(payload) {
                    Err(e) => SetupReply::Rejected { reason: e.to_string() },
                    Ok(names) => {
                        let claims = names.iter().any(|n| n == CONTROL_CLAIM_FIELD);
                        if claims && self.master.is_some_and(|m| m != conn) {
                            SetupReply::Rejected {
                                reason: "control connection already active".into(),
                            }
                        } else {
                            match c.registry.input(&names) {
                                Ok(recipe) => {
                                    let kinds = recipe.fields.iter().map(|f| f.kind).collect();
                                    let id = recipe.id;
                                    c.input = Some(recipe);
                                    if claims && self.master.is_none() {
                                        self.claim_control(conn);
                                    }
                                    SetupReply::Accepted { recipe_id: id, kinds }
                                }
                                Err(e) => SetupReply::Rejected { reason: e.to_string() },
                            }
                        }
                    }
                };
                self.send(conn, frame.kind, &reply.encode(), true);
            }
            PacketType::Start => {
                let ok = c.output.is_some();
                if self.master != Some(conn) {
                    self.controller.start(conn);
                }
                let rate = self.controller.frequency();
                self.send(conn, frame.kind, &start_reply(ok, rate), true);
            }
            PacketType::Pause => {
                self.controller.pause(conn);
                self.send(conn, frame.kind, &accept_reply(true), true);
            }
            PacketType::DataPackage => self.handle_data(conn, payload),
            PacketType::ControlScript => {
                let reply = if self.master != Some(conn) {
                    ScriptReply {
                        accepted: false,
                        text: "script upload requires the control connection".into(),
                    }
                } else {
                    match std::str::from_utf8(payload)
                        .map_err(|e| ControllerError::Script(e.to_string()))
                        .and_then(|text| self.controller.install_script(text))
                    {
                        Ok(ids) => ScriptReply {
                            accepted: true,
                            text: ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(","),
                        },
                        Err(ControllerError::Script(msg)) => ScriptReply { accepted: false, text: msg },
                        Err(e) => ScriptReply {
                            accepted: false,
                            text: e.to_string(),
                        },
                    }
                };
                self.send(conn, frame.kind, &reply.encode(), true);
            }
        }
    }

    fn claim_control(&mut self, conn: ConnId) {
        self.master = Some(conn);
        // The control connection is paced by its own requests, not by the decimated stream.
        self.controller.unsubscribe(conn);
        self.stats.control_connected.store(true, Ordering::SeqCst);
        log::info!("connection {conn} holds the control role");
    }

    fn handle_data(&mut self, conn: ConnId, payload: &[u8]) {
        let Some(recipe) = self.conns.get(&conn).and_then(|c| c.input.clone()) else {
            return log::warn!("connection {conn}: data package without input recipe");
        };
        let values = match recipe.unpack(payload) {
            Ok(v) => v,
            Err(e) => return log::warn!("connection {conn}: {e}"),
        };
        if let Err(e) = self.controller.submit_input(&recipe, &values) {
            return log::warn!("connection {conn}: {e}");
        }
        if self.master == Some(conn) {
            match self.mode {
                TimeMode::Virtual => {
                    self.tick();
                    self.reply_to_master();
                }
                TimeMode::Wall => self.awaiting_reply += 1,
            }
        }
    }
}
