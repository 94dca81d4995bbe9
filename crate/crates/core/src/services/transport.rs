//! JSON-lines over TCP: one JSON object per `\n`-terminated line in each direction.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{sync_channel, SyncSender, TrySendError};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde_json::{json, Value};

use super::ServiceError;

/// Lines buffered per peer before streamed messages are dropped.
const PEER_BUFFER: usize = 4096;
const ACCEPT_POLL: Duration = Duration::from_millis(5);

/// Sending half of one client connection.
#[derive(Clone)]
pub struct Peer {
    id: u64,
    tx: SyncSender<String>,
}

impl Peer {
    pub fn id(&self) -> u64 {
        self.id
    }

    /// Queues a message, waiting for buffer space; false once the peer is gone.
    pub fn send(&self, message: &Value) -> bool {
        self.tx.send(message.to_string()).is_ok()
    }

    /// Queues a streamed message, dropping it if the peer is not keeping up; false once the peer is gone.
    pub fn try_send(&self, message: &Value) -> bool {
        match self.tx.try_send(message.to_string()) {
            Ok(()) => true,
            Err(TrySendError::Full(_)) => {
                log::debug!("peer {} is slow; message dropped", self.id);
                true
            }
            Err(TrySendError::Disconnected(_)) => false,
        }
    }
}

/// Behaviour of a [`LineServer`].
pub trait LineHandler: Send + Sync + 'static {
    fn on_message(&self, peer: &Peer, message: Value);
    fn on_close(&self, _peer: u64) {}
}

/// Accepts connections and feeds each received JSON object to a handler.
pub struct LineServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    streams: Arc<Mutex<HashMap<u64, TcpStream>>>,
    accept: Option<JoinHandle<()>>,
}

impl LineServer {
    pub fn spawn(addr: impl ToSocketAddrs, handler: Arc<dyn LineHandler>) -> std::io::Result<LineServer> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let streams: Arc<Mutex<HashMap<u64, TcpStream>>> = Arc::default();
        let accept = {
            let (stop, streams) = (stop.clone(), streams.clone());
            let ids = AtomicU64::new(1);
            std::thread::Builder::new().name(format!("jsonl-{}", addr.port())).spawn(move || {
                while !stop.load(Ordering::SeqCst) {
                    match listener.accept() {
                        Ok((stream, _)) => {
                            let id = ids.fetch_add(1, Ordering::Relaxed);
                            if let Err(e) = serve(id, stream, handler.clone(), streams.clone()) {
                                log::warn!("could not serve connection: {e}");
                            }
                        }
                        Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => std::thread::sleep(ACCEPT_POLL),
                        Err(e) => {
                            log::warn!("accept failed: {e}");
                            std::thread::sleep(ACCEPT_POLL);
                        }
                    }
                }
            })?
        };
        Ok(LineServer {
            addr,
            stop,
            streams,
            accept: Some(accept),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting and closes every connection.
    pub fn shutdown(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
        for s in self.streams.lock().expect("stream table").values() {
            let _ = s.shutdown(Shutdown::Both);
        }
    }
}

impl Drop for LineServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn serve(
    id: u64,
    stream: TcpStream,
    handler: Arc<dyn LineHandler>,
    streams: Arc<Mutex<HashMap<u64, TcpStream>>>,
) -> std::io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let reader = BufReader::new(stream.try_clone()?);
    let mut writer = stream.try_clone()?;
    streams.lock().expect("stream table").insert(id, stream);
    let (tx, rx) = sync_channel::<String>(PEER_BUFFER);
    std::thread::Builder::new().name(format!("jsonl-write-{id}")).spawn(move || {
        for line in rx {
            if writer.write_all(line.as_bytes()).and_then(|_| writer.write_all(b"\n")).is_err() {
                break;
            }
        }
    })?;
    let peer = Peer { id, tx };
    std::thread::Builder::new().name(format!("jsonl-read-{id}")).spawn(move || {
        for line in reader.lines() {
            let Ok(line) = line else { break };
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<Value>(&line) {
                Ok(v) => handler.on_message(&peer, v),
                Err(e) => {
                    peer.send(&json!({ "error": format!("invalid JSON: {e}") }));
                }
            }
        }
        handler.on_close(id);
        if let Some(s) = streams.lock().expect("stream table").remove(&id) {
            let _ = s.shutdown(Shutdown::Both);
        }
    })?;
    Ok(())
}

/// Blocking client for a JSON-lines service.
pub struct LineClient {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl LineClient {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<LineClient, ServiceError> {
        let writer = TcpStream::connect(addr)?;
        writer.set_nodelay(true)?;
        Ok(LineClient {
            reader: BufReader::new(writer.try_clone()?),
            writer,
        })
    }

    /// Bounds how long [`LineClient::recv`] waits; `None` waits forever.
    pub fn set_timeout(&self, timeout: Option<Duration>) -> Result<(), ServiceError> {
        self.writer.set_read_timeout(timeout)?;
        Ok(())
    }

    pub fn send(&mut self, message: &Value) -> Result<(), ServiceError> {
        let mut line = message.to_string();
        line.push('\n');
        self.writer.write_all(line.as_bytes())?;
        Ok(())
    }

    /// Next message from the server.
    pub fn recv(&mut self) -> Result<Value, ServiceError> {
        let mut line = String::new();
        loop {
            line.clear();
            if self.reader.read_line(&mut line)? == 0 {
                return Err(ServiceError::Transport("connection closed".into()));
            }
            if !line.trim().is_empty() {
                return serde_json::from_str(&line).map_err(|e| ServiceError::Transport(format!("invalid JSON: {e}")));
            }
        }
    }

    /// Calls a service and returns its result, skipping streamed topic messages.
    pub fn call(&mut self, service: &str, args: Value) -> Result<Value, ServiceError> {
        self.send(&json!({ "service": service, "args": args }))?;
        loop {
            let m = self.recv()?;
            if let Some(r) = m.get("result") {
                return Ok(r.clone());
            }
            if let Some(e) = m.get("error") {
                return Err(ServiceError::Remote(e.as_str().unwrap_or_default().to_string()));
            }
        }
    }
}
