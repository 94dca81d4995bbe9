use std::collections::VecDeque;
use std::io::{Read, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::time::Duration;

use super::ClientError;
use crate::wire::messages::{
    parse_accept, setup_inputs_request, setup_outputs_request, version_request, SetupReply,
};
use crate::wire::{
    build_input_recipe, build_output_recipe, encode_frame, Frame, FrameDecoder, PacketType, Recipe,
    PROTOCOL_VERSION,
};

/// Longest a request waits for its reply before the connection is considered dead.
pub(crate) const REPLY_TIMEOUT: Duration = Duration::from_secs(30);

/// A framed connection to the data-exchange port.
pub(crate) struct Link {
    stream: TcpStream,
    decoder: FrameDecoder,
    queued: VecDeque<Frame>,
}

impl Link {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Link, ClientError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(REPLY_TIMEOUT))?;
        let mut link = Link {
            stream,
            decoder: FrameDecoder::new(),
            queued: VecDeque::new(),
        };
        link.negotiate()?;
        Ok(link)
    }

    pub fn try_clone_stream(&self) -> std::io::Result<TcpStream> {
        self.stream.try_clone()
    }

    pub fn send(&mut self, kind: PacketType, payload: &[u8]) -> Result<(), ClientError> {
        self.stream.write_all(&encode_frame(kind, payload)?)?;
        Ok(())
    }

    /// Next frame from the controller.
    pub fn recv(&mut self) -> Result<Frame, ClientError> {
        let mut buf = [0u8; 8192];
        loop {
            if let Some(f) = self.queued.pop_front() {
                return Ok(f);
            }
            let n = match self.stream.read(&mut buf) {
                Ok(0) => return Err(ClientError::Closed),
                Ok(n) => n,
                Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {
                    return Err(ClientError::Protocol("controller did not answer in time".into()))
                }
                Err(e) => return Err(e.into()),
            };
            self.queued.extend(self.decoder.push(&buf[..n])?);
        }
    }

    /// Sends a request and returns the reply of the same packet type, skipping data packages.
    pub fn request(&mut self, kind: PacketType, payload: &[u8]) -> Result<Vec<u8>, ClientError> {
        self.send(kind, payload)?;
        loop {
            let f = self.recv()?;
            if f.kind == kind {
                return Ok(f.payload);
            }
            if f.kind != PacketType::DataPackage {
                return Err(ClientError::Protocol(format!("unexpected {:?} reply", f.kind)));
            }
        }
    }

    fn negotiate(&mut self) -> Result<(), ClientError> {
        self.barrier()
    }

    /// Version round trip; also proves every earlier frame has reached the controller loop.
    pub fn barrier(&mut self) -> Result<(), ClientError> {
        let reply = self.request(PacketType::ProtocolVersion, &version_request(PROTOCOL_VERSION))?;
        if parse_accept(&reply)? {
            Ok(())
        } else {
            Err(ClientError::VersionRefused(PROTOCOL_VERSION))
        }
    }

    pub fn setup_outputs(&mut self, names: &[String], frequency: f64) -> Result<Recipe, ClientError> {
        let reply = self.request(PacketType::SetupOutputs, &setup_outputs_request(frequency, names))?;
        match SetupReply::decode(&reply)? {
            SetupReply::Accepted { recipe_id, .. } => Ok(build_output_recipe(recipe_id, names, frequency)?),
            SetupReply::Rejected { reason } => Err(ClientError::RecipeRejected(reason)),
        }
    }

    /// Sets up an input recipe; the rejection reason is returned as-is for the caller to classify.
    pub fn setup_inputs(&mut self, names: &[String]) -> Result<Result<Recipe, String>, ClientError> {
        let reply = self.request(PacketType::SetupInputs, &setup_inputs_request(names))?;
        Ok(match SetupReply::decode(&reply)? {
            SetupReply::Accepted { recipe_id, .. } => Ok(build_input_recipe(recipe_id, names)?),
            SetupReply::Rejected { reason } => Err(reason),
        })
    }

    pub fn close(&self) {
        let _ = self.stream.shutdown(Shutdown::Both);
    }
}
