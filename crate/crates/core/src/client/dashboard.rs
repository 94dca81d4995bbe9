use std::io::{BufRead, BufReader, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};

use super::link::REPLY_TIMEOUT;
use super::ClientError;

/// Line-oriented client for the dashboard port.
pub struct DashboardSession {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl DashboardSession {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<DashboardSession, ClientError> {
        let writer = TcpStream::connect(addr)?;
        writer.set_read_timeout(Some(REPLY_TIMEOUT))?;
        Ok(DashboardSession {
            reader: BufReader::new(writer.try_clone()?),
            writer,
        })
    }

    /// Sends one request line and returns the reply line without its terminator.
    pub fn send(&mut self, line: &str) -> Result<String, ClientError> {
        if line.contains('\n') {
            return Err(ClientError::Protocol("dashboard requests are single lines".into()));
        }
        self.writer.write_all(format!("{line}\n").as_bytes())?;
        let mut reply = String::new();
        if self.reader.read_line(&mut reply)? == 0 {
            return Err(ClientError::Closed);
        }
        Ok(reply.trim_end_matches(['\r', '\n']).to_string())
    }
}

impl Drop for DashboardSession {
    fn drop(&mut self) {
        let _ = self.writer.shutdown(Shutdown::Both);
    }
}
