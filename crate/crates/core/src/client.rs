//! Blocking client: one connection per request.

use std::io;
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::time::Duration;

use thiserror::Error;

use crate::components::{AcquisitionResult, ExperimentRequest};
use crate::wire::{self, DecodeError, EncodeError, FrameError, ResponseEnvelope};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("cannot connect to {addr}: {source}")]
    Connect { addr: String, source: io::Error },
    #[error("timed out waiting for the server")]
    Timeout,
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error("framing: {0}")]
    Frame(FrameError),
    #[error("undecodable response: {0}")]
    Decode(#[from] DecodeError),
    /// The server's error message, verbatim.
    #[error("{0}")]
    Server(String),
}

impl From<FrameError> for ClientError {
    fn from(e: FrameError) -> Self {
        match e {
            FrameError::Io(io)
                if matches!(
                    io.kind(),
                    io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut
                ) =>
            {
                ClientError::Timeout
            }
            other => ClientError::Frame(other),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Client {
    addr: String,
    timeout: Duration,
}

impl Client {
    pub fn new(addr: impl Into<String>) -> Self {
        Self {
            addr: addr.into(),
            timeout: Duration::from_secs(60),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn addr(&self) -> &str {
        &self.addr
    }

    fn connect(&self) -> Result<TcpStream, ClientError> {
        let connect_err = |source| ClientError::Connect {
            addr: self.addr.clone(),
            source,
        };
        let addrs: Vec<SocketAddr> = self.addr.to_socket_addrs().map_err(connect_err)?.collect();
        let mut last = io::Error::new(io::ErrorKind::NotFound, "no address");
        for addr in addrs {
            match TcpStream::connect_timeout(&addr, self.timeout) {
                Ok(stream) => {
                    stream
                        .set_read_timeout(Some(self.timeout))
                        .map_err(connect_err)?;
                    stream
                        .set_write_timeout(Some(self.timeout))
                        .map_err(connect_err)?;
                    return Ok(stream);
                }
                Err(e) => last = e,
            }
        }
        Err(connect_err(last))
    }

    /// Sends an already framed byte string and returns the raw response
    /// payload. For protocol testing.
    pub fn send_raw(&self, bytes: &[u8]) -> Result<Vec<u8>, ClientError> {
        use std::io::Write;
        let mut stream = self.connect()?;
        stream.write_all(bytes).map_err(FrameError::Io)?;
        let _ = stream.shutdown(std::net::Shutdown::Write);
        Ok(wire::frame_read(&mut stream)?)
    }

    /// Executes one request and returns the decoded envelope.
    pub fn call(&self, request: &ExperimentRequest) -> Result<ResponseEnvelope, ClientError> {
        let payload = wire::encode_request(request)?;
        let mut stream = self.connect()?;
        wire::write_frame(&mut stream, &payload)?;
        let response = wire::frame_read(&mut stream)?;
        Ok(wire::decode_results(&response)?)
    }

    /// Executes one request; server errors become [`ClientError::Server`].
    pub fn execute(&self, request: &ExperimentRequest) -> Result<AcquisitionResult, ClientError> {
        match self.call(request)? {
            ResponseEnvelope::Ok(result) => Ok(result),
            ResponseEnvelope::Error(message) => Err(ClientError::Server(message)),
        }
    }
}
