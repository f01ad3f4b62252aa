//! Connection establishment for grabbers.

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpStream, UdpSocket};
use std::time::Duration;

use thiserror::Error;

/// Byte stream a grabber talks over. Reads that find no data before the
/// stream's deadline fail with `TimedOut` or `WouldBlock`.
pub trait Stream: Read + Write + Send {}

impl<T: Read + Write + Send> Stream for T {}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConnectError {
    #[error("connection refused")]
    Refused,
    #[error("unreachable")]
    Unreachable,
    #[error("timed out")]
    Timeout,
    #[error("{0}")]
    Other(String),
}

impl From<io::Error> for ConnectError {
    fn from(e: io::Error) -> Self {
        match e.kind() {
            io::ErrorKind::ConnectionRefused => ConnectError::Refused,
            io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock => ConnectError::Timeout,
            io::ErrorKind::HostUnreachable | io::ErrorKind::NetworkUnreachable => ConnectError::Unreachable,
            _ => ConnectError::Other(e.to_string()),
        }
    }
}

pub trait Connector: Send + Sync {
    fn connect_tcp(&self, addr: SocketAddr, timeout: Duration) -> Result<Box<dyn Stream>, ConnectError>;

    /// Send one datagram and return the first reply, truncated to `cap`.
    fn udp_exchange(
        &self,
        addr: SocketAddr,
        request: &[u8],
        timeout: Duration,
        cap: usize,
    ) -> Result<Vec<u8>, ConnectError>;
}

/// Operating-system sockets.
#[derive(Debug, Default, Clone, Copy)]
pub struct SystemConnector;

impl Connector for SystemConnector {
    fn connect_tcp(&self, addr: SocketAddr, timeout: Duration) -> Result<Box<dyn Stream>, ConnectError> {
        let s = TcpStream::connect_timeout(&addr, timeout)?;
        s.set_read_timeout(Some(timeout))?;
        s.set_write_timeout(Some(timeout))?;
        s.set_nodelay(true)?;
        Ok(Box::new(s))
    }

    fn udp_exchange(
        &self,
        addr: SocketAddr,
        request: &[u8],
        timeout: Duration,
        cap: usize,
    ) -> Result<Vec<u8>, ConnectError> {
        let bind: SocketAddr = if addr.is_ipv4() {
            "0.0.0.0:0".parse().unwrap()
        } else {
            "[::]:0".parse().unwrap()
        };
        let sock = UdpSocket::bind(bind)?;
        sock.set_read_timeout(Some(timeout))?;
        sock.connect(addr)?;
        sock.send(request)?;
        let mut buf = vec![0u8; cap.min(65_535)];
        let n = sock.recv(&mut buf)?;
        buf.truncate(n);
        Ok(buf)
    }
}

pub(crate) fn is_idle(e: &io::Error) -> bool {
    matches!(e.kind(), io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock)
}

/// Why a bounded read stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ReadEnd {
    Eof,
    Idle,
    Cap,
    Done,
}

/// Read until EOF, an idle read, `cap` bytes, or `done(buf)` holds.
pub(crate) fn read_bounded(
    stream: &mut dyn Read,
    buf: &mut Vec<u8>,
    cap: usize,
    done: &dyn Fn(&[u8]) -> bool,
) -> io::Result<ReadEnd> {
    let mut chunk = [0u8; 4096];
    loop {
        if done(buf) {
            return Ok(ReadEnd::Done);
        }
        if buf.len() >= cap {
            return Ok(ReadEnd::Cap);
        }
        let want = chunk.len().min(cap - buf.len());
        match stream.read(&mut chunk[..want]) {
            Ok(0) => return Ok(ReadEnd::Eof),
            Ok(n) => buf.extend_from_slice(&chunk[..n]),
            Err(e) if is_idle(&e) => return Ok(ReadEnd::Idle),
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(ReadEnd::Eof),
            Err(e) => return Err(e),
        }
    }
}

/// Read exactly `n` bytes or fail; an idle read maps to `TimedOut`.
pub(crate) fn read_exact_bounded(stream: &mut dyn Read, n: usize) -> io::Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(n);
    match read_bounded(stream, &mut buf, n, &|b| b.len() >= n)? {
        ReadEnd::Done | ReadEnd::Cap => Ok(buf),
        ReadEnd::Eof => Err(io::Error::new(io::ErrorKind::UnexpectedEof, "connection closed")),
        ReadEnd::Idle => Err(io::Error::new(io::ErrorKind::TimedOut, "no data")),
    }
}
