//! Line-oriented bidirectional links. Each line carries one envelope.

use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::time::Duration;

use super::Result;

pub trait Link: Send {
    fn send_line(&mut self, line: &str) -> Result<()>;
    /// `Ok(None)` when the peer has closed its end.
    fn recv_line(&mut self, timeout: Duration) -> Result<Option<String>>;
}

/// In-process link over a pair of mpsc channels.
pub struct ChannelLink {
    tx: Sender<String>,
    rx: Receiver<String>,
}

impl ChannelLink {
    pub fn pair() -> (Self, Self) {
        let (tx_a, rx_b) = channel();
        let (tx_b, rx_a) = channel();
        (Self { tx: tx_a, rx: rx_a }, Self { tx: tx_b, rx: rx_b })
    }
}

impl Link for ChannelLink {
    fn send_line(&mut self, line: &str) -> Result<()> {
        // A dropped receiver surfaces as EOF on the peer's next read.
        let _ = self.tx.send(line.to_string());
        Ok(())
    }

    fn recv_line(&mut self, timeout: Duration) -> Result<Option<String>> {
        match self.rx.recv_timeout(timeout) {
            Ok(line) => Ok(Some(line)),
            Err(RecvTimeoutError::Disconnected) => Ok(None),
            Err(RecvTimeoutError::Timeout) => Err(std::io::Error::from(ErrorKind::TimedOut).into()),
        }
    }
}

/// Newline-delimited JSON over a TCP stream.
pub struct TcpLink {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl TcpLink {
    pub fn new(stream: TcpStream) -> Result<Self> {
        stream.set_nodelay(true)?;
        let writer = stream.try_clone()?;
        Ok(Self { reader: BufReader::new(stream), writer })
    }

    /// Two connected ends over loopback.
    pub fn pair() -> Result<(Self, Self)> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let client = TcpStream::connect(listener.local_addr()?)?;
        let (server, _) = listener.accept()?;
        Ok((Self::new(client)?, Self::new(server)?))
    }
}

impl Link for TcpLink {
    fn send_line(&mut self, line: &str) -> Result<()> {
        let mut buf = Vec::with_capacity(line.len() + 1);
        buf.extend_from_slice(line.as_bytes());
        buf.push(b'\n');
        match self.writer.write_all(&buf) {
            Ok(()) => Ok(()),
            // Same contract as the channel link: the peer sees EOF.
            Err(e) if matches!(e.kind(), ErrorKind::BrokenPipe | ErrorKind::ConnectionReset) => Ok(()),
            Err(e) => Err(e.into()),
        }
    }

    fn recv_line(&mut self, timeout: Duration) -> Result<Option<String>> {
        self.reader.get_ref().set_read_timeout(Some(timeout.max(Duration::from_millis(1))))?;
        let mut line = String::new();
        match self.reader.read_line(&mut line) {
            Ok(0) => Ok(None),
            Ok(_) => {
                if line.ends_with('\n') {
                    line.pop();
                }
                Ok(Some(line))
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => Err(std::io::Error::from(ErrorKind::TimedOut).into()),
            Err(e) if e.kind() == ErrorKind::ConnectionReset => Ok(None),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for TcpLink {
    fn drop(&mut self) {
        let _ = self.writer.shutdown(std::net::Shutdown::Both);
    }
}
