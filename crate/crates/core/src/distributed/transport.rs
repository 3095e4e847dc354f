//! Duplex, ordered, whole-message channels between tasks.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use crate::distributed::wire::{decode_header, decode_message, encode_message, WireMessage, FRAME_HEADER_LEN};
use crate::error::{Error, Result};

/// Outgoing half of a connection.
pub trait MessageSink: Send {
    fn send(&mut self, msg: &WireMessage) -> Result<()>;
}

/// Incoming messages; `Err` items report a broken or corrupt connection.
pub type Inbox = Receiver<Result<WireMessage>>;

/// One end of a duplex connection. Messages arrive whole and in send order.
pub struct Connection {
    sink: Box<dyn MessageSink>,
    inbox: Inbox,
}

impl Connection {
    pub fn new(sink: Box<dyn MessageSink>, inbox: Inbox) -> Self {
        Connection { sink, inbox }
    }

    pub fn send(&mut self, msg: &WireMessage) -> Result<()> {
        self.sink.send(msg)
    }

    pub fn recv(&self, timeout: Duration) -> Result<WireMessage> {
        match self.inbox.recv_timeout(timeout) {
            Ok(m) => m,
            Err(RecvTimeoutError::Timeout) => Err(Error::Transport(format!("no message within {timeout:?}"))),
            Err(RecvTimeoutError::Disconnected) => Err(Error::Transport("connection closed".into())),
        }
    }

    pub fn split(self) -> (Box<dyn MessageSink>, Inbox) {
        (self.sink, self.inbox)
    }
}

pub trait Listener: Send {
    /// Address peers should dial, with any wildcard port resolved.
    fn local_address(&self) -> String;
    fn accept(&mut self, timeout: Duration) -> Result<Connection>;
}

pub trait Transport: Send + Sync {
    fn listen(&self, address: &str) -> Result<Box<dyn Listener>>;
    /// Connects to a listener, retrying until `timeout` while nobody listens yet.
    fn dial(&self, address: &str, timeout: Duration) -> Result<Connection>;
}

struct ChannelSink(Sender<Result<WireMessage>>);

impl MessageSink for ChannelSink {
    fn send(&mut self, msg: &WireMessage) -> Result<()> {
        self.0
            .send(Ok(msg.clone()))
            .map_err(|_| Error::Transport("peer has hung up".into()))
    }
}

/// Two connected in-process endpoints.
pub fn inproc_pair() -> (Connection, Connection) {
    let (a_tx, a_rx) = mpsc::channel();
    let (b_tx, b_rx) = mpsc::channel();
    (
        Connection::new(Box::new(ChannelSink(b_tx)), a_rx),
        Connection::new(Box::new(ChannelSink(a_tx)), b_rx),
    )
}

/// Transport over in-memory channels; addresses are plain names.
#[derive(Clone, Default)]
pub struct InProcTransport {
    registry: Arc<Mutex<HashMap<String, Sender<Connection>>>>,
}

impl InProcTransport {
    pub fn new() -> Self {
        Self::default()
    }
}

struct InProcListener {
    address: String,
    pending: Receiver<Connection>,
}

impl Listener for InProcListener {
    fn local_address(&self) -> String {
        self.address.clone()
    }

    fn accept(&mut self, timeout: Duration) -> Result<Connection> {
        self.pending
            .recv_timeout(timeout)
            .map_err(|_| Error::Transport(format!("no connection to {} within {timeout:?}", self.address)))
    }
}

impl Transport for InProcTransport {
    fn listen(&self, address: &str) -> Result<Box<dyn Listener>> {
        let (tx, rx) = mpsc::channel();
        let mut reg = self.registry.lock().unwrap_or_else(|p| p.into_inner());
        if reg.contains_key(address) {
            return Err(Error::Transport(format!("address {address} already in use")));
        }
        reg.insert(address.to_string(), tx);
        Ok(Box::new(InProcListener {
            address: address.to_string(),
            pending: rx,
        }))
    }

    fn dial(&self, address: &str, timeout: Duration) -> Result<Connection> {
        let deadline = Instant::now() + timeout;
        loop {
            let target = self
                .registry
                .lock()
                .unwrap_or_else(|p| p.into_inner())
                .get(address)
                .cloned();
            if let Some(tx) = target {
                let (mine, theirs) = inproc_pair();
                tx.send(theirs)
                    .map_err(|_| Error::Transport(format!("listener at {address} is gone")))?;
                return Ok(mine);
            }
            if Instant::now() >= deadline {
                return Err(Error::Transport(format!("nobody listens at {address}")));
            }
            thread::sleep(Duration::from_millis(5));
        }
    }
}

struct TcpSink(TcpStream);

impl MessageSink for TcpSink {
    fn send(&mut self, msg: &WireMessage) -> Result<()> {
        let bytes = encode_message(msg)?;
        self.0
            .write_all(&bytes)
            .and_then(|_| self.0.flush())
            .map_err(|e| Error::Transport(format!("send failed: {e}")))
    }
}

fn read_frame(stream: &mut TcpStream) -> Result<Option<Vec<u8>>> {
    let mut header = [0u8; FRAME_HEADER_LEN];
    match stream.read_exact(&mut header) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(Error::Transport(format!("receive failed: {e}"))),
    }
    let (_, len) = decode_header(&header)?;
    let mut frame = header.to_vec();
    frame.resize(FRAME_HEADER_LEN + len as usize + 4, 0);
    stream
        .read_exact(&mut frame[FRAME_HEADER_LEN..])
        .map_err(|e| Error::Transport(format!("truncated frame: {e}")))?;
    Ok(Some(frame))
}

fn tcp_connection(stream: TcpStream) -> Result<Connection> {
    stream.set_nodelay(true).map_err(|e| Error::Transport(e.to_string()))?;
    let mut reader = stream.try_clone().map_err(|e| Error::Transport(e.to_string()))?;
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || loop {
        let item = match read_frame(&mut reader) {
            Ok(Some(frame)) => decode_message(&frame),
            Ok(None) => break,
            Err(e) => Err(e),
        };
        let failed = item.is_err();
        if tx.send(item).is_err() || failed {
            break;
        }
    });
    Ok(Connection::new(Box::new(TcpSink(stream)), rx))
}

/// Length-prefixed frames over TCP, one stream per task pair.
#[derive(Debug, Clone, Copy, Default)]
pub struct TcpTransport;

struct TcpListenerBox {
    inner: TcpListener,
}

impl Listener for TcpListenerBox {
    fn local_address(&self) -> String {
        self.inner
            .local_addr()
            .map(|a| a.to_string())
            .unwrap_or_default()
    }

    fn accept(&mut self, timeout: Duration) -> Result<Connection> {
        let deadline = Instant::now() + timeout;
        self.inner
            .set_nonblocking(true)
            .map_err(|e| Error::Transport(e.to_string()))?;
        loop {
            match self.inner.accept() {
                Ok((stream, _)) => {
                    stream
                        .set_nonblocking(false)
                        .map_err(|e| Error::Transport(e.to_string()))?;
                    return tcp_connection(stream);
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    if Instant::now() >= deadline {
                        return Err(Error::Transport(format!(
                            "no connection to {} within {timeout:?}",
                            self.local_address()
                        )));
                    }
                    thread::sleep(Duration::from_millis(2));
                }
                Err(e) => return Err(Error::Transport(format!("accept failed: {e}"))),
            }
        }
    }
}

impl Transport for TcpTransport {
    fn listen(&self, address: &str) -> Result<Box<dyn Listener>> {
        let inner = TcpListener::bind(address).map_err(|e| Error::Transport(format!("cannot bind {address}: {e}")))?;
        Ok(Box::new(TcpListenerBox { inner }))
    }

    fn dial(&self, address: &str, timeout: Duration) -> Result<Connection> {
        let deadline = Instant::now() + timeout;
        loop {
            match TcpStream::connect(address) {
                Ok(stream) => return tcp_connection(stream),
                Err(e) if Instant::now() >= deadline => {
                    return Err(Error::Transport(format!("cannot connect to {address}: {e}")))
                }
                Err(_) => thread::sleep(Duration::from_millis(10)),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributed::wire::Control;

    fn exchange(transport: &dyn Transport, address: &str) {
        let mut listener = transport.listen(address).unwrap();
        let addr = listener.local_address();
        let mut client = transport.dial(&addr, Duration::from_secs(5)).unwrap();
        let mut server = listener.accept(Duration::from_secs(5)).unwrap();
        for i in 0..20 {
            client
                .send(&WireMessage::Control(Control::Stale { current_step: i }))
                .unwrap();
        }
        for i in 0..20 {
            assert_eq!(
                server.recv(Duration::from_secs(5)).unwrap(),
                WireMessage::Control(Control::Stale { current_step: i })
            );
        }
        server.send(&WireMessage::Control(Control::Finished)).unwrap();
        assert_eq!(
            client.recv(Duration::from_secs(5)).unwrap(),
            WireMessage::Control(Control::Finished)
        );
    }

    #[test]
    fn inproc_is_fifo() {
        exchange(&InProcTransport::new(), "ps:0");
    }

    #[test]
    fn tcp_is_fifo() {
        exchange(&TcpTransport, "127.0.0.1:0");
    }

    #[test]
    fn dropped_peer_is_reported() {
        let (a, b) = inproc_pair();
        drop(b);
        assert!(matches!(a.recv(Duration::from_millis(10)), Err(Error::Transport(_))));
    }
}
