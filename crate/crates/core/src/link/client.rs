//! Blocking client. A background reader answers broker PINGs and queues
//! inbound PUBLISH frames.

use std::io::{self, Read, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use super::codec::{encode, CodecError, Decoder, Frame, FrameType};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("broker rejected subscription '{0}'")]
    Rejected(String),
    #[error("no reply from broker")]
    Timeout,
    #[error("connection closed")]
    Closed,
}

/// An inbound PUBLISH.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub topic: String,
    pub payload: Vec<u8>,
}

pub struct Client {
    writer: Arc<Mutex<TcpStream>>,
    connected: Arc<AtomicBool>,
    messages: Receiver<Message>,
    acks: Receiver<Frame>,
    reply_timeout: Duration,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs, client_id: &str, timeout: Duration) -> Result<Client, ClientError> {
        let addr = addr
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "no address"))?;
        let stream = TcpStream::connect_timeout(&addr, timeout)?;
        stream.set_nodelay(true)?;
        let reader = stream.try_clone()?;
        let writer = Arc::new(Mutex::new(stream));
        let connected = Arc::new(AtomicBool::new(true));
        let (msg_tx, messages) = mpsc::channel();
        let (ack_tx, acks) = mpsc::channel();
        {
            let writer = writer.clone();
            let connected = connected.clone();
            thread::Builder::new()
                .name("link-client".into())
                .spawn(move || read_loop(reader, writer, msg_tx, ack_tx, connected))?;
        }
        let client = Client {
            writer,
            connected,
            messages,
            acks,
            reply_timeout: timeout,
        };
        client.send(&Frame::new(FrameType::Connect, client_id, Vec::new()))?;
        client.wait_ack(FrameType::Connack, "")?;
        Ok(client)
    }

    pub fn is_connected(&self) -> bool {
        self.connected.load(Ordering::SeqCst)
    }

    pub fn send(&self, frame: &Frame) -> Result<(), ClientError> {
        if !self.is_connected() {
            return Err(ClientError::Closed);
        }
        let bytes = encode(frame)?;
        let res = self.writer.lock().expect("client writer poisoned").write_all(&bytes);
        if let Err(e) = res {
            self.connected.store(false, Ordering::SeqCst);
            return Err(e.into());
        }
        Ok(())
    }

    pub fn publish(&self, topic: &str, payload: &[u8]) -> Result<(), ClientError> {
        self.send(&Frame::publish(topic, payload.to_vec()))
    }

    /// Subscribes and waits for the broker's acknowledgement, so messages
    /// published after this returns are delivered.
    pub fn subscribe(&self, filter: &str) -> Result<(), ClientError> {
        self.send(&Frame::new(FrameType::Subscribe, filter, Vec::new()))?;
        let ack = self.wait_ack(FrameType::Suback, filter)?;
        if ack.payload.first() == Some(&0) {
            Ok(())
        } else {
            Err(ClientError::Rejected(filter.to_owned()))
        }
    }

    fn wait_ack(&self, kind: FrameType, topic: &str) -> Result<Frame, ClientError> {
        loop {
            match self.acks.recv_timeout(self.reply_timeout) {
                Ok(f) if f.kind == kind && f.topic == topic => return Ok(f),
                Ok(_) => continue,
                Err(RecvTimeoutError::Timeout) => return Err(ClientError::Timeout),
                Err(RecvTimeoutError::Disconnected) => return Err(ClientError::Closed),
            }
        }
    }

    pub fn try_recv(&self) -> Option<Message> {
        self.messages.try_recv().ok()
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Option<Message> {
        self.messages.recv_timeout(timeout).ok()
    }

    pub fn disconnect(self) {
        let _ = self.send(&Frame::control(FrameType::Disconnect));
        self.close();
    }

    fn close(&self) {
        self.connected.store(false, Ordering::SeqCst);
        let _ = self.writer.lock().expect("client writer poisoned").shutdown(Shutdown::Both);
    }
}

impl Drop for Client {
    fn drop(&mut self) {
        self.close();
    }
}

fn read_loop(
    mut stream: TcpStream,
    writer: Arc<Mutex<TcpStream>>,
    messages: Sender<Message>,
    acks: Sender<Frame>,
    connected: Arc<AtomicBool>,
) {
    let mut decoder = Decoder::new();
    let mut buf = [0u8; 4096];
    let pong = encode(&Frame::control(FrameType::Pong)).expect("pong encodes");
    'outer: loop {
        let n = match stream.read(&mut buf) {
            Ok(0) | Err(_) => break,
            Ok(n) => n,
        };
        decoder.feed(&buf[..n]);
        for frame in decoder.frames() {
            match frame.kind {
                FrameType::Publish => {
                    let _ = messages.send(Message {
                        topic: frame.topic,
                        payload: frame.payload,
                    });
                }
                FrameType::Ping => {
                    if writer.lock().expect("client writer poisoned").write_all(&pong).is_err() {
                        break 'outer;
                    }
                }
                FrameType::Disconnect => break 'outer,
                _ => {
                    let _ = acks.send(frame);
                }
            }
        }
    }
    connected.store(false, Ordering::SeqCst);
}
