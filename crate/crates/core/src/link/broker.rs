//! Minimal fan-out broker. One reader and one writer thread per connection;
//! every PUBLISH is routed to all connections whose filters match, in the
//! order the publisher sent them. No retained messages.

use std::collections::HashMap;
use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use super::codec::{encode, Decoder, Frame, FrameType};
use super::LinkConfig;
use crate::bus::TopicFilter;

struct Conn {
    filters: Vec<TopicFilter>,
    tx: Sender<Vec<u8>>,
    stream: TcpStream,
    /// Inbound frames since the last keepalive sweep.
    active: bool,
    missed: u32,
}

#[derive(Default)]
struct Shared {
    conns: Mutex<HashMap<u64, Conn>>,
    stop: AtomicBool,
    routed: AtomicU64,
}

impl Shared {
    fn drop_conn(&self, id: u64) {
        if let Some(c) = self.conns.lock().expect("broker state poisoned").remove(&id) {
            let _ = c.stream.shutdown(Shutdown::Both);
        }
    }
}

/// Running broker. Dropping it stops the accept loop and closes every
/// connection.
pub struct Broker {
    addr: SocketAddr,
    shared: Arc<Shared>,
    threads: Vec<JoinHandle<()>>,
}

impl Broker {
    pub fn bind(addr: &str, cfg: &LinkConfig) -> io::Result<Broker> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let shared = Arc::new(Shared::default());
        let accept = {
            let shared = shared.clone();
            thread::Builder::new()
                .name("broker-accept".into())
                .spawn(move || accept_loop(listener, shared))?
        };
        let keepalive = {
            let shared = shared.clone();
            let interval = Duration::from_secs_f64(cfg.ping_interval_s);
            let max_missed = cfg.max_missed_pongs;
            thread::Builder::new()
                .name("broker-keepalive".into())
                .spawn(move || keepalive_loop(shared, interval, max_missed))?
        };
        log::info!("broker listening on {addr}");
        Ok(Broker {
            addr,
            shared,
            threads: vec![accept, keepalive],
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn connection_count(&self) -> usize {
        self.shared.conns.lock().expect("broker state poisoned").len()
    }

    /// PUBLISH frames delivered to subscribers so far.
    pub fn routed(&self) -> u64 {
        self.shared.routed.load(Ordering::Relaxed)
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if self.shared.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        // unblock accept()
        let _ = TcpStream::connect(self.addr);
        let ids: Vec<u64> = self.shared.conns.lock().expect("broker state poisoned").keys().copied().collect();
        for id in ids {
            self.shared.drop_conn(id);
        }
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    /// Blocks until the broker is shut down from another thread.
    pub fn wait(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for Broker {
    fn drop(&mut self) {
        self.stop();
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    let mut next_id = 0u64;
    for stream in listener.incoming() {
        if shared.stop.load(Ordering::SeqCst) {
            break;
        }
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                log::warn!("broker accept failed: {e}");
                continue;
            }
        };
        next_id += 1;
        if let Err(e) = start_conn(next_id, stream, &shared) {
            log::warn!("broker connection {next_id} failed to start: {e}");
        }
    }
}

fn start_conn(id: u64, stream: TcpStream, shared: &Arc<Shared>) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let (tx, rx) = mpsc::channel::<Vec<u8>>();
    let mut writer = stream.try_clone()?;
    let reader = stream.try_clone()?;
    shared.conns.lock().expect("broker state poisoned").insert(
        id,
        Conn {
            filters: Vec::new(),
            tx,
            stream,
            active: true,
            missed: 0,
        },
    );
    let s = shared.clone();
    thread::Builder::new().name(format!("broker-w{id}")).spawn(move || {
        for bytes in rx {
            if writer.write_all(&bytes).is_err() {
                break;
            }
        }
        s.drop_conn(id);
    })?;
    let s = shared.clone();
    thread::Builder::new()
        .name(format!("broker-r{id}"))
        .spawn(move || {
            read_loop(id, reader, &s);
            s.drop_conn(id);
        })?;
    Ok(())
}

fn send(shared: &Shared, id: u64, frame: &Frame) {
    if let Some(c) = shared.conns.lock().expect("broker state poisoned").get(&id) {
        let _ = c.tx.send(encode(frame).expect("broker frames are valid"));
    }
}

fn read_loop(id: u64, mut stream: TcpStream, shared: &Shared) {
    let mut decoder = Decoder::new();
    let mut buf = [0u8; 4096];
    loop {
        let n = match stream.read(&mut buf) {
            Ok(0) | Err(_) => return,
            Ok(n) => n,
        };
        decoder.feed(&buf[..n]);
        for frame in decoder.frames() {
            if let Some(c) = shared.conns.lock().expect("broker state poisoned").get_mut(&id) {
                c.active = true;
                c.missed = 0;
            }
            match frame.kind {
                FrameType::Connect => send(shared, id, &Frame::control(FrameType::Connack)),
                FrameType::Subscribe => {
                    let ok = match TopicFilter::parse(&frame.topic) {
                        Ok(f) => {
                            if let Some(c) = shared.conns.lock().expect("broker state poisoned").get_mut(&id) {
                                c.filters.push(f);
                            }
                            true
                        }
                        Err(e) => {
                            log::debug!("connection {id}: bad filter: {e}");
                            false
                        }
                    };
                    let code = if ok { 0x00 } else { 0x80 };
                    send(shared, id, &Frame::new(FrameType::Suback, frame.topic, vec![code]));
                }
                FrameType::Publish => route(shared, &frame),
                FrameType::Ping => send(shared, id, &Frame::control(FrameType::Pong)),
                FrameType::Disconnect => return,
                FrameType::Pong | FrameType::Connack | FrameType::Suback => {}
            }
        }
    }
}

fn route(shared: &Shared, frame: &Frame) {
    let bytes = match encode(frame) {
        Ok(b) => b,
        Err(e) => {
            log::debug!("dropping unroutable frame: {e}");
            return;
        }
    };
    // holding the lock while queueing keeps per-topic order across
    // publishers that race on different reader threads
    let conns = shared.conns.lock().expect("broker state poisoned");
    for c in conns.values() {
        if c.filters.iter().any(|f| f.matches_str(&frame.topic)) && c.tx.send(bytes.clone()).is_ok() {
            shared.routed.fetch_add(1, Ordering::Relaxed);
        }
    }
}

fn keepalive_loop(shared: Arc<Shared>, interval: Duration, max_missed: u32) {
    let tick = Duration::from_millis(20).min(interval);
    let mut waited = Duration::ZERO;
    let ping = encode(&Frame::control(FrameType::Ping)).expect("ping encodes");
    while !shared.stop.load(Ordering::SeqCst) {
        thread::sleep(tick);
        waited += tick;
        if waited < interval {
            continue;
        }
        waited = Duration::ZERO;
        let mut dead = Vec::new();
        {
            let mut conns = shared.conns.lock().expect("broker state poisoned");
            for (id, c) in conns.iter_mut() {
                if c.active {
                    c.active = false;
                    continue;
                }
                if c.missed >= max_missed {
                    dead.push(*id);
                } else {
                    c.missed += 1;
                    let _ = c.tx.send(ping.clone());
                }
            }
        }
        for id in dead {
            log::info!("dropping connection {id}: {max_missed} pings unanswered");
            shared.drop_conn(id);
        }
    }
}
