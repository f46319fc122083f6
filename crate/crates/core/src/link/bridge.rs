//! Forwards vehicle telemetry from the bus to the broker and operator
//! commands from the broker back onto the bus. Link state is published on
//! `sys/<id>/comms` for the mission watchdog.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::client::Client;
use super::telemetry::{command_payload, decode_document, documents};
use super::LinkConfig;
use crate::bus::{topics, Bus, Payload, TopicError};
use crate::frames::GeoPoint;

/// Reconnect delays: starts at `initial`, doubles, saturates at `max`.
#[derive(Debug, Clone)]
pub struct Backoff {
    initial: Duration,
    max: Duration,
    next: Duration,
}

impl Backoff {
    pub fn new(initial: Duration, max: Duration) -> Self {
        Self {
            initial,
            max,
            next: initial,
        }
    }

    pub fn next_delay(&mut self) -> Duration {
        let d = self.next;
        self.next = (self.next * 2).min(self.max);
        d
    }

    pub fn reset(&mut self) {
        self.next = self.initial;
    }
}

#[derive(Debug, Default)]
pub struct BridgeStats {
    pub uplinked: AtomicU64,
    pub downlinked: AtomicU64,
    pub dropped: AtomicU64,
    pub connects: AtomicU64,
}

pub struct Bridge {
    stop: Arc<AtomicBool>,
    stats: Arc<BridgeStats>,
    thread: Option<JoinHandle<()>>,
}

impl Bridge {
    /// Starts the bridge thread. It keeps trying to reach the broker at
    /// `cfg.host:cfg.port` until stopped.
    pub fn spawn(bus: &Bus, cfg: &LinkConfig, vehicle_id: &str, origin: GeoPoint) -> Result<Bridge, TopicError> {
        let uplink = cfg
            .uplink
            .iter()
            .map(|f| bus.subscribe(f))
            .collect::<Result<Vec<_>, _>>()?;
        let stop = Arc::new(AtomicBool::new(false));
        let stats = Arc::new(BridgeStats::default());
        let worker = Worker {
            bus: bus.clone(),
            cfg: cfg.clone(),
            comms_topic: topics::comms(vehicle_id),
            client_id: format!("bridge-{vehicle_id}"),
            origin,
            uplink,
            stop: stop.clone(),
            stats: stats.clone(),
            link_up: None,
        };
        let thread = thread::Builder::new()
            .name("link-bridge".into())
            .spawn(move || worker.run())
            .expect("spawn bridge thread");
        Ok(Bridge {
            stop,
            stats,
            thread: Some(thread),
        })
    }

    pub fn stats(&self) -> &BridgeStats {
        &self.stats
    }

    pub fn stop(mut self) {
        self.halt();
    }

    fn halt(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for Bridge {
    fn drop(&mut self) {
        self.halt();
    }
}

struct Worker {
    bus: Bus,
    cfg: LinkConfig,
    comms_topic: String,
    client_id: String,
    origin: GeoPoint,
    uplink: Vec<crate::bus::Subscription>,
    stop: Arc<AtomicBool>,
    stats: Arc<BridgeStats>,
    link_up: Option<bool>,
}

impl Worker {
    fn set_link(&mut self, up: bool) {
        if self.link_up != Some(up) {
            self.link_up = Some(up);
            log::info!("station link {}", if up { "up" } else { "down" });
            let _ = self.bus.publish(&self.comms_topic, Payload::Comms(up));
        }
    }

    fn stopped(&self) -> bool {
        self.stop.load(Ordering::SeqCst)
    }

    fn discard_uplink(&self) {
        for s in &self.uplink {
            let n = s.drain().len();
            self.stats.dropped.fetch_add(n as u64, Ordering::Relaxed);
        }
    }

    fn sleep(&self, d: Duration) {
        let until = Instant::now() + d;
        while !self.stopped() && Instant::now() < until {
            thread::sleep(Duration::from_millis(10).min(d));
            self.discard_uplink();
        }
    }

    fn connect(&self) -> Option<Client> {
        let addr = format!("{}:{}", self.cfg.host, self.cfg.port);
        let timeout = Duration::from_secs_f64(self.cfg.connect_timeout_s);
        let client = Client::connect(addr.as_str(), &self.client_id, timeout).ok()?;
        for f in &self.cfg.downlink {
            if let Err(e) = client.subscribe(f) {
                log::warn!("bridge subscribe {f}: {e}");
                return None;
            }
        }
        Some(client)
    }

    fn run(mut self) {
        let mut backoff = Backoff::new(
            Duration::from_secs_f64(self.cfg.backoff_initial_s),
            Duration::from_secs_f64(self.cfg.backoff_max_s),
        );
        while !self.stopped() {
            match self.connect() {
                Some(client) => {
                    backoff.reset();
                    self.stats.connects.fetch_add(1, Ordering::Relaxed);
                    // telemetry queued while down is stale
                    self.discard_uplink();
                    self.set_link(true);
                    self.pump(&client);
                    self.set_link(false);
                }
                None => {
                    self.set_link(false);
                    let d = backoff.next_delay();
                    log::debug!("broker unreachable, retrying in {d:?}");
                    self.sleep(d);
                }
            }
        }
    }

    /// Moves traffic both ways until the connection drops or the bridge
    /// is stopped.
    fn pump(&self, client: &Client) {
        while !self.stopped() && client.is_connected() {
            let mut idle = true;
            for sub in &self.uplink {
                for msg in sub.drain() {
                    idle = false;
                    let docs = match documents(&msg, self.origin) {
                        Ok(d) => d,
                        Err(e) => {
                            log::warn!("dropping {} message: {e}", msg.topic.as_str());
                            self.stats.dropped.fetch_add(1, Ordering::Relaxed);
                            continue;
                        }
                    };
                    for doc in docs {
                        if client.publish(msg.topic.as_str(), &doc.to_bytes()).is_err() {
                            return;
                        }
                        self.stats.uplinked.fetch_add(1, Ordering::Relaxed);
                    }
                }
            }
            while let Some(m) = client.try_recv() {
                idle = false;
                let payload = decode_document(&m.topic, &m.payload).map(|d| command_payload(&d));
                match payload {
                    Ok(Some(p)) => match self.bus.publish(&m.topic, p) {
                        Ok(_) => {
                            self.stats.downlinked.fetch_add(1, Ordering::Relaxed);
                        }
                        Err(e) => log::warn!("dropping command on '{}': {e}", m.topic),
                    },
                    Ok(None) => log::debug!("ignoring non-command document on {}", m.topic),
                    Err(e) => log::warn!("dropping malformed command on {}: {e}", m.topic),
                }
            }
            if idle {
                thread::sleep(Duration::from_millis(5));
            }
        }
    }
}
