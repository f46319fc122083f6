//! In-process publish/subscribe fabric connecting the vehicle nodes.
//!
//! Delivery is fire-and-forget. Each subscription owns a bounded queue; when
//! a consumer falls behind, the oldest message is dropped and counted, so a
//! publisher never blocks.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, Weak};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frames::{EnuPoint, GeoPoint, Pose};
use crate::mission::FlightMode;
use crate::planner::{PlanError, Route};
use crate::worldsim::Sample;

pub const DEFAULT_QUEUE_CAPACITY: usize = 128;
const MAX_TOPIC_BYTES: usize = 256;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopicError {
    #[error("topic is empty")]
    Empty,
    #[error("topic longer than {MAX_TOPIC_BYTES} bytes")]
    TooLong,
    #[error("invalid topic segment '{0}'")]
    BadSegment(String),
    #[error("wildcard '#' is only allowed as the final segment of a filter")]
    MisplacedWildcard,
}

fn valid_segment(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_')
}

/// Concrete topic, e.g. `asv/1/pose`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TopicName(String);

impl TopicName {
    pub fn parse(s: &str) -> Result<Self, TopicError> {
        if s.is_empty() {
            return Err(TopicError::Empty);
        }
        if s.len() > MAX_TOPIC_BYTES {
            return Err(TopicError::TooLong);
        }
        for seg in s.split('/') {
            if seg == "#" {
                return Err(TopicError::MisplacedWildcard);
            }
            if !valid_segment(seg) {
                return Err(TopicError::BadSegment(seg.to_string()));
            }
        }
        Ok(Self(s.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn segments(&self) -> impl Iterator<Item = &str> {
        self.0.split('/')
    }
}

impl TryFrom<String> for TopicName {
    type Error = TopicError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Self::parse(&s)
    }
}

impl From<TopicName> for String {
    fn from(t: TopicName) -> String {
        t.0
    }
}

impl fmt::Display for TopicName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Subscription pattern: a topic, optionally ending in a `#` segment that
/// matches any suffix (including none).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TopicFilter {
    prefix: Vec<String>,
    wildcard: bool,
}

impl TopicFilter {
    pub fn parse(s: &str) -> Result<Self, TopicError> {
        if s.is_empty() {
            return Err(TopicError::Empty);
        }
        if s.len() > MAX_TOPIC_BYTES {
            return Err(TopicError::TooLong);
        }
        let segs: Vec<&str> = s.split('/').collect();
        let last = segs.len() - 1;
        let mut prefix = Vec::with_capacity(segs.len());
        let mut wildcard = false;
        for (i, seg) in segs.iter().enumerate() {
            if *seg == "#" {
                if i != last {
                    return Err(TopicError::MisplacedWildcard);
                }
                wildcard = true;
            } else if seg.contains('#') {
                return Err(TopicError::MisplacedWildcard);
            } else if !valid_segment(seg) {
                return Err(TopicError::BadSegment(seg.to_string()));
            } else {
                prefix.push(seg.to_string());
            }
        }
        Ok(Self { prefix, wildcard })
    }

    pub fn matches(&self, topic: &TopicName) -> bool {
        self.matches_str(topic.as_str())
    }

    pub fn matches_str(&self, topic: &str) -> bool {
        let mut segs = topic.split('/');
        for want in &self.prefix {
            match segs.next() {
                Some(seg) if seg == want => {}
                _ => return false,
            }
        }
        self.wildcard || segs.next().is_none()
    }
}

impl fmt::Display for TopicFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts: Vec<&str> = self.prefix.iter().map(String::as_str).collect();
        if self.wildcard {
            parts.push("#");
        }
        f.write_str(&parts.join("/"))
    }
}

/// Canonical topic names for vehicle `id`.
pub mod topics {
    pub fn pose(id: &str) -> String {
        format!("asv/{id}/pose")
    }
    pub fn samples(id: &str) -> String {
        format!("asv/{id}/samples")
    }
    pub fn sonar(id: &str) -> String {
        format!("asv/{id}/sonar")
    }
    pub fn detections(id: &str) -> String {
        format!("asv/{id}/detections")
    }
    pub fn safety(id: &str) -> String {
        format!("asv/{id}/safety")
    }
    pub fn battery(id: &str) -> String {
        format!("asv/{id}/battery")
    }
    pub fn goal(id: &str) -> String {
        format!("cmd/{id}/goal")
    }
    pub fn mode(id: &str) -> String {
        format!("cmd/{id}/mode")
    }
    pub fn route(id: &str) -> String {
        format!("plan/{id}/route")
    }
    /// Link health as seen by the vehicle-side bridge. Never forwarded.
    pub fn comms(id: &str) -> String {
        format!("sys/{id}/comms")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryStatus {
    pub wh: f64,
    /// Remaining charge, percent of capacity.
    pub pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyStatus {
    pub flags: Vec<String>,
    pub mode: FlightMode,
}

/// A detection already placed in the global frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoDetection {
    pub position: GeoPoint,
    pub confidence: f64,
    pub class: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouteRequest {
    pub request_id: u64,
    pub start: EnuPoint,
    pub goal: EnuPoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteReply {
    pub request_id: u64,
    pub result: Result<Route, PlanError>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Pose(Pose),
    Samples(Vec<Sample>),
    Sonar(Sample),
    Battery(BatteryStatus),
    Safety(SafetyStatus),
    Detections(Vec<GeoDetection>),
    Goal(GeoPoint),
    Mode(FlightMode),
    RouteRequest(RouteRequest),
    RouteReply(RouteReply),
    /// `true` while the station link is up.
    Comms(bool),
    Raw(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BusMessage {
    pub topic: TopicName,
    pub seq: u64,
    pub time: f64,
    pub payload: Payload,
}

struct Queue {
    filter: TopicFilter,
    capacity: usize,
    messages: Mutex<VecDeque<BusMessage>>,
    ready: Condvar,
    dropped: AtomicU64,
    closed: AtomicBool,
}

impl Queue {
    fn push(&self, msg: BusMessage) {
        let mut q = self.messages.lock().expect("bus queue poisoned");
        if q.len() >= self.capacity {
            q.pop_front();
            self.dropped.fetch_add(1, Ordering::Relaxed);
        }
        q.push_back(msg);
        self.ready.notify_one();
    }
}

#[derive(Default)]
struct Registry {
    seqs: HashMap<TopicName, u64>,
    queues: Vec<Weak<Queue>>,
}

/// Cheap to clone; all clones share the same topics and subscribers.
#[derive(Clone)]
pub struct Bus {
    registry: Arc<Mutex<Registry>>,
    clock: Arc<AtomicU64>,
    capacity: usize,
}

impl Default for Bus {
    fn default() -> Self {
        Self::new()
    }
}

impl Bus {
    pub fn new() -> Self {
        Self::with_capacity(DEFAULT_QUEUE_CAPACITY)
    }

    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            registry: Arc::default(),
            clock: Arc::new(AtomicU64::new(0f64.to_bits())),
            capacity: capacity.max(1),
        }
    }

    /// Sets the timestamp stamped on subsequently published messages.
    pub fn set_time(&self, t: f64) {
        self.clock.store(t.to_bits(), Ordering::Release);
    }

    pub fn time(&self) -> f64 {
        f64::from_bits(self.clock.load(Ordering::Acquire))
    }

    pub fn publish(&self, topic: &str, payload: Payload) -> Result<u64, TopicError> {
        let topic = TopicName::parse(topic)?;
        Ok(self.publish_to(topic, payload))
    }

    pub fn publish_to(&self, topic: TopicName, payload: Payload) -> u64 {
        let time = self.time();
        let mut reg = self.registry.lock().expect("bus registry poisoned");
        let seq = {
            let s = reg.seqs.entry(topic.clone()).or_insert(0);
            *s += 1;
            *s
        };
        let mut msg = Some(BusMessage {
            topic,
            seq,
            time,
            payload,
        });
        reg.queues.retain(|w| w.strong_count() > 0);
        let targets: Vec<Arc<Queue>> = reg
            .queues
            .iter()
            .filter_map(Weak::upgrade)
            .filter(|q| q.filter.matches(&msg.as_ref().expect("message").topic))
            .collect();
        let n = targets.len();
        for (i, q) in targets.into_iter().enumerate() {
            let m = if i + 1 == n {
                msg.take().expect("message")
            } else {
                msg.clone().expect("message")
            };
            q.push(m);
        }
        seq
    }

    pub fn subscribe(&self, pattern: &str) -> Result<Subscription, TopicError> {
        let filter = TopicFilter::parse(pattern)?;
        let queue = Arc::new(Queue {
            filter,
            capacity: self.capacity,
            messages: Mutex::new(VecDeque::new()),
            ready: Condvar::new(),
            dropped: AtomicU64::new(0),
            closed: AtomicBool::new(false),
        });
        self.registry
            .lock()
            .expect("bus registry poisoned")
            .queues
            .push(Arc::downgrade(&queue));
        Ok(Subscription { queue })
    }
}

/// Receiving end of one subscription. Dropping it unsubscribes.
pub struct Subscription {
    queue: Arc<Queue>,
}

impl Subscription {
    pub fn try_recv(&self) -> Option<BusMessage> {
        self.queue.messages.lock().expect("bus queue poisoned").pop_front()
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Option<BusMessage> {
        let q = self.queue.messages.lock().expect("bus queue poisoned");
        let (mut q, _) = self
            .queue
            .ready
            .wait_timeout_while(q, timeout, |q| q.is_empty() && !self.queue.closed.load(Ordering::Acquire))
            .expect("bus queue poisoned");
        q.pop_front()
    }

    /// Takes everything queued so far.
    pub fn drain(&self) -> Vec<BusMessage> {
        self.queue
            .messages
            .lock()
            .expect("bus queue poisoned")
            .drain(..)
            .collect()
    }

    pub fn dropped(&self) -> u64 {
        self.queue.dropped.load(Ordering::Relaxed)
    }

    pub fn filter(&self) -> &TopicFilter {
        &self.queue.filter
    }

    /// Wakes any thread blocked in `recv_timeout`.
    pub fn close(&self) {
        self.queue.closed.store(true, Ordering::Release);
        self.queue.ready.notify_all();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw(n: u8) -> Payload {
        Payload::Raw(vec![n])
    }

    #[test]
    fn sequence_numbers_per_topic() {
        let bus = Bus::new();
        let a = bus.publish("asv/1/pose", raw(0)).unwrap();
        let b = bus.publish("asv/1/pose", raw(1)).unwrap();
        let other = bus.publish("asv/1/battery", raw(2)).unwrap();
        assert_eq!(b, a + 1);
        assert_eq!(other, 1);
    }

    #[test]
    fn publish_without_subscribers_is_dropped() {
        let bus = Bus::new();
        assert!(bus.publish("asv/1/pose", raw(0)).is_ok());
        let sub = bus.subscribe("asv/#").unwrap();
        assert!(sub.try_recv().is_none());
    }

    #[test]
    fn topic_validation() {
        assert!(TopicName::parse("asv/1/pose").is_ok());
        assert_eq!(TopicName::parse(""), Err(TopicError::Empty));
        assert!(TopicName::parse("asv//pose").is_err());
        assert!(TopicName::parse("asv/1/#").is_err());
        assert!(TopicName::parse("asv/1/po-se").is_err());
        assert_eq!(TopicName::parse(&"a".repeat(257)), Err(TopicError::TooLong));
        assert!(TopicFilter::parse("asv/#/pose").is_err());
        assert!(TopicFilter::parse("asv/1#").is_err());
        let bus = Bus::new();
        assert!(bus.publish("bad topic", raw(0)).is_err());
        assert!(bus.subscribe("#/x").is_err());
    }

    #[test]
    fn wildcard_matching() {
        let f = TopicFilter::parse("asv/1/#").unwrap();
        assert!(f.matches_str("asv/1/position"));
        assert!(f.matches_str("asv/1/a/b"));
        assert!(f.matches_str("asv/1"));
        assert!(!f.matches_str("asv/2/position"));
        assert!(!f.matches_str("asv/10/position"));
        let exact = TopicFilter::parse("asv/1/pose").unwrap();
        assert!(exact.matches_str("asv/1/pose"));
        assert!(!exact.matches_str("asv/1/pose/x"));
        assert!(!exact.matches_str("asv/1"));
        assert!(TopicFilter::parse("#").unwrap().matches_str("anything/at/all"));
        assert_eq!(f.to_string(), "asv/1/#");
    }

    #[test]
    fn thousand_in_order() {
        let bus = Bus::with_capacity(2000);
        let sub = bus.subscribe("asv/1/pose").unwrap();
        for i in 0..1000u32 {
            bus.publish("asv/1/pose", Payload::Raw(i.to_be_bytes().to_vec())).unwrap();
        }
        let got = sub.drain();
        assert_eq!(got.len(), 1000);
        for (i, m) in got.iter().enumerate() {
            assert_eq!(m.payload, Payload::Raw((i as u32).to_be_bytes().to_vec()));
            assert_eq!(m.seq, i as u64 + 1);
        }
    }

    #[test]
    fn slow_consumer_drops_oldest() {
        let bus = Bus::with_capacity(4);
        let sub = bus.subscribe("t").unwrap();
        for i in 0..10 {
            bus.publish("t", raw(i)).unwrap();
        }
        assert_eq!(sub.dropped(), 6);
        let seqs: Vec<u64> = sub.drain().iter().map(|m| m.seq).collect();
        assert_eq!(seqs, vec![7, 8, 9, 10]);
    }

    #[test]
    fn messages_carry_bus_time() {
        let bus = Bus::new();
        let sub = bus.subscribe("t").unwrap();
        bus.set_time(12.5);
        bus.publish("t", raw(0)).unwrap();
        assert_eq!(sub.try_recv().unwrap().time, 12.5);
    }

    #[test]
    fn blocking_receive_across_threads() {
        let bus = Bus::new();
        let sub = bus.subscribe("x/#").unwrap();
        let publisher = bus.clone();
        let h = std::thread::spawn(move || {
            for i in 0..50 {
                publisher.publish("x/y", raw(i)).unwrap();
            }
        });
        let mut seqs = vec![];
        while seqs.len() < 50 {
            let m = sub.recv_timeout(Duration::from_secs(2)).expect("message");
            seqs.push(m.seq);
        }
        h.join().unwrap();
        assert!(seqs.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn dropping_subscription_unsubscribes() {
        let bus = Bus::new();
        let sub = bus.subscribe("t").unwrap();
        drop(sub);
        bus.publish("t", raw(0)).unwrap();
        assert!(bus.registry.lock().unwrap().queues.is_empty());
    }

    proptest! {
        // Interleaved publishes across topics: each subscriber sees only
        // matching topics, with strictly increasing seq per topic.
        #[test]
        fn fifo_and_no_crosstalk(ops in proptest::collection::vec((0usize..4, any::<u8>()), 1..300)) {
            let topics = ["asv/1/pose", "asv/1/battery", "asv/2/pose", "cmd/1/goal"];
            let bus = Bus::with_capacity(1000);
            let filters = ["asv/1/#", "asv/#", "cmd/1/goal", "#"];
            let subs: Vec<Subscription> = filters.iter().map(|f| bus.subscribe(f).unwrap()).collect();
            for (t, b) in &ops {
                bus.publish(topics[*t], raw(*b)).unwrap();
            }
            for (sub, f) in subs.iter().zip(filters) {
                let filter = TopicFilter::parse(f).unwrap();
                let msgs = sub.drain();
                let expected = ops.iter().filter(|(t, _)| filter.matches_str(topics[*t])).count();
                prop_assert_eq!(msgs.len(), expected);
                let mut last: HashMap<String, u64> = HashMap::new();
                for m in msgs {
                    prop_assert!(filter.matches(&m.topic));
                    let prev = last.insert(m.topic.to_string(), m.seq).unwrap_or(0);
                    prop_assert!(m.seq > prev);
                }
            }
        }
    }
}
