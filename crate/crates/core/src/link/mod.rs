//! Vehicle-station transport: a small binary pub/sub protocol over TCP with
//! a broker, a blocking client and a bus bridge.

pub mod bridge;
pub mod broker;
pub mod client;
pub mod codec;
pub mod telemetry;

use serde::{Deserialize, Serialize};

pub use bridge::{Backoff, Bridge};
pub use broker::Broker;
pub use client::{Client, ClientError, Message};
pub use codec::{decode, encode, CodecError, Decoder, Frame, FrameType};

pub const DEFAULT_PORT: u16 = 1884;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkConfig {
    pub host: String,
    pub port: u16,
    pub ping_interval_s: f64,
    pub max_missed_pongs: u32,
    pub connect_timeout_s: f64,
    pub backoff_initial_s: f64,
    pub backoff_max_s: f64,
    /// Bus filters forwarded to the broker.
    pub uplink: Vec<String>,
    /// Broker filters forwarded onto the bus.
    pub downlink: Vec<String>,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: DEFAULT_PORT,
            ping_interval_s: 10.0,
            max_missed_pongs: 3,
            connect_timeout_s: 2.0,
            backoff_initial_s: 1.0,
            backoff_max_s: 60.0,
            uplink: vec!["asv/#".into()],
            downlink: vec!["cmd/#".into()],
        }
    }
}

impl LinkConfig {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            self.ping_interval_s,
            self.connect_timeout_s,
            self.backoff_initial_s,
            self.backoff_max_s,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err("link intervals and timeouts must be positive".into());
        }
        if self.backoff_max_s < self.backoff_initial_s {
            return Err("link.backoff_max_s must be at least backoff_initial_s".into());
        }
        for f in self.uplink.iter().chain(&self.downlink) {
            crate::bus::TopicFilter::parse(f).map_err(|e| format!("link filter '{f}': {e}"))?;
        }
        Ok(())
    }

    pub fn endpoint(&self) -> String {
        format!("{}:{}", self.host, self.port)
    }
}
