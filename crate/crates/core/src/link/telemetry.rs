//! JSON documents exchanged between vehicle and station. Positions travel
//! as geodetic coordinates; the receiving side projects them with its own
//! mission origin.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bus::{BusMessage, Payload};
use crate::frames::{enu_to_geo, geo_to_enu, EnuPoint, FrameError, GeoPoint};
use crate::mission::FlightMode;
use crate::worldsim::{Parameter, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseDoc {
    pub t: f64,
    pub lat: f64,
    pub lon: f64,
    pub heading_rad: f64,
    pub speed_mps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleDoc {
    pub t: f64,
    pub lat: f64,
    pub lon: f64,
    pub param: Parameter,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryDoc {
    pub t: f64,
    pub wh: f64,
    pub pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyDoc {
    pub t: f64,
    pub flags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<FlightMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionDoc {
    pub t: f64,
    pub lat: f64,
    pub lon: f64,
    pub conf: f64,
    pub class: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalDoc {
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeDoc {
    pub mode: FlightMode,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Telemetry {
    Pose(PoseDoc),
    Sample(SampleDoc),
    Battery(BatteryDoc),
    Safety(SafetyDoc),
    Detection(DetectionDoc),
    Goal(GoalDoc),
    Mode(ModeDoc),
}

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("no document kind for topic '{0}'")]
    UnknownTopic(String),
    #[error("malformed document: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

impl Telemetry {
    pub fn to_json(&self) -> serde_json::Value {
        let v = match self {
            Telemetry::Pose(d) => serde_json::to_value(d),
            Telemetry::Sample(d) => serde_json::to_value(d),
            Telemetry::Battery(d) => serde_json::to_value(d),
            Telemetry::Safety(d) => serde_json::to_value(d),
            Telemetry::Detection(d) => serde_json::to_value(d),
            Telemetry::Goal(d) => serde_json::to_value(d),
            Telemetry::Mode(d) => serde_json::to_value(d),
        };
        v.expect("documents serialize")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(&self.to_json()).expect("documents serialize")
    }
}

/// Document kind from the last topic segment.
pub fn decode_document(topic: &str, bytes: &[u8]) -> Result<Telemetry, TelemetryError> {
    let kind = topic.rsplit('/').next().unwrap_or_default();
    Ok(match kind {
        "pose" => Telemetry::Pose(serde_json::from_slice(bytes)?),
        "samples" | "sonar" => Telemetry::Sample(serde_json::from_slice(bytes)?),
        "battery" => Telemetry::Battery(serde_json::from_slice(bytes)?),
        "safety" => Telemetry::Safety(serde_json::from_slice(bytes)?),
        "detections" => Telemetry::Detection(serde_json::from_slice(bytes)?),
        "goal" => Telemetry::Goal(serde_json::from_slice(bytes)?),
        "mode" => Telemetry::Mode(serde_json::from_slice(bytes)?),
        _ => return Err(TelemetryError::UnknownTopic(topic.to_owned())),
    })
}

fn sample_doc(s: &Sample, origin: GeoPoint) -> Result<SampleDoc, FrameError> {
    let g = enu_to_geo(origin, s.position)?;
    Ok(SampleDoc {
        t: s.time,
        lat: g.lat,
        lon: g.lon,
        param: s.parameter,
        value: s.value,
    })
}

/// Documents for one bus message. Batched payloads become one document
/// each; internal payloads produce none.
pub fn documents(msg: &BusMessage, origin: GeoPoint) -> Result<Vec<Telemetry>, TelemetryError> {
    let t = msg.time;
    Ok(match &msg.payload {
        Payload::Pose(p) => {
            let g = enu_to_geo(origin, p.position)?;
            vec![Telemetry::Pose(PoseDoc {
                t,
                lat: g.lat,
                lon: g.lon,
                heading_rad: p.heading,
                speed_mps: p.surge_speed,
            })]
        }
        Payload::Samples(v) => v
            .iter()
            .map(|s| sample_doc(s, origin).map(Telemetry::Sample))
            .collect::<Result<_, _>>()?,
        Payload::Sonar(s) => vec![Telemetry::Sample(sample_doc(s, origin)?)],
        Payload::Battery(b) => vec![Telemetry::Battery(BatteryDoc { t, wh: b.wh, pct: b.pct })],
        Payload::Safety(s) => vec![Telemetry::Safety(SafetyDoc {
            t,
            flags: s.flags.clone(),
            mode: Some(s.mode),
        })],
        Payload::Detections(v) => v
            .iter()
            .map(|d| {
                Telemetry::Detection(DetectionDoc {
                    t,
                    lat: d.position.lat,
                    lon: d.position.lon,
                    conf: d.confidence,
                    class: d.class.clone(),
                })
            })
            .collect(),
        Payload::Goal(g) => vec![Telemetry::Goal(GoalDoc { lat: g.lat, lon: g.lon })],
        Payload::Mode(m) => vec![Telemetry::Mode(ModeDoc { mode: *m })],
        Payload::RouteRequest(_) | Payload::RouteReply(_) | Payload::Comms(_) | Payload::Raw(_) => vec![],
    })
}

/// Bus payload for an inbound command document.
pub fn command_payload(doc: &Telemetry) -> Option<Payload> {
    match doc {
        Telemetry::Goal(g) => Some(Payload::Goal(GeoPoint { lat: g.lat, lon: g.lon })),
        Telemetry::Mode(m) => Some(Payload::Mode(m.mode)),
        _ => None,
    }
}

impl SampleDoc {
    pub fn to_sample(&self, origin: GeoPoint) -> Result<Sample, FrameError> {
        Ok(Sample {
            time: self.t,
            position: geo_to_enu(origin, GeoPoint::new(self.lat, self.lon)?)?,
            parameter: self.param,
            value: self.value,
            noise_sd: 0.0,
        })
    }
}

impl PoseDoc {
    pub fn position(&self, origin: GeoPoint) -> Result<EnuPoint, FrameError> {
        geo_to_enu(origin, GeoPoint::new(self.lat, self.lon)?)
    }
}
