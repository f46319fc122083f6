//! Ground station: persists telemetry, maintains one GP model per
//! parameter, suggests informative goals and serves the operator API.

pub mod gateway;
pub mod log;
pub mod replay;

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use crate::bus::Payload;
use crate::config::Config;
use crate::frames::{enu_to_geo, EnuPoint, GeoPoint};
use crate::gpfield::{compliance, fit, ComplianceReport, FitOptions, GpModel, Thresholds};
use crate::link::telemetry::{
    decode_document, BatteryDoc, DetectionDoc, GoalDoc, PoseDoc, SafetyDoc, SampleDoc, Telemetry,
};
use crate::mission::{mode_transition, sanitize_wp, FlightMode, MissionConfig, MissionEvent, SanitizeContext, SanitizeError};
use crate::planner::{select_next_informative, PlanError};
use crate::vehicle::VehicleConfig;
use crate::worldsim::{OccupancyGrid, Parameter, ScalarField};

pub use self::log::{EventKind, LogEvent, MissionLog};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StationConfig {
    /// Refit a parameter's model after this many new samples of it.
    pub refit_every: usize,
    pub track_max_points: usize,
    /// Candidate spacing, in cells, for goal suggestion.
    pub suggest_stride: usize,
    /// Share of the remaining range a suggested goal may use.
    pub budget_fraction: f64,
    /// Publish each refit's suggestion as an operator goal.
    pub auto_suggest: bool,
    pub gateway_host: String,
    pub gateway_port: u16,
    pub heartbeat_s: f64,
}

impl Default for StationConfig {
    fn default() -> Self {
        Self {
            refit_every: 25,
            track_max_points: 2000,
            suggest_stride: 2,
            budget_fraction: 0.8,
            auto_suggest: false,
            gateway_host: "127.0.0.1".into(),
            gateway_port: 8080,
            heartbeat_s: 10.0,
        }
    }
}

impl StationConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.refit_every == 0 || self.track_max_points < 2 || self.suggest_stride == 0 {
            return Err("station: refit_every, suggest_stride must be >= 1 and track_max_points >= 2".into());
        }
        if !(self.budget_fraction > 0.0 && self.budget_fraction <= 1.0) || !(self.heartbeat_s > 0.0) {
            return Err("station: budget_fraction must be in (0, 1] and heartbeat_s positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub samples: usize,
    pub lengthscale: f64,
    pub variance: f64,
    pub noise_var: f64,
    pub log_likelihood: f64,
}

impl ModelSummary {
    fn of(m: &GpModel) -> Self {
        Self {
            samples: m.len(),
            lengthscale: m.kernel.lengthscale,
            variance: m.kernel.variance,
            noise_var: m.noise_var,
            log_likelihood: m.log_likelihood,
        }
    }
}

/// Read-only view served by `/api/state`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationSnapshot {
    pub vehicle_id: String,
    pub pose: Option<PoseDoc>,
    pub battery: Option<BatteryDoc>,
    pub safety: Option<SafetyDoc>,
    pub mode: Option<FlightMode>,
    pub sample_count: usize,
    pub samples: BTreeMap<Parameter, usize>,
    pub models: BTreeMap<Parameter, ModelSummary>,
    pub detections: usize,
    pub goals: usize,
    pub track_points: usize,
    pub log_events: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum StationError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("log event {seq}: {message}")]
    BadEvent { seq: u64, message: String },
}

type Sink = Box<dyn Fn(&str, Payload) + Send + Sync>;
type Rasters = Arc<(ScalarField, ScalarField)>;

#[derive(Default)]
struct Samples {
    x: Vec<EnuPoint>,
    y: Vec<f64>,
    pending: usize,
}

pub struct Station {
    cfg: StationConfig,
    mission: MissionConfig,
    vehicle: VehicleConfig,
    fit_options: BTreeMap<Parameter, FitOptions>,
    thresholds: Thresholds,
    grid: OccupancyGrid,
    nav: OccupancyGrid,
    log: MissionLog,

    samples: BTreeMap<Parameter, Samples>,
    models: Arc<BTreeMap<Parameter, Arc<GpModel>>>,
    model_version: u64,
    rasters: Mutex<HashMap<Parameter, (u64, Rasters)>>,

    pose: Option<PoseDoc>,
    battery: Option<BatteryDoc>,
    safety: Option<SafetyDoc>,
    mode: Option<FlightMode>,
    track: Vec<PoseDoc>,
    detections: Vec<DetectionDoc>,
    goals: Vec<GoalDoc>,

    live: broadcast::Sender<String>,
    sink: Option<Sink>,
    fit_warnings: Vec<String>,
}

impl Station {
    /// `grid` is the lake's raw occupancy grid; estimates cover its water.
    pub fn new(cfg: &Config, grid: &OccupancyGrid, log: MissionLog) -> Self {
        let (live, _) = broadcast::channel(1024);
        Self {
            cfg: cfg.station.clone(),
            mission: cfg.mission.clone(),
            vehicle: cfg.vehicle.clone(),
            fit_options: Parameter::ALL.into_iter().map(|p| (p, cfg.fit_options(p))).collect(),
            thresholds: cfg.thresholds.clone(),
            nav: cfg.mission.navigation_grid(grid),
            grid: grid.clone(),
            log,
            samples: BTreeMap::new(),
            models: Arc::default(),
            model_version: 0,
            rasters: Mutex::default(),
            pose: None,
            battery: None,
            safety: None,
            mode: None,
            track: Vec::new(),
            detections: Vec::new(),
            goals: Vec::new(),
            live,
            sink: None,
            fit_warnings: Vec::new(),
        }
    }

    /// Where accepted operator goals and mode requests are sent.
    pub fn set_command_sink(&mut self, sink: impl Fn(&str, Payload) + Send + Sync + 'static) {
        self.sink = Some(Box::new(sink));
    }

    pub fn subscribe_live(&self) -> broadcast::Receiver<String> {
        self.live.subscribe()
    }

    pub fn config(&self) -> &StationConfig {
        &self.cfg
    }

    pub fn origin(&self) -> GeoPoint {
        self.mission.origin
    }

    pub fn grid(&self) -> &OccupancyGrid {
        &self.grid
    }

    pub fn log(&self) -> &MissionLog {
        &self.log
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.log.flush()
    }

    pub fn note(&mut self, t: f64, body: serde_json::Value) -> std::io::Result<()> {
        self.log.append(t, EventKind::Note, body).map(|_| ())
    }

    /// Persists and applies one telemetry document received on `topic`.
    /// Malformed documents are quarantined and reported as `Ok(false)`.
    pub fn ingest(&mut self, topic: &str, bytes: &[u8]) -> std::io::Result<bool> {
        match decode_document(topic, bytes) {
            Ok(doc) => {
                self.ingest_doc(&doc)?;
                Ok(true)
            }
            Err(e) => {
                self.log.quarantine(topic, &e.to_string(), bytes)?;
                Ok(false)
            }
        }
    }

    pub fn ingest_doc(&mut self, doc: &Telemetry) -> std::io::Result<()> {
        let (t, kind) = match doc {
            Telemetry::Pose(d) => (d.t, EventKind::Pose),
            Telemetry::Sample(d) => (d.t, EventKind::Sample),
            Telemetry::Battery(d) => (d.t, EventKind::Battery),
            Telemetry::Safety(d) => (d.t, EventKind::Safety),
            Telemetry::Detection(d) => (d.t, EventKind::Detection),
            Telemetry::Goal(_) => (self.latest_time(), EventKind::Goal),
            Telemetry::Mode(_) => (self.latest_time(), EventKind::Note),
        };
        let body = doc.to_json();
        let ev = self.log.append(t, kind, body)?;
        let previous_mode = self.mode;
        self.apply(doc);
        if self.mode != previous_mode {
            if let Some(m) = self.mode {
                self.log.append(t, EventKind::Mode, serde_json::json!({ "t": t, "mode": m }))?;
            }
        }
        if matches!(kind, EventKind::Pose | EventKind::Sample | EventKind::Safety) {
            let line = serde_json::json!({ "seq": ev.seq, "kind": kind, "t": t, "body": ev.body });
            let _ = self.live.send(line.to_string());
        }
        Ok(())
    }

    fn latest_time(&self) -> f64 {
        self.pose.map_or(0.0, |p| p.t)
    }

    /// State update shared by live ingestion and replay.
    fn apply(&mut self, doc: &Telemetry) {
        match doc {
            Telemetry::Pose(d) => {
                self.pose = Some(*d);
                self.track.push(*d);
            }
            Telemetry::Sample(d) => self.add_sample(d),
            Telemetry::Battery(d) => self.battery = Some(*d),
            Telemetry::Safety(d) => {
                if d.mode.is_some() {
                    self.mode = d.mode;
                }
                self.safety = Some(d.clone());
            }
            Telemetry::Detection(d) => self.detections.push(d.clone()),
            Telemetry::Goal(g) => self.goals.push(*g),
            Telemetry::Mode(_) => {}
        }
    }

    fn add_sample(&mut self, d: &SampleDoc) {
        let Ok(s) = d.to_sample(self.mission.origin) else {
            self.fit_warnings.push(format!("sample at t={} has invalid coordinates", d.t));
            return;
        };
        let entry = self.samples.entry(d.param).or_default();
        entry.x.push(s.position);
        entry.y.push(s.value);
        entry.pending += 1;
        if entry.pending >= self.cfg.refit_every {
            self.refit(d.param);
        }
    }

    fn refit(&mut self, p: Parameter) {
        let Some(s) = self.samples.get_mut(&p) else { return };
        if s.x.len() < 2 {
            return;
        }
        s.pending = 0;
        match fit(&s.x, &s.y, &self.fit_options[&p]) {
            Ok(model) => {
                let mut models = (*self.models).clone();
                models.insert(p, Arc::new(model));
                self.models = Arc::new(models);
                self.model_version += 1;
            }
            Err(e) => {
                ::log::warn!("refit of {p} skipped: {e}");
                self.fit_warnings.push(format!("{p}: {e}"));
            }
        }
    }

    /// Refits every parameter with samples not yet in its model. Logged so
    /// replay refits at the same point.
    pub fn finalize(&mut self, t: f64) -> std::io::Result<()> {
        self.log.append(t, EventKind::Note, serde_json::json!({ "finalize": true }))?;
        self.finalize_models();
        Ok(())
    }

    fn finalize_models(&mut self) {
        let pending: Vec<Parameter> = self
            .samples
            .iter()
            .filter(|(_, s)| s.pending > 0)
            .map(|(p, _)| *p)
            .collect();
        for p in pending {
            self.refit(p);
        }
    }

    pub fn models(&self) -> Arc<BTreeMap<Parameter, Arc<GpModel>>> {
        self.models.clone()
    }

    pub fn model(&self, p: Parameter) -> Option<Arc<GpModel>> {
        self.models.get(&p).cloned()
    }

    pub fn sample_count(&self) -> usize {
        self.samples.values().map(|s| s.x.len()).sum()
    }

    pub fn samples_of(&self, p: Parameter) -> (&[EnuPoint], &[f64]) {
        self.samples.get(&p).map_or((&[], &[]), |s| (&s.x, &s.y))
    }

    pub fn track(&self) -> &[PoseDoc] {
        &self.track
    }

    pub fn mode(&self) -> Option<FlightMode> {
        self.mode
    }

    pub fn fit_warnings(&self) -> &[String] {
        &self.fit_warnings
    }

    /// Track decimated to at most `track_max_points`, always keeping the
    /// latest pose.
    pub fn track_decimated(&self) -> Vec<PoseDoc> {
        let n = self.track.len();
        let max = self.cfg.track_max_points;
        if n <= max {
            return self.track.clone();
        }
        let stride = n.div_ceil(max - 1);
        let mut out: Vec<PoseDoc> = self.track.iter().step_by(stride).copied().collect();
        if !(n - 1).is_multiple_of(stride) {
            out.push(self.track[n - 1]);
        }
        out
    }

    pub fn snapshot(&self) -> StationSnapshot {
        StationSnapshot {
            vehicle_id: self.mission.vehicle_id.clone(),
            pose: self.pose,
            battery: self.battery,
            safety: self.safety.clone(),
            mode: self.mode,
            sample_count: self.sample_count(),
            samples: self.samples.iter().map(|(p, s)| (*p, s.x.len())).collect(),
            models: self.models.iter().map(|(p, m)| (*p, ModelSummary::of(m))).collect(),
            detections: self.detections.len(),
            goals: self.goals.len(),
            track_points: self.track.len(),
            log_events: self.log.len(),
        }
    }

    /// Mean and sd maps of a parameter, cached per model version.
    pub fn rasters(&self, p: Parameter) -> Option<Rasters> {
        let model = self.model(p)?;
        let mut cache = self.rasters.lock().expect("raster cache poisoned");
        if let Some((v, r)) = cache.get(&p) {
            if *v == self.model_version {
                return Some(r.clone());
            }
        }
        let r = Arc::new(model.predict_grid(&self.grid, p));
        cache.insert(p, (self.model_version, r.clone()));
        Some(r)
    }

    pub fn compliance(&self) -> ComplianceReport {
        let means: Vec<ScalarField> = Parameter::WQP
            .into_iter()
            .filter_map(|p| self.rasters(p).map(|r| r.0.clone()))
            .collect();
        compliance(&means, &self.thresholds)
    }

    /// Checks an operator goal and forwards it to the vehicle.
    pub fn submit_goal(&mut self, goal: GoalDoc) -> Result<EnuPoint, SanitizeError> {
        let fence = self.mission.geofence();
        let ctx = SanitizeContext {
            origin: self.mission.origin,
            grid: &self.nav,
            geofence: &fence,
            min_separation: self.mission.min_wp_separation,
        };
        let p = sanitize_wp(GeoPoint { lat: goal.lat, lon: goal.lon }, &ctx, None)?;
        let _ = self.ingest_doc(&Telemetry::Goal(goal));
        self.send(
            &crate::bus::topics::goal(&self.mission.vehicle_id),
            Payload::Goal(GeoPoint { lat: goal.lat, lon: goal.lon }),
        );
        Ok(p)
    }

    /// Checks an operator mode request against the last reported mode and
    /// forwards it. Returns the mode the vehicle is expected to enter.
    pub fn request_mode(&mut self, mode: FlightMode) -> Result<FlightMode, String> {
        let current = self.mode.unwrap_or(FlightMode::Idle);
        let tr = mode_transition(current, MissionEvent::OperatorMode(mode));
        let latched = self
            .safety
            .as_ref()
            .is_some_and(|s| s.flags.iter().any(|f| f == "LowBattery"));
        if tr.rejected || (latched && !matches!(mode, FlightMode::ReturnHome | FlightMode::Failsafe)) {
            return Err("IllegalTransition".into());
        }
        let t = self.latest_time();
        let _ = self.note(t, serde_json::json!({ "operator_mode": mode }));
        self.send(&crate::bus::topics::mode(&self.mission.vehicle_id), Payload::Mode(mode));
        Ok(tr.mode)
    }

    fn send(&self, topic: &str, payload: Payload) {
        match &self.sink {
            Some(sink) => sink(topic, payload),
            None => ::log::warn!("no command sink attached; '{topic}' not delivered"),
        }
    }

    /// Remaining range in meters at cruise speed, scaled by the budget
    /// fraction.
    pub fn budget_m(&self) -> f64 {
        let wh = self.battery.map_or(self.vehicle.capacity_wh, |b| b.wh.max(0.0));
        let endurance_s = wh / self.vehicle.cruise_power() * 3600.0;
        self.cfg.budget_fraction * endurance_s * self.vehicle.cruise_speed
    }

    pub fn suggest_goal(&self) -> Result<GeoPoint, PlanError> {
        self.suggest_goal_with_budget(self.budget_m())
    }

    /// A goal the vehicle is already standing on is no suggestion, so a
    /// zero budget yields no candidate.
    pub fn suggest_goal_with_budget(&self, budget: f64) -> Result<GeoPoint, PlanError> {
        if !(budget > 0.0) {
            return Err(PlanError::NoCandidate);
        }
        let models: Vec<&GpModel> = Parameter::WQP
            .iter()
            .filter_map(|p| self.models.get(p).map(|m| m.as_ref()))
            .collect();
        let start = match self.pose {
            Some(p) => p.position(self.mission.origin).map_err(|_| PlanError::NoCandidate)?,
            None => self.mission.home,
        };
        let p = select_next_informative(&models, &self.nav, start, budget, self.cfg.suggest_stride)?;
        enu_to_geo(self.mission.origin, p).map_err(|_| PlanError::NoCandidate)
    }

    /// Applies a logged event without writing it again.
    pub(crate) fn replay_event(&mut self, ev: &LogEvent) -> Result<(), StationError> {
        let bad = |e: serde_json::Error| StationError::BadEvent {
            seq: ev.seq,
            message: e.to_string(),
        };
        let body = ev.body.clone();
        match ev.kind {
            EventKind::Pose => self.apply(&Telemetry::Pose(serde_json::from_value(body).map_err(bad)?)),
            EventKind::Sample => self.apply(&Telemetry::Sample(serde_json::from_value(body).map_err(bad)?)),
            EventKind::Battery => self.apply(&Telemetry::Battery(serde_json::from_value(body).map_err(bad)?)),
            EventKind::Safety => self.apply(&Telemetry::Safety(serde_json::from_value(body).map_err(bad)?)),
            EventKind::Detection => self.apply(&Telemetry::Detection(serde_json::from_value(body).map_err(bad)?)),
            EventKind::Goal => self.apply(&Telemetry::Goal(serde_json::from_value(body).map_err(bad)?)),
            EventKind::Mode => {}
            EventKind::Note => {
                if ev.body.get("finalize").is_some() {
                    self.finalize_models();
                }
            }
        }
        self.log.skip_to(ev.seq + 1);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::geo_to_enu;
    use crate::worldsim::{generate_world, World};
    use std::sync::OnceLock;

    fn world() -> &'static World {
        static W: OnceLock<World> = OnceLock::new();
        W.get_or_init(|| generate_world(7, &Config::default().world).unwrap())
    }

    fn station() -> Station {
        Station::new(&Config::default(), &world().grid, MissionLog::in_memory())
    }

    fn geo(east: f64, north: f64) -> GeoPoint {
        enu_to_geo(Config::default().mission.origin, EnuPoint { east, north }).unwrap()
    }

    fn sample(t: f64, east: f64, north: f64, param: Parameter, value: f64) -> Telemetry {
        let g = geo(east, north);
        Telemetry::Sample(SampleDoc { t, lat: g.lat, lon: g.lon, param, value })
    }

    fn pose(t: f64, east: f64, north: f64) -> Telemetry {
        let g = geo(east, north);
        Telemetry::Pose(PoseDoc { t, lat: g.lat, lon: g.lon, heading_rad: 0.0, speed_mps: 1.0 })
    }

    /// Samples along a line in the west of the lake.
    fn west_survey(st: &mut Station, n: usize) {
        for i in 0..n {
            let east = -250.0 + (i % 10) as f64 * 10.0;
            let north = -100.0 + (i / 10) as f64 * 20.0;
            let v = (east / 50.0).sin();
            st.ingest_doc(&sample(i as f64, east, north, Parameter::Turbidity, v)).unwrap();
        }
    }

    #[test]
    fn empty_snapshot_has_nulls_and_zeros() {
        let snap = station().snapshot();
        assert!(snap.pose.is_none() && snap.battery.is_none() && snap.safety.is_none() && snap.mode.is_none());
        assert_eq!((snap.sample_count, snap.track_points, snap.log_events), (0, 0, 0));
        assert!(snap.models.is_empty());
    }

    #[test]
    fn refit_after_every_25th_sample() {
        let mut st = station();
        west_survey(&mut st, 24);
        assert!(st.model(Parameter::Turbidity).is_none());
        west_survey(&mut st, 1);
        let m = st.model(Parameter::Turbidity).expect("refit at 25");
        assert_eq!(m.len(), 25);
        assert_eq!(m.len(), st.samples_of(Parameter::Turbidity).0.len());
        assert_eq!(st.log().len(), 25);
    }

    #[test]
    fn refit_is_deterministic() {
        let (mut a, mut b) = (station(), station());
        west_survey(&mut a, 50);
        west_survey(&mut b, 50);
        assert_eq!(a.snapshot().models, b.snapshot().models);
    }

    #[test]
    fn malformed_documents_are_quarantined() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ndjson");
        let mut st = Station::new(&Config::default(), &world().grid, MissionLog::create(&path).unwrap());
        assert!(st.ingest("asv/1/pose", &pose(0.0, 0.0, 0.0).to_bytes()).unwrap());
        assert!(!st.ingest("asv/1/pose", b"{\"t\": oops").unwrap());
        assert!(!st.ingest("asv/1/unknown", b"{}").unwrap());
        assert!(st.ingest("asv/1/pose", &pose(1.0, 1.0, 0.0).to_bytes()).unwrap());
        st.flush().unwrap();
        assert_eq!(st.log().quarantined(), 2);
        let (events, _) = log::read_log_file(&path).unwrap();
        assert_eq!(events.iter().map(|e| e.seq).collect::<Vec<_>>(), vec![1, 2]);
        let q = std::fs::read_to_string(log::quarantine_path(&path)).unwrap();
        assert_eq!(q.lines().count(), 2);
    }

    #[test]
    fn mode_changes_are_logged_from_safety() {
        let mut st = station();
        let safety = |t: f64, mode| Telemetry::Safety(SafetyDoc { t, flags: vec![], mode: Some(mode) });
        st.ingest_doc(&safety(0.0, FlightMode::Auto)).unwrap();
        st.ingest_doc(&safety(1.0, FlightMode::Auto)).unwrap();
        st.ingest_doc(&safety(2.0, FlightMode::Hold)).unwrap();
        assert_eq!(st.mode(), Some(FlightMode::Hold));
        // three safety events plus two mode events
        assert_eq!(st.log().len(), 5);
    }

    #[test]
    fn track_is_decimated_keeping_latest() {
        let mut st = station();
        for i in 0..4999 {
            st.ingest_doc(&pose(i as f64, -200.0 + i as f64 * 0.05, 0.0)).unwrap();
        }
        let track = st.track_decimated();
        assert!(track.len() <= 2000 && track.len() > 1000, "{}", track.len());
        assert_eq!(track.last(), st.track().last());
        assert_eq!(track[0], st.track()[0]);
        assert!(track.windows(2).all(|w| w[0].t < w[1].t));
    }

    #[test]
    fn goals_are_sanitized_then_forwarded() {
        let mut st = station();
        let sent = Arc::new(Mutex::new(Vec::new()));
        let sink = sent.clone();
        st.set_command_sink(move |topic, payload| sink.lock().unwrap().push((topic.to_string(), payload)));

        let land = geo(60.0, 10.0);
        let err = st.submit_goal(GoalDoc { lat: land.lat, lon: land.lon }).unwrap_err();
        assert_eq!(err.name(), "NotNavigable");
        let outside = geo(0.0, 195.0);
        assert!(st.submit_goal(GoalDoc { lat: outside.lat, lon: outside.lon }).is_err());
        assert!(sent.lock().unwrap().is_empty());

        let water = geo(-100.0, -20.0);
        let p = st.submit_goal(GoalDoc { lat: water.lat, lon: water.lon }).unwrap();
        assert!((p.east + 100.0).abs() < 1e-6 && (p.north + 20.0).abs() < 1e-6);
        let sent = sent.lock().unwrap();
        assert_eq!(sent.len(), 1);
        assert_eq!(sent[0].0, "cmd/1/goal");
        assert_eq!(st.snapshot().goals, 1);
    }

    #[test]
    fn mode_requests_follow_the_transition_table() {
        let mut st = station();
        assert_eq!(st.request_mode(FlightMode::Auto), Ok(FlightMode::Auto));
        st.ingest_doc(&Telemetry::Safety(SafetyDoc { t: 0.0, flags: vec![], mode: Some(FlightMode::Failsafe) }))
            .unwrap();
        assert_eq!(st.request_mode(FlightMode::Auto), Err("IllegalTransition".into()));
        assert_eq!(st.request_mode(FlightMode::Failsafe), Ok(FlightMode::Failsafe));
    }

    #[test]
    fn budget_follows_remaining_energy() {
        let mut st = station();
        let cfg = VehicleConfig::default();
        let full = 0.8 * cfg.capacity_wh / cfg.cruise_power() * 3600.0 * cfg.cruise_speed;
        assert!((st.budget_m() - full).abs() < 1e-9);
        st.ingest_doc(&Telemetry::Battery(BatteryDoc { t: 0.0, wh: cfg.capacity_wh / 2.0, pct: 50.0 }))
            .unwrap();
        assert!((st.budget_m() - full / 2.0).abs() < 1e-9);
    }

    #[test]
    fn suggestions() {
        let mut st = station();
        st.ingest_doc(&pose(0.0, -200.0, -100.0)).unwrap();
        assert_eq!(st.suggest_goal_with_budget(0.0), Err(PlanError::NoCandidate));

        // no models: every candidate ties, the nearest wins
        let origin = Config::default().mission.origin;
        let g = st.suggest_goal().unwrap();
        let p = geo_to_enu(origin, g).unwrap();
        assert!(p.distance(&EnuPoint { east: -200.0, north: -100.0 }) < 10.0, "{p:?}");

        // dense sampling in the west pushes the suggestion east
        west_survey(&mut st, 100);
        st.finalize(100.0).unwrap();
        let p = geo_to_enu(origin, st.suggest_goal().unwrap()).unwrap();
        assert!(p.east > 0.0, "{p:?}");
    }

    #[test]
    fn replay_reproduces_state_and_rasters() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ndjson");
        let cfg = Config::default();
        let mut st = Station::new(&cfg, &world().grid, MissionLog::create(&path).unwrap());
        st.note(0.0, replay::start_note(7, &cfg)).unwrap();
        for i in 0..60 {
            st.ingest_doc(&pose(i as f64, -250.0 + i as f64, 0.0)).unwrap();
        }
        west_survey(&mut st, 60);
        st.ingest_doc(&Telemetry::Battery(BatteryDoc { t: 60.0, wh: 200.0, pct: 67.6 })).unwrap();
        st.finalize(61.0).unwrap();
        st.flush().unwrap();

        let r = replay::replay_file(&path).unwrap();
        assert_eq!(r.seed, 7);
        assert!(r.bad_lines.is_empty());
        assert_eq!(r.station.snapshot(), st.snapshot());
        let (a, b) = (st.rasters(Parameter::Turbidity).unwrap(), r.station.rasters(Parameter::Turbidity).unwrap());
        assert_eq!(a.0.values.len(), b.0.values.len());
        for (x, y) in a.0.values.iter().zip(&b.0.values).chain(a.1.values.iter().zip(&b.1.values)) {
            assert!(x.to_bits() == y.to_bits(), "{x} vs {y}");
        }
    }
}
