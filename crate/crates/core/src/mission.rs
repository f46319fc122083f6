//! Mission node: flight-mode state machine, waypoint sanitation, the
//! waypoint queue and the battery / comms failsafes.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bus::{topics, Bus, Payload, RouteRequest, SafetyStatus, Subscription, TopicError};
use crate::frames::{enu_to_geo, geo_to_enu, EnuPoint, FrameError, GeoPoint};
use crate::planner::{inflate, nearest_navigable, PlanError};
use crate::worldsim::OccupancyGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FlightMode {
    Idle,
    Manual,
    Auto,
    Hold,
    ReturnHome,
    Failsafe,
}

impl FlightMode {
    pub const ALL: [FlightMode; 6] = [
        FlightMode::Idle,
        FlightMode::Manual,
        FlightMode::Auto,
        FlightMode::Hold,
        FlightMode::ReturnHome,
        FlightMode::Failsafe,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FlightMode::Idle => "IDLE",
            FlightMode::Manual => "MANUAL",
            FlightMode::Auto => "AUTO",
            FlightMode::Hold => "HOLD",
            FlightMode::ReturnHome => "RETURN_HOME",
            FlightMode::Failsafe => "FAILSAFE",
        }
    }
}

impl fmt::Display for FlightMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FlightMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FlightMode::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown mode '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MissionEvent {
    OperatorMode(FlightMode),
    GoalReceived,
    RouteDone,
    LowBattery,
    CommsLost,
    CommsRestored,
    BatteryDead,
}

impl MissionEvent {
    pub fn all() -> Vec<MissionEvent> {
        let mut v: Vec<MissionEvent> = FlightMode::ALL.into_iter().map(MissionEvent::OperatorMode).collect();
        v.extend([
            MissionEvent::GoalReceived,
            MissionEvent::RouteDone,
            MissionEvent::LowBattery,
            MissionEvent::CommsLost,
            MissionEvent::CommsRestored,
            MissionEvent::BatteryDead,
        ]);
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub mode: FlightMode,
    /// Set when the event asked for a transition the table forbids; the
    /// mode is then unchanged and a safety flag is raised.
    pub rejected: bool,
}

/// The mode table. Events that do not apply in the current mode leave it
/// unchanged without being treated as illegal.
pub fn mode_transition(current: FlightMode, event: MissionEvent) -> Transition {
    use FlightMode::*;
    use MissionEvent::*;
    let ok = |mode| Transition { mode, rejected: false };
    let reject = Transition {
        mode: current,
        rejected: true,
    };
    match (current, event) {
        (_, BatteryDead) => ok(Failsafe),
        (Failsafe, OperatorMode(Failsafe)) => ok(Failsafe),
        (Failsafe, OperatorMode(_)) => reject,
        (Failsafe, _) => ok(Failsafe),
        (_, LowBattery) => ok(ReturnHome),
        (Auto, CommsLost) => ok(Hold),
        (Idle | Hold, GoalReceived) => ok(Auto),
        (Auto, RouteDone) => ok(Hold),
        (_, OperatorMode(m)) => ok(m),
        (m, _) => ok(m),
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SanitizeError {
    #[error("waypoint is outside the geofence")]
    OutsideGeofence,
    #[error("waypoint is not on navigable water")]
    NotNavigable,
    #[error("waypoint duplicates the previous one")]
    DuplicateWaypoint,
    #[error(transparent)]
    Frame(#[from] FrameError),
}

impl SanitizeError {
    /// Stable identifier used in API error bodies and safety flags.
    pub fn name(&self) -> &'static str {
        match self {
            SanitizeError::OutsideGeofence => "OutsideGeofence",
            SanitizeError::NotNavigable => "NotNavigable",
            SanitizeError::DuplicateWaypoint => "DuplicateWaypoint",
            SanitizeError::Frame(FrameError::TangentPlaneViolation) => "TangentPlaneViolation",
            SanitizeError::Frame(_) => "InvalidCoordinates",
        }
    }
}

/// Simple polygon in the local frame. Points on an edge count as inside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geofence(pub Vec<EnuPoint>);

impl Geofence {
    pub fn contains(&self, p: &EnuPoint) -> bool {
        let v = &self.0;
        if v.len() < 3 {
            return false;
        }
        let mut inside = false;
        let mut j = v.len() - 1;
        for i in 0..v.len() {
            let (a, b) = (v[i], v[j]);
            if on_segment(p, &a, &b) {
                return true;
            }
            if (a.north > p.north) != (b.north > p.north) {
                let x = a.east + (p.north - a.north) / (b.north - a.north) * (b.east - a.east);
                if p.east < x {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }
}

fn on_segment(p: &EnuPoint, a: &EnuPoint, b: &EnuPoint) -> bool {
    let cross = (b.east - a.east) * (p.north - a.north) - (b.north - a.north) * (p.east - a.east);
    let len = a.distance(b);
    if cross.abs() > 1e-9 * len.max(1.0) {
        return false;
    }
    let dot = (p.east - a.east) * (b.east - a.east) + (p.north - a.north) * (b.north - a.north);
    dot >= 0.0 && dot <= len * len
}

/// Everything waypoint sanitation checks against.
#[derive(Debug, Clone)]
pub struct SanitizeContext<'a> {
    pub origin: GeoPoint,
    pub grid: &'a OccupancyGrid,
    pub geofence: &'a Geofence,
    pub min_separation: f64,
}

impl SanitizeContext<'_> {
    pub fn check_enu(&self, p: EnuPoint, previous: Option<EnuPoint>) -> Result<EnuPoint, SanitizeError> {
        if !self.geofence.contains(&p) {
            return Err(SanitizeError::OutsideGeofence);
        }
        if !self.grid.navigable_at(&p) {
            return Err(SanitizeError::NotNavigable);
        }
        if previous.is_some_and(|q| q.distance(&p) < self.min_separation) {
            return Err(SanitizeError::DuplicateWaypoint);
        }
        Ok(p)
    }
}

/// Converts a geodetic waypoint to the local frame and accepts it only if
/// it is inside the geofence, on navigable water and not a repeat of the
/// previously accepted waypoint.
pub fn sanitize_wp(wp: GeoPoint, ctx: &SanitizeContext<'_>, previous: Option<EnuPoint>) -> Result<EnuPoint, SanitizeError> {
    let p = geo_to_enu(ctx.origin, wp)?;
    ctx.check_enu(p, previous)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionPlan {
    pub waypoints: Vec<EnuPoint>,
    pub current_index: usize,
    pub home: EnuPoint,
}

impl MissionPlan {
    pub fn new(home: EnuPoint) -> Self {
        Self {
            waypoints: Vec::new(),
            current_index: 0,
            home,
        }
    }

    pub fn remaining(&self) -> &[EnuPoint] {
        &self.waypoints[self.current_index.min(self.waypoints.len())..]
    }

    pub fn is_complete(&self) -> bool {
        self.current_index >= self.waypoints.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterestSource {
    Operator,
    Perception,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Registered {
    Appended(EnuPoint),
    Duplicate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MissionConfig {
    pub vehicle_id: String,
    pub origin: GeoPoint,
    pub home: EnuPoint,
    pub geofence: Vec<EnuPoint>,
    /// Planned lap, local frame.
    pub waypoints: Vec<EnuPoint>,
    pub min_wp_separation: f64,
    pub inflation_radius: f64,
    /// Battery percentage below which the vehicle returns home.
    pub low_battery_pct: f64,
    /// Seconds without a station link before AUTO drops to HOLD.
    pub comms_timeout_s: f64,
    /// Detections below this confidence are not queued.
    pub interest_min_confidence: f64,
    pub start_in_auto: bool,
}

impl Default for MissionConfig {
    fn default() -> Self {
        Self {
            vehicle_id: "1".into(),
            origin: GeoPoint {
                lat: 37.4185,
                lon: -5.9871,
            },
            home: EnuPoint {
                east: -230.0,
                north: -80.0,
            },
            geofence: vec![
                EnuPoint { east: -310.0, north: -190.0 },
                EnuPoint { east: 310.0, north: -190.0 },
                EnuPoint { east: 310.0, north: 190.0 },
                EnuPoint { east: -310.0, north: 190.0 },
            ],
            waypoints: default_lap(),
            min_wp_separation: 1.0,
            inflation_radius: 1.0,
            low_battery_pct: 15.0,
            comms_timeout_s: 30.0,
            interest_min_confidence: 0.6,
            start_in_auto: true,
        }
    }
}

/// Closed five-leg lawnmower lap of roughly 3 km starting and ending at home.
fn default_lap() -> Vec<EnuPoint> {
    [
        (-230.0, -140.0),
        (230.0, -140.0),
        (230.0, -70.0),
        (-230.0, -70.0),
        (-230.0, 0.0),
        (230.0, 0.0),
        (230.0, 70.0),
        (-230.0, 70.0),
        (-230.0, 140.0),
        (230.0, 140.0),
        (-230.0, -80.0),
    ]
    .into_iter()
    .map(|(east, north)| EnuPoint { east, north })
    .collect()
}

impl MissionConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !self.origin.is_valid() {
            return Err("mission.origin is not a valid geodetic point".into());
        }
        if self.geofence.len() < 3 {
            return Err("mission.geofence needs at least 3 vertices".into());
        }
        if crate::bus::TopicName::parse(&format!("asv/{}/pose", self.vehicle_id)).is_err() || self.vehicle_id.contains('/') {
            return Err("mission.vehicle_id must be a single topic segment".into());
        }
        if !(0.0..=100.0).contains(&self.low_battery_pct) {
            return Err("mission.low_battery_pct must be a percentage".into());
        }
        if !(self.comms_timeout_s > 0.0) || !(self.min_wp_separation >= 0.0) || !(self.inflation_radius >= 0.0) {
            return Err("mission timing and distance settings must be non-negative".into());
        }
        Ok(())
    }

    pub fn geofence(&self) -> Geofence {
        Geofence(self.geofence.clone())
    }

    /// Grid the vehicle may navigate: obstacles inflated, cells outside the
    /// geofence removed.
    pub fn navigation_grid(&self, grid: &OccupancyGrid) -> OccupancyGrid {
        let mut nav = inflate(grid, self.inflation_radius);
        let fence = self.geofence();
        for i in 0..nav.cells.len() {
            let (r, c) = nav.geometry.row_col(i);
            if nav.cells[i] && !fence.contains(&nav.geometry.center(r, c)) {
                nav.cells[i] = false;
            }
        }
        nav
    }
}

/// One entry of the mode history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeChange {
    pub t: f64,
    pub from: FlightMode,
    pub event: MissionEvent,
    pub to: FlightMode,
    pub rejected: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Target {
    Waypoint(usize),
    Home,
}

#[derive(Debug, Clone)]
struct ActiveRoute {
    target: Target,
    cells: Vec<EnuPoint>,
    next: usize,
}

struct Inbox {
    goal: Subscription,
    mode: Subscription,
    battery: Subscription,
    detections: Subscription,
    pose: Subscription,
    comms: Subscription,
    route: Subscription,
}

/// Event-driven mission executor. Call [`MissionNode::tick`] once per
/// control cycle; it consumes bus traffic and returns the point the
/// autopilot should steer to.
pub struct MissionNode {
    cfg: MissionConfig,
    accept_radius: f64,
    grid: OccupancyGrid,
    geofence: Geofence,
    bus: Bus,
    inbox: Inbox,
    route_topic: String,
    safety_topic: String,

    mode: FlightMode,
    plan: MissionPlan,
    last_accepted: Option<EnuPoint>,
    interest_points: Vec<EnuPoint>,
    route: Option<ActiveRoute>,
    pending: Option<(u64, Target)>,
    next_request: u64,

    position: Option<EnuPoint>,
    battery_pct: Option<f64>,
    low_battery: bool,
    comms_down_since: Option<f64>,
    comms_lost_raised: bool,

    now: f64,
    flags: BTreeSet<String>,
    history: Vec<ModeChange>,
    notes: Vec<(f64, String)>,
    status_dirty: bool,
}

impl MissionNode {
    /// `world_grid` is the raw occupancy grid; inflation and geofence
    /// masking happen here.
    pub fn new(bus: &Bus, cfg: MissionConfig, world_grid: &OccupancyGrid, accept_radius: f64) -> Result<Self, TopicError> {
        let id = cfg.vehicle_id.clone();
        let inbox = Inbox {
            goal: bus.subscribe(&topics::goal(&id))?,
            mode: bus.subscribe(&topics::mode(&id))?,
            battery: bus.subscribe(&topics::battery(&id))?,
            detections: bus.subscribe(&topics::detections(&id))?,
            pose: bus.subscribe(&topics::pose(&id))?,
            comms: bus.subscribe(&topics::comms(&id))?,
            route: bus.subscribe(&topics::route(&id))?,
        };
        let grid = cfg.navigation_grid(world_grid);
        let plan = MissionPlan::new(cfg.home);
        Ok(Self {
            geofence: cfg.geofence(),
            accept_radius,
            grid,
            bus: bus.clone(),
            inbox,
            route_topic: topics::route(&id),
            safety_topic: topics::safety(&id),
            mode: FlightMode::Idle,
            plan,
            last_accepted: None,
            interest_points: Vec::new(),
            route: None,
            pending: None,
            next_request: 1,
            position: None,
            battery_pct: None,
            low_battery: false,
            comms_down_since: None,
            comms_lost_raised: false,
            now: 0.0,
            flags: BTreeSet::new(),
            history: Vec::new(),
            notes: Vec::new(),
            status_dirty: true,
            cfg,
        })
    }

    pub fn mode(&self) -> FlightMode {
        self.mode
    }

    pub fn plan(&self) -> &MissionPlan {
        &self.plan
    }

    pub fn navigation_grid(&self) -> &OccupancyGrid {
        &self.grid
    }

    pub fn flags(&self) -> &BTreeSet<String> {
        &self.flags
    }

    pub fn history(&self) -> &[ModeChange] {
        &self.history
    }

    /// Mission notes (waypoint arrivals, skips) since the last call.
    pub fn take_notes(&mut self) -> Vec<(f64, String)> {
        std::mem::take(&mut self.notes)
    }

    pub fn config(&self) -> &MissionConfig {
        &self.cfg
    }

    fn ctx(&self) -> SanitizeContext<'_> {
        SanitizeContext {
            origin: self.cfg.origin,
            grid: &self.grid,
            geofence: &self.geofence,
            min_separation: self.cfg.min_wp_separation,
        }
    }

    fn raise(&mut self, flag: impl Into<String>) {
        if self.flags.insert(flag.into()) {
            self.status_dirty = true;
        }
    }

    fn clear(&mut self, flag: &str) {
        if self.flags.remove(flag) {
            self.status_dirty = true;
        }
    }

    fn note(&mut self, text: String) {
        log::debug!("t={:.1} {text}", self.now);
        self.notes.push((self.now, text));
    }

    /// Applies a mode event and records it.
    pub fn handle(&mut self, event: MissionEvent) -> Transition {
        let mut tr = mode_transition(self.mode, event);
        // a latched low battery keeps the vehicle heading home
        if self.low_battery
            && !tr.rejected
            && !matches!(tr.mode, FlightMode::ReturnHome | FlightMode::Failsafe)
        {
            tr = Transition {
                mode: self.mode,
                rejected: matches!(event, MissionEvent::OperatorMode(_)),
            };
        }
        self.history.push(ModeChange {
            t: self.now,
            from: self.mode,
            event,
            to: tr.mode,
            rejected: tr.rejected,
        });
        if tr.rejected {
            self.raise(format!("IllegalTransition:{}->{:?}", self.mode, event));
        }
        if tr.mode != self.mode {
            self.note(format!("mode {} -> {} on {:?}", self.mode, tr.mode, event));
            self.mode = tr.mode;
            self.route = None;
            self.pending = None;
            self.status_dirty = true;
        }
        tr
    }

    /// Replaces the queue with a sanitized lap. Rejected waypoints are
    /// reported and left out.
    pub fn load_plan(&mut self, waypoints: &[EnuPoint]) -> Vec<(usize, SanitizeError)> {
        let mut rejected = Vec::new();
        self.plan = MissionPlan::new(self.cfg.home);
        self.last_accepted = None;
        for (i, &wp) in waypoints.iter().enumerate() {
            match self.ctx().check_enu(wp, self.last_accepted) {
                Ok(p) => {
                    self.plan.waypoints.push(p);
                    self.last_accepted = Some(p);
                }
                Err(e) => {
                    self.raise(format!("WaypointRejected:{}", e.name()));
                    rejected.push((i, e));
                }
            }
        }
        self.route = None;
        self.pending = None;
        rejected
    }

    pub fn sanitize(&self, wp: GeoPoint) -> Result<EnuPoint, SanitizeError> {
        sanitize_wp(wp, &self.ctx(), self.last_accepted)
    }

    /// Queues a point of interest after the current tail.
    pub fn register_interest_point(&mut self, p: GeoPoint, source: InterestSource) -> Result<Registered, SanitizeError> {
        let enu = match self.sanitize(p) {
            Ok(e) => e,
            Err(SanitizeError::DuplicateWaypoint) => return Ok(Registered::Duplicate),
            Err(e) => return Err(e),
        };
        let sep = self.cfg.min_wp_separation;
        let queued = self.plan.remaining().iter().chain(&self.interest_points);
        if queued.into_iter().any(|q| q.distance(&enu) < sep) {
            return Ok(Registered::Duplicate);
        }
        self.plan.waypoints.push(enu);
        self.last_accepted = Some(enu);
        if source == InterestSource::Perception {
            self.interest_points.push(enu);
        }
        self.note(format!(
            "interest point ({:.1}, {:.1}) from {source:?} queued at {}",
            enu.east,
            enu.north,
            self.plan.waypoints.len() - 1
        ));
        Ok(Registered::Appended(enu))
    }

    /// Operator goal: sanitized, queued, and the vehicle put in AUTO if it
    /// was idle or holding.
    pub fn submit_goal(&mut self, p: GeoPoint) -> Result<EnuPoint, SanitizeError> {
        let enu = self.sanitize(p)?;
        self.plan.waypoints.push(enu);
        self.last_accepted = Some(enu);
        self.handle(MissionEvent::GoalReceived);
        Ok(enu)
    }

    fn process_inbox(&mut self) {
        for m in self.inbox.pose.drain() {
            if let Payload::Pose(p) = m.payload {
                self.position = Some(p.position);
            }
        }
        for m in self.inbox.comms.drain() {
            if let Payload::Comms(up) = m.payload {
                if up {
                    self.comms_down_since = None;
                    self.clear("CommsDown");
                    if self.comms_lost_raised {
                        self.comms_lost_raised = false;
                        self.clear("CommsLost");
                        self.handle(MissionEvent::CommsRestored);
                    }
                } else if self.comms_down_since.is_none() {
                    self.comms_down_since = Some(self.now);
                    self.raise("CommsDown");
                }
            }
        }
        for m in self.inbox.mode.drain() {
            if let Payload::Mode(mode) = m.payload {
                self.handle(MissionEvent::OperatorMode(mode));
            }
        }
        for m in self.inbox.goal.drain() {
            if let Payload::Goal(g) = m.payload {
                match self.submit_goal(g) {
                    Ok(_) => self.clear_prefix("GoalRejected"),
                    Err(e) => self.raise(format!("GoalRejected:{}", e.name())),
                }
            }
        }
        for m in self.inbox.detections.drain() {
            if let Payload::Detections(dets) = m.payload {
                for d in dets {
                    if d.confidence < self.cfg.interest_min_confidence {
                        continue;
                    }
                    if let Err(e) = self.register_interest_point(d.position, InterestSource::Perception) {
                        log::debug!("detection not queued: {e}");
                    }
                }
            }
        }
        for m in self.inbox.route.drain() {
            if let Payload::RouteReply(reply) = m.payload {
                let Some((id, target)) = self.pending else { continue };
                if reply.request_id != id {
                    continue;
                }
                self.pending = None;
                match reply.result {
                    Ok(route) => {
                        let mut cells = route.cells;
                        let goal = self.target_point(target);
                        if let Some(last) = cells.last_mut() {
                            *last = goal;
                        }
                        self.route = Some(ActiveRoute { target, cells, next: 0 });
                    }
                    Err(e) => self.route_failed(target, e),
                }
            }
        }
        // battery last so that this cycle's telemetry is acted on now
        for m in self.inbox.battery.drain() {
            if let Payload::Battery(b) = m.payload {
                self.battery_pct = Some(b.pct);
                if b.wh <= 0.0 && self.mode != FlightMode::Failsafe {
                    self.raise("BatteryDead");
                    self.handle(MissionEvent::BatteryDead);
                } else if b.pct < self.cfg.low_battery_pct && !self.low_battery {
                    self.raise("LowBattery");
                    self.handle(MissionEvent::LowBattery);
                    self.low_battery = true;
                }
            }
        }
    }

    fn clear_prefix(&mut self, prefix: &str) {
        let before = self.flags.len();
        self.flags.retain(|f| !f.starts_with(prefix));
        if self.flags.len() != before {
            self.status_dirty = true;
        }
    }

    fn target_point(&self, target: Target) -> EnuPoint {
        match target {
            Target::Waypoint(i) => self.plan.waypoints[i],
            Target::Home => self.plan.home,
        }
    }

    fn route_failed(&mut self, target: Target, e: PlanError) {
        match target {
            Target::Waypoint(i) => {
                self.raise("WaypointSkipped");
                self.note(format!("waypoint {i} skipped: {e}"));
                if self.plan.current_index == i {
                    self.plan.current_index += 1;
                }
            }
            Target::Home => {
                self.raise("NoRouteHome");
                self.note(format!("no route home: {e}"));
            }
        }
    }

    fn request_route(&mut self, target: Target) {
        let Some(pos) = self.position else { return };
        let start = nearest_navigable(&self.grid, &pos).unwrap_or(pos);
        let id = self.next_request;
        self.next_request += 1;
        self.pending = Some((id, target));
        self.bus
            .publish(
                &self.route_topic,
                Payload::RouteRequest(RouteRequest {
                    request_id: id,
                    start,
                    goal: self.target_point(target),
                }),
            )
            .expect("route topic is valid");
    }

    /// Next point for the autopilot along the active route, advancing past
    /// cells already reached or overtaken.
    fn follow(&mut self, pos: EnuPoint) -> Option<EnuPoint> {
        let radius = self.accept_radius;
        let route = self.route.as_mut()?;
        let last = route.cells.len() - 1;
        while route.next < last {
            let here = route.cells[route.next];
            let ahead = route.cells[route.next + 1];
            let passed = (pos.east - here.east) * (ahead.east - here.east)
                + (pos.north - here.north) * (ahead.north - here.north)
                > 0.0;
            if pos.distance(&here) <= radius || passed {
                route.next += 1;
            } else {
                break;
            }
        }
        Some(route.cells[route.next])
    }

    fn drive_to(&mut self, target: Target) -> Option<EnuPoint> {
        let pos = self.position?;
        let goal = self.target_point(target);
        if pos.distance(&goal) <= self.accept_radius {
            return None;
        }
        match &self.route {
            Some(r) if r.target == target => self.follow(pos),
            _ => {
                if self.pending.is_none_or(|(_, t)| t != target) {
                    self.route = None;
                    self.request_route(target);
                }
                None
            }
        }
    }

    pub fn tick(&mut self, now: f64) -> Option<EnuPoint> {
        self.now = now;
        if self.cfg.start_in_auto && self.history.is_empty() && self.mode == FlightMode::Idle && !self.plan.waypoints.is_empty() {
            self.handle(MissionEvent::OperatorMode(FlightMode::Auto));
        }
        self.process_inbox();

        if let Some(since) = self.comms_down_since {
            if !self.comms_lost_raised && now - since > self.cfg.comms_timeout_s {
                self.comms_lost_raised = true;
                self.raise("CommsLost");
                self.handle(MissionEvent::CommsLost);
            }
        }

        let goal = match self.mode {
            FlightMode::Auto => self.run_auto(),
            FlightMode::ReturnHome => self.drive_to(Target::Home),
            _ => None,
        };
        if self.status_dirty {
            self.publish_status();
        }
        goal
    }

    fn run_auto(&mut self) -> Option<EnuPoint> {
        loop {
            if self.plan.is_complete() {
                self.handle(MissionEvent::RouteDone);
                return None;
            }
            let i = self.plan.current_index;
            let pos = self.position?;
            if pos.distance(&self.plan.waypoints[i]) <= self.accept_radius {
                self.note(format!("waypoint {i} reached"));
                self.plan.current_index += 1;
                self.route = None;
                continue;
            }
            let before = self.plan.current_index;
            let goal = self.drive_to(Target::Waypoint(i));
            if self.plan.current_index != before {
                continue;
            }
            return goal;
        }
    }

    pub fn status(&self) -> SafetyStatus {
        SafetyStatus {
            flags: self.flags.iter().cloned().collect(),
            mode: self.mode,
        }
    }

    pub fn publish_status(&mut self) {
        self.status_dirty = false;
        self.bus
            .publish(&self.safety_topic, Payload::Safety(self.status()))
            .expect("safety topic is valid");
    }

    pub fn origin(&self) -> GeoPoint {
        self.cfg.origin
    }

    pub fn to_geo(&self, p: EnuPoint) -> Result<GeoPoint, FrameError> {
        enu_to_geo(self.cfg.origin, p)
    }
}
