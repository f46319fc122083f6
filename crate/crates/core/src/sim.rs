//! Closed-loop mission run: lake, vehicle, mission and planner nodes,
//! sensors, camera and station, advanced in fixed steps on one thread.
//!
//! Everything random is drawn from streams seeded by the run seed, and the
//! station is fed the same byte documents it would receive over the link, so
//! two runs with one seed write identical logs.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::bus::{topics, BatteryStatus, Bus, Payload, Subscription, TopicError};
use crate::config::Config;
use crate::frames::{EnuPoint, Pose};
use crate::link::telemetry::documents;
use crate::link::{Bridge, Broker};
use crate::mission::{FlightMode, MissionNode, ModeChange};
use crate::perception::detect_geo;
use crate::planner::PlannerNode;
use crate::station::gateway::{self, GatewayHandle, SharedStation};
use crate::station::log::MissionLog;
use crate::station::replay::start_note;
use crate::station::{ModelSummary, Station};
use crate::vehicle::{autopilot_step, step, VehicleState};
use crate::worldsim::{generate_world, read_sonar, read_wqp, Parameter, World, WorldError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Topic(#[from] TopicError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub seed: u64,
    pub duration_s: f64,
    /// Mission log file; `None` keeps the log in memory.
    pub log_path: Option<PathBuf>,
    /// Simulated seconds per wall-clock second. `None` runs flat out.
    pub realtime: Option<f64>,
    /// Add a note with the wall-clock start time.
    pub wall_clock_note: bool,
}

impl SimOptions {
    pub fn from_config(cfg: &Config) -> Self {
        Self {
            seed: cfg.sim.seed,
            duration_s: cfg.sim.duration_s,
            log_path: None,
            realtime: None,
            wall_clock_note: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LapReport {
    pub complete: bool,
    pub time_s: Option<f64>,
    pub battery_pct: Option<f64>,
    /// Distance driven up to lap completion (or the end of the run).
    pub distance_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub seed: u64,
    pub sim_time_s: f64,
    pub distance_m: f64,
    pub lap: LapReport,
    pub final_battery_pct: f64,
    pub final_mode: FlightMode,
    pub rejected_waypoints: Vec<String>,
    pub waypoints_reached: usize,
    pub waypoints_skipped: usize,
    pub interest_points: usize,
    pub detections: usize,
    pub samples: BTreeMap<Parameter, usize>,
    pub models: BTreeMap<Parameter, ModelSummary>,
    pub flags: Vec<String>,
    pub mode_history: Vec<ModeChange>,
    pub log_events: u64,
}

pub struct Simulation {
    cfg: Config,
    seed: u64,
    duration_s: f64,
    world: World,
    bus: Bus,
    mission: MissionNode,
    planner: PlannerNode,
    station: SharedStation,
    telemetry: Subscription,
    state: VehicleState,
    sensor_rng: ChaCha8Rng,
    camera_rng: ChaCha8Rng,
    steps: u64,
    telemetry_every: u64,
    camera_every: u64,
    last_sample: Option<EnuPoint>,
    distance_m: f64,
    lap_len: usize,
    lap: Option<(f64, f64, f64)>,
    rejected: Vec<String>,
    reached: usize,
    skipped: usize,
    detections: usize,
}

fn every(rate_hz: f64, dt: f64) -> u64 {
    ((1.0 / (rate_hz * dt)).round() as u64).max(1)
}

impl Simulation {
    pub fn new(cfg: Config, opts: &SimOptions) -> Result<Self, SimError> {
        let world = generate_world(opts.seed, &cfg.world)?;
        let log = match &opts.log_path {
            Some(p) => MissionLog::create(p)?,
            None => MissionLog::in_memory(),
        };
        let mut station = Station::new(&cfg, &world.grid, log);
        station.note(0.0, start_note(opts.seed, &cfg))?;
        if opts.wall_clock_note {
            let unix = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs_f64())
                .unwrap_or(0.0);
            station.note(0.0, serde_json::json!({ "wall_clock": unix }))?;
        }

        let bus = Bus::new();
        let sink_bus = bus.clone();
        station.set_command_sink(move |topic, payload| {
            if let Err(e) = sink_bus.publish(topic, payload) {
                log::warn!("command on '{topic}' dropped: {e}");
            }
        });
        let id = cfg.mission.vehicle_id.clone();
        let telemetry = bus.subscribe("asv/#")?;
        let mut mission = MissionNode::new(&bus, cfg.mission.clone(), &world.grid, cfg.vehicle.wp_accept_radius)?;
        let rejected: Vec<String> = mission
            .load_plan(&cfg.mission.waypoints)
            .into_iter()
            .map(|(i, e)| format!("waypoint {i}: {}", e.name()))
            .collect();
        for r in &rejected {
            station.note(0.0, serde_json::json!({ "mission": format!("rejected {r}") }))?;
        }
        let lap_len = mission.plan().waypoints.len();
        let planner = PlannerNode::new(&bus, &id, mission.navigation_grid().clone())?;

        let home = cfg.mission.home;
        let heading = mission
            .plan()
            .waypoints
            .first()
            .map_or(0.0, |wp| home.bearing_to(wp));
        let state = VehicleState::at_rest(Pose::at(home, heading), &cfg.vehicle);

        let stream = |n: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(opts.seed);
            r.set_stream(n);
            r
        };
        let dt = cfg.vehicle.dt;
        Ok(Self {
            telemetry_every: every(cfg.sim.telemetry_hz, dt),
            camera_every: every(cfg.perception.rate_hz, dt),
            seed: opts.seed,
            duration_s: opts.duration_s,
            world,
            bus,
            mission,
            planner,
            station: Arc::new(RwLock::new(station)),
            telemetry,
            state,
            sensor_rng: stream(200),
            camera_rng: stream(201),
            steps: 0,
            last_sample: None,
            distance_m: 0.0,
            lap_len,
            lap: None,
            rejected,
            reached: 0,
            skipped: 0,
            detections: 0,
            cfg,
        })
    }

    pub fn config(&self) -> &Config {
        &self.cfg
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn bus(&self) -> &Bus {
        &self.bus
    }

    pub fn mission(&self) -> &MissionNode {
        &self.mission
    }

    pub fn station(&self) -> SharedStation {
        self.station.clone()
    }

    pub fn state(&self) -> &VehicleState {
        &self.state
    }

    pub fn time(&self) -> f64 {
        self.steps as f64 * self.cfg.vehicle.dt
    }

    pub fn lap_complete(&self) -> bool {
        self.lap.is_some()
    }

    /// True once the run has nothing left to do.
    pub fn finished(&self) -> bool {
        if self.time() >= self.duration_s - 1e-9 || self.state.battery_dead() {
            return true;
        }
        if !self.cfg.sim.stop_when_done || !self.lap_complete() {
            return false;
        }
        match self.mission.mode() {
            FlightMode::Hold | FlightMode::Idle => self.mission.plan().is_complete(),
            FlightMode::ReturnHome => {
                self.state.pose.position.distance(&self.cfg.mission.home) <= self.cfg.vehicle.wp_accept_radius
            }
            _ => false,
        }
    }

    /// Advances one control period.
    pub fn step(&mut self) -> Result<(), SimError> {
        let t = self.time();
        let id = self.cfg.mission.vehicle_id.clone();
        self.bus.set_time(t);
        let pose = self.state.pose;

        if self.steps.is_multiple_of(self.telemetry_every) {
            self.bus.publish(&topics::pose(&id), Payload::Pose(pose))?;
            let pct = 100.0 * self.state.battery_fraction(&self.cfg.vehicle);
            self.bus.publish(
                &topics::battery(&id),
                Payload::Battery(BatteryStatus {
                    wh: self.state.battery_wh,
                    pct,
                }),
            )?;
            let due = self
                .last_sample
                .is_none_or(|p| p.distance(&pose.position) >= self.cfg.sim.sample_spacing_m);
            if due && self.world.grid.navigable_at(&pose.position) {
                let wqp = read_wqp(&pose, t, &self.world, &self.cfg.sensors, &mut self.sensor_rng)?;
                let depth = self.world.field(Parameter::Depth)?;
                let sonar = read_sonar(&pose, t, depth, &self.cfg.sensors, &mut self.sensor_rng)?;
                self.bus.publish(&topics::samples(&id), Payload::Samples(wqp))?;
                self.bus.publish(&topics::sonar(&id), Payload::Sonar(sonar))?;
                self.last_sample = Some(pose.position);
            }
        }
        if self.steps.is_multiple_of(self.camera_every) {
            let found = detect_geo(
                &self.world.debris,
                Some(&self.world.grid),
                &pose,
                &self.cfg.perception,
                self.cfg.mission.origin,
                &mut self.camera_rng,
            );
            if !found.is_empty() {
                self.detections += found.len();
                self.bus.publish(&topics::detections(&id), Payload::Detections(found))?;
            }
        }

        let goal = self.mission.tick(t);
        self.planner.pump();
        self.forward(t)?;

        if self.lap.is_none() && self.mission.plan().current_index >= self.lap_len {
            let pct = 100.0 * self.state.battery_fraction(&self.cfg.vehicle);
            self.lap = Some((t, pct, self.distance_m));
            self.station
                .write()
                .expect("station lock")
                .note(t, serde_json::json!({ "mission": "lap complete" }))?;
        }

        let (l, r) = match goal {
            Some(g) if !self.state.battery_dead() => autopilot_step(&self.state, &g, &self.cfg.vehicle),
            _ => (0.0, 0.0),
        };
        let next = step(&self.state.with_thrust(l, r), &self.cfg.vehicle, self.cfg.vehicle.dt);
        self.distance_m += next.pose.position.distance(&self.state.pose.position);
        self.state = next;
        self.steps += 1;
        Ok(())
    }

    /// Hands mission notes and every telemetry message to the station.
    fn forward(&mut self, t: f64) -> Result<(), SimError> {
        let notes = self.mission.take_notes();
        let msgs = self.telemetry.drain();
        if notes.is_empty() && msgs.is_empty() {
            return Ok(());
        }
        let origin = self.cfg.mission.origin;
        let mut st = self.station.write().expect("station lock");
        for (nt, text) in notes {
            if text.ends_with("reached") {
                self.reached += 1;
            } else if text.contains("skipped") {
                self.skipped += 1;
            }
            st.note(nt, serde_json::json!({ "mission": text }))?;
        }
        for msg in msgs {
            match documents(&msg, origin) {
                Ok(docs) => {
                    for d in docs {
                        st.ingest(msg.topic.as_str(), &d.to_bytes())?;
                    }
                }
                Err(e) => log::warn!("t={t:.1} untranslatable message on {}: {e}", msg.topic),
            }
        }
        Ok(())
    }

    /// Steps until [`Simulation::finished`], then refits and flushes the log.
    pub fn run(mut self, realtime: Option<f64>) -> Result<(Self, SimReport), SimError> {
        let start = Instant::now();
        while !self.finished() {
            self.step()?;
            if let Some(speed) = realtime {
                let due = Duration::from_secs_f64(self.time() / speed);
                if let Some(wait) = due.checked_sub(start.elapsed()) {
                    std::thread::sleep(wait);
                }
            }
        }
        let report = self.finish()?;
        Ok((self, report))
    }

    /// Final refit and log flush; returns the run summary.
    pub fn finish(&mut self) -> Result<SimReport, SimError> {
        let t = self.time();
        self.forward(t)?;
        let mut st = self.station.write().expect("station lock");
        st.finalize(t)?;
        st.flush()?;
        let snap = st.snapshot();
        let samples = Parameter::ALL
            .into_iter()
            .map(|p| (p, st.samples_of(p).0.len()))
            .filter(|(_, n)| *n > 0)
            .collect();
        let (lap_t, lap_pct, lap_d) = match self.lap {
            Some((a, b, c)) => (Some(a), Some(b), c),
            None => (None, None, self.distance_m),
        };
        Ok(SimReport {
            seed: self.seed,
            sim_time_s: t,
            distance_m: self.distance_m,
            lap: LapReport {
                complete: self.lap.is_some(),
                time_s: lap_t,
                battery_pct: lap_pct,
                distance_m: lap_d,
            },
            final_battery_pct: 100.0 * self.state.battery_fraction(&self.cfg.vehicle),
            final_mode: self.mission.mode(),
            rejected_waypoints: self.rejected.clone(),
            waypoints_reached: self.reached,
            waypoints_skipped: self.skipped,
            interest_points: self.mission.plan().waypoints.len() - self.lap_len,
            detections: self.detections,
            samples,
            models: snap.models,
            flags: self.mission.flags().iter().cloned().collect(),
            mode_history: self.mission.history().to_vec(),
            log_events: st.log().len(),
        })
    }
}

/// Broker, vehicle-side bridge and operator gateway for a live run.
pub struct LiveServices {
    pub broker: Broker,
    pub bridge: Bridge,
    pub gateway: GatewayHandle,
}

impl LiveServices {
    pub fn start(sim: &Simulation) -> Result<Self, SimError> {
        let cfg = sim.config();
        let broker = Broker::bind(&cfg.link.endpoint(), &cfg.link)?;
        let bridge = Bridge::spawn(sim.bus(), &cfg.link, &cfg.mission.vehicle_id, cfg.mission.origin)?;
        let addr = format!("{}:{}", cfg.station.gateway_host, cfg.station.gateway_port);
        let gateway = gateway::spawn(&addr, sim.station())?;
        Ok(Self {
            broker,
            bridge,
            gateway,
        })
    }

    pub fn stop(self) {
        self.bridge.stop();
        self.gateway.stop();
        self.broker.shutdown();
    }
}

/// Runs a complete mission with the given options.
pub fn run(cfg: Config, opts: &SimOptions) -> Result<(Simulation, SimReport), SimError> {
    Simulation::new(cfg, opts)?.run(opts.realtime)
}
