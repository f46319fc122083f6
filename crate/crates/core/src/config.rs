//! Top-level configuration file. Every section falls back to its defaults,
//! so a partial JSON document is valid.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gpfield::{FitOptions, Threshold, Thresholds};
use crate::link::LinkConfig;
use crate::mission::MissionConfig;
use crate::perception::PerceptionConfig;
use crate::station::StationConfig;
use crate::vehicle::VehicleConfig;
use crate::worldsim::{Parameter, SensorConfig, WorldSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Simulation loop settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub seed: u64,
    pub duration_s: f64,
    /// Pose and battery telemetry rate.
    pub telemetry_hz: f64,
    /// Minimum travel between consecutive water samples.
    pub sample_spacing_m: f64,
    /// Refit and stop once the lap is complete and the vehicle holds.
    pub stop_when_done: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            duration_s: 5400.0,
            telemetry_hz: 1.0,
            sample_spacing_m: 20.0,
            stop_when_done: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub world: WorldSpec,
    pub vehicle: VehicleConfig,
    pub sensors: SensorConfig,
    pub gp: BTreeMap<Parameter, FitOptions>,
    pub mission: MissionConfig,
    pub link: LinkConfig,
    pub thresholds: Thresholds,
    pub station: StationConfig,
    pub perception: PerceptionConfig,
    pub sim: SimConfig,
}

pub fn default_thresholds() -> Thresholds {
    let mut t = Thresholds::new();
    t.insert(Parameter::Ph, Threshold { min: Some(6.5), max: Some(9.5) });
    t.insert(Parameter::Turbidity, Threshold { min: None, max: Some(5.0) });
    t.insert(Parameter::Conductivity, Threshold { min: None, max: Some(2.5) });
    t.insert(Parameter::Temperature, Threshold { min: None, max: Some(25.0) });
    t
}

impl Default for Config {
    fn default() -> Self {
        let sensors = SensorConfig::default();
        let gp = Parameter::ALL
            .into_iter()
            .map(|p| (p, FitOptions::with_noise_var(sensors.noise_sd(p).powi(2))))
            .collect();
        Self {
            world: WorldSpec::default(),
            vehicle: VehicleConfig::default(),
            sensors,
            gp,
            mission: MissionConfig::default(),
            link: LinkConfig::default(),
            thresholds: default_thresholds(),
            station: StationConfig::default(),
            perception: PerceptionConfig::default(),
            sim: SimConfig::default(),
        }
    }
}

impl Config {
    pub fn from_json(text: &str) -> Result<Config, ConfigError> {
        let cfg: Config = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Fit settings for a parameter; parameters missing from the file get
    /// the sensor-noise default.
    pub fn fit_options(&self, p: Parameter) -> FitOptions {
        self.gp
            .get(&p)
            .copied()
            .unwrap_or_else(|| FitOptions::with_noise_var(self.sensors.noise_sd(p).powi(2)))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |s: String| ConfigError::Invalid(s);
        self.world.validate().map_err(|e| invalid(format!("world: {e}")))?;
        self.vehicle.validate().map_err(|e| invalid(format!("vehicle: {e}")))?;
        self.mission.validate().map_err(invalid)?;
        self.link.validate().map_err(invalid)?;
        self.station.validate().map_err(invalid)?;
        self.perception.validate().map_err(|e| invalid(format!("perception: {e}")))?;
        for (p, o) in &self.gp {
            o.validate().map_err(|e| invalid(format!("gp.{p}: {e}")))?;
        }
        for (p, t) in &self.thresholds {
            if let (Some(a), Some(b)) = (t.min, t.max) {
                if a > b {
                    return Err(invalid(format!("thresholds.{p}: min exceeds max")));
                }
            }
        }
        let s = &self.sim;
        if !(s.duration_s > 0.0 && s.telemetry_hz > 0.0 && s.sample_spacing_m >= 0.0) {
            return Err(invalid("sim: duration, rate and spacing must be positive".into()));
        }
        Ok(())
    }
}
