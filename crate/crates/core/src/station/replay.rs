//! Rebuilds station state from a mission log.

use std::path::Path;

use thiserror::Error;

use super::log::{read_log_file, BadLine, LogEvent, MissionLog};
use super::{Station, StationError};
use crate::config::{Config, ConfigError};
use crate::worldsim::{generate_world, OccupancyGrid, WorldError};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("log has no start note with seed and config")]
    NoStartNote,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Station(#[from] StationError),
}

/// Body of the note written when a mission starts.
pub fn start_note(seed: u64, cfg: &Config) -> serde_json::Value {
    serde_json::json!({ "start": { "seed": seed, "config": cfg } })
}

/// Seed and config recorded in the first start note.
pub fn find_start(events: &[LogEvent]) -> Result<(u64, Config), ReplayError> {
    let start = events
        .iter()
        .find_map(|e| e.body.get("start"))
        .ok_or(ReplayError::NoStartNote)?;
    let seed = start.get("seed").and_then(|s| s.as_u64()).ok_or(ReplayError::NoStartNote)?;
    let cfg: Config = serde_json::from_value(start.get("config").cloned().ok_or(ReplayError::NoStartNote)?)
        .map_err(ConfigError::from)?;
    cfg.validate()?;
    Ok((seed, cfg))
}

pub fn replay_events(cfg: &Config, grid: &OccupancyGrid, events: &[LogEvent]) -> Result<Station, StationError> {
    let mut station = Station::new(cfg, grid, MissionLog::in_memory());
    for ev in events {
        station.replay_event(ev)?;
    }
    Ok(station)
}

pub struct Replayed {
    pub station: Station,
    pub config: Config,
    pub seed: u64,
    pub events: usize,
    pub bad_lines: Vec<BadLine>,
}

/// Replays a log file, regenerating the lake from the recorded seed.
pub fn replay_file(path: &Path) -> Result<Replayed, ReplayError> {
    let (events, bad_lines) = read_log_file(path)?;
    for b in &bad_lines {
        log::warn!("{}:{}: skipped unreadable event: {}", path.display(), b.line, b.error);
    }
    let (seed, config) = find_start(&events)?;
    let world = generate_world(seed, &config.world)?;
    let station = replay_events(&config, &world.grid, &events)?;
    Ok(Replayed {
        station,
        config,
        seed,
        events: events.len(),
        bad_lines,
    })
}
