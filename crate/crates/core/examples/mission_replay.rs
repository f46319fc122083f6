//! Runs a short seeded mission to a log file, then rebuilds the station from it.

use medusa::config::Config;
use medusa::sim::{run, SimOptions};
use medusa::station::replay::replay_file;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join(format!("medusa-replay-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let log = dir.join("mission.ndjson");

    let cfg = Config::default();
    let opts = SimOptions {
        duration_s: 900.0,
        log_path: Some(log.clone()),
        ..SimOptions::from_config(&cfg)
    };
    let (sim, report) = run(cfg, &opts)?;
    println!(
        "ran {:.0} s, {:.0} m, {} samples, {} log events",
        report.sim_time_s,
        report.distance_m,
        report.samples.values().sum::<usize>(),
        report.log_events
    );

    let replayed = replay_file(&log)?;
    let live = sim.station();
    let same = replayed.station.snapshot() == live.read().expect("station lock").snapshot();
    println!("replayed {} events from seed {}: state identical = {same}", replayed.events, replayed.seed);
    println!("{}", serde_json::to_string_pretty(&replayed.station.compliance())?);
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
