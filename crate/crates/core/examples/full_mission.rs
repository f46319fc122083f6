//! Complete survey with the broker and operator API running alongside.
//!
//! Pass a speed-up factor to pace the run, e.g. `-- 50` for fifty times
//! real time; while it runs, `curl http://ADDR/api/state` shows progress.

use medusa::config::Config;
use medusa::sim::{LiveServices, SimOptions, Simulation};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let speed: Option<f64> = std::env::args().nth(1).map(|s| s.parse()).transpose()?;
    let cfg = Config::default();
    let opts = SimOptions {
        realtime: speed,
        ..SimOptions::from_config(&cfg)
    };
    let sim = Simulation::new(cfg, &opts)?;
    let services = LiveServices::start(&sim)?;
    println!(
        "broker {}  gateway http://{}",
        services.broker.local_addr(),
        services.gateway.local_addr()
    );
    let (_, report) = sim.run(speed)?;
    services.stop();

    println!(
        "lap complete: {}, {:.0} m, final battery {:.1}%, mode {}",
        report.lap.complete, report.distance_m, report.final_battery_pct, report.final_mode
    );
    for change in &report.mode_history {
        println!("  {change:?}");
    }
    for (p, m) in &report.models {
        println!("  {p}: {m:?}");
    }
    Ok(())
}
