//! Command-line entry point: run, replay and inspect survey missions.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use medusa::config::{Config, ConfigError};
use medusa::gpfield::write_esri_ascii;
use medusa::link::Broker;
use medusa::sim::{LiveServices, SimOptions, Simulation};
use medusa::station::replay::{replay_file, ReplayError, Replayed};
use medusa::worldsim::Parameter;

const DEFAULT_LOG: &str = "mission.ndjson";

#[derive(Parser)]
#[command(name = "medusa", version, about = "Simulated surface-vehicle water-quality survey")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a complete seeded mission and write its log.
    Sim {
        /// JSON config; missing sections use the built-in defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        duration_s: Option<f64>,
        /// Run flat out without broker or gateway.
        #[arg(long)]
        headless: bool,
        /// Simulated seconds per wall-clock second when not headless.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        #[arg(long, default_value = DEFAULT_LOG)]
        log: PathBuf,
    },
    /// Rebuild station state and rasters from a mission log.
    Replay {
        #[arg(long)]
        log: PathBuf,
        /// Also write mean and sd rasters for every fitted parameter here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Write the fitted estimate of one parameter as an ESRI ASCII grid.
    Export {
        #[arg(long)]
        param: Parameter,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = DEFAULT_LOG)]
        log: PathBuf,
        /// Export the posterior standard deviation instead of the mean.
        #[arg(long)]
        sd: bool,
    },
    /// Print the compliance report for a mission log.
    Report {
        #[arg(long, default_value = DEFAULT_LOG)]
        log: PathBuf,
    },
    /// Run the standalone link broker.
    Broker {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        port: Option<u16>,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<ReplayError> for Failure {
    fn from(e: ReplayError) -> Self {
        match e {
            ReplayError::Config(c) => Failure::Config(c.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn load_config(path: Option<&Path>) -> Result<Config, Failure> {
    match path {
        Some(p) => Ok(Config::load(p)?),
        None => Ok(Config::default()),
    }
}

fn print_json(v: &impl serde::Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(v).map_err(runtime)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(runtime(e)),
        _ => Ok(()),
    }
}

fn write_raster(field: &medusa::worldsim::ScalarField, path: &Path) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(runtime)?;
    }
    let mut out = BufWriter::new(File::create(path).map_err(runtime)?);
    write_esri_ascii(field, &mut out).map_err(runtime)?;
    out.flush().map_err(runtime)
}

fn replay(log: &Path) -> Result<Replayed, Failure> {
    if !log.is_file() {
        return Err(Failure::Runtime(format!("no mission log at {}", log.display())));
    }
    let r = replay_file(log)?;
    if !r.bad_lines.is_empty() {
        eprintln!("warning: {} unreadable line(s) skipped", r.bad_lines.len());
    }
    Ok(r)
}

fn sim(
    config: Option<PathBuf>,
    seed: Option<u64>,
    duration_s: Option<f64>,
    headless: bool,
    speed: f64,
    log: PathBuf,
) -> Result<(), Failure> {
    let cfg = load_config(config.as_deref())?;
    if duration_s.is_some_and(|d| !(d > 0.0 && d.is_finite())) {
        return Err(Failure::Config("--duration-s must be positive".into()));
    }
    if !headless && !(speed > 0.0 && speed.is_finite()) {
        return Err(Failure::Config("--speed must be positive".into()));
    }
    let opts = SimOptions {
        seed: seed.unwrap_or(cfg.sim.seed),
        duration_s: duration_s.unwrap_or(cfg.sim.duration_s),
        log_path: Some(log.clone()),
        realtime: (!headless).then_some(speed),
        wall_clock_note: true,
    };
    let sim = Simulation::new(cfg, &opts).map_err(runtime)?;
    let services = if headless {
        None
    } else {
        let s = LiveServices::start(&sim).map_err(runtime)?;
        eprintln!(
            "broker on {}, gateway on http://{}",
            s.broker.local_addr(),
            s.gateway.local_addr()
        );
        Some(s)
    };
    let result = sim.run(opts.realtime);
    if let Some(s) = services {
        s.stop();
    }
    let (_, report) = result.map_err(runtime)?;
    eprintln!("log written to {}", log.display());
    print_json(&report)
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Sim {
            config,
            seed,
            duration_s,
            headless,
            speed,
            log,
        } => sim(config, seed, duration_s, headless, speed, log),
        Command::Replay { log, out_dir } => {
            let r = replay(&log)?;
            let snap = r.station.snapshot();
            if let Some(dir) = out_dir {
                for p in snap.models.keys() {
                    let rasters = r.station.rasters(*p).expect("fitted parameter has rasters");
                    write_raster(&rasters.0, &dir.join(format!("{p}_mean.asc")))?;
                    write_raster(&rasters.1, &dir.join(format!("{p}_sd.asc")))?;
                }
            }
            print_json(&serde_json::json!({
                "seed": r.seed,
                "events": r.events,
                "samples": snap.sample_count,
                "mode": snap.mode,
                "models": snap.models,
            }))
        }
        Command::Export { param, out, log, sd } => {
            let r = replay(&log)?;
            let rasters = r
                .station
                .rasters(param)
                .ok_or_else(|| Failure::Runtime(format!("no fitted model for {param} in {}", log.display())))?;
            write_raster(if sd { &rasters.1 } else { &rasters.0 }, &out)
        }
        Command::Report { log } => print_json(&replay(&log)?.station.compliance()),
        Command::Broker { config, port } => {
            let mut cfg = load_config(config.as_deref())?.link;
            if let Some(p) = port {
                cfg.port = p;
            }
            let broker = Broker::bind(&cfg.endpoint(), &cfg).map_err(runtime)?;
            eprintln!("broker listening on {}", broker.local_addr());
            broker.wait();
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
