//! Generates the seeded lake and prints its map and field statistics.

use medusa::config::Config;
use medusa::worldsim::{generate_world, sample_field, Parameter};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).map_or(Ok(7), |s| s.parse())?;
    let cfg = Config::default();
    let world = generate_world(seed, &cfg.world)?;
    let grid = &world.grid;
    println!(
        "seed {seed}: {}x{} cells of {} m, {} navigable, {} debris items",
        grid.width(),
        grid.height(),
        grid.cell_size(),
        grid.navigable_count(),
        world.debris.len()
    );

    // every fourth cell, north at the top
    for r in (0..grid.height()).rev().step_by(4) {
        let line: String = (0..grid.width())
            .step_by(2)
            .map(|c| if grid.is_navigable(r, c) { '~' } else { '#' })
            .collect();
        println!("{line}");
    }

    for f in &world.fields {
        let (lo, hi) = f
            .finite_values()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        println!("{:>12}: {lo:8.2} .. {hi:8.2} {}", f.parameter.name(), f.units());
    }
    let home = cfg.mission.home;
    println!(
        "turbidity at home: {:.2} NTU",
        sample_field(world.field(Parameter::Turbidity)?, &home)?
    );
    Ok(())
}
