//! Picks the most uncertain reachable cell after a westward transect.

use medusa::config::Config;
use medusa::frames::EnuPoint;
use medusa::gpfield::fit;
use medusa::planner::select_next_informative;
use medusa::worldsim::{generate_world, sample_field, Parameter};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = Config::default();
    let world = generate_world(7, &cfg.world)?;
    let field = world.field(Parameter::Ph)?;

    let x: Vec<EnuPoint> = (0..30)
        .map(|i| EnuPoint {
            east: -240.0 + 5.0 * i as f64,
            north: -60.0 + 4.0 * i as f64,
        })
        .filter(|p| world.grid.navigable_at(p))
        .collect();
    let y = x.iter().map(|p| sample_field(field, p)).collect::<Result<Vec<_>, _>>()?;
    let model = fit(&x, &y, &cfg.fit_options(Parameter::Ph))?;

    let here = *x.last().expect("transect has water");
    for budget in [100.0, 300.0, 1000.0] {
        match select_next_informative(&[&model], &world.grid, here, budget, 4) {
            Ok(p) => println!(
                "budget {budget:6.0} m -> go to ({:7.1}, {:7.1}), {:5.1} m away",
                p.east,
                p.north,
                here.distance(&p)
            ),
            Err(e) => println!("budget {budget:6.0} m -> {e}"),
        }
    }
    Ok(())
}
