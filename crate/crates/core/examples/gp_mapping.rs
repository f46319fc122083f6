//! Fits a field from scattered noisy samples and exports it as ESRI ASCII.
//!
//! `cargo run --example gp_mapping -- turbidity.asc` writes the raster;
//! without an argument only the error summary is printed.

use medusa::config::Config;
use medusa::gpfield::{fit, write_esri_ascii};
use medusa::worldsim::{generate_world, sample_field, Parameter};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = Config::default();
    let world = generate_world(7, &cfg.world)?;
    let truth = world.field(Parameter::Turbidity)?;
    let water: Vec<_> = world.grid.navigable_cells().collect();
    let noise = Normal::new(0.0, cfg.sensors.noise_sd(Parameter::Turbidity))?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    for n in [10, 40, 160] {
        let x: Vec<_> = (0..n)
            .map(|_| {
                let (r, c) = water[rng.random_range(0..water.len())];
                world.grid.center(r, c)
            })
            .collect();
        let y = x
            .iter()
            .map(|p| Ok(sample_field(truth, p)? + noise.sample(&mut rng)))
            .collect::<Result<Vec<f64>, medusa::worldsim::WorldError>>()?;
        let model = fit(&x, &y, &cfg.fit_options(Parameter::Turbidity))?;
        let (mean, sd) = model.predict_grid(&world.grid, Parameter::Turbidity);
        let pairs = mean.values.iter().zip(&truth.values).filter(|(m, t)| m.is_finite() && t.is_finite());
        let (sum, count) = pairs.fold((0.0, 0), |(s, k), (m, t)| (s + (m - t).powi(2), k + 1));
        let mean_sd = sd.finite_values().sum::<f64>() / count as f64;
        println!(
            "{n:4} samples: lengthscale {:6.1} m, RMSE {:.2} NTU, mean posterior sd {:.2}",
            model.kernel.lengthscale,
            (sum / count as f64).sqrt(),
            mean_sd
        );
        if let (Some(path), 160) = (std::env::args().nth(1), n) {
            write_esri_ascii(&mean, std::fs::File::create(&path)?)?;
            println!("wrote {path}");
        }
    }
    Ok(())
}
