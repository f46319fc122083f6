//! Detects debris in front of the vehicle and places it on the map.

use medusa::config::Config;
use medusa::frames::{EnuPoint, Pose};
use medusa::perception::{georeference, georeference_enu, synthetic_detector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = Config::default();
    let cam = &cfg.perception;
    let pose = Pose::at(EnuPoint::new(20.0, -40.0)?, 0.3);
    let debris: Vec<EnuPoint> = [(4.0, 0.0), (9.0, 1.5), (14.0, -3.0), (30.0, 0.0), (-5.0, 0.0)]
        .iter()
        .map(|&(ahead, left)| EnuPoint {
            east: pose.position.east + ahead * pose.heading.cos() - left * pose.heading.sin(),
            north: pose.position.north + ahead * pose.heading.sin() + left * pose.heading.cos(),
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let detections = synthetic_detector(&debris, None, &pose, cam, &mut rng);
    println!("{} of {} items visible", detections.len(), debris.len());
    for d in &detections {
        let p = georeference_enu(d, &cam.intrinsics, &cam.extrinsics, &pose)?;
        let nearest = debris
            .iter()
            .map(|t| t.distance(&p))
            .fold(f64::INFINITY, f64::min);
        let g = georeference(d, &cam.intrinsics, &cam.extrinsics, &pose, cfg.mission.origin)?;
        println!(
            "{} at {:4.1} m depth -> ({:6.2}, {:6.2}) lat {:.7} lon {:.7}, {:.2} m from truth",
            d.class, d.depth_m, p.east, p.north, g.lat, g.lon, nearest
        );
    }
    Ok(())
}
