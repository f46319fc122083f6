//! Geodetic and local-frame conversions around the mission origin.

use medusa::config::Config;
use medusa::frames::{body_to_enu, enu_to_geo, geo_to_enu, EnuPoint, GeoPoint, Pose};
use nalgebra::Vector3;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let origin = Config::default().mission.origin;
    println!("origin: lat {:.6}, lon {:.6}", origin.lat, origin.lon);

    for (east, north) in [(0.0, 0.0), (100.0, 0.0), (0.0, 100.0), (-250.0, 180.0)] {
        let p = EnuPoint::new(east, north)?;
        let g = enu_to_geo(origin, p)?;
        let back = geo_to_enu(origin, g)?;
        println!(
            "ENU ({east:7.1}, {north:7.1}) -> lat {:.7}, lon {:.7} -> round trip error {:.1e} m",
            g.lat,
            g.lon,
            back.distance(&p)
        );
    }

    // a point 1.5 degrees away is outside the tangent-plane approximation
    let far = GeoPoint::new(origin.lat + 1.5, origin.lon)?;
    println!("1.5 degrees north: {:?}", geo_to_enu(origin, far).unwrap_err());

    // a camera 0.5 m ahead of the hull, vehicle heading north-east
    let pose = Pose::at(EnuPoint::new(10.0, 20.0)?, std::f64::consts::FRAC_PI_4);
    let (p, up) = body_to_enu(&pose, Vector3::new(0.5, 0.0, 0.4));
    println!("camera mount in ENU: ({:.3}, {:.3}), {up:.2} m up", p.east, p.north);
    Ok(())
}
