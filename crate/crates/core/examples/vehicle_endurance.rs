//! Differential-thrust vehicle: analytic endurance and a driven square.

use medusa::frames::{EnuPoint, Pose};
use medusa::vehicle::{autopilot_step, calibrate_endurance, step, VehicleConfig, VehicleState};

fn main() {
    let cfg = VehicleConfig::default();
    println!(
        "cruise power {:.1} W, endurance {:.0} s ({:.2} h)",
        cfg.cruise_power(),
        calibrate_endurance(&cfg),
        calibrate_endurance(&cfg) / 3600.0
    );

    let corners = [(100.0, 0.0), (100.0, 100.0), (0.0, 100.0), (0.0, 0.0)];
    let mut s = VehicleState::at_rest(Pose::at(EnuPoint::origin(), 0.0), &cfg);
    for (east, north) in corners {
        let goal = EnuPoint { east, north };
        while s.pose.position.distance(&goal) > 3.0 {
            let (l, r) = autopilot_step(&s, &goal, &cfg);
            s = step(&s.with_thrust(l, r), &cfg, cfg.dt);
        }
        println!(
            "t {:6.1} s  at ({:6.1}, {:6.1})  battery {:5.1}%",
            s.time,
            s.pose.position.east,
            s.pose.position.north,
            100.0 * s.battery_fraction(&cfg)
        );
    }
}
