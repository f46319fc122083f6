//! Planar catamaran: two fixed thrusters, linear drag, a battery drained by
//! a base load plus propulsion, and a proportional waypoint autopilot.
//!
//! Defaults are calibrated so that cruising at 1 m/s draws about 148 W, which
//! empties the 296 Wh pack in two hours.

use serde::{Deserialize, Serialize};

use crate::frames::{normalize_angle, EnuPoint, Pose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VehicleConfig {
    /// m/s
    pub cruise_speed: f64,
    /// m
    pub wp_accept_radius: f64,
    /// Desired yaw rate per radian of heading error, 1/s.
    pub heading_gain: f64,
    /// Extra common-mode thrust per m/s of speed error, N*s/m.
    pub speed_gain: f64,
    /// s
    pub dt: f64,
    /// Per-thruster saturation, N.
    pub t_max: f64,
    /// N*s/m
    pub drag_u: f64,
    /// N*m*s
    pub drag_r: f64,
    /// Thruster separation, m.
    pub beam: f64,
    /// kg, including added mass
    pub mass: f64,
    /// kg*m^2
    pub yaw_inertia: f64,
    /// Hotel load, W.
    pub p_base: f64,
    /// W/N^1.5
    pub k_thrust: f64,
    pub capacity_wh: f64,
}

impl Default for VehicleConfig {
    fn default() -> Self {
        Self {
            cruise_speed: 1.0,
            wp_accept_radius: 2.0,
            heading_gain: 0.5,
            speed_gain: 10.0,
            dt: 0.1,
            t_max: 40.0,
            drag_u: 20.0,
            drag_r: 10.0,
            beam: 0.6,
            mass: 100.0,
            yaw_inertia: 15.0,
            p_base: 40.0,
            k_thrust: 1.7,
            // two 14.8 V, 10 Ah packs in parallel
            capacity_wh: 296.0,
        }
    }
}

impl VehicleConfig {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("cruise_speed", self.cruise_speed),
            ("wp_accept_radius", self.wp_accept_radius),
            ("heading_gain", self.heading_gain),
            ("speed_gain", self.speed_gain),
            ("dt", self.dt),
            ("t_max", self.t_max),
            ("drag_u", self.drag_u),
            ("drag_r", self.drag_r),
            ("beam", self.beam),
            ("mass", self.mass),
            ("yaw_inertia", self.yaw_inertia),
            ("p_base", self.p_base),
            ("capacity_wh", self.capacity_wh),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("vehicle.{name} must be positive"));
            }
        }
        if !(self.k_thrust >= 0.0 && self.k_thrust.is_finite()) {
            return Err("vehicle.k_thrust must be non-negative".into());
        }
        if self.dt > 0.5 {
            return Err("vehicle.dt must be at most 0.5 s".into());
        }
        Ok(())
    }

    /// Electrical power for a pair of thruster commands, W.
    pub fn power(&self, thrust_left: f64, thrust_right: f64) -> f64 {
        self.p_base + self.k_thrust * (thrust_left.abs().powf(1.5) + thrust_right.abs().powf(1.5))
    }

    /// Steady-state draw while holding cruise speed in a straight line.
    pub fn cruise_power(&self) -> f64 {
        let per_thruster = 0.5 * self.drag_u * self.cruise_speed;
        self.power(per_thruster, per_thruster)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub pose: Pose,
    pub battery_wh: f64,
    pub time: f64,
    pub thrust_left: f64,
    pub thrust_right: f64,
}

impl VehicleState {
    pub fn at_rest(pose: Pose, cfg: &VehicleConfig) -> Self {
        Self {
            pose,
            battery_wh: cfg.capacity_wh,
            time: 0.0,
            thrust_left: 0.0,
            thrust_right: 0.0,
        }
    }

    pub fn battery_dead(&self) -> bool {
        self.battery_wh <= 0.0
    }

    pub fn battery_fraction(&self, cfg: &VehicleConfig) -> f64 {
        self.battery_wh / cfg.capacity_wh
    }

    pub fn with_thrust(mut self, left: f64, right: f64) -> Self {
        self.thrust_left = left;
        self.thrust_right = right;
        self
    }
}

/// Advances the 3-DOF model by `dt` with semi-implicit Euler. A dead battery
/// freezes the state.
pub fn step(state: &VehicleState, cfg: &VehicleConfig, dt: f64) -> VehicleState {
    if state.battery_dead() {
        return *state;
    }
    let tl = state.thrust_left.clamp(-cfg.t_max, cfg.t_max);
    let tr = state.thrust_right.clamp(-cfg.t_max, cfg.t_max);
    let pose = state.pose;

    let force = tl + tr - cfg.drag_u * pose.surge_speed;
    let moment = (tr - tl) * 0.5 * cfg.beam - cfg.drag_r * pose.yaw_rate;
    let surge_speed = pose.surge_speed + force / cfg.mass * dt;
    let yaw_rate = pose.yaw_rate + moment / cfg.yaw_inertia * dt;
    let heading = normalize_angle(pose.heading + yaw_rate * dt);
    let position = EnuPoint {
        east: pose.position.east + surge_speed * heading.cos() * dt,
        north: pose.position.north + surge_speed * heading.sin() * dt,
    };

    let energy_wh = cfg.power(tl, tr) * dt / 3600.0;
    let battery_wh = (state.battery_wh - energy_wh).max(0.0);
    let (thrust_left, thrust_right) = if battery_wh > 0.0 { (tl, tr) } else { (0.0, 0.0) };

    VehicleState {
        pose: Pose {
            position,
            heading,
            surge_speed,
            yaw_rate,
            ..pose
        },
        battery_wh,
        time: state.time + dt,
        thrust_left,
        thrust_right,
    }
}

/// Proportional heading and speed control toward `goal`. Returns the
/// (left, right) thrust pair, each saturated at `t_max`.
pub fn autopilot_step(state: &VehicleState, goal: &EnuPoint, cfg: &VehicleConfig) -> (f64, f64) {
    let pose = &state.pose;
    let error = normalize_angle(pose.position.bearing_to(goal) - pose.heading);

    // yaw moment that holds yaw rate = heading_gain * error at steady state
    let differential = (2.0 / cfg.beam * cfg.drag_r * cfg.heading_gain * error).clamp(-cfg.t_max, cfg.t_max);

    // feed-forward drag compensation plus proportional speed correction,
    // faded out while the bow points away from the goal
    let speed_error = cfg.cruise_speed - pose.surge_speed;
    let alignment = error.cos().max(0.0);
    let common = alignment * (cfg.drag_u * cfg.cruise_speed + cfg.speed_gain * speed_error);

    let left = (0.5 * (common - differential)).clamp(-cfg.t_max, cfg.t_max);
    let right = (0.5 * (common + differential)).clamp(-cfg.t_max, cfg.t_max);
    (left, right)
}

/// Seconds of straight-line cruising a full battery provides.
pub fn calibrate_endurance(cfg: &VehicleConfig) -> f64 {
    cfg.capacity_wh * 3600.0 / cfg.cruise_power()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn rest(cfg: &VehicleConfig) -> VehicleState {
        VehicleState::at_rest(Pose::at(EnuPoint::origin(), 0.0), cfg)
    }

    #[test]
    fn idle_drains_only_base_load() {
        let cfg = VehicleConfig::default();
        let s0 = rest(&cfg);
        let s1 = step(&s0, &cfg, cfg.dt);
        assert_eq!(s1.pose, s0.pose);
        let expected = cfg.capacity_wh - cfg.p_base * cfg.dt / 3600.0;
        assert!((s1.battery_wh - expected).abs() < 1e-12);
    }

    #[test]
    fn equal_thrust_keeps_heading() {
        let cfg = VehicleConfig::default();
        let mut s = VehicleState::at_rest(Pose::at(EnuPoint::origin(), 0.7), &cfg).with_thrust(15.0, 15.0);
        for _ in 0..2000 {
            s = step(&s, &cfg, cfg.dt);
        }
        assert_eq!(s.pose.heading, 0.7);
        assert_eq!(s.pose.yaw_rate, 0.0);
    }

    #[test]
    fn surge_settles_at_thrust_over_drag() {
        let cfg = VehicleConfig::default();
        let total = 30.0;
        let mut s = rest(&cfg).with_thrust(total / 2.0, total / 2.0);
        let steps = (60.0 / cfg.dt).round() as usize;
        for _ in 0..steps {
            s = step(&s, &cfg, cfg.dt);
        }
        let expected = total / cfg.drag_u;
        assert!((s.pose.surge_speed - expected).abs() / expected < 0.01);
    }

    #[test]
    fn dead_battery_freezes() {
        let cfg = VehicleConfig::default();
        let mut s = rest(&cfg).with_thrust(40.0, 40.0);
        s.battery_wh = 1e-4;
        s = step(&s, &cfg, cfg.dt);
        assert!(s.battery_dead());
        assert_eq!((s.thrust_left, s.thrust_right), (0.0, 0.0));
        let frozen = step(&s, &cfg, cfg.dt);
        assert_eq!(frozen, s);
    }

    #[test]
    fn thrust_saturates() {
        let cfg = VehicleConfig::default();
        let s = rest(&cfg).with_thrust(1e6, -1e6);
        let s1 = step(&s, &cfg, cfg.dt);
        assert_eq!(s1.thrust_left, cfg.t_max);
        assert_eq!(s1.thrust_right, -cfg.t_max);
    }

    #[test]
    fn goal_dead_ahead_is_symmetric() {
        let cfg = VehicleConfig::default();
        let mut s = rest(&cfg);
        s.pose.surge_speed = cfg.cruise_speed;
        let (l, r) = autopilot_step(&s, &EnuPoint { east: 50.0, north: 0.0 }, &cfg);
        assert_eq!(l, r);
        assert!((l + r - cfg.drag_u * cfg.cruise_speed).abs() < 1e-12);
    }

    #[test]
    fn goal_to_port_turns_left() {
        let cfg = VehicleConfig::default();
        let s = rest(&cfg);
        let (l, r) = autopilot_step(&s, &EnuPoint { east: 0.0, north: 30.0 }, &cfg);
        assert!(r > l);
        let (l, r) = autopilot_step(&s, &EnuPoint { east: 0.0, north: -30.0 }, &cfg);
        assert!(l > r);
        let (l, r) = autopilot_step(&s, &EnuPoint { east: -30.0, north: 1.0 }, &cfg);
        assert!(l.abs() <= cfg.t_max && r.abs() <= cfg.t_max);
    }

    #[test]
    fn straight_leg_timing() {
        let cfg = VehicleConfig::default();
        let goal = EnuPoint { east: 100.0, north: 0.0 };
        let mut s = rest(&cfg);
        while s.pose.position.distance(&goal) > cfg.wp_accept_radius {
            let (l, r) = autopilot_step(&s, &goal, &cfg);
            s = step(&s.with_thrust(l, r), &cfg, cfg.dt);
            assert!(s.time < 200.0);
        }
        assert!((100.0..=130.0).contains(&s.time), "reached at {}", s.time);
    }

    #[test]
    fn turning_converges_on_goal_behind() {
        let cfg = VehicleConfig::default();
        let goal = EnuPoint { east: -60.0, north: 5.0 };
        let mut s = rest(&cfg);
        while s.pose.position.distance(&goal) > cfg.wp_accept_radius {
            let (l, r) = autopilot_step(&s, &goal, &cfg);
            s = step(&s.with_thrust(l, r), &cfg, cfg.dt);
            assert!(s.time < 200.0, "never arrived");
            assert!(s.pose.heading > -PI && s.pose.heading <= PI);
        }
    }

    #[test]
    fn endurance_calibration() {
        let cfg = VehicleConfig::default();
        let e = calibrate_endurance(&cfg);
        assert!((e - 7200.0).abs() <= 720.0, "{e}");
        let doubled = VehicleConfig {
            capacity_wh: 2.0 * cfg.capacity_wh,
            ..cfg.clone()
        };
        assert!((calibrate_endurance(&doubled) - 2.0 * e).abs() < 1e-9);
        let hotel_only = VehicleConfig {
            k_thrust: 0.0,
            ..cfg.clone()
        };
        assert_eq!(calibrate_endurance(&hotel_only), cfg.capacity_wh * 3600.0 / cfg.p_base);
    }

    #[test]
    fn battery_never_increases_and_is_deterministic() {
        let cfg = VehicleConfig::default();
        let goal = EnuPoint { east: 20.0, north: -40.0 };
        let run = || {
            let mut s = rest(&cfg);
            let mut trace = vec![];
            for _ in 0..600 {
                let (l, r) = autopilot_step(&s, &goal, &cfg);
                let next = step(&s.with_thrust(l, r), &cfg, cfg.dt);
                assert!(next.battery_wh <= s.battery_wh);
                s = next;
                trace.push(s);
            }
            trace
        };
        assert_eq!(run(), run());
    }
}
