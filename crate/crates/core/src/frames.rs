//! Geodetic and rigid-body coordinate machinery.
//!
//! Global positions are WGS84 latitude/longitude in degrees. Everything the
//! planner, the simulator and the GP maps work with lives in a local
//! east-north tangent plane anchored at the mission origin, using a plain
//! equirectangular projection. Over a lake a few kilometres across this is
//! accurate to well below a decimetre.
//!
//! The vehicle body frame is x-forward, y-left, z-up. Attitude is applied in
//! Z-Y-X intrinsic order (yaw, then pitch, then roll), with heading measured
//! counterclockwise from east.

use std::f64::consts::PI;

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Meters per degree of latitude (and of longitude at the equator).
pub const METERS_PER_DEGREE: f64 = 111_320.0;

/// Largest local offset accepted by [`EnuPoint`].
pub const MAX_ENU_OFFSET_M: f64 = 100_000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrameError {
    #[error("invalid geodetic point (lat {lat}, lon {lon})")]
    InvalidGeoPoint { lat: f64, lon: f64 },
    #[error("invalid local point (east {east}, north {north})")]
    InvalidEnuPoint { east: f64, north: f64 },
    #[error("point is more than 1 degree from the mission origin")]
    TangentPlaneViolation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, FrameError> {
        let ok = lat.is_finite()
            && lon.is_finite()
            && (-90.0..=90.0).contains(&lat)
            && (-180.0..=180.0).contains(&lon);
        if ok {
            Ok(Self { lat, lon })
        } else {
            Err(FrameError::InvalidGeoPoint { lat, lon })
        }
    }

    pub fn is_valid(&self) -> bool {
        Self::new(self.lat, self.lon).is_ok()
    }
}

/// Position in the local east-north plane, meters from the mission origin.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnuPoint {
    pub east: f64,
    pub north: f64,
}

impl EnuPoint {
    pub fn new(east: f64, north: f64) -> Result<Self, FrameError> {
        let ok = east.is_finite()
            && north.is_finite()
            && east.abs() < MAX_ENU_OFFSET_M
            && north.abs() < MAX_ENU_OFFSET_M;
        if ok {
            Ok(Self { east, north })
        } else {
            Err(FrameError::InvalidEnuPoint { east, north })
        }
    }

    pub const fn origin() -> Self {
        Self { east: 0.0, north: 0.0 }
    }

    pub fn is_valid(&self) -> bool {
        Self::new(self.east, self.north).is_ok()
    }

    pub fn distance(&self, other: &EnuPoint) -> f64 {
        (self.east - other.east).hypot(self.north - other.north)
    }

    pub fn distance_sq(&self, other: &EnuPoint) -> f64 {
        let de = self.east - other.east;
        let dn = self.north - other.north;
        de * de + dn * dn
    }

    /// Bearing from `self` to `other`, counterclockwise from east.
    pub fn bearing_to(&self, other: &EnuPoint) -> f64 {
        (other.north - self.north).atan2(other.east - self.east)
    }
}

/// Full vehicle pose: planar position plus attitude and body velocities.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub position: EnuPoint,
    /// Yaw in radians, counterclockwise from east, normalized to (-pi, pi].
    pub heading: f64,
    pub pitch: f64,
    pub roll: f64,
    pub surge_speed: f64,
    pub yaw_rate: f64,
}

impl Pose {
    pub fn at(position: EnuPoint, heading: f64) -> Self {
        Self {
            position,
            heading: normalize_angle(heading),
            ..Self::default()
        }
    }

    pub fn is_valid(&self) -> bool {
        self.position.is_valid()
            && self.heading.is_finite()
            && self.heading > -PI
            && self.heading <= PI
            && self.pitch.is_finite()
            && self.roll.is_finite()
            && self.surge_speed.is_finite()
            && self.yaw_rate.is_finite()
    }

    /// Body-to-local rotation for this attitude.
    pub fn rotation(&self) -> Rotation3<f64> {
        attitude_rotation(self.heading, self.pitch, self.roll)
    }
}

/// Wraps an angle into (-pi, pi].
pub fn normalize_angle(angle: f64) -> f64 {
    if !angle.is_finite() {
        return angle;
    }
    let mut a = angle % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Rotation applying yaw about z, then pitch about the new y, then roll about
/// the new x.
pub fn attitude_rotation(yaw: f64, pitch: f64, roll: f64) -> Rotation3<f64> {
    Rotation3::from_euler_angles(roll, pitch, yaw)
}

pub fn geo_to_enu(origin: GeoPoint, p: GeoPoint) -> Result<EnuPoint, FrameError> {
    let dlat = p.lat - origin.lat;
    let dlon = p.lon - origin.lon;
    if !(dlat.abs() < 1.0 && dlon.abs() < 1.0) {
        return Err(FrameError::TangentPlaneViolation);
    }
    let north = dlat * METERS_PER_DEGREE;
    let east = dlon * METERS_PER_DEGREE * origin.lat.to_radians().cos();
    EnuPoint::new(east, north)
}

pub fn enu_to_geo(origin: GeoPoint, p: EnuPoint) -> Result<GeoPoint, FrameError> {
    if !p.is_valid() {
        return Err(FrameError::InvalidEnuPoint {
            east: p.east,
            north: p.north,
        });
    }
    let lat = origin.lat + p.north / METERS_PER_DEGREE;
    let lon = origin.lon + p.east / (METERS_PER_DEGREE * origin.lat.to_radians().cos());
    GeoPoint::new(lat, lon)
}

/// Maps a body-frame vector into the local frame. Returns the horizontal
/// position and the vertical offset from the pose's reference height.
pub fn body_to_enu(pose: &Pose, v: Vector3<f64>) -> (EnuPoint, f64) {
    let w = pose.rotation() * v;
    (
        EnuPoint {
            east: pose.position.east + w.x,
            north: pose.position.north + w.y,
        },
        w.z,
    )
}
