//! Camera geometry: ranging bounding-box detections and placing them in the
//! global frame, plus a synthetic detector driven by the simulated debris.
//!
//! Camera frame is Z forward, X right, Y down. Body frame is x forward,
//! y left, z up, so a camera axis vector (X, Y, Z) maps to body (Z, -X, -Y)
//! before the mounting rotation is applied.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bus::GeoDetection;
use crate::frames::{attitude_rotation, body_to_enu, enu_to_geo, EnuPoint, FrameError, GeoPoint, Pose};
use crate::worldsim::OccupancyGrid;

pub const MIN_DEPTH_M: f64 = 0.3;
pub const MAX_DEPTH_M: f64 = 40.0;
pub const DEFAULT_CLASS: &str = "macro_plastic";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerceptionError {
    #[error("pixel ({u}, {v}) is outside the image")]
    PixelOutOfBounds { u: f64, v: f64 },
    #[error("depth {0} m is outside (0.3, 40]")]
    DepthOutOfRange(f64),
    #[error("invalid detection: {0}")]
    InvalidDetection(String),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            fx: 700.0,
            fy: 700.0,
            cx: 640.0,
            cy: 360.0,
            width: 1280.0,
            height: 720.0,
        }
    }
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<(), PerceptionError> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx > 0.0
            && self.cx < self.width
            && self.cy > 0.0
            && self.cy < self.height;
        if ok {
            Ok(())
        } else {
            Err(PerceptionError::InvalidCamera("need fx, fy > 0 and the principal point inside the image".into()))
        }
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        (0.0..=self.width).contains(&u) && (0.0..=self.height).contains(&v)
    }

    /// Camera-frame point to pixel coordinates. `None` behind the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        (p.z > 0.0).then(|| (self.cx + self.fx * p.x / p.z, self.cy + self.fy * p.y / p.z))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraExtrinsics {
    /// Camera origin in the body frame, meters.
    pub translation: [f64; 3],
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl Default for CameraExtrinsics {
    fn default() -> Self {
        Self {
            translation: [0.5, 0.0, 0.4],
            yaw: 0.0,
            pitch: 0.0,
            roll: 0.0,
        }
    }
}

impl CameraExtrinsics {
    pub fn validate(&self) -> Result<(), PerceptionError> {
        let all = [self.yaw, self.pitch, self.roll];
        if self.translation.iter().chain(&all).all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(PerceptionError::InvalidCamera("extrinsics must be finite".into()))
        }
    }

    pub fn camera_to_body(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let axes = Vector3::new(p.z, -p.x, -p.y);
        Vector3::from(self.translation) + attitude_rotation(self.yaw, self.pitch, self.roll) * axes
    }

    pub fn body_to_camera(&self, b: &Vector3<f64>) -> Vector3<f64> {
        let r = attitude_rotation(self.yaw, self.pitch, self.roll);
        let axes = r.inverse() * (b - Vector3::from(self.translation));
        Vector3::new(-axes.y, -axes.z, axes.x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// (u_min, v_min, u_max, v_max) in pixels.
    pub bbox: [f64; 4],
    pub confidence: f64,
    /// Range along the optical axis.
    pub depth_m: f64,
    pub class: String,
}

impl Detection {
    pub fn center(&self) -> (f64, f64) {
        let [u0, v0, u1, v1] = self.bbox;
        (0.5 * (u0 + u1), 0.5 * (v0 + v1))
    }

    pub fn validate(&self, intr: &CameraIntrinsics) -> Result<(), PerceptionError> {
        let [u0, v0, u1, v1] = self.bbox;
        if !(u0 >= 0.0 && u0 < u1 && u1 <= intr.width && v0 >= 0.0 && v0 < v1 && v1 <= intr.height) {
            return Err(PerceptionError::InvalidDetection(format!("bad bbox {:?}", self.bbox)));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(PerceptionError::InvalidDetection(format!("confidence {} outside [0, 1]", self.confidence)));
        }
        check_depth(self.depth_m)
    }
}

fn check_depth(depth: f64) -> Result<(), PerceptionError> {
    if depth > MIN_DEPTH_M && depth <= MAX_DEPTH_M {
        Ok(())
    } else {
        Err(PerceptionError::DepthOutOfRange(depth))
    }
}

pub fn pixel_to_camera(intr: &CameraIntrinsics, u: f64, v: f64, depth_m: f64) -> Result<Vector3<f64>, PerceptionError> {
    if !intr.contains(u, v) {
        return Err(PerceptionError::PixelOutOfBounds { u, v });
    }
    check_depth(depth_m)?;
    Ok(Vector3::new(
        (u - intr.cx) * depth_m / intr.fx,
        (v - intr.cy) * depth_m / intr.fy,
        depth_m,
    ))
}

/// Local-frame position of a detection, ranging the bbox center and
/// dropping the vertical component.
pub fn georeference_enu(
    det: &Detection,
    intr: &CameraIntrinsics,
    extr: &CameraExtrinsics,
    pose: &Pose,
) -> Result<EnuPoint, PerceptionError> {
    det.validate(intr)?;
    if !pose.is_valid() {
        return Err(PerceptionError::InvalidDetection("pose is not valid".into()));
    }
    let (u, v) = det.center();
    let cam = pixel_to_camera(intr, u, v, det.depth_m)?;
    let (p, _vertical) = body_to_enu(pose, extr.camera_to_body(&cam));
    Ok(p)
}

pub fn georeference(
    det: &Detection,
    intr: &CameraIntrinsics,
    extr: &CameraExtrinsics,
    pose: &Pose,
    origin: GeoPoint,
) -> Result<GeoPoint, PerceptionError> {
    Ok(enu_to_geo(origin, georeference_enu(det, intr, extr, pose)?)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerceptionConfig {
    pub intrinsics: CameraIntrinsics,
    pub extrinsics: CameraExtrinsics,
    pub max_range_m: f64,
    pub pixel_noise_sd: f64,
    /// Depth noise sd as a fraction of range.
    pub depth_noise_frac: f64,
    pub confidence_min: f64,
    pub confidence_max: f64,
    /// Apparent debris diameter used to size bounding boxes.
    pub object_size_m: f64,
    pub rate_hz: f64,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        Self {
            intrinsics: CameraIntrinsics::default(),
            extrinsics: CameraExtrinsics::default(),
            max_range_m: 25.0,
            pixel_noise_sd: 2.0,
            depth_noise_frac: 0.01,
            confidence_min: 0.5,
            confidence_max: 0.95,
            object_size_m: 0.5,
            rate_hz: 1.0,
        }
    }
}

impl PerceptionConfig {
    pub fn validate(&self) -> Result<(), PerceptionError> {
        self.intrinsics.validate()?;
        self.extrinsics.validate()?;
        let ok = self.max_range_m > MIN_DEPTH_M
            && self.max_range_m <= MAX_DEPTH_M
            && self.pixel_noise_sd >= 0.0
            && self.depth_noise_frac >= 0.0
            && 0.0 <= self.confidence_min
            && self.confidence_min <= self.confidence_max
            && self.confidence_max <= 1.0
            && self.object_size_m > 0.0
            && self.rate_hz > 0.0;
        if ok {
            Ok(())
        } else {
            Err(PerceptionError::InvalidCamera("perception settings out of range".into()))
        }
    }
}

/// True when land lies on the straight segment between the two points.
fn occluded(grid: &OccupancyGrid, from: &EnuPoint, to: &EnuPoint) -> bool {
    let d = from.distance(to);
    let step = grid.cell_size() / 4.0;
    let n = (d / step).ceil() as usize;
    (1..n).any(|i| {
        let f = i as f64 / n as f64;
        let p = EnuPoint {
            east: from.east + f * (to.east - from.east),
            north: from.north + f * (to.north - from.north),
        };
        // the camera may sit over the shoreline cell the hull is in
        p.distance(from) > grid.cell_size() && grid.cell_of(&p).is_some() && !grid.navigable_at(&p)
    })
}

/// Simulated detector. Debris within range, inside the image and with a
/// clear line of sight yields one noisy detection each. `grid` enables
/// occlusion by land.
pub fn synthetic_detector<R: Rng + ?Sized>(
    debris: &[EnuPoint],
    grid: Option<&OccupancyGrid>,
    pose: &Pose,
    cfg: &PerceptionConfig,
    rng: &mut R,
) -> Vec<Detection> {
    let intr = &cfg.intrinsics;
    let rot = pose.rotation().inverse();
    let pixel = Normal::new(0.0, cfg.pixel_noise_sd).expect("finite sd");
    let mut out = Vec::new();
    for item in debris {
        let rel = Vector3::new(item.east - pose.position.east, item.north - pose.position.north, 0.0);
        let cam = cfg.extrinsics.body_to_camera(&(rot * rel));
        let range = cam.norm();
        if range > cfg.max_range_m || cam.z <= MIN_DEPTH_M {
            continue;
        }
        let Some((u, v)) = intr.project(&cam) else { continue };
        let half_u = (0.5 * intr.fx * cfg.object_size_m / cam.z).max(2.0);
        let half_v = (0.5 * intr.fy * cfg.object_size_m / cam.z).max(2.0);
        if u - half_u < 0.0 || u + half_u > intr.width || v - half_v < 0.0 || v + half_v > intr.height {
            continue;
        }
        if let Some(g) = grid {
            let (cam_pos, _) = body_to_enu(pose, Vector3::from(cfg.extrinsics.translation));
            if occluded(g, &cam_pos, item) {
                continue;
            }
        }
        let un = (u + pixel.sample(rng)).clamp(half_u, intr.width - half_u);
        let vn = (v + pixel.sample(rng)).clamp(half_v, intr.height - half_v);
        let depth_sd = cfg.depth_noise_frac * range;
        let depth = (cam.z + depth_sd * rng.sample::<f64, _>(rand_distr::StandardNormal))
            .clamp(MIN_DEPTH_M + 1e-6, MAX_DEPTH_M);
        let confidence = if cfg.confidence_max > cfg.confidence_min {
            rng.random_range(cfg.confidence_min..=cfg.confidence_max)
        } else {
            cfg.confidence_min
        };
        out.push(Detection {
            bbox: [un - half_u, vn - half_v, un + half_u, vn + half_v],
            confidence,
            depth_m: depth,
            class: DEFAULT_CLASS.into(),
        });
    }
    out
}

/// Runs the detector and georeferences every detection for publication.
pub fn detect_geo<R: Rng + ?Sized>(
    debris: &[EnuPoint],
    grid: Option<&OccupancyGrid>,
    pose: &Pose,
    cfg: &PerceptionConfig,
    origin: GeoPoint,
    rng: &mut R,
) -> Vec<GeoDetection> {
    synthetic_detector(debris, grid, pose, cfg, rng)
        .into_iter()
        .filter_map(|d| match georeference(&d, &cfg.intrinsics, &cfg.extrinsics, pose, origin) {
            Ok(position) => Some(GeoDetection {
                position,
                confidence: d.confidence,
                class: d.class,
            }),
            Err(e) => {
                log::debug!("dropping detection: {e}");
                None
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::geo_to_enu;
    use nalgebra::{Matrix3, Matrix4, Vector4};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    const ORIGIN: GeoPoint = GeoPoint { lat: 37.0, lon: -6.0 };

    fn det_at(u: f64, v: f64, depth: f64) -> Detection {
        Detection {
            bbox: [u - 4.0, v - 4.0, u + 4.0, v + 4.0],
            confidence: 0.8,
            depth_m: depth,
            class: DEFAULT_CLASS.into(),
        }
    }

    #[test]
    fn principal_point_and_unit_tangent() {
        let intr = CameraIntrinsics::default();
        assert_eq!(pixel_to_camera(&intr, intr.cx, intr.cy, 5.0).unwrap(), Vector3::new(0.0, 0.0, 5.0));
        let wide = CameraIntrinsics { width: 2000.0, ..intr };
        assert_eq!(
            pixel_to_camera(&wide, wide.cx + wide.fx, wide.cy, 5.0).unwrap(),
            Vector3::new(5.0, 0.0, 5.0)
        );
        assert!(matches!(
            pixel_to_camera(&intr, -1.0, 0.0, 5.0),
            Err(PerceptionError::PixelOutOfBounds { .. })
        ));
        assert_eq!(pixel_to_camera(&intr, 10.0, 10.0, 0.3), Err(PerceptionError::DepthOutOfRange(0.3)));
        assert!(pixel_to_camera(&intr, 10.0, 10.0, 40.0).is_ok());
    }

    fn forward_camera() -> CameraExtrinsics {
        CameraExtrinsics {
            translation: [0.5, 0.0, 0.0],
            ..CameraExtrinsics::default()
        }
    }

    #[test]
    fn aligned_frames() {
        let intr = CameraIntrinsics::default();
        let det = det_at(intr.cx, intr.cy, 10.0);
        let east = georeference_enu(&det, &intr, &forward_camera(), &Pose::at(EnuPoint::origin(), 0.0)).unwrap();
        assert!((east.east - 10.5).abs() < 1e-12 && east.north.abs() < 1e-12);
        let north = georeference_enu(&det, &intr, &forward_camera(), &Pose::at(EnuPoint::origin(), FRAC_PI_2)).unwrap();
        assert!((north.north - 10.5).abs() < 1e-12 && north.east.abs() < 1e-12);
        let g = georeference(&det, &intr, &forward_camera(), &Pose::at(EnuPoint::origin(), 0.0), ORIGIN).unwrap();
        let back = geo_to_enu(ORIGIN, g).unwrap();
        assert!(back.distance(&east) < 1e-6);
    }

    /// Elementary rotations written out by hand.
    fn rz(a: f64) -> Matrix3<f64> {
        Matrix3::new(a.cos(), -a.sin(), 0.0, a.sin(), a.cos(), 0.0, 0.0, 0.0, 1.0)
    }
    fn ry(a: f64) -> Matrix3<f64> {
        Matrix3::new(a.cos(), 0.0, a.sin(), 0.0, 1.0, 0.0, -a.sin(), 0.0, a.cos())
    }
    fn rx(a: f64) -> Matrix3<f64> {
        Matrix3::new(1.0, 0.0, 0.0, 0.0, a.cos(), -a.sin(), 0.0, a.sin(), a.cos())
    }
    fn homogeneous(r: Matrix3<f64>, t: Vector3<f64>) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        m
    }

    fn oracle(det: &Detection, intr: &CameraIntrinsics, extr: &CameraExtrinsics, pose: &Pose) -> (f64, f64) {
        let (u, v) = det.center();
        let z = det.depth_m;
        let p_cam = Vector4::new((u - intr.cx) * z / intr.fx, (v - intr.cy) * z / intr.fy, z, 1.0);
        let axes = Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
        let t_mount = homogeneous(rz(extr.yaw) * ry(extr.pitch) * rx(extr.roll) * axes, Vector3::from(extr.translation));
        let t_pose = homogeneous(
            rz(pose.heading) * ry(pose.pitch) * rx(pose.roll),
            Vector3::new(pose.position.east, pose.position.north, 0.0),
        );
        let w = t_pose * t_mount * p_cam;
        (w.x, w.y)
    }

    fn angle(lim: f64) -> impl Strategy<Value = f64> {
        -lim..lim
    }

    proptest! {
        #[test]
        fn matches_homogeneous_oracle(
            u in 0.0..1280.0f64, v in 0.0..720.0f64, depth in 0.5..40.0f64,
            e in -500.0..500.0f64, n in -500.0..500.0f64,
            yaw in angle(PI), pitch in angle(0.3), roll in angle(0.3),
            myaw in angle(PI), mpitch in angle(0.5), mroll in angle(0.5),
            tx in -2.0..2.0f64, ty in -2.0..2.0f64, tz in -2.0..2.0f64,
        ) {
            let intr = CameraIntrinsics::default();
            let det = Detection {
                bbox: [(u - 3.0).max(0.0), (v - 3.0).max(0.0), (u + 3.0).min(1280.0), (v + 3.0).min(720.0)],
                confidence: 0.5,
                depth_m: depth,
                class: DEFAULT_CLASS.into(),
            };
            let extr = CameraExtrinsics { translation: [tx, ty, tz], yaw: myaw, pitch: mpitch, roll: mroll };
            let pose = Pose { pitch, roll, ..Pose::at(EnuPoint { east: e, north: n }, yaw) };
            let got = georeference_enu(&det, &intr, &extr, &pose).unwrap();
            let (oe, on) = oracle(&det, &intr, &extr, &pose);
            prop_assert!((got.east - oe).abs() < 1e-6 && (got.north - on).abs() < 1e-6);
        }

        #[test]
        fn confidence_does_not_move_the_point(c1 in 0.0..=1.0f64, c2 in 0.0..=1.0f64, u in 10.0..1270.0f64, d in 1.0..40.0f64) {
            let intr = CameraIntrinsics::default();
            let pose = Pose::at(EnuPoint { east: 3.0, north: -7.0 }, 0.7);
            let mut a = Detection { bbox: [u - 5.0, 300.0, u + 5.0, 320.0], confidence: c1, depth_m: d, class: "x".into() };
            let p1 = georeference(&a, &intr, &CameraExtrinsics::default(), &pose, ORIGIN).unwrap();
            a.confidence = c2;
            let p2 = georeference(&a, &intr, &CameraExtrinsics::default(), &pose, ORIGIN).unwrap();
            prop_assert_eq!(p1, p2);
        }

        #[test]
        fn reprojection_round_trip(u in 0.0..1280.0f64, v in 0.0..720.0f64, d in 0.31..40.0f64) {
            let intr = CameraIntrinsics::default();
            let p = pixel_to_camera(&intr, u, v, d).unwrap();
            let (u2, v2) = intr.project(&p).unwrap();
            prop_assert!((u2 - u).abs() < 1e-9 && (v2 - v).abs() < 1e-9);
        }

        #[test]
        fn detections_satisfy_invariants(
            seed in any::<u64>(), heading in angle(PI), pitch in angle(0.2), roll in angle(0.2),
            pts in prop::collection::vec((-40.0..40.0f64, -40.0..40.0f64), 0..30),
        ) {
            let cfg = PerceptionConfig::default();
            let debris: Vec<EnuPoint> = pts.into_iter().map(|(east, north)| EnuPoint { east, north }).collect();
            let pose = Pose { pitch, roll, ..Pose::at(EnuPoint::origin(), heading) };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for d in synthetic_detector(&debris, None, &pose, &cfg, &mut rng) {
                prop_assert!(d.validate(&cfg.intrinsics).is_ok(), "{:?}", d);
            }
        }
    }

    #[test]
    fn detector_ahead_and_behind() {
        let cfg = PerceptionConfig::default();
        let pose = Pose::at(EnuPoint::origin(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ahead = synthetic_detector(&[EnuPoint { east: 10.5, north: 0.0 }], None, &pose, &cfg, &mut rng);
        assert_eq!(ahead.len(), 1);
        let (u, v) = ahead[0].center();
        // the camera is 0.4 m above the water, so the target sits a little
        // below the principal point
        assert!((u - cfg.intrinsics.cx).abs() < 10.0);
        assert!((v - (cfg.intrinsics.cy + 700.0 * 0.4 / 10.0)).abs() < 10.0);
        let behind = synthetic_detector(&[EnuPoint { east: -10.0, north: 0.0 }], None, &pose, &cfg, &mut rng);
        assert!(behind.is_empty());
        let far = synthetic_detector(&[EnuPoint { east: 30.0, north: 0.0 }], None, &pose, &cfg, &mut rng);
        assert!(far.is_empty());
    }

    #[test]
    fn land_occludes() {
        let grid = OccupancyGrid::from_ascii(EnuPoint { east: -5.0, north: -10.0 }, 5.0, &["......", "...#..", "......", "......"]).unwrap();
        let cfg = PerceptionConfig::default();
        let pose = Pose::at(EnuPoint::origin(), FRAC_PI_2 / 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // the sight line crosses the land cell spanning east 10..15, north 0..5
        let hidden = EnuPoint { east: 18.0, north: 3.5 };
        assert_eq!(synthetic_detector(&[hidden], None, &pose, &cfg, &mut rng).len(), 1);
        assert!(synthetic_detector(&[hidden], Some(&grid), &pose, &cfg, &mut rng).is_empty());
    }

    #[test]
    fn recovers_debris_position() {
        let cfg = PerceptionConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut hits = 0;
        let trials = 400;
        for _ in 0..trials {
            let heading = rng.random_range(-PI..PI);
            let pose = Pose::at(EnuPoint::origin(), heading);
            let r = rng.random_range(2.0..15.0);
            let off = rng.random_range(-0.6..0.6);
            let target = EnuPoint {
                east: r * (heading + off).cos(),
                north: r * (heading + off).sin(),
            };
            let dets = synthetic_detector(&[target], None, &pose, &cfg, &mut rng);
            let Some(d) = dets.first() else { continue };
            let p = georeference_enu(d, &cfg.intrinsics, &cfg.extrinsics, &pose).unwrap();
            if p.distance(&target) <= 0.5 {
                hits += 1;
            }
        }
        assert!(hits as f64 >= 0.95 * trials as f64, "{hits}/{trials}");
    }
}
