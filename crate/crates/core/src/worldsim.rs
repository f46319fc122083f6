//! Synthetic lake: navigability raster, smooth ground-truth fields and noisy
//! sensor reads standing in for the water-quality probe and the echosounder.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frames::{EnuPoint, Pose};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("invalid world configuration: {0}")]
    ConfigError(String),
    #[error("position ({east:.2}, {north:.2}) is not in navigable water")]
    OutOfWater { east: f64, north: f64 },
    #[error("no {0} field in this world")]
    MissingField(Parameter),
}

/// Sensed quantities. `Depth` comes from the sonar, the rest from the
/// water-quality probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parameter {
    Depth,
    Ph,
    Temperature,
    Conductivity,
    Turbidity,
}

impl Parameter {
    pub const ALL: [Parameter; 5] = [
        Parameter::Depth,
        Parameter::Ph,
        Parameter::Temperature,
        Parameter::Conductivity,
        Parameter::Turbidity,
    ];

    /// The probe's default channel set, in probe order.
    pub const WQP: [Parameter; 4] = [
        Parameter::Ph,
        Parameter::Conductivity,
        Parameter::Temperature,
        Parameter::Turbidity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Parameter::Depth => "depth",
            Parameter::Ph => "ph",
            Parameter::Temperature => "temperature",
            Parameter::Conductivity => "conductivity",
            Parameter::Turbidity => "turbidity",
        }
    }

    pub fn units(self) -> &'static str {
        match self {
            Parameter::Depth => "m",
            Parameter::Ph => "pH",
            Parameter::Temperature => "degC",
            Parameter::Conductivity => "mS/cm",
            Parameter::Turbidity => "NTU",
        }
    }

    fn stream(self) -> u64 {
        self as u64 + 1
    }
}

impl fmt::Display for Parameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Parameter {
    type Err = WorldError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Parameter::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| WorldError::ConfigError(format!("unknown parameter '{s}'")))
    }
}

/// Raster layout shared by occupancy grids and scalar fields. Row 0 is the
/// southernmost row; `origin` is the lower-left corner of cell (0, 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RasterGeometry {
    pub origin: EnuPoint,
    pub cell_size: f64,
    pub width: usize,
    pub height: usize,
}

impl RasterGeometry {
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    pub fn row_col(&self, index: usize) -> (usize, usize) {
        (index / self.width, index % self.width)
    }

    pub fn center(&self, row: usize, col: usize) -> EnuPoint {
        EnuPoint {
            east: self.origin.east + (col as f64 + 0.5) * self.cell_size,
            north: self.origin.north + (row as f64 + 0.5) * self.cell_size,
        }
    }

    pub fn cell_of(&self, p: &EnuPoint) -> Option<(usize, usize)> {
        let c = ((p.east - self.origin.east) / self.cell_size).floor();
        let r = ((p.north - self.origin.north) / self.cell_size).floor();
        if c < 0.0 || r < 0.0 || !c.is_finite() || !r.is_finite() {
            return None;
        }
        let (r, c) = (r as usize, c as usize);
        (r < self.height && c < self.width).then_some((r, c))
    }

    pub fn extent_east(&self) -> f64 {
        self.width as f64 * self.cell_size
    }

    pub fn extent_north(&self) -> f64 {
        self.height as f64 * self.cell_size
    }

    fn validate(&self) -> Result<(), WorldError> {
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return Err(WorldError::ConfigError("cell_size must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(WorldError::ConfigError("raster must have at least one cell".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyGrid {
    pub geometry: RasterGeometry,
    /// Row-major, `true` = navigable water.
    pub cells: Vec<bool>,
}

impl OccupancyGrid {
    pub fn new(geometry: RasterGeometry, cells: Vec<bool>) -> Result<Self, WorldError> {
        geometry.validate()?;
        if cells.len() != geometry.len() {
            return Err(WorldError::ConfigError(format!(
                "expected {} cells, got {}",
                geometry.len(),
                cells.len()
            )));
        }
        if !cells.iter().any(|&c| c) {
            return Err(WorldError::ConfigError("grid has no navigable cell".into()));
        }
        Ok(Self { geometry, cells })
    }

    /// Builds a grid from text rows, top row first; `.` is water, anything
    /// else is land.
    pub fn from_ascii(origin: EnuPoint, cell_size: f64, rows: &[&str]) -> Result<Self, WorldError> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        let mut cells = vec![false; width * height];
        for (i, line) in rows.iter().enumerate() {
            if line.len() != width {
                return Err(WorldError::ConfigError("ragged ascii grid".into()));
            }
            let row = height - 1 - i;
            for (col, ch) in line.chars().enumerate() {
                cells[row * width + col] = ch == '.';
            }
        }
        Self::new(
            RasterGeometry {
                origin,
                cell_size,
                width,
                height,
            },
            cells,
        )
    }

    pub fn width(&self) -> usize {
        self.geometry.width
    }

    pub fn height(&self) -> usize {
        self.geometry.height
    }

    pub fn cell_size(&self) -> f64 {
        self.geometry.cell_size
    }

    pub fn is_navigable(&self, row: usize, col: usize) -> bool {
        row < self.height() && col < self.width() && self.cells[self.geometry.index(row, col)]
    }

    pub fn navigable_at(&self, p: &EnuPoint) -> bool {
        self.geometry
            .cell_of(p)
            .is_some_and(|(r, c)| self.is_navigable(r, c))
    }

    pub fn center(&self, row: usize, col: usize) -> EnuPoint {
        self.geometry.center(row, col)
    }

    pub fn cell_of(&self, p: &EnuPoint) -> Option<(usize, usize)> {
        self.geometry.cell_of(p)
    }

    pub fn navigable_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn navigable_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &c)| c)
            .map(|(i, _)| self.geometry.row_col(i))
    }
}

/// Continuous map of one parameter on a raster. Non-navigable cells hold NaN
/// (written as NODATA on export).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    pub geometry: RasterGeometry,
    pub parameter: Parameter,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        if row >= self.geometry.height || col >= self.geometry.width {
            return None;
        }
        let v = self.values[self.geometry.index(row, col)];
        v.is_finite().then_some(v)
    }

    pub fn units(&self) -> &'static str {
        self.parameter.units()
    }

    pub fn finite_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().copied().filter(|v| v.is_finite())
    }
}

/// One timestamped, georeferenced sensor reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub time: f64,
    pub position: EnuPoint,
    pub parameter: Parameter,
    pub value: f64,
    pub noise_sd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Island {
    pub east: f64,
    pub north: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LakeShape {
    pub center: EnuPoint,
    pub semi_axis_east: f64,
    pub semi_axis_north: f64,
    /// Superellipse exponent; 2 is an ellipse, larger values are boxier.
    pub exponent: f64,
    /// Relative amplitude of the seeded shoreline wobble.
    pub roughness: f64,
    pub islands: Vec<Island>,
}

impl Default for LakeShape {
    fn default() -> Self {
        Self {
            center: EnuPoint::origin(),
            semi_axis_east: 300.0,
            semi_axis_north: 185.0,
            exponent: 3.0,
            roughness: 0.04,
            islands: vec![Island {
                east: 60.0,
                north: 10.0,
                radius: 28.0,
            }],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldRange {
    pub parameter: Parameter,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldSpec {
    pub geometry: RasterGeometry,
    pub lake: LakeShape,
    /// Correlation lengthscale of the generated fields, meters.
    pub lengthscale: f64,
    /// Expected number of bumps per disc of radius `lengthscale`.
    pub bump_density: f64,
    pub fields: Vec<FieldRange>,
    pub debris_count: usize,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            geometry: RasterGeometry {
                origin: EnuPoint {
                    east: -320.0,
                    north: -200.0,
                },
                cell_size: 5.0,
                width: 128,
                height: 80,
            },
            lake: LakeShape::default(),
            lengthscale: 80.0,
            bump_density: 3.0,
            fields: vec![
                FieldRange { parameter: Parameter::Depth, min: 0.5, max: 6.0 },
                FieldRange { parameter: Parameter::Ph, min: 7.4, max: 8.9 },
                FieldRange { parameter: Parameter::Temperature, min: 10.5, max: 13.5 },
                FieldRange { parameter: Parameter::Conductivity, min: 0.9, max: 1.6 },
                FieldRange { parameter: Parameter::Turbidity, min: 9.0, max: 45.0 },
            ],
            debris_count: 8,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<(), WorldError> {
        self.geometry.validate()?;
        if !(self.lengthscale > 0.0 && self.lengthscale.is_finite()) {
            return Err(WorldError::ConfigError("lengthscale must be positive".into()));
        }
        if !(self.bump_density > 0.0) {
            return Err(WorldError::ConfigError("bump_density must be positive".into()));
        }
        let lake = &self.lake;
        if !(lake.semi_axis_east > 0.0 && lake.semi_axis_north > 0.0 && lake.exponent > 0.0) {
            return Err(WorldError::ConfigError("lake axes and exponent must be positive".into()));
        }
        if !(0.0..1.0).contains(&lake.roughness) {
            return Err(WorldError::ConfigError("lake roughness must be in [0, 1)".into()));
        }
        for (i, f) in self.fields.iter().enumerate() {
            if !(f.min.is_finite() && f.max.is_finite() && f.min <= f.max) {
                return Err(WorldError::ConfigError(format!("bad range for {}", f.parameter)));
            }
            if f.parameter == Parameter::Depth && f.min < 0.0 {
                return Err(WorldError::ConfigError("depth range must be non-negative".into()));
            }
            if self.fields[..i].iter().any(|g| g.parameter == f.parameter) {
                return Err(WorldError::ConfigError(format!("duplicate field {}", f.parameter)));
            }
        }
        Ok(())
    }
}

/// Generated lake: navigability, ground-truth fields and floating debris.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub grid: OccupancyGrid,
    pub fields: Vec<ScalarField>,
    pub debris: Vec<EnuPoint>,
}

impl World {
    pub fn field(&self, parameter: Parameter) -> Result<&ScalarField, WorldError> {
        self.fields
            .iter()
            .find(|f| f.parameter == parameter)
            .ok_or(WorldError::MissingField(parameter))
    }
}

pub fn generate_world(seed: u64, spec: &WorldSpec) -> Result<World, WorldError> {
    spec.validate()?;
    let grid = generate_lake(seed, spec)?;
    let fields = spec
        .fields
        .iter()
        .map(|range| generate_field(seed, spec, &grid, range))
        .collect();
    let debris = scatter_debris(seed, spec, &grid);
    Ok(World {
        grid,
        fields,
        debris,
    })
}

fn generate_lake(seed: u64, spec: &WorldSpec) -> Result<OccupancyGrid, WorldError> {
    let geo = spec.geometry;
    let lake = &spec.lake;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    // shoreline wobble: a few low harmonics with seeded phases
    let harmonics: Vec<(f64, f64, f64)> = (2..=6)
        .map(|k| {
            let amp: f64 = rng.random_range(0.3..1.0) / k as f64;
            let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            (k as f64, amp, phase)
        })
        .collect();
    let norm: f64 = harmonics.iter().map(|h| h.1).sum();

    let mut cells = vec![false; geo.len()];
    for row in 0..geo.height {
        for col in 0..geo.width {
            let c = geo.center(row, col);
            let x = (c.east - lake.center.east) / lake.semi_axis_east;
            let y = (c.north - lake.center.north) / lake.semi_axis_north;
            let theta = y.atan2(x);
            let wobble: f64 = harmonics
                .iter()
                .map(|(k, a, ph)| a * (k * theta + ph).cos())
                .sum::<f64>()
                / norm;
            let radius = 1.0 + lake.roughness * wobble;
            let inside = x.abs().powf(lake.exponent) + y.abs().powf(lake.exponent)
                <= radius.powf(lake.exponent);
            let on_island = lake
                .islands
                .iter()
                .any(|i| (c.east - i.east).hypot(c.north - i.north) <= i.radius);
            cells[geo.index(row, col)] = inside && !on_island;
        }
    }
    OccupancyGrid::new(geo, cells)
}

/// Sum of isotropic Gaussian bumps with random centers and amplitudes. With
/// bump standard deviation l/sqrt(2) the expected covariance of the sum is
/// an RBF kernel with lengthscale l.
pub(crate) fn bump_sum(rng: &mut ChaCha8Rng, spec: &WorldSpec) -> impl Fn(&EnuPoint) -> f64 {
    let geo = spec.geometry;
    let l = spec.lengthscale;
    let margin = 3.0 * l;
    let w = geo.extent_east() + 2.0 * margin;
    let h = geo.extent_north() + 2.0 * margin;
    let count = ((spec.bump_density * w * h / (std::f64::consts::PI * l * l)).ceil() as usize).max(1);
    let bumps: Vec<(f64, f64, f64)> = (0..count)
        .map(|_| {
            let e = geo.origin.east - margin + rng.random::<f64>() * w;
            let n = geo.origin.north - margin + rng.random::<f64>() * h;
            let a: f64 = StandardNormal.sample(rng);
            (e, n, a)
        })
        .collect();
    let inv = 1.0 / (l * l);
    move |p: &EnuPoint| {
        bumps
            .iter()
            .map(|(e, n, a)| {
                let d2 = (p.east - e).powi(2) + (p.north - n).powi(2);
                a * (-d2 * inv).exp()
            })
            .sum()
    }
}

fn generate_field(seed: u64, spec: &WorldSpec, grid: &OccupancyGrid, range: &FieldRange) -> ScalarField {
    let geo = spec.geometry;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(range.parameter.stream());
    let f = bump_sum(&mut rng, spec);

    let mut raw = vec![f64::NAN; geo.len()];
    for (row, col) in grid.navigable_cells() {
        raw[geo.index(row, col)] = f(&geo.center(row, col));
    }
    let (lo, hi) = raw
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    let values = raw
        .into_iter()
        .map(|v| {
            if !v.is_finite() {
                f64::NAN
            } else if span > 0.0 {
                (range.min + (v - lo) / span * (range.max - range.min)).clamp(range.min, range.max)
            } else {
                0.5 * (range.min + range.max)
            }
        })
        .collect();
    ScalarField {
        geometry: geo,
        parameter: range.parameter,
        values,
    }
}

fn scatter_debris(seed: u64, spec: &WorldSpec, grid: &OccupancyGrid) -> Vec<EnuPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(100);
    let cells: Vec<(usize, usize)> = grid.navigable_cells().collect();
    (0..spec.debris_count)
        .map(|_| {
            let (r, c) = cells[rng.random_range(0..cells.len())];
            let center = grid.center(r, c);
            let half = 0.5 * grid.cell_size();
            EnuPoint {
                east: center.east + rng.random_range(-half..half),
                north: center.north + rng.random_range(-half..half),
            }
        })
        .collect()
}

/// Bilinear interpolation between the four cell centers around `p`. Missing
/// (NODATA) neighbours drop out and the remaining weights are renormalized;
/// the containing cell always carries at least a quarter of the weight.
pub fn sample_field(field: &ScalarField, p: &EnuPoint) -> Result<f64, WorldError> {
    let geo = field.geometry;
    let out = || WorldError::OutOfWater {
        east: p.east,
        north: p.north,
    };
    let (row, col) = geo.cell_of(p).ok_or_else(out)?;
    field.get(row, col).ok_or_else(out)?;

    let fx = (p.east - geo.origin.east) / geo.cell_size - 0.5;
    let fy = (p.north - geo.origin.north) / geo.cell_size - 0.5;
    let c0 = fx.floor();
    let r0 = fy.floor();
    let tx = fx - c0;
    let ty = fy - r0;
    let mut acc = 0.0;
    let mut weight = 0.0;
    for (dr, wy) in [(0i64, 1.0 - ty), (1, ty)] {
        for (dc, wx) in [(0i64, 1.0 - tx), (1, tx)] {
            let w = wx * wy;
            if w == 0.0 {
                continue;
            }
            let r = (r0 as i64 + dr).clamp(0, geo.height as i64 - 1) as usize;
            let c = (c0 as i64 + dc).clamp(0, geo.width as i64 - 1) as usize;
            if let Some(v) = field.get(r, c) {
                acc += w * v;
                weight += w;
            }
        }
    }
    if weight > 0.0 {
        Ok(acc / weight)
    } else {
        Err(out())
    }
}

/// Per-channel noise model for the simulated instruments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorConfig {
    pub wqp_parameters: Vec<Parameter>,
    pub noise_sd_depth: f64,
    pub noise_sd_ph: f64,
    pub noise_sd_temperature: f64,
    pub noise_sd_conductivity: f64,
    pub noise_sd_turbidity: f64,
    pub sonar_min_m: f64,
    pub sonar_max_m: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            wqp_parameters: Parameter::WQP.to_vec(),
            noise_sd_depth: 0.05,
            noise_sd_ph: 0.05,
            noise_sd_temperature: 0.1,
            noise_sd_conductivity: 0.02,
            noise_sd_turbidity: 0.5,
            sonar_min_m: 0.3,
            sonar_max_m: 100.0,
        }
    }
}

impl SensorConfig {
    pub fn noise_sd(&self, parameter: Parameter) -> f64 {
        match parameter {
            Parameter::Depth => self.noise_sd_depth,
            Parameter::Ph => self.noise_sd_ph,
            Parameter::Temperature => self.noise_sd_temperature,
            Parameter::Conductivity => self.noise_sd_conductivity,
            Parameter::Turbidity => self.noise_sd_turbidity,
        }
    }
}

fn noisy<R: Rng + ?Sized>(truth: f64, sd: f64, rng: &mut R) -> f64 {
    if sd > 0.0 {
        truth + Normal::new(0.0, sd).expect("finite sd").sample(rng)
    } else {
        truth
    }
}

/// Reads every configured probe channel at the vehicle position.
pub fn read_wqp<R: Rng + ?Sized>(
    pose: &Pose,
    time: f64,
    world: &World,
    sensors: &SensorConfig,
    rng: &mut R,
) -> Result<Vec<Sample>, WorldError> {
    sensors
        .wqp_parameters
        .iter()
        .map(|&parameter| {
            let truth = sample_field(world.field(parameter)?, &pose.position)?;
            let sd = sensors.noise_sd(parameter);
            Ok(Sample {
                time,
                position: pose.position,
                parameter,
                value: noisy(truth, sd, rng),
                noise_sd: sd,
            })
        })
        .collect()
}

pub fn read_sonar<R: Rng + ?Sized>(
    pose: &Pose,
    time: f64,
    depth: &ScalarField,
    sensors: &SensorConfig,
    rng: &mut R,
) -> Result<Sample, WorldError> {
    let truth = sample_field(depth, &pose.position)?;
    let sd = sensors.noise_sd(Parameter::Depth);
    let value = noisy(truth, sd, rng).clamp(sensors.sonar_min_m, sensors.sonar_max_m);
    Ok(Sample {
        time,
        position: pose.position,
        parameter: Parameter::Depth,
        value,
        noise_sd: sd,
    })
}
