//! Gaussian-process maps of bathymetry and water-quality parameters.
//!
//! One zero-mean GP with a squared-exponential (RBF) kernel is fitted per
//! parameter. Observations are standardized before hyperparameter search;
//! the noise variance comes from the sensor model and is not optimized.
//! The lengthscale and signal variance maximize the log marginal likelihood
//! inside configured bounds.

mod compliance;
mod raster;

pub use compliance::{compliance, ComplianceEntry, ComplianceReport, EstimateSummary, Threshold, Thresholds};
pub use raster::{read_esri_ascii, write_esri_ascii, EsriGrid, RasterError, NODATA};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frames::EnuPoint;
use crate::worldsim::{OccupancyGrid, Parameter, ScalarField};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const GOLDEN: f64 = 0.618_033_988_749_894_9;
const DUPLICATE_JITTER: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpError {
    #[error("need at least 2 observations, got {0}")]
    InsufficientData(usize),
    #[error("inputs and observations differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("non-finite observation or input")]
    NonFinite,
    #[error("invalid fit options: {0}")]
    BadOptions(String),
    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,
}

/// Squared-exponential kernel `variance * exp(-|a-b|^2 / (2 lengthscale^2))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub variance: f64,
    pub lengthscale: f64,
}

impl Kernel {
    pub fn eval(&self, a: &EnuPoint, b: &EnuPoint) -> f64 {
        self.variance * (-a.distance_sq(b) / (2.0 * self.lengthscale * self.lengthscale)).exp()
    }
}

pub fn kernel_eval(k: &Kernel, a: &EnuPoint, b: &EnuPoint) -> f64 {
    k.eval(a, b)
}

/// Hyperparameter search settings for one parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// Observation noise variance in field units squared.
    pub noise_var: f64,
    pub lengthscale_min: f64,
    pub lengthscale_max: f64,
    pub lengthscale_init: f64,
    /// Bounds on the signal variance of the standardized observations.
    pub variance_min: f64,
    pub variance_max: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            noise_var: 1e-4,
            lengthscale_min: 55.0,
            lengthscale_max: 110.0,
            lengthscale_init: 80.0,
            variance_min: 1e-2,
            variance_max: 1e2,
        }
    }
}

impl FitOptions {
    pub fn with_noise_var(noise_var: f64) -> Self {
        Self {
            noise_var,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), GpError> {
        let bad = |m: &str| Err(GpError::BadOptions(m.to_string()));
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
            return bad("noise_var must be finite and non-negative");
        }
        if !(self.lengthscale_min > 0.0 && self.lengthscale_min <= self.lengthscale_max) {
            return bad("lengthscale bounds must satisfy 0 < min <= max");
        }
        if !(self.variance_min > 0.0 && self.variance_min <= self.variance_max) {
            return bad("variance bounds must satisfy 0 < min <= max");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GpModel {
    pub kernel: Kernel,
    pub noise_var: f64,
    pub x: Vec<EnuPoint>,
    pub y: Vec<f64>,
    pub y_mean: f64,
    pub y_sd: f64,
    /// Lower Cholesky factor of K + (noise_var + jitter) I, field units.
    pub chol: DMatrix<f64>,
    pub alpha: DVector<f64>,
    /// Diagonal jitter added beyond `noise_var`, field units squared.
    pub jitter: f64,
    /// Log marginal likelihood of the standardized observations.
    pub log_likelihood: f64,
    pub warnings: Vec<String>,
}

fn squared_distances(x: &[EnuPoint]) -> DMatrix<f64> {
    let n = x.len();
    DMatrix::from_fn(n, n, |i, j| x[i].distance_sq(&x[j]))
}

/// For a fixed lengthscale the correlation matrix is diagonalized once;
/// the likelihood over signal variance is then O(n) per evaluation.
struct Profile {
    eigenvalues: Vec<f64>,
    projected_sq: Vec<f64>,
    noise: f64,
}

impl Profile {
    fn new(d2: &DMatrix<f64>, yn: &DVector<f64>, lengthscale: f64, noise: f64) -> Self {
        let inv = 1.0 / (2.0 * lengthscale * lengthscale);
        let r = d2.map(|d| (-d * inv).exp());
        let eig = SymmetricEigen::new(r);
        let z = eig.eigenvectors.transpose() * yn;
        Self {
            eigenvalues: eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect(),
            projected_sq: z.iter().map(|v| v * v).collect(),
            noise,
        }
    }

    fn log_likelihood(&self, variance: f64) -> f64 {
        let n = self.eigenvalues.len() as f64;
        let mut quad = 0.0;
        let mut logdet = 0.0;
        for (l, z2) in self.eigenvalues.iter().zip(&self.projected_sq) {
            let s = variance * l + self.noise;
            quad += z2 / s;
            logdet += s.ln();
        }
        -0.5 * quad - 0.5 * logdet - 0.5 * n * LN_2PI
    }
}

/// Maximizes a scalar function on `[lo, hi]`: a uniform probe grid to
/// bracket the best region, then golden-section refinement. Returns the
/// best point seen and its value.
fn maximize_1d(f: impl Fn(f64) -> f64, lo: f64, hi: f64, probes: usize, extra: Option<f64>, tol: f64) -> (f64, f64) {
    if hi - lo <= tol {
        let x = 0.5 * (lo + hi);
        return (x, f(x));
    }
    let step = (hi - lo) / (probes - 1) as f64;
    let mut grid: Vec<(f64, f64)> = (0..probes)
        .map(|i| {
            let x = if i + 1 == probes { hi } else { lo + step * i as f64 };
            (x, f(x))
        })
        .collect();
    let (bi, _) = grid
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .expect("probes");
    let mut a = grid[bi.saturating_sub(1)].0;
    let mut b = grid[(bi + 1).min(probes - 1)].0;
    let mut best = grid[bi];
    if let Some(x) = extra.filter(|x| (lo..=hi).contains(x)) {
        grid.push((x, f(x)));
        if grid.last().expect("pushed").1 > best.1 {
            best = *grid.last().expect("pushed");
        }
    }

    let mut c = b - GOLDEN * (b - a);
    let mut d = a + GOLDEN * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - GOLDEN * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + GOLDEN * (b - a);
            fd = f(d);
        }
    }
    for cand in [(c, fc), (d, fd)] {
        if cand.1 > best.1 {
            best = cand;
        }
    }
    best
}

fn cholesky_with_jitter(
    mut k: DMatrix<f64>,
    base_jitter: f64,
    scale: f64,
    warnings: &mut Vec<String>,
) -> Result<(Cholesky<f64, Dyn>, f64), GpError> {
    let mut added = base_jitter;
    for i in 0..k.nrows() {
        k[(i, i)] += added;
    }
    let mut extra = 1e-10 * scale.max(f64::MIN_POSITIVE);
    for _ in 0..8 {
        if let Some(ch) = Cholesky::new(k.clone()) {
            return Ok((ch, added));
        }
        for i in 0..k.nrows() {
            k[(i, i)] += extra;
        }
        added += extra;
        warnings.push(format!("covariance not positive definite, added jitter {added:e}"));
        extra *= 10.0;
    }
    Err(GpError::NotPositiveDefinite)
}

/// Fits kernel hyperparameters by maximum marginal likelihood and factorizes
/// the training covariance.
pub fn fit(x: &[EnuPoint], y: &[f64], opts: &FitOptions) -> Result<GpModel, GpError> {
    opts.validate()?;
    if x.len() != y.len() {
        return Err(GpError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 2 {
        return Err(GpError::InsufficientData(n));
    }
    if y.iter().any(|v| !v.is_finite()) || x.iter().any(|p| !p.east.is_finite() || !p.north.is_finite()) {
        return Err(GpError::NonFinite);
    }

    let y_mean = y.iter().sum::<f64>() / n as f64;
    let var = y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n as f64;
    let y_sd = if var.sqrt() > 1e-12 * y_mean.abs().max(1.0) {
        var.sqrt()
    } else {
        1.0
    };
    let yn = DVector::from_iterator(n, y.iter().map(|v| (v - y_mean) / y_sd));

    let mut warnings = Vec::new();
    let d2 = squared_distances(x);
    let duplicates = (0..n).any(|i| (0..i).any(|j| d2[(i, j)] == 0.0));
    let jitter_n = if duplicates {
        warnings.push(format!("duplicate inputs, added jitter {DUPLICATE_JITTER:e}"));
        DUPLICATE_JITTER
    } else {
        0.0
    };
    let noise_n = opts.noise_var / (y_sd * y_sd) + jitter_n;

    let (ln_vlo, ln_vhi) = (opts.variance_min.ln(), opts.variance_max.ln());
    let profile_best = |lengthscale: f64| -> (f64, f64) {
        let p = Profile::new(&d2, &yn, lengthscale, noise_n);
        maximize_1d(|lv| p.log_likelihood(lv.exp()), ln_vlo, ln_vhi, 21, None, 1e-7)
    };
    let (lengthscale, log_likelihood) = maximize_1d(
        |l| profile_best(l).1,
        opts.lengthscale_min,
        opts.lengthscale_max,
        12,
        Some(opts.lengthscale_init),
        1e-3,
    );
    let variance_n = profile_best(lengthscale).0.exp();

    let kernel = Kernel {
        variance: variance_n * y_sd * y_sd,
        lengthscale,
    };
    let k = kernel_matrix(&kernel, x, &d2);
    let (chol, jitter) = cholesky_with_jitter(k, opts.noise_var + jitter_n * y_sd * y_sd, kernel.variance, &mut warnings)?;
    let centered = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    let alpha = chol.solve(&centered);

    Ok(GpModel {
        kernel,
        noise_var: opts.noise_var,
        x: x.to_vec(),
        y: y.to_vec(),
        y_mean,
        y_sd,
        chol: chol.unpack(),
        alpha,
        jitter: jitter - opts.noise_var,
        log_likelihood,
        warnings,
    })
}

fn kernel_matrix(kernel: &Kernel, x: &[EnuPoint], d2: &DMatrix<f64>) -> DMatrix<f64> {
    let inv = 1.0 / (2.0 * kernel.lengthscale * kernel.lengthscale);
    let n = x.len();
    DMatrix::from_fn(n, n, |i, j| kernel.variance * (-d2[(i, j)] * inv).exp())
}

impl GpModel {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Posterior (mean, variance) at each point.
    pub fn predict(&self, points: &[EnuPoint]) -> Vec<(f64, f64)> {
        let n = self.x.len();
        let m = points.len();
        if m == 0 {
            return Vec::new();
        }
        let cross = DMatrix::from_fn(n, m, |i, j| self.kernel.eval(&self.x[i], &points[j]));
        let v = self
            .chol
            .solve_lower_triangular(&cross)
            .expect("Cholesky factor has a non-zero diagonal");
        (0..m)
            .map(|j| {
                let col = cross.column(j);
                let mean = self.y_mean + col.dot(&self.alpha);
                let reduction = v.column(j).norm_squared();
                (mean, (self.kernel.variance - reduction).max(0.0))
            })
            .collect()
    }

    /// Mean and standard-deviation maps over every navigable cell center.
    pub fn predict_grid(&self, grid: &OccupancyGrid, parameter: Parameter) -> (ScalarField, ScalarField) {
        let geo = grid.geometry;
        let cells: Vec<(usize, usize)> = grid.navigable_cells().collect();
        let points: Vec<EnuPoint> = cells.iter().map(|&(r, c)| geo.center(r, c)).collect();
        let mut mean = vec![f64::NAN; geo.len()];
        let mut sd = vec![f64::NAN; geo.len()];
        for chunk in cells.chunks(1024).zip(points.chunks(1024)) {
            for (&(r, c), (mu, var)) in chunk.0.iter().zip(self.predict(chunk.1)) {
                mean[geo.index(r, c)] = mu;
                sd[geo.index(r, c)] = var.sqrt();
            }
        }
        (
            ScalarField {
                geometry: geo,
                parameter,
                values: mean,
            },
            ScalarField {
                geometry: geo,
                parameter,
                values: sd,
            },
        )
    }
}

pub fn predict(model: &GpModel, points: &[EnuPoint]) -> Vec<(f64, f64)> {
    model.predict(points)
}

pub fn predict_grid(model: &GpModel, grid: &OccupancyGrid, parameter: Parameter) -> (ScalarField, ScalarField) {
    model.predict_grid(grid, parameter)
}
