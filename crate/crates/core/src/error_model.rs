//! Correlated Gaussian width errors.
//!
//! Error vectors are laid out segment-major: entry `i * m + a` is variable `a`
//! of segment `i`. With `D = H - delta` (all-ones minus identity) the three
//! covariance structures are
//!
//! ```text
//! segments:   sigma^2 * H^{ab} (delta_ij + rho D_ij)
//! waveguides: sigma^2 * H_ij (delta^{ab} + rho_bar D^{ab})
//! general:    sigma^2 * (delta_ij + rho D_ij) (delta^{ab} + rho_bar D^{ab})
//! ```
//!
//! The general form expands to the four Kronecker terms
//! `dd + rho_bar d D + rho D d + rho rho_bar D D`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ErrorModelError {
    #[error("{name} = {value} is outside [0, 1]")]
    CorrelationOutOfRange { name: &'static str, value: f64 },
    #[error("sigma must be finite and non-negative, got {0}")]
    InvalidSigma(f64),
    #[error("need at least one segment and one variable per segment (n = {n}, m = {m})")]
    EmptyLayout { n: usize, m: usize },
    #[error("covariance has eigenvalue {eigenvalue:e} below the tolerance {tolerance:e}")]
    NotPositiveSemidefinite { eigenvalue: f64, tolerance: f64 },
    #[error("covariance is not symmetric (asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("malformed covariance csv: {0}")]
    Csv(String),
}

/// Which covariance structure to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceMode {
    /// Partial correlation between segments, full correlation inside a segment.
    Segments,
    /// Full correlation between segments, partial correlation between the two waveguides.
    Waveguides,
    /// Both correlations partial.
    General,
}

impl CovarianceMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            CovarianceMode::Segments => "segments",
            CovarianceMode::Waveguides => "waveguides",
            CovarianceMode::General => "general",
        }
    }

    /// Effective `(rho, rho_bar)` once the mode's fixed correlations are applied.
    pub fn effective_correlations(&self, spec: &CorrelationSpec) -> (f64, f64) {
        match self {
            CovarianceMode::Segments => (spec.rho, 1.0),
            CovarianceMode::Waveguides => (1.0, spec.rho_bar),
            CovarianceMode::General => (spec.rho, spec.rho_bar),
        }
    }
}

impl std::fmt::Display for CovarianceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Parameters of a covariance matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSpec {
    /// Width standard deviation, um.
    pub sigma: f64,
    /// Segment-to-segment correlation.
    pub rho: f64,
    /// Waveguide-to-waveguide correlation inside a segment.
    pub rho_bar: f64,
    pub n: usize,
    pub m: usize,
}

impl CorrelationSpec {
    pub fn new(sigma: f64, rho: f64, rho_bar: f64, n: usize) -> Self {
        CorrelationSpec { sigma, rho, rho_bar, n, m: 2 }
    }

    pub fn validate(&self) -> Result<(), ErrorModelError> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(ErrorModelError::InvalidSigma(self.sigma));
        }
        for (name, value) in [("rho", self.rho), ("rho_bar", self.rho_bar)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(ErrorModelError::CorrelationOutOfRange { name, value });
            }
        }
        if self.n == 0 || self.m == 0 {
            return Err(ErrorModelError::EmptyLayout { n: self.n, m: self.m });
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.n * self.m
    }
}

/// Symmetric `(n m) x (n m)` covariance in um^2.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    n: usize,
    m: usize,
    sigma: f64,
    data: DMatrix<f64>,
}

fn delta(i: usize, j: usize) -> f64 {
    if i == j {
        1.0
    } else {
        0.0
    }
}

/// Builds the covariance for `spec` under `mode`.
pub fn build_covariance(spec: &CorrelationSpec, mode: CovarianceMode) -> Result<CovarianceMatrix, ErrorModelError> {
    spec.validate()?;
    let (rho, rho_bar) = mode.effective_correlations(spec);
    let (n, m) = (spec.n, spec.m);
    let s2 = spec.sigma * spec.sigma;
    // (delta + rho D) = rho + (1 - rho) delta, likewise inside a segment.
    let data = DMatrix::from_fn(n * m, n * m, |r, c| {
        let (i, a) = (r / m, r % m);
        let (j, b) = (c / m, c % m);
        let between = rho + (1.0 - rho) * delta(i, j);
        let within = rho_bar + (1.0 - rho_bar) * delta(a, b);
        s2 * between * within
    });
    Ok(CovarianceMatrix { n, m, sigma: spec.sigma, data })
}

impl CovarianceMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.n * self.m
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[(row, col)]
    }

    /// Layout descriptor written into exported files.
    pub fn layout(&self) -> String {
        format!("segment_major;n={};m={}", self.n, self.m)
    }

    /// CSV dump: a `#layout=...` comment, a header row, then one row per index.
    pub fn to_csv(&self) -> String {
        let dim = self.dim();
        let mut out = String::new();
        let _ = writeln!(out, "#layout={};sigma_um={}", self.layout(), self.sigma);
        let header: Vec<String> = (0..dim).map(|k| format!("s{}v{}", k / self.m, k % self.m)).collect();
        let _ = writeln!(out, "index,{}", header.join(","));
        for (r, name) in header.iter().enumerate() {
            let row: Vec<String> = (0..dim).map(|c| format!("{:e}", self.data[(r, c)])).collect();
            let _ = writeln!(out, "{name},{}", row.join(","));
        }
        out
    }

    /// Parses the output of [`CovarianceMatrix::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self, ErrorModelError> {
        let bad = |msg: &str| ErrorModelError::Csv(msg.to_string());
        let mut lines = text.lines();
        let meta = lines.next().ok_or_else(|| bad("empty input"))?;
        let meta = meta.strip_prefix("#layout=").ok_or_else(|| bad("missing #layout line"))?;
        let mut n = None;
        let mut m = None;
        let mut sigma = None;
        for part in meta.split(';') {
            if let Some(v) = part.strip_prefix("n=") {
                n = v.parse::<usize>().ok();
            } else if let Some(v) = part.strip_prefix("m=") {
                m = v.parse::<usize>().ok();
            } else if let Some(v) = part.strip_prefix("sigma_um=") {
                sigma = v.parse::<f64>().ok();
            }
        }
        let (n, m, sigma) = match (n, m, sigma) {
            (Some(n), Some(m), Some(s)) if n > 0 && m > 0 => (n, m, s),
            _ => return Err(bad("layout line lacks n, m or sigma_um")),
        };
        let dim = n.checked_mul(m).filter(|d| *d <= 4096).ok_or_else(|| bad("layout too large"))?;
        let header = lines.next().ok_or_else(|| bad("missing header"))?;
        if header.split(',').count() != dim + 1 {
            return Err(bad("header width does not match layout"));
        }
        let mut data = DMatrix::zeros(dim, dim);
        for r in 0..dim {
            let line = lines.next().ok_or_else(|| bad("too few rows"))?;
            let mut fields = line.split(',');
            fields.next();
            for c in 0..dim {
                let v = fields
                    .next()
                    .and_then(|f| f.trim().parse::<f64>().ok())
                    .ok_or_else(|| ErrorModelError::Csv(format!("bad value at row {r}, column {c}")))?;
                data[(r, c)] = v;
            }
            if fields.next().is_some() {
                return Err(ErrorModelError::Csv(format!("row {r} has extra fields")));
            }
        }
        let asym = (&data - data.transpose()).abs().max();
        if !(asym <= 1e-14 * data.abs().max().max(f64::MIN_POSITIVE)) {
            return Err(ErrorModelError::NotSymmetric(asym));
        }
        Ok(CovarianceMatrix { n, m, sigma, data })
    }
}

/// Factor `L` with `L L^T = cov`.
///
/// `L` is the symmetric square root `V sqrt(max(lambda, 0)) V^T`, which is
/// well defined on the singular fully-correlated boundary and varies
/// continuously with the correlations.
#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    n: usize,
    m: usize,
    l: DMatrix<f64>,
}

pub fn psd_factor(cov: &CovarianceMatrix) -> Result<Factor, ErrorModelError> {
    let dim = cov.dim();
    let scale = cov.data.diagonal().iter().cloned().fold(0.0, f64::max);
    if scale == 0.0 {
        return Ok(Factor { n: cov.n, m: cov.m, l: DMatrix::zeros(dim, dim) });
    }
    let eig = SymmetricEigen::new(cov.data.clone());
    let tolerance = 1e-10 * scale;
    // eigenvalues at rounding level belong to the null space of a singular covariance
    let lambda_max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let floor = 64.0 * f64::EPSILON * lambda_max;
    let mut roots = eig.eigenvalues.clone();
    for lambda in roots.iter_mut() {
        if *lambda < -tolerance {
            return Err(ErrorModelError::NotPositiveSemidefinite { eigenvalue: *lambda, tolerance });
        }
        *lambda = if *lambda > floor { lambda.sqrt() } else { 0.0 };
    }
    let v = &eig.eigenvectors;
    let l = v * DMatrix::from_diagonal(&roots) * v.transpose();
    Ok(Factor { n: cov.n, m: cov.m, l })
}

impl Factor {
    pub fn dim(&self) -> usize {
        self.n * self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// `out = L g`.
    pub fn apply(&self, g: &[f64], out: &mut [f64]) {
        let dim = self.dim();
        debug_assert_eq!(g.len(), dim);
        debug_assert_eq!(out.len(), dim);
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (c, gc) in g.iter().enumerate() {
                acc += self.l[(r, c)] * gc;
            }
            *o = acc;
        }
    }

    /// Numerical rank with a relative tolerance.
    pub fn rank(&self, rel_tol: f64) -> usize {
        self.l.clone().svd(false, false).rank(rel_tol * self.l.abs().max().max(f64::MIN_POSITIVE))
    }
}

/// Standard normals addressed by `(seed, index)`.
///
/// Each index owns its own ChaCha8 stream, so a draw never depends on how
/// many other indices were generated before it or on which thread.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NormalStream {
    seed: u64,
}

impl NormalStream {
    pub fn new(seed: u64) -> Self {
        NormalStream { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Fills `out` with the standard normals of sample `index`.
    pub fn fill(&self, index: u64, out: &mut [f64]) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        for o in out.iter_mut() {
            *o = StandardNormal.sample(&mut rng);
        }
    }
}

/// `count` error vectors starting at sample index `start`.
pub fn sample_errors_range(factor: &Factor, start: u64, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let stream = NormalStream::new(seed);
    let dim = factor.dim();
    let mut g = vec![0.0; dim];
    (0..count as u64)
        .map(|k| {
            stream.fill(start + k, &mut g);
            let mut e = vec![0.0; dim];
            factor.apply(&g, &mut e);
            e
        })
        .collect()
}

/// `count` error vectors (um) for sample indices `0..count`.
pub fn sample_errors(factor: &Factor, count: usize, seed: u64) -> Vec<Vec<f64>> {
    sample_errors_range(factor, 0, count, seed)
}
