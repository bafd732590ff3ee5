use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ThresholdError;
use crate::coupler::{CompositeSolution, CouplerPhysics};
use crate::error_model::{CorrelationSpec, CovarianceMode};
use crate::mc::{paired_samples, Executor, FidelityStats};

/// Number of contiguous sample blocks used for replicate regressions.
pub const COEFFICIENT_BATCHES: usize = 32;

/// Upper 97.5% point of Student's t with `COEFFICIENT_BATCHES - 1` degrees of freedom.
pub(crate) const T_975_BATCHES: f64 = 2.039_513_446;

/// Residuals larger than this many point standard errors flag the fit.
pub const RESIDUAL_FLAG: f64 = 10.0;

/// Correlation and width grids for a coefficient estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientGrid {
    /// Width standard deviations, um.
    pub sigma: Vec<f64>,
    /// Values of the swept correlation. In general mode this grid is used
    /// for both correlations.
    pub rho: Vec<f64>,
    /// Largest sigma for which the second-order expansion is trusted, um.
    pub max_sigma: f64,
}

impl Default for CoefficientGrid {
    fn default() -> Self {
        CoefficientGrid {
            sigma: vec![0.002, 0.004, 0.00667, 0.008],
            rho: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            max_sigma: 0.01,
        }
    }
}

impl CoefficientGrid {
    fn validate(&self) -> Result<(), ThresholdError> {
        let max = self.sigma.iter().cloned().fold(0.0, f64::max);
        if max > self.max_sigma {
            return Err(ThresholdError::SigmaTooLarge(self.sigma.clone(), self.max_sigma));
        }
        if let Some(&bad) = self.sigma.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(ThresholdError::SigmaTooLarge(vec![bad], self.max_sigma));
        }
        if let Some(&bad) = self.rho.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(ThresholdError::OutOfRange(bad));
        }
        for (what, values) in [("sigma", &self.sigma), ("rho", &self.rho)] {
            let got = distinct(values);
            if got < 3 {
                return Err(ThresholdError::GridTooSmall { what, need: 3, got });
            }
        }
        Ok(())
    }
}

fn distinct(values: &[f64]) -> usize {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

/// Second-order coefficients of the mean-fidelity expansion
/// `E[F] - F0 = sigma^2 (b + c rho_bar + d rho + e rho rho_bar)`.
///
/// In segments mode (`rho_bar = 1`) only `b_cp` (constant) and `c_cp` (slope
/// in `rho`) are estimated; in waveguides mode (`rho = 1`) `c_cp` is the slope
/// in `rho_bar`. The single-segment arm has the constant `b_phy` and the
/// `rho_bar` slope `c_phy` (zero in segments mode).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesCoefficients {
    pub mode: CovarianceMode,
    pub b_phy: f64,
    pub c_phy: f64,
    pub b_cp: f64,
    pub c_cp: f64,
    pub d_cp: f64,
    pub e_cp: f64,
    /// Nominal fidelities the expansion is taken around.
    pub f0_cp: f64,
    pub f0_phy: f64,
    /// Covariance of `[b_phy, c_phy, b_cp, c_cp, d_cp, e_cp]`.
    pub covariance: [[f64; 6]; 6],
    /// Largest fit residual in units of the point standard error.
    pub fit_residual: f64,
    pub flagged: bool,
    pub sigma_grid: Vec<f64>,
    pub rho_grid: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
    /// Paired Monte Carlo statistics of every grid point.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub points: Vec<GridPoint>,
}

/// Both arms' statistics at one grid point of a coefficient estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub sigma: f64,
    pub rho: f64,
    pub rho_bar: f64,
    pub cp: FidelityStats,
    pub phy: FidelityStats,
}

impl SeriesCoefficients {
    /// Coefficients with no sampling uncertainty, e.g. from an analytic model.
    pub fn exact(mode: CovarianceMode, b_phy: f64, c_phy: f64, b_cp: f64, c_cp: f64) -> Self {
        SeriesCoefficients {
            mode,
            b_phy,
            c_phy,
            b_cp,
            c_cp,
            d_cp: 0.0,
            e_cp: 0.0,
            f0_cp: 1.0,
            f0_phy: 1.0,
            covariance: [[0.0; 6]; 6],
            fit_residual: 0.0,
            flagged: false,
            sigma_grid: Vec::new(),
            rho_grid: Vec::new(),
            samples: 0,
            seed: 0,
            points: Vec::new(),
        }
    }

    pub fn values(&self) -> [f64; 6] {
        [self.b_phy, self.c_phy, self.b_cp, self.c_cp, self.d_cp, self.e_cp]
    }

    pub fn stderr(&self) -> [f64; 6] {
        std::array::from_fn(|k| self.covariance[k][k].max(0.0).sqrt())
    }

    /// Predicted `E[F_cp] - E[F_phy]` including the nominal offset.
    pub fn predicted_diff(&self, sigma: f64, rho: f64, rho_bar: f64) -> f64 {
        let s2 = sigma * sigma;
        let (cp, phy) = match self.mode {
            CovarianceMode::Segments => (self.b_cp + self.c_cp * rho, self.b_phy),
            CovarianceMode::Waveguides => (self.b_cp + self.c_cp * rho_bar, self.b_phy + self.c_phy * rho_bar),
            CovarianceMode::General => (
                self.b_cp + self.c_cp * rho_bar + self.d_cp * rho + self.e_cp * rho * rho_bar,
                self.b_phy + self.c_phy * rho_bar,
            ),
        };
        self.f0_cp - self.f0_phy + s2 * (cp - phy)
    }
}

struct Point {
    sigma: f64,
    rho: f64,
    rho_bar: f64,
}

fn grid_points(mode: CovarianceMode, grid: &CoefficientGrid) -> Vec<Point> {
    let mut out = Vec::new();
    for &sigma in &grid.sigma {
        match mode {
            CovarianceMode::Segments => out.extend(grid.rho.iter().map(|&rho| Point { sigma, rho, rho_bar: 1.0 })),
            CovarianceMode::Waveguides => {
                out.extend(grid.rho.iter().map(|&rho_bar| Point { sigma, rho: 1.0, rho_bar }))
            }
            CovarianceMode::General => {
                for &rho in &grid.rho {
                    out.extend(grid.rho.iter().map(|&rho_bar| Point { sigma, rho, rho_bar }));
                }
            }
        }
    }
    out
}

/// Design rows for the composite and single-segment arms, in units where the
/// response is `(mean - F0) / sigma^2`.
fn design(mode: CovarianceMode, p: &Point) -> (Vec<f64>, Vec<f64>) {
    match mode {
        CovarianceMode::Segments => (vec![1.0, p.rho], vec![1.0]),
        CovarianceMode::Waveguides => (vec![1.0, p.rho_bar], vec![1.0, p.rho_bar]),
        CovarianceMode::General => (vec![1.0, p.rho_bar, p.rho, p.rho * p.rho_bar], vec![1.0, p.rho_bar]),
    }
}

fn lstsq(rows: &[Vec<f64>], y: &[f64]) -> Option<(DVector<f64>, Vec<f64>)> {
    let a = DMatrix::from_fn(rows.len(), rows[0].len(), |r, c| rows[r][c]);
    let b = DVector::from_column_slice(y);
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.min() <= 1e-12 * smax {
        return None;
    }
    let x = svd.solve(&b, 0.0).ok()?;
    let resid = (&b - &a * &x).iter().copied().collect();
    Some((x, resid))
}

/// Places the arm parameters into `[b_phy, c_phy, b_cp, c_cp, d_cp, e_cp]`.
fn pack(mode: CovarianceMode, cp: &DVector<f64>, phy: &DVector<f64>) -> [f64; 6] {
    let mut out = [0.0; 6];
    out[0] = phy[0];
    if phy.len() > 1 {
        out[1] = phy[1];
    }
    out[2..2 + cp.len()].copy_from_slice(cp.as_slice());
    debug_assert!(mode != CovarianceMode::Segments || cp.len() == 2);
    out
}

/// Estimates the expansion coefficients of both arms by regressing paired
/// Monte Carlo means on the grid. All grid points share `seed`, so their
/// noise is correlated; the coefficient covariance is taken from regressions
/// on contiguous sample batches, which carries that correlation through.
#[allow(clippy::too_many_arguments)]
pub fn estimate_coefficients(
    cp: &CompositeSolution,
    uniform: &CompositeSolution,
    mode: CovarianceMode,
    phys: &CouplerPhysics,
    grid: &CoefficientGrid,
    samples: usize,
    seed: u64,
    exec: &Executor,
) -> Result<SeriesCoefficients, ThresholdError> {
    grid.validate()?;
    let f0_cp = cp.nominal_fidelity(phys).map_err(crate::mc::McError::from)?;
    let f0_phy = uniform.nominal_fidelity(phys).map_err(crate::mc::McError::from)?;
    let points = grid_points(mode, grid);
    let batches = COEFFICIENT_BATCHES;

    let mut rows_cp = Vec::new();
    let mut rows_phy = Vec::new();
    // full-sample responses and per-batch responses, one entry per point
    let mut y_cp = Vec::new();
    let mut y_phy = Vec::new();
    let mut batch_cp: Vec<Vec<f64>> = vec![Vec::new(); batches];
    let mut batch_phy: Vec<Vec<f64>> = vec![Vec::new(); batches];
    let mut point_se: Vec<(f64, f64)> = Vec::new();
    let mut grid_stats = Vec::with_capacity(points.len());

    for p in &points {
        let spec = CorrelationSpec::new(p.sigma, p.rho, p.rho_bar, cp.len());
        let run = paired_samples(cp, uniform, &spec, mode, phys, samples, seed, exec)?;
        let s2 = p.sigma * p.sigma;
        let stats = run.stats();
        grid_stats.push(GridPoint { sigma: p.sigma, rho: p.rho, rho_bar: p.rho_bar, cp: stats.cp, phy: stats.phy });
        let means = run.batch_means(batches);
        if means.len() != batches {
            return Err(crate::mc::McError::AllRejected.into());
        }
        let (dc, dp) = design(mode, p);
        rows_cp.push(dc);
        rows_phy.push(dp);
        y_cp.push((stats.cp.mean - f0_cp) / s2);
        y_phy.push((stats.phy.mean - f0_phy) / s2);
        let scale = 1.0 / (s2 * (batches as f64).sqrt());
        point_se.push((sd(means.iter().map(|m| m.0)) * scale, sd(means.iter().map(|m| m.1)) * scale));
        for (k, (a, b)) in means.into_iter().enumerate() {
            batch_cp[k].push((a - f0_cp) / s2);
            batch_phy[k].push((b - f0_phy) / s2);
        }
    }

    let degenerate = || ThresholdError::DegeneratePoints(points.len());
    let (x_cp, r_cp) = lstsq(&rows_cp, &y_cp).ok_or_else(degenerate)?;
    let (x_phy, r_phy) = lstsq(&rows_phy, &y_phy).ok_or_else(degenerate)?;
    let theta = pack(mode, &x_cp, &x_phy);

    let mut replicates = Vec::with_capacity(batches);
    for k in 0..batches {
        let (bc, _) = lstsq(&rows_cp, &batch_cp[k]).ok_or_else(degenerate)?;
        let (bp, _) = lstsq(&rows_phy, &batch_phy[k]).ok_or_else(degenerate)?;
        replicates.push(pack(mode, &bc, &bp));
    }
    let covariance = replicate_covariance(&replicates);

    let mut fit_residual: f64 = 0.0;
    for (k, (se_cp, se_phy)) in point_se.iter().enumerate() {
        for (r, se) in [(r_cp[k], *se_cp), (r_phy[k], *se_phy)] {
            let z = if se > 0.0 {
                r.abs() / se
            } else if r.abs() > 1e-9 {
                f64::INFINITY
            } else {
                0.0
            };
            fit_residual = fit_residual.max(z);
        }
    }

    Ok(SeriesCoefficients {
        mode,
        b_phy: theta[0],
        c_phy: theta[1],
        b_cp: theta[2],
        c_cp: theta[3],
        d_cp: theta[4],
        e_cp: theta[5],
        f0_cp,
        f0_phy,
        covariance,
        fit_residual,
        flagged: fit_residual > RESIDUAL_FLAG,
        sigma_grid: grid.sigma.clone(),
        rho_grid: grid.rho.clone(),
        samples,
        seed,
        points: grid_stats,
    })
}

fn sd(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    (values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Covariance of the mean of `B` replicate estimates.
fn replicate_covariance(reps: &[[f64; 6]]) -> [[f64; 6]; 6] {
    let b = reps.len() as f64;
    let mean: [f64; 6] = std::array::from_fn(|k| reps.iter().map(|r| r[k]).sum::<f64>() / b);
    std::array::from_fn(|i| {
        std::array::from_fn(|j| reps.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / ((b - 1.0) * b))
    })
}
