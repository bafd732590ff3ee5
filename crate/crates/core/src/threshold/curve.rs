use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::crossing::{critical_rho_empirical, BisectionConfig, CrossingSetup};
use super::{Axis, ThresholdError, Verdict};
use crate::coupler::{CompositeSolution, CouplerPhysics};
use crate::error_model::CovarianceMode;
use crate::mc::Executor;

/// One point of the critical curve `rho_c(rho_bar)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub rho_bar: f64,
    pub rho: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub verdict: Verdict,
}

/// Critical segment correlation for each waveguide correlation in `rho_bar`,
/// in general mode. Points where the arms never cross are kept and tagged
/// with their verdict.
pub fn critical_curve(
    cp: &CompositeSolution,
    uniform: &CompositeSolution,
    phys: &CouplerPhysics,
    sigma: f64,
    rho_bar: &[f64],
    cfg: &BisectionConfig,
    exec: &Executor,
) -> Result<Vec<CurvePoint>, ThresholdError> {
    rho_bar
        .iter()
        .map(|&rb| {
            let setup =
                CrossingSetup { cp, uniform, phys, mode: CovarianceMode::General, axis: Axis::Rho, fixed: rb, sigma };
            let r = critical_rho_empirical(&setup, cfg, exec)?;
            Ok(CurvePoint { rho_bar: rb, rho: r.rho_c, ci_low: r.ci_low, ci_high: r.ci_high, verdict: r.verdict })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CurveKind {
    /// `B + C rho_bar + D rho + E rho rho_bar = 0`, coefficients `[B, C, D, E]`.
    Bilinear,
    /// `rho = sum_j a_j rho_bar^j`, coefficients `[a_0, ..., a_degree]`.
    Polynomial { degree: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveFit {
    #[serde(flatten)]
    pub kind: CurveKind,
    pub coefficients: Vec<f64>,
    /// Largest and root-mean-square deviation in `rho`.
    pub max_residual: f64,
    pub rms_residual: f64,
}

impl CurveFit {
    /// Fitted `rho` at `rho_bar`; `None` where a bilinear curve has a pole.
    pub fn eval(&self, rho_bar: f64) -> Option<f64> {
        let c = &self.coefficients;
        match self.kind {
            CurveKind::Bilinear => {
                let den = c[2] + c[3] * rho_bar;
                (den != 0.0).then(|| -(c[0] + c[1] * rho_bar) / den)
            }
            CurveKind::Polynomial { .. } => Some(c.iter().rev().fold(0.0, |acc, a| acc * rho_bar + a)),
        }
    }

    fn with_residuals(kind: CurveKind, coefficients: Vec<f64>, points: &[(f64, f64)]) -> Self {
        let mut fit = CurveFit { kind, coefficients, max_residual: 0.0, rms_residual: 0.0 };
        let mut sq = 0.0;
        for &(rb, rho) in points {
            let r = fit.eval(rb).map_or(f64::INFINITY, |v| (v - rho).abs());
            fit.max_residual = fit.max_residual.max(r);
            sq += r * r;
        }
        fit.rms_residual = (sq / points.len() as f64).sqrt();
        fit
    }
}

/// Relative size below which a singular value counts as zero.
const NULL_TOL: f64 = 1e-9;
const REWEIGHT_ROUNDS: usize = 50;

fn check_points(points: &[(f64, f64)], need: usize) -> Result<(), ThresholdError> {
    if points.len() < need {
        return Err(ThresholdError::TooFewPoints { need, got: points.len() });
    }
    if points.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(ThresholdError::DegeneratePoints(points.len()));
    }
    Ok(())
}

/// Smallest right singular vector of the weighted bilinear design, or an
/// error when more than one direction is (numerically) null.
fn null_vector(points: &[(f64, f64)], weights: &[f64]) -> Result<[f64; 4], ThresholdError> {
    let rows = points.len().max(4);
    let a = DMatrix::from_fn(rows, 4, |r, c| {
        let Some(&(rb, rho)) = points.get(r) else { return 0.0 };
        let w = weights[r];
        w * [1.0, rb, rho, rho * rb][c]
    });
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let s = |k: usize| svd.singular_values[order[k]];
    if s(0) == 0.0 || s(2) <= NULL_TOL * s(0) {
        return Err(ThresholdError::DegeneratePoints(points.len()));
    }
    let row = v_t.row(order[3]);
    let norm = row.norm();
    let sign = if row[3] < 0.0 { -1.0 } else { 1.0 };
    Ok(std::array::from_fn(|k| sign * row[k] / norm))
}

/// Fits `B + C rho_bar + D rho + E rho rho_bar = 0` to `(rho_bar, rho)`
/// points. The algebraic residual is reweighted by `1 / |D + E rho_bar|`
/// until the fit minimises deviations in `rho`. The coefficient vector is
/// normalised to unit length with `E >= 0`.
pub fn fit_bilinear_curve(points: &[(f64, f64)]) -> Result<CurveFit, ThresholdError> {
    check_points(points, 4)?;
    let mut weights = vec![1.0; points.len()];
    let mut coef = null_vector(points, &weights)?;
    for _ in 0..REWEIGHT_ROUNDS {
        let dens: Vec<f64> = points.iter().map(|(rb, _)| (coef[2] + coef[3] * rb).abs()).collect();
        let floor = 1e-6 * dens.iter().cloned().fold(0.0, f64::max);
        if floor == 0.0 {
            break;
        }
        weights = dens.iter().map(|d| 1.0 / d.max(floor)).collect();
        let next = null_vector(points, &weights)?;
        let change = next.iter().zip(&coef).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        coef = next;
        if change < 1e-14 {
            break;
        }
    }
    Ok(CurveFit::with_residuals(CurveKind::Bilinear, coef.to_vec(), points))
}

/// Least-squares polynomial `rho(rho_bar)`; needs `degree + 2` points.
pub fn fit_polynomial_curve(points: &[(f64, f64)], degree: usize) -> Result<CurveFit, ThresholdError> {
    check_points(points, degree + 2)?;
    let a = DMatrix::from_fn(points.len(), degree + 1, |r, c| points[r].0.powi(c as i32));
    let y = DVector::from_iterator(points.len(), points.iter().map(|p| p.1));
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.min() <= NULL_TOL * smax {
        return Err(ThresholdError::DegeneratePoints(points.len()));
    }
    let x = svd.solve(&y, 0.0).map_err(|_| ThresholdError::DegeneratePoints(points.len()))?;
    Ok(CurveFit::with_residuals(CurveKind::Polynomial { degree }, x.iter().copied().collect(), points))
}
