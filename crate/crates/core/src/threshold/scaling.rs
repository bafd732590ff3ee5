use serde::{Deserialize, Serialize};

use super::ThresholdError;

/// Least-squares fit of `rho_c(n) = a n^(-exponent)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub a: f64,
    pub exponent: f64,
    pub r_squared: f64,
}

impl ScalingFit {
    pub fn eval(&self, n: f64) -> f64 {
        self.a * n.powf(-self.exponent)
    }
}

/// Fits the prefactor of a power law in the segment count. Needs at least
/// three distinct `n`.
pub fn scaling_fit(points: &[(f64, f64)], exponent: f64) -> Result<ScalingFit, ThresholdError> {
    let mut ns: Vec<f64> = points.iter().map(|p| p.0).collect();
    ns.sort_by(f64::total_cmp);
    ns.dedup();
    if ns.len() < 3 {
        return Err(ThresholdError::TooFewPoints { need: 3, got: ns.len() });
    }
    if points.iter().any(|&(n, y)| !(n > 0.0 && n.is_finite() && y.is_finite())) || !exponent.is_finite() {
        return Err(ThresholdError::DegeneratePoints(points.len()));
    }
    let x: Vec<f64> = points.iter().map(|p| p.0.powf(-exponent)).collect();
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let sxy: f64 = x.iter().zip(points).map(|(v, p)| v * p.1).sum();
    let a = sxy / sxx;
    let mean = points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - mean).powi(2)).sum();
    let ss_res: f64 = x.iter().zip(points).map(|(v, p)| (p.1 - a * v).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res == 0.0 {
        1.0
    } else {
        f64::NEG_INFINITY
    };
    Ok(ScalingFit { a, exponent, r_squared })
}
