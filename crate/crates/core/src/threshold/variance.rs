use serde::{Deserialize, Serialize};

use super::ThresholdError;
use crate::coupler::{CompositeSolution, CouplerPhysics};
use crate::error_model::{CorrelationSpec, CovarianceMode};
use crate::mc::{paired_samples, Executor, FidelityStats};

/// Tolerance, in standard errors, of the variance inequalities.
pub const VARIANCE_SLACK: f64 = 3.0;

/// Spread checks for one `(rho, sigma)` point in segments mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceCheck {
    pub rho: f64,
    pub sigma: f64,
    pub cp: FidelityStats,
    pub phy: FidelityStats,
    /// The composite arm has the higher mean, so the inequalities apply.
    pub applicable: bool,
    /// `sqrt(2) (1 - cp.mean) - cp.std` and its standard error.
    pub bound_margin: f64,
    pub bound_se: f64,
    /// `phy.std - cp.std` and its standard error.
    pub dominance_margin: f64,
    pub dominance_se: f64,
    /// `phy.std / (1 - phy.mean)`.
    pub phy_ratio: f64,
}

impl VarianceCheck {
    pub fn bound_ok(&self) -> bool {
        self.bound_margin >= -VARIANCE_SLACK * self.bound_se
    }

    pub fn dominance_ok(&self) -> bool {
        self.dominance_margin >= -VARIANCE_SLACK * self.dominance_se
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
}

/// Evaluates `std_cp <= sqrt(2) (1 - mean_cp) <= ...` and `std_cp <= std_phy`
/// on every grid point. Standard errors come from influence functions of the
/// sample moments on the paired samples.
#[allow(clippy::too_many_arguments)]
pub fn variance_chain(
    cp: &CompositeSolution,
    uniform: &CompositeSolution,
    phys: &CouplerPhysics,
    rho: &[f64],
    sigma: &[f64],
    samples: usize,
    seed: u64,
    exec: &Executor,
) -> Result<Vec<VarianceCheck>, ThresholdError> {
    let mut out = Vec::with_capacity(rho.len() * sigma.len());
    for &r in rho {
        for &s in sigma {
            let spec = CorrelationSpec::new(s, r, 1.0, cp.len());
            let run = paired_samples(cp, uniform, &spec, CovarianceMode::Segments, phys, samples, seed, exec)?;
            let stats = run.stats();
            let (mc, sc) = (stats.cp.mean, stats.cp.std);
            let (mp, sp) = (stats.phy.mean, stats.phy.std);
            let infl_std = |x: f64, m: f64, s: f64| if s > 0.0 { ((x - m).powi(2) - s * s) / (2.0 * s) } else { 0.0 };
            let bound: Vec<f64> =
                run.cp.iter().map(|&x| -std::f64::consts::SQRT_2 * (x - mc) - infl_std(x, mc, sc)).collect();
            let n = run.cp.len() as f64;
            out.push(VarianceCheck {
                rho: r,
                sigma: s,
                cp: stats.cp,
                phy: stats.phy,
                applicable: mc >= mp,
                bound_margin: std::f64::consts::SQRT_2 * (1.0 - mc) - sc,
                bound_se: sd(&bound) / n.sqrt(),
                dominance_margin: -stats.std_diff,
                dominance_se: stats.std_diff_stderr,
                phy_ratio: sp / (1.0 - mp),
            });
        }
    }
    Ok(out)
}
