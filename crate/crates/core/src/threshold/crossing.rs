use serde::{Deserialize, Serialize};

use super::coefficients::T_975_BATCHES;
use super::{Axis, Method, SeriesCoefficients, ThresholdError, ThresholdResult, Verdict, Z_95};
use crate::coupler::{CompositeSolution, CouplerPhysics};
use crate::error_model::{CorrelationSpec, CovarianceMode};
use crate::mc::{paired_fidelity_diff, Executor, PairedStats};

/// Denominators smaller than this are treated as zero.
const MIN_DENOMINATOR: f64 = 1e-12;

fn verdict_for(rho_c: f64) -> Verdict {
    if rho_c < 0.0 {
        Verdict::BelowRange
    } else if rho_c > 1.0 {
        Verdict::AboveRange
    } else {
        Verdict::Crossing
    }
}

/// Root of `N + D t = 0` with `N = u . theta`, `D = v . theta`, with a
/// delta-method interval from the coefficient covariance.
fn linear_root(
    coeffs: &SeriesCoefficients,
    u: [f64; 6],
    v: [f64; 6],
    axis: Axis,
) -> Result<ThresholdResult, ThresholdError> {
    let theta = coeffs.values();
    let dot = |w: &[f64; 6]| w.iter().zip(&theta).map(|(a, b)| a * b).sum::<f64>();
    let (num, den) = (dot(&u), dot(&v));
    if axis == Axis::Rho && den <= 0.0 {
        return Err(ThresholdError::NonPositiveSlope(den));
    }
    if den.abs() < MIN_DENOMINATOR {
        return Err(ThresholdError::DegenerateDenominator(den));
    }
    let rho_c = -num / den;
    let grad: [f64; 6] = std::array::from_fn(|k| -(u[k] + rho_c * v[k]) / den);
    let mut var = 0.0;
    for i in 0..6 {
        for j in 0..6 {
            var += grad[i] * coeffs.covariance[i][j] * grad[j];
        }
    }
    let half = T_975_BATCHES * var.max(0.0).sqrt();
    Ok(ThresholdResult {
        rho_c,
        ci_low: rho_c - half,
        ci_high: rho_c + half,
        method: Method::ClosedForm,
        axis,
        verdict: verdict_for(rho_c),
        coefficients: Some(coeffs.clone()),
        samples_used: 0,
    })
}

/// Segment correlation at which the composite and single-segment means
/// cross, from second-order coefficients (waveguides fully correlated).
pub fn critical_rho_segments(coeffs: &SeriesCoefficients) -> Result<ThresholdResult, ThresholdError> {
    // parameter order: b_phy, c_phy, b_cp, c_cp, d_cp, e_cp
    let (u, v) = match coeffs.mode {
        CovarianceMode::Segments => ([-1.0, 0.0, 1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0, 0.0, 0.0]),
        CovarianceMode::General => ([-1.0, -1.0, 1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0, 1.0, 1.0]),
        CovarianceMode::Waveguides => {
            return Err(ThresholdError::WrongMode { expected: "segments", found: "waveguides" })
        }
    };
    linear_root(coeffs, u, v, Axis::Rho)
}

/// Waveguide correlation at which the means cross (segments fully correlated).
pub fn critical_rho_waveguides(coeffs: &SeriesCoefficients) -> Result<ThresholdResult, ThresholdError> {
    let (u, v) = match coeffs.mode {
        CovarianceMode::Waveguides => ([-1.0, 0.0, 1.0, 0.0, 0.0, 0.0], [0.0, -1.0, 0.0, 1.0, 0.0, 0.0]),
        CovarianceMode::General => ([-1.0, 0.0, 1.0, 0.0, 1.0, 0.0], [0.0, -1.0, 0.0, 1.0, 0.0, 1.0]),
        CovarianceMode::Segments => {
            return Err(ThresholdError::WrongMode { expected: "waveguides", found: "segments" })
        }
    };
    linear_root(coeffs, u, v, Axis::RhoBar)
}

/// Quantity compared between the two arms; positive favours the composite arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// `E[F_cp] - E[F_phy]`.
    Mean,
    /// `std(F_phy) - std(F_cp)`.
    Std,
}

impl Metric {
    fn value(&self, s: &PairedStats) -> (f64, f64) {
        match self {
            Metric::Mean => (s.diff_mean, s.diff_stderr),
            Metric::Std => (-s.std_diff, s.std_diff_stderr),
        }
    }
}

/// Everything held fixed while one correlation is swept.
#[derive(Debug, Clone, Copy)]
pub struct CrossingSetup<'a> {
    pub cp: &'a CompositeSolution,
    pub uniform: &'a CompositeSolution,
    pub phys: &'a CouplerPhysics,
    pub mode: CovarianceMode,
    pub axis: Axis,
    /// Value of the correlation that is not swept (general mode only).
    pub fixed: f64,
    pub sigma: f64,
}

impl CrossingSetup<'_> {
    fn spec(&self, t: f64) -> CorrelationSpec {
        let (rho, rho_bar) = match self.axis {
            Axis::Rho => (t, self.fixed),
            Axis::RhoBar => (self.fixed, t),
        };
        CorrelationSpec::new(self.sigma, rho, rho_bar, self.cp.len())
    }
}

/// Settings of the stochastic bisection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BisectionConfig {
    pub samples: usize,
    pub seed: u64,
    /// Target bracket width.
    pub tol: f64,
    /// Largest multiple of `samples` used at a single point.
    pub max_factor: usize,
    /// Half-width of the finite-difference step used for the local slope.
    pub slope_step: f64,
}

impl Default for BisectionConfig {
    fn default() -> Self {
        BisectionConfig { samples: 20_000, seed: 0, tol: 0.01, max_factor: 8, slope_step: 0.05 }
    }
}

impl BisectionConfig {
    fn validate(&self) -> Result<(), ThresholdError> {
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(ThresholdError::InvalidSettings(format!("tol = {}", self.tol)));
        }
        if self.max_factor == 0 {
            return Err(ThresholdError::InvalidSettings("max_factor = 0".into()));
        }
        if !(self.slope_step > 0.0 && self.slope_step <= 0.5) {
            return Err(ThresholdError::InvalidSettings(format!("slope_step = {}", self.slope_step)));
        }
        Ok(())
    }
}

struct Probe<'a> {
    setup: &'a CrossingSetup<'a>,
    metric: Metric,
    cfg: &'a BisectionConfig,
    exec: &'a Executor,
    samples_used: usize,
}

impl Probe<'_> {
    fn eval(&mut self, t: f64, samples: usize) -> Result<(f64, f64), ThresholdError> {
        let s = &self.setup;
        let stats =
            paired_fidelity_diff(s.cp, s.uniform, &s.spec(t), s.mode, s.phys, samples, self.cfg.seed, self.exec)?;
        self.samples_used += samples;
        Ok(self.metric.value(&stats))
    }

    /// Evaluates at `t`, doubling the sample count while the sign is not
    /// resolved at two standard errors, up to `max_factor` times the base.
    fn resolved(&mut self, t: f64) -> Result<(f64, f64), ThresholdError> {
        let mut samples = self.cfg.samples;
        loop {
            let (g, se) = self.eval(t, samples)?;
            if g.abs() >= 2.0 * se || samples * 2 > self.cfg.samples * self.cfg.max_factor {
                return Ok((g, se));
            }
            samples *= 2;
        }
    }
}

fn boundary(t: f64, axis: Axis, verdict: Verdict, samples_used: usize) -> ThresholdResult {
    ThresholdResult {
        rho_c: t,
        ci_low: t,
        ci_high: t,
        method: Method::Bisection,
        axis,
        verdict,
        coefficients: None,
        samples_used,
    }
}

fn bisect(
    setup: &CrossingSetup,
    metric: Metric,
    cfg: &BisectionConfig,
    exec: &Executor,
) -> Result<ThresholdResult, ThresholdError> {
    cfg.validate()?;
    if !(0.0..=1.0).contains(&setup.fixed) {
        return Err(ThresholdError::OutOfRange(setup.fixed));
    }
    let mut probe = Probe { setup, metric, cfg, exec, samples_used: 0 };
    let (g0, _) = probe.resolved(0.0)?;
    if g0 >= 0.0 {
        return Ok(boundary(0.0, setup.axis, Verdict::BelowRange, probe.samples_used));
    }
    let (g1, _) = probe.resolved(1.0)?;
    if g1 < 0.0 {
        return Ok(boundary(1.0, setup.axis, Verdict::AboveRange, probe.samples_used));
    }
    let (mut lo, mut hi, mut g_lo, mut g_hi) = (0.0, 1.0, g0, g1);
    while hi - lo > cfg.tol {
        let mid = 0.5 * (lo + hi);
        let (g, _) = probe.resolved(mid)?;
        if g >= 0.0 {
            hi = mid;
            g_hi = g;
        } else {
            lo = mid;
            g_lo = g;
        }
    }
    let rho_c = if g_hi > g_lo { lo + (hi - lo) * (-g_lo) / (g_hi - g_lo) } else { 0.5 * (lo + hi) };

    // interval: noise at the crossing mapped through the local slope, plus the bracket
    let (_, se) = probe.eval(rho_c, cfg.samples)?;
    let a = (rho_c - cfg.slope_step).max(0.0);
    let b = (rho_c + cfg.slope_step).min(1.0);
    let (ga, _) = probe.eval(a, cfg.samples)?;
    let (gb, _) = probe.eval(b, cfg.samples)?;
    let slope = (gb - ga) / (b - a);
    let bracket = 0.5 * (hi - lo);
    let half = if slope > 0.0 { (Z_95 * se / slope + bracket).min(1.0) } else { 1.0 };
    Ok(ThresholdResult {
        rho_c,
        ci_low: rho_c - half,
        ci_high: rho_c + half,
        method: Method::Bisection,
        axis: setup.axis,
        verdict: Verdict::Crossing,
        coefficients: None,
        samples_used: probe.samples_used,
    })
}

/// Correlation at which the paired mean difference changes sign, located by
/// bisection on common random numbers. If the composite arm already wins at
/// zero correlation the verdict is `BelowRange` with `rho_c = 0`; if it
/// still loses at full correlation the verdict is `AboveRange` with `rho_c = 1`.
pub fn critical_rho_empirical(
    setup: &CrossingSetup,
    cfg: &BisectionConfig,
    exec: &Executor,
) -> Result<ThresholdResult, ThresholdError> {
    bisect(setup, Metric::Mean, cfg, exec)
}

/// Correlation above which the composite arm has the smaller fidelity spread.
pub fn std_threshold(
    setup: &CrossingSetup,
    cfg: &BisectionConfig,
    exec: &Executor,
) -> Result<ThresholdResult, ThresholdError> {
    bisect(setup, Metric::Std, cfg, exec)
}
