//! Critical correlations, critical curves and scaling fits.
//!
//! Every threshold is expressed on a correlation axis in `[0, 1]`: below it
//! the single-segment coupler has the better mean fidelity, above it the
//! composite one does.

mod coefficients;
mod crossing;
mod curve;
mod gfactor;
mod scaling;
mod variance;

pub use coefficients::{
    estimate_coefficients, CoefficientGrid, GridPoint, SeriesCoefficients, COEFFICIENT_BATCHES, RESIDUAL_FLAG,
};
pub use crossing::{
    critical_rho_empirical, critical_rho_segments, critical_rho_waveguides, std_threshold, BisectionConfig,
    CrossingSetup, Metric,
};
pub use curve::{critical_curve, fit_bilinear_curve, fit_polynomial_curve, CurveFit, CurveKind, CurvePoint};
pub use gfactor::g_factor;
pub use scaling::{scaling_fit, ScalingFit};
pub use variance::{variance_chain, VarianceCheck};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error_model::ErrorModelError;
use crate::mc::McError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ThresholdError {
    #[error("sigma grid {0:?} leaves the small-sigma regime (max {1} um)")]
    SigmaTooLarge(Vec<f64>, f64),
    #[error("need at least {need} distinct {what} values, got {got}")]
    GridTooSmall { what: &'static str, need: usize, got: usize },
    #[error("c_cp = {0} must be positive for a segment-correlation threshold")]
    NonPositiveSlope(f64),
    #[error("c_phy - c_cp = {0} is too close to zero")]
    DegenerateDenominator(f64),
    #[error("coefficients were estimated in {found} mode, expected {expected}")]
    WrongMode { expected: &'static str, found: &'static str },
    #[error("{0} points cannot determine the curve")]
    DegeneratePoints(usize),
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("trace of b K vanishes")]
    ZeroTrace,
    #[error("matrix must be square and symmetric")]
    NotSymmetric,
    #[error("value {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("invalid bisection settings: {0}")]
    InvalidSettings(String),
    #[error(transparent)]
    Mc(#[from] McError),
    #[error(transparent)]
    ErrorModel(#[from] ErrorModelError),
}

/// How a threshold was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ClosedForm,
    Bisection,
}

/// Correlation parameter a threshold lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Rho,
    RhoBar,
}

/// Where the threshold sits relative to the physical range `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Crossing,
    /// The composite coupler is at least as good for every correlation.
    BelowRange,
    /// The composite coupler never catches up; no effective region.
    AboveRange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub rho_c: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub method: Method,
    pub axis: Axis,
    pub verdict: Verdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<SeriesCoefficients>,
    /// Total Monte Carlo samples spent (bisection only).
    #[serde(default)]
    pub samples_used: usize,
}

impl ThresholdResult {
    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci_high - self.ci_low)
    }

    /// True when the two estimates agree within their combined interval
    /// half-widths (added in quadrature). Boundary verdicts of a bisection
    /// are compared against the matching side of the range.
    pub fn agrees_with(&self, other: &ThresholdResult) -> bool {
        let (a, b) = (self, other);
        for (x, y) in [(a, b), (b, a)] {
            if x.method == Method::Bisection {
                match x.verdict {
                    Verdict::BelowRange => return y.ci_low <= 0.0,
                    Verdict::AboveRange => return y.ci_high >= 1.0,
                    Verdict::Crossing => {}
                }
            }
        }
        let joint = a.half_width().hypot(b.half_width());
        (a.rho_c - b.rho_c).abs() <= joint
    }
}

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;
