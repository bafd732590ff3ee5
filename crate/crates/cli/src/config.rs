use std::path::{Path, PathBuf};

use cp_threshold::coupler::{CouplerPhysics, WidthBounds};
use cp_threshold::error_model::CovarianceMode;
use cp_threshold::optimizer::{LengthBounds, OptimizerConfig};
use cp_threshold::solution_io::NamedGate;
use cp_threshold::threshold::BisectionConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    SweepRho,
    SweepRhoBar,
    Curve,
    Coefficients,
    ScalingN,
    VarianceTheorem,
    Optimize,
}

impl StudyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            StudyKind::SweepRho => "sweep_rho",
            StudyKind::SweepRhoBar => "sweep_rho_bar",
            StudyKind::Curve => "curve",
            StudyKind::Coefficients => "coefficients",
            StudyKind::ScalingN => "scaling_n",
            StudyKind::VarianceTheorem => "variance_theorem",
            StudyKind::Optimize => "optimize",
        }
    }
}

fn default_samples() -> usize {
    20_000
}

fn one() -> f64 {
    1.0
}

fn default_max_sigma() -> f64 {
    0.01
}

/// One study invocation. Paths are resolved relative to the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub study: StudyKind,
    pub seed: u64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Not embedded in outputs so that the output location cannot change them.
    #[serde(default, skip_serializing)]
    pub output_dir: Option<PathBuf>,
    /// Composite coupler solution file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solution: Option<PathBuf>,
    /// Single-segment comparison coupler. Tuned with the optimizer when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uniform: Option<PathBuf>,
    pub physics: CouplerPhysics,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub bisection: BisectionSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub curve: CurveSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    /// Covariance mode of a coefficient study.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<CovarianceMode>,
    /// Width standard deviations, um.
    #[serde(default)]
    pub sigma: Vec<f64>,
    #[serde(default)]
    pub rho: Vec<f64>,
    #[serde(default)]
    pub rho_bar: Vec<f64>,
    /// Segment correlation held fixed while `rho_bar` is swept.
    #[serde(default = "one")]
    pub fixed_rho: f64,
    /// Waveguide correlation held fixed while `rho` is swept.
    #[serde(default = "one")]
    pub fixed_rho_bar: f64,
    /// Largest sigma accepted by coefficient regressions, um.
    #[serde(default = "default_max_sigma")]
    pub max_sigma: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            mode: None,
            sigma: Vec::new(),
            rho: Vec::new(),
            rho_bar: Vec::new(),
            fixed_rho: 1.0,
            fixed_rho_bar: 1.0,
            max_sigma: default_max_sigma(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BisectionSection {
    pub tol: f64,
    pub max_factor: usize,
    pub slope_step: f64,
}

impl Default for BisectionSection {
    fn default() -> Self {
        let d = BisectionConfig::default();
        BisectionSection { tol: d.tol, max_factor: d.max_factor, slope_step: d.slope_step }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    /// Segment counts to optimize.
    pub n_segments: Vec<usize>,
    pub ideal: NamedGate,
    pub width_bounds: WidthBounds,
    pub length_bounds: LengthBounds,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_total_length_um: Option<f64>,
    pub sigma_objective: f64,
    pub objective_samples: usize,
    pub restarts: usize,
    pub max_evals: usize,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let d = OptimizerConfig::new(3, 0);
        OptimizerSection {
            n_segments: vec![3],
            ideal: NamedGate::PauliX,
            width_bounds: d.width_bounds,
            length_bounds: d.length_bounds,
            max_total_length_um: d.max_total_length_um,
            sigma_objective: d.sigma_objective,
            objective_samples: d.objective_samples,
            restarts: d.restarts,
            max_evals: d.max_evals,
        }
    }
}

impl OptimizerSection {
    pub fn config(&self, n_segments: usize, seed: u64) -> OptimizerConfig {
        OptimizerConfig {
            n_segments,
            width_bounds: self.width_bounds,
            length_bounds: self.length_bounds,
            max_total_length_um: self.max_total_length_um,
            sigma_objective: self.sigma_objective,
            objective_samples: self.objective_samples,
            restarts: self.restarts,
            seed,
            max_evals: self.max_evals,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurveSection {
    /// Degree of the polynomial critical-curve fit.
    pub degree: usize,
    /// Power-law exponent of the segment-count scaling fit.
    pub exponent: f64,
}

impl Default for CurveSection {
    fn default() -> Self {
        CurveSection { degree: 3, exponent: 1.0 }
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn check_unit(name: &str, values: &[f64]) -> Result<(), CliError> {
    if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(config_err(format!("grid.{name} value {v} outside [0, 1]")));
    }
    Ok(())
}

impl StudyConfig {
    /// Parses TOML text; errors name the offending key.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| config_err(e.to_string()))
    }

    /// Reads a config file and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.solution, &mut cfg.uniform, &mut cfg.output_dir].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn bisection_config(&self) -> BisectionConfig {
        BisectionConfig {
            samples: self.samples,
            seed: self.seed,
            tol: self.bisection.tol,
            max_factor: self.bisection.max_factor,
            slope_step: self.bisection.slope_step,
        }
    }

    /// Study-specific checks that do not need any file contents.
    pub fn validate(&self) -> Result<(), CliError> {
        self.physics.validate().map_err(|e| config_err(format!("physics: {e}")))?;
        let g = &self.grid;
        check_unit("rho", &g.rho)?;
        check_unit("rho_bar", &g.rho_bar)?;
        check_unit("fixed_rho", &[g.fixed_rho])?;
        check_unit("fixed_rho_bar", &[g.fixed_rho_bar])?;
        if let Some(s) = g.sigma.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(config_err(format!("grid.sigma value {s} must be positive")));
        }
        let need = |ok: bool, what: &str| if ok { Ok(()) } else { Err(config_err(what.to_string())) };
        let needs_pair = !matches!(self.study, StudyKind::Optimize | StudyKind::ScalingN);
        need(!needs_pair || self.solution.is_some(), "this study needs `solution`")?;
        match self.study {
            StudyKind::SweepRho => {
                need(!g.sigma.is_empty(), "grid.sigma must not be empty")?;
                need(!g.rho.is_empty(), "grid.rho must not be empty")?;
            }
            StudyKind::SweepRhoBar => {
                need(!g.sigma.is_empty(), "grid.sigma must not be empty")?;
                need(!g.rho_bar.is_empty(), "grid.rho_bar must not be empty")?;
            }
            StudyKind::Curve => {
                need(g.sigma.len() == 1, "grid.sigma must hold exactly one value")?;
                need(!g.rho_bar.is_empty(), "grid.rho_bar must not be empty")?;
            }
            StudyKind::Coefficients => {
                need(g.mode.is_some(), "grid.mode is required")?;
                need(!g.sigma.is_empty() && !g.rho.is_empty(), "grid.sigma and grid.rho must not be empty")?;
            }
            StudyKind::ScalingN => {
                need(self.optimizer.n_segments.len() >= 3, "optimizer.n_segments needs at least three values")?;
                need(!g.sigma.is_empty() && !g.rho.is_empty(), "grid.sigma and grid.rho must not be empty")?;
            }
            StudyKind::VarianceTheorem => {
                need(!g.sigma.is_empty() && !g.rho.is_empty(), "grid.sigma and grid.rho must not be empty")?;
            }
            StudyKind::Optimize => need(!self.optimizer.n_segments.is_empty(), "optimizer.n_segments is empty")?,
        }
        for &n in &self.optimizer.n_segments {
            self.optimizer.config(n, self.seed).validate().map_err(|e| config_err(format!("optimizer: {e}")))?;
        }
        Ok(())
    }
}
