//! Multi-restart simplex search for robust segment geometries.
//!
//! Each restart runs a bounded Nelder–Mead search on the mean fidelity at
//! full correlation (segments mode, `rho = 1`), estimated with a fixed seed
//! so the objective is a deterministic function of the geometry. Box bounds
//! are enforced by the change of variables `x = lo + (hi - lo) sin^2(y)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coupler::{CompositeSolution, CouplerError, CouplerPhysics, Segment, WidthBounds};
use crate::error_model::{CorrelationSpec, CovarianceMode};
use crate::mc::{fidelity_stats, Executor, McError};
use crate::su2::Unitary2;

/// Zero-error fidelity a returned solution must reach.
pub const MIN_NOMINAL_FIDELITY: f64 = 0.999;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizerError {
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
    #[error("no restart reached zero-error fidelity {MIN_NOMINAL_FIDELITY} (best {best})")]
    NoValidSolution { best: f64 },
    #[error(transparent)]
    Mc(#[from] McError),
    #[error(transparent)]
    Coupler(#[from] CouplerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthBounds {
    pub min_um: f64,
    pub max_um: f64,
}

impl Default for LengthBounds {
    fn default() -> Self {
        LengthBounds { min_um: 0.0, max_um: 32.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub n_segments: usize,
    #[serde(default)]
    pub width_bounds: WidthBounds,
    #[serde(default)]
    pub length_bounds: LengthBounds,
    /// Optional cap on the summed segment length; longer candidates are
    /// scaled down uniformly.
    #[serde(default)]
    pub max_total_length_um: Option<f64>,
    #[serde(default = "default_sigma")]
    pub sigma_objective: f64,
    #[serde(default = "default_objective_samples")]
    pub objective_samples: usize,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    pub seed: u64,
    /// Objective evaluations per restart.
    #[serde(default = "default_max_evals")]
    pub max_evals: usize,
}

fn default_sigma() -> f64 {
    6.67e-3
}
fn default_objective_samples() -> usize {
    256
}
fn default_restarts() -> usize {
    8
}
fn default_max_evals() -> usize {
    12_000
}

impl OptimizerConfig {
    pub fn new(n_segments: usize, seed: u64) -> Self {
        OptimizerConfig {
            n_segments,
            width_bounds: WidthBounds::default(),
            length_bounds: LengthBounds::default(),
            max_total_length_um: None,
            sigma_objective: default_sigma(),
            objective_samples: default_objective_samples(),
            restarts: default_restarts(),
            seed,
            max_evals: default_max_evals(),
        }
    }

    pub fn validate(&self) -> Result<(), OptimizerError> {
        let bad = |m: &str| Err(OptimizerError::InvalidConfig(m.to_string()));
        let w = &self.width_bounds;
        let l = &self.length_bounds;
        if self.n_segments == 0 {
            return bad("n_segments must be at least 1");
        }
        if !(w.min_um > 0.0 && w.min_um <= w.max_um && w.max_um.is_finite()) {
            return bad("width bounds must satisfy 0 < min <= max");
        }
        if !(l.min_um >= 0.0 && l.min_um <= l.max_um && l.max_um.is_finite()) {
            return bad("length bounds must satisfy 0 <= min <= max");
        }
        if let Some(cap) = self.max_total_length_um {
            if !(cap.is_finite() && cap >= l.min_um * self.n_segments as f64 && cap > 0.0) {
                return bad("max_total_length_um must be positive and reachable");
            }
        }
        if !(self.sigma_objective > 0.0 && self.sigma_objective.is_finite()) {
            return bad("sigma_objective must be positive");
        }
        if self.restarts == 0 {
            return bad("restarts must be at least 1");
        }
        if self.max_evals < 10 {
            return bad("max_evals must be at least 10");
        }
        if self.objective_samples < crate::mc::MIN_SAMPLES {
            return bad("objective_samples below the Monte Carlo minimum");
        }
        Ok(())
    }
}

/// Mean fidelity at full segment correlation with a fixed seed.
pub fn robust_objective(
    sol: &CompositeSolution,
    phys: &CouplerPhysics,
    sigma: f64,
    samples: usize,
    seed: u64,
) -> Result<f64, McError> {
    let spec = CorrelationSpec::new(sigma, 1.0, 1.0, sol.len());
    let st = fidelity_stats(sol, &spec, CovarianceMode::Segments, phys, samples, seed, &Executor::single())?;
    Ok(st.mean)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartOutcome {
    pub index: usize,
    pub start_objective: f64,
    pub objective: f64,
    pub nominal_fidelity: f64,
    pub evaluations: usize,
    pub segments: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult {
    pub best: CompositeSolution,
    pub best_index: usize,
    pub objective: f64,
    pub nominal_fidelity: f64,
    pub restarts: Vec<RestartOutcome>,
}

impl OptimizationResult {
    /// Every restart that reached the zero-error fidelity requirement.
    pub fn valid_solutions(&self, ideal: &Unitary2) -> Vec<CompositeSolution> {
        self.restarts
            .iter()
            .filter(|r| r.nominal_fidelity >= MIN_NOMINAL_FIDELITY)
            .map(|r| CompositeSolution::new(r.segments.clone(), *ideal).expect("bounded segments"))
            .collect()
    }

    /// Valid restarts whose objective reaches `floor`, typically the tuned
    /// single-segment coupler's objective, keyed by restart index.
    pub fn solution_set(&self, ideal: &Unitary2, floor: f64) -> Vec<(usize, CompositeSolution)> {
        self.restarts
            .iter()
            .filter(|r| r.nominal_fidelity >= MIN_NOMINAL_FIDELITY && r.objective >= floor)
            .map(|r| (r.index, CompositeSolution::new(r.segments.clone(), *ideal).expect("bounded segments")))
            .collect()
    }
}

struct Geometry<'a> {
    cfg: &'a OptimizerConfig,
}

impl Geometry<'_> {
    fn decode(&self, y: &[f64]) -> Vec<Segment> {
        let w = &self.cfg.width_bounds;
        let l = &self.cfg.length_bounds;
        let map = |lo: f64, hi: f64, t: f64| (lo + (hi - lo) * t.sin().powi(2)).clamp(lo, hi);
        let mut segs: Vec<Segment> = y
            .chunks(3)
            .map(|c| {
                Segment::new(
                    map(w.min_um, w.max_um, c[0]),
                    map(w.min_um, w.max_um, c[1]),
                    map(l.min_um, l.max_um, c[2]),
                )
            })
            .collect();
        if let Some(cap) = self.cfg.max_total_length_um {
            let total: f64 = segs.iter().map(|s| s.z_um).sum();
            if total > cap {
                // shrink the part above the per-segment minimum so lower bounds still hold
                let floor = l.min_um * segs.len() as f64;
                let scale = (cap - floor) / (total - floor);
                for s in &mut segs {
                    s.z_um = (l.min_um + (s.z_um - l.min_um) * scale).clamp(l.min_um, l.max_um);
                }
            }
        }
        segs
    }

    fn encode_fraction(t: f64) -> f64 {
        t.clamp(0.0, 1.0).sqrt().asin()
    }
}

/// Minimizes `f` from `x0` with the adaptive-parameter Nelder–Mead method.
/// Returns `(x, f(x), evaluations)`.
pub fn nelder_mead<F>(f: F, x0: &[f64], step: f64, max_evals: usize) -> (Vec<f64>, f64, usize)
where
    F: Fn(&[f64]) -> f64,
{
    let d = x0.len();
    let df = d as f64;
    let (alpha, beta, gamma, delta) =
        if d >= 2 { (1.0, 1.0 + 2.0 / df, 0.75 - 0.5 / df, 1.0 - 1.0 / df) } else { (1.0, 2.0, 0.5, 0.5) };
    let counter = std::cell::Cell::new(0usize);
    let eval = |x: &[f64]| {
        counter.set(counter.get() + 1);
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    simplex.push((x0.to_vec(), eval(x0)));
    for i in 0..d {
        let mut x = x0.to_vec();
        x[i] += step;
        let v = eval(&x);
        simplex.push((x, v));
    }

    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[d].1 - simplex[0].1;
        let size = simplex[1..]
            .iter()
            .map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if counter.get() >= max_evals || (spread <= 1e-15 && size <= 1e-10) {
            break;
        }
        let mut centroid = vec![0.0; d];
        for (x, _) in &simplex[..d] {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / df;
            }
        }
        let worst = simplex[d].clone();
        let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&worst.0).map(|(c, w)| c + t * (w - c)).collect() };

        let xr = along(-alpha);
        let fr = eval(&xr);
        if fr < simplex[0].1 {
            let xe = along(-alpha * beta);
            let fe = eval(&xe);
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < worst.1 {
            let xc = along(-alpha * gamma);
            let fc = eval(&xc);
            (xc, fc)
        } else {
            let xc = along(gamma);
            let fc = eval(&xc);
            (xc, fc)
        };
        if fc < fr.min(worst.1) {
            simplex[d] = (xc, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for (x, v) in simplex.iter_mut().skip(1) {
            for (xi, bi) in x.iter_mut().zip(&best) {
                *xi = bi + delta * (*xi - bi);
            }
            *v = eval(x);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, v) = simplex.swap_remove(0);
    (x, v, counter.get())
}

fn run_restart(
    index: usize,
    cfg: &OptimizerConfig,
    ideal: &Unitary2,
    phys: &CouplerPhysics,
) -> Result<RestartOutcome, OptimizerError> {
    let geo = Geometry { cfg };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let y0: Vec<f64> = (0..3 * cfg.n_segments).map(|_| Geometry::encode_fraction(rng.random::<f64>())).collect();

    let objective = |y: &[f64]| -> Result<f64, McError> {
        let sol = CompositeSolution::new(geo.decode(y), *ideal).map_err(McError::from)?;
        robust_objective(&sol, phys, cfg.sigma_objective, cfg.objective_samples, cfg.seed)
    };
    let start_objective = objective(&y0)?;

    // the simplex cannot propagate errors, so the first one is stashed
    let failure: std::sync::Mutex<Option<McError>> = std::sync::Mutex::new(None);
    let cost = |y: &[f64]| match objective(y) {
        Ok(v) => -v,
        Err(e) => {
            failure.lock().unwrap().get_or_insert(e);
            f64::INFINITY
        }
    };

    let mut y = y0;
    let mut best = -start_objective;
    let mut evaluations = 1;
    // restart the simplex around the incumbent until it stops improving
    while evaluations < cfg.max_evals {
        let (y_new, v, used) = nelder_mead(cost, &y, 0.25, cfg.max_evals - evaluations);
        evaluations += used;
        let improved = v < best - 1e-13;
        if v <= best {
            y = y_new;
            best = v;
        }
        if !improved {
            break;
        }
    }
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e.into());
    }
    let sol = CompositeSolution::new(geo.decode(&y), *ideal)?;
    Ok(RestartOutcome {
        index,
        start_objective,
        objective: -best,
        nominal_fidelity: sol.nominal_fidelity(phys)?,
        evaluations,
        segments: sol.segments().to_vec(),
    })
}

/// Runs all restarts (concurrently on `exec`) and picks the best valid one.
/// Ties go to the lowest restart index.
pub fn optimize_solution(
    cfg: &OptimizerConfig,
    ideal: &Unitary2,
    phys: &CouplerPhysics,
    exec: &Executor,
) -> Result<OptimizationResult, OptimizerError> {
    cfg.validate()?;
    phys.validate()?;
    let outcomes: Vec<Result<RestartOutcome, OptimizerError>> =
        exec.map_indices(cfg.restarts, || (), |_, index| run_restart(index as usize, cfg, ideal, phys));
    let restarts = outcomes.into_iter().collect::<Result<Vec<_>, _>>()?;

    let mut best: Option<&RestartOutcome> = None;
    for r in restarts.iter().filter(|r| r.nominal_fidelity >= MIN_NOMINAL_FIDELITY) {
        if best.is_none_or(|b| r.objective > b.objective) {
            best = Some(r);
        }
    }
    let Some(best) = best else {
        let top = restarts.iter().map(|r| r.nominal_fidelity).fold(0.0, f64::max);
        return Err(OptimizerError::NoValidSolution { best: top });
    };
    Ok(OptimizationResult {
        best: CompositeSolution::new(best.segments.clone(), *ideal)?,
        best_index: best.index,
        objective: best.objective,
        nominal_fidelity: best.nominal_fidelity,
        restarts: restarts.clone(),
    })
}

/// Single-segment coupler tuned with the same objective, used as the
/// comparison gate.
pub fn tune_uniform(
    cfg: &OptimizerConfig,
    ideal: &Unitary2,
    phys: &CouplerPhysics,
    exec: &Executor,
) -> Result<OptimizationResult, OptimizerError> {
    let single = OptimizerConfig { n_segments: 1, max_total_length_um: None, ..cfg.clone() };
    optimize_solution(&single, ideal, phys, exec)
}
