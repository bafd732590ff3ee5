use std::path::{Path, PathBuf};

use cp_threshold::coupler::CompositeSolution;
use cp_threshold::error_model::{CorrelationSpec, CovarianceMode};
use cp_threshold::mc::{paired_fidelity_diff, Executor, McError, PairedStats};
use cp_threshold::optimizer::{optimize_solution, robust_objective, tune_uniform, OptimizerError, RestartOutcome};
use cp_threshold::records::{write_curve_csv, write_scaling_csv, write_sweep_csv, ScalingRow, SweepRow};
use cp_threshold::solution_io::{parse_solution, solution_id, solution_to_json};
use cp_threshold::threshold::{
    critical_curve, critical_rho_empirical, critical_rho_segments, critical_rho_waveguides, estimate_coefficients,
    fit_bilinear_curve, fit_polynomial_curve, scaling_fit, std_threshold, variance_chain, Axis, CoefficientGrid,
    CrossingSetup, SeriesCoefficients, ThresholdError, ThresholdResult, Verdict,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{StudyConfig, StudyKind};
use crate::CliError;

pub const TOOL_VERSION: &str = concat!("cp-threshold ", env!("CARGO_PKG_VERSION"));

/// Identifiers of the couplers a study ran on.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Inputs {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solution_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_segments: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub uniform_id: Option<String>,
    /// `file` or `tuned`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub uniform_source: Option<&'static str>,
}

/// The results document written for every study.
#[derive(Debug, Clone, Serialize)]
pub struct StudyOutput {
    pub study_kind: &'static str,
    pub tool_version: &'static str,
    pub config: StudyConfig,
    pub inputs: Inputs,
    pub coefficients: Option<SeriesCoefficients>,
    pub rho_c: Option<f64>,
    pub ci: Option<[f64; 2]>,
    pub curve_fit: Option<Value>,
    pub residuals: Option<Value>,
    /// Reasons the run is numerically unreliable; non-empty means exit code 3.
    pub flags: Vec<String>,
    pub details: Value,
}

/// Everything a study produces, before it touches the file system.
#[derive(Debug, Clone)]
pub struct StudyArtifacts {
    pub output: StudyOutput,
    /// `(file name, contents)` pairs, the results JSON first.
    pub files: Vec<(String, String)>,
    pub summary: String,
}

impl StudyArtifacts {
    pub fn flagged(&self) -> bool {
        !self.output.flags.is_empty()
    }
}

fn numerical(flags: &mut Vec<String>, what: &str, e: impl std::fmt::Display) {
    flags.push(format!("{what}: {e}"));
}

fn threshold_err(e: ThresholdError) -> CliError {
    match e {
        ThresholdError::SigmaTooLarge(..)
        | ThresholdError::GridTooSmall { .. }
        | ThresholdError::OutOfRange(_)
        | ThresholdError::InvalidSettings(_)
        | ThresholdError::TooFewPoints { .. } => CliError::Config(e.to_string()),
        ThresholdError::Mc(m) => mc_err(m),
        other => CliError::Numerical(other.to_string()),
    }
}

fn mc_err(e: McError) -> CliError {
    match e {
        McError::AllRejected => CliError::Numerical(e.to_string()),
        other => CliError::Config(other.to_string()),
    }
}

fn optimizer_err(e: OptimizerError) -> CliError {
    match e {
        OptimizerError::NoValidSolution { .. } => CliError::Numerical(e.to_string()),
        other => CliError::Config(other.to_string()),
    }
}

fn load_solution(path: &Path) -> Result<CompositeSolution, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read solution {}: {e}", path.display())))?;
    parse_solution(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

struct Pair {
    cp: CompositeSolution,
    uniform: CompositeSolution,
    cp_id: String,
    uniform_id: String,
    tuned: bool,
}

fn load_uniform(
    cfg: &StudyConfig,
    ideal: &cp_threshold::su2::Unitary2,
    exec: &Executor,
) -> Result<(CompositeSolution, bool), CliError> {
    match &cfg.uniform {
        Some(path) => {
            let u = load_solution(path)?;
            if u.len() != 1 {
                return Err(CliError::Config(format!("{}: comparison coupler must have one segment", path.display())));
            }
            Ok((u, false))
        }
        None => {
            let r =
                tune_uniform(&cfg.optimizer.config(1, cfg.seed), ideal, &cfg.physics, exec).map_err(optimizer_err)?;
            Ok((r.best, true))
        }
    }
}

fn load_pair(cfg: &StudyConfig, exec: &Executor) -> Result<Pair, CliError> {
    let path = cfg.solution.as_ref().ok_or_else(|| CliError::Config("`solution` is required".into()))?;
    let cp = load_solution(path)?;
    let (uniform, tuned) = load_uniform(cfg, cp.ideal(), exec)?;
    Ok(Pair { cp_id: solution_id(&cp), uniform_id: solution_id(&uniform), cp, uniform, tuned })
}

impl Pair {
    fn inputs(&self) -> Inputs {
        Inputs {
            solution_id: Some(self.cp_id.clone()),
            n_segments: Some(self.cp.len()),
            uniform_id: Some(self.uniform_id.clone()),
            uniform_source: Some(if self.tuned { "tuned" } else { "file" }),
        }
    }

    fn rows(&self, mode: CovarianceMode, spec: &CorrelationSpec, stats: &PairedStats) -> [SweepRow; 2] {
        let (rho, rho_bar) = mode.effective_correlations(spec);
        [
            SweepRow::new(mode, spec.sigma, rho, rho_bar, self.cp.len(), &stats.cp, &self.cp_id),
            SweepRow::new(mode, spec.sigma, rho, rho_bar, 1, &stats.phy, &self.uniform_id),
        ]
    }

    fn tuned_file(&self) -> Option<(String, String)> {
        self.tuned.then(|| ("uniform.json".to_string(), solution_to_json(&self.uniform)))
    }
}

/// Header comments shared by every CSV file of a run.
fn csv_comments(cfg: &StudyConfig) -> Vec<String> {
    vec![format!("tool: {TOOL_VERSION}"), format!("config: {}", serde_json::to_string(cfg).expect("config serializes"))]
}

fn base_output(cfg: &StudyConfig, inputs: Inputs) -> StudyOutput {
    StudyOutput {
        study_kind: cfg.study.as_str(),
        tool_version: TOOL_VERSION,
        config: cfg.clone(),
        inputs,
        coefficients: None,
        rho_c: None,
        ci: None,
        curve_fit: None,
        residuals: None,
        flags: Vec::new(),
        details: Value::Null,
    }
}

fn set_threshold(out: &mut StudyOutput, r: &ThresholdResult) {
    out.rho_c = Some(r.rho_c);
    out.ci = Some([r.ci_low, r.ci_high]);
}

fn describe(r: &ThresholdResult) -> String {
    match r.verdict {
        Verdict::Crossing => format!("{:.4} [{:.4}, {:.4}]", r.rho_c, r.ci_low, r.ci_high),
        Verdict::BelowRange => format!("{:.4} (below range)", r.rho_c),
        Verdict::AboveRange => format!("{:.4} (above range)", r.rho_c),
    }
}

#[derive(Serialize)]
struct SweepThreshold {
    sigma: f64,
    mean: ThresholdResult,
    std: ThresholdResult,
}

fn sweep(cfg: &StudyConfig, exec: &Executor, axis: Axis) -> Result<StudyArtifacts, CliError> {
    let pair = load_pair(cfg, exec)?;
    let g = &cfg.grid;
    let (values, fixed, mode) = match axis {
        Axis::Rho => {
            let mode = if g.fixed_rho_bar == 1.0 { CovarianceMode::Segments } else { CovarianceMode::General };
            (&g.rho, g.fixed_rho_bar, mode)
        }
        Axis::RhoBar => {
            let mode = if g.fixed_rho == 1.0 { CovarianceMode::Waveguides } else { CovarianceMode::General };
            (&g.rho_bar, g.fixed_rho, mode)
        }
    };
    let mut out = base_output(cfg, pair.inputs());
    let mut rows = Vec::new();
    let mut thresholds = Vec::new();
    for &sigma in &g.sigma {
        for &t in values {
            let (rho, rho_bar) = if axis == Axis::Rho { (t, fixed) } else { (fixed, t) };
            let spec = CorrelationSpec::new(sigma, rho, rho_bar, pair.cp.len());
            let stats =
                paired_fidelity_diff(&pair.cp, &pair.uniform, &spec, mode, &cfg.physics, cfg.samples, cfg.seed, exec)
                    .map_err(mc_err)?;
            if stats.unreliable {
                numerical(&mut out.flags, "rejected samples", format!("sigma {sigma}, {t}: {}", stats.rejected));
            }
            rows.extend(pair.rows(mode, &spec, &stats));
        }
        let setup =
            CrossingSetup { cp: &pair.cp, uniform: &pair.uniform, phys: &cfg.physics, mode, axis, fixed, sigma };
        let bis = cfg.bisection_config();
        let mean = critical_rho_empirical(&setup, &bis, exec).map_err(threshold_err)?;
        let std = std_threshold(&setup, &bis, exec).map_err(threshold_err)?;
        thresholds.push(SweepThreshold { sigma, mean, std });
    }
    if let Some(first) = thresholds.first() {
        set_threshold(&mut out, &first.mean);
    }
    let summary = thresholds
        .iter()
        .map(|t| format!("sigma {}: rho_c {}, std {}", t.sigma, describe(&t.mean), describe(&t.std)))
        .collect::<Vec<_>>()
        .join("; ");
    out.details = json!({ "mode": mode, "axis": axis, "fixed": fixed, "thresholds": thresholds });
    let name = cfg.study.as_str();
    let mut files = vec![(format!("{name}.csv"), write_sweep_csv(&csv_comments(cfg), &rows))];
    files.extend(pair.tuned_file());
    Ok(finish(out, files, format!("{name}: {summary}")))
}

fn coefficients(cfg: &StudyConfig, exec: &Executor) -> Result<StudyArtifacts, CliError> {
    let pair = load_pair(cfg, exec)?;
    let g = &cfg.grid;
    let mode = g.mode.expect("validated");
    let grid = CoefficientGrid { sigma: g.sigma.clone(), rho: g.rho.clone(), max_sigma: g.max_sigma };
    let coeffs = estimate_coefficients(&pair.cp, &pair.uniform, mode, &cfg.physics, &grid, cfg.samples, cfg.seed, exec)
        .map_err(threshold_err)?;
    let mut out = base_output(cfg, pair.inputs());
    if coeffs.flagged {
        numerical(&mut out.flags, "fit residual", format!("{:.1} point standard errors", coeffs.fit_residual));
    }
    let mut closed = Vec::new();
    if mode != CovarianceMode::Waveguides {
        closed.push(("rho", critical_rho_segments(&coeffs)));
    }
    if mode != CovarianceMode::Segments {
        closed.push(("rho_bar", critical_rho_waveguides(&coeffs)));
    }
    let mut details = serde_json::Map::new();
    let mut summary =
        format!("coefficients ({mode}): b_phy {:.4}, b_cp {:.4}, c_cp {:.4}", coeffs.b_phy, coeffs.b_cp, coeffs.c_cp);
    for (axis, r) in closed {
        match r {
            Ok(r) => {
                if out.rho_c.is_none() {
                    set_threshold(&mut out, &r);
                }
                summary.push_str(&format!(", {axis}_c {}", describe(&r)));
                let mut r = r;
                r.coefficients = None;
                details.insert(format!("{axis}_c"), json!(r));
            }
            Err(e) => {
                summary.push_str(&format!(", {axis}_c unavailable ({e})"));
                numerical(&mut out.flags, axis, e);
            }
        }
    }
    out.residuals = Some(json!({ "max_standard_errors": coeffs.fit_residual }));
    let mut rows = Vec::new();
    for p in &coeffs.points {
        rows.push(SweepRow::new(mode, p.sigma, p.rho, p.rho_bar, pair.cp.len(), &p.cp, &pair.cp_id));
        rows.push(SweepRow::new(mode, p.sigma, p.rho, p.rho_bar, 1, &p.phy, &pair.uniform_id));
    }
    out.coefficients = Some(coeffs);
    out.details = Value::Object(details);
    let mut files = vec![("coefficients.csv".to_string(), write_sweep_csv(&csv_comments(cfg), &rows))];
    files.extend(pair.tuned_file());
    Ok(finish(out, files, summary))
}

fn curve(cfg: &StudyConfig, exec: &Executor) -> Result<StudyArtifacts, CliError> {
    let pair = load_pair(cfg, exec)?;
    let sigma = cfg.grid.sigma[0];
    let points =
        critical_curve(&pair.cp, &pair.uniform, &cfg.physics, sigma, &cfg.grid.rho_bar, &cfg.bisection_config(), exec)
            .map_err(threshold_err)?;
    let mut out = base_output(cfg, pair.inputs());
    let xy: Vec<(f64, f64)> =
        points.iter().filter(|p| p.verdict == Verdict::Crossing).map(|p| (p.rho_bar, p.rho)).collect();
    let mut fits = serde_json::Map::new();
    let mut residuals = serde_json::Map::new();
    let mut summary = format!("curve: {} of {} points cross", xy.len(), points.len());
    for (name, fit) in
        [("bilinear", fit_bilinear_curve(&xy)), ("polynomial", fit_polynomial_curve(&xy, cfg.curve.degree))]
    {
        match fit {
            Ok(f) => {
                let per_point: Vec<Option<f64>> = xy.iter().map(|&(rb, r)| f.eval(rb).map(|v| v - r)).collect();
                summary.push_str(&format!(", {name} max residual {:.2e}", f.max_residual));
                residuals.insert(name.into(), json!(per_point));
                fits.insert(name.into(), json!(f));
            }
            Err(e) => {
                summary.push_str(&format!(", {name} fit failed ({e})"));
                numerical(&mut out.flags, name, e);
            }
        }
    }
    out.curve_fit = Some(Value::Object(fits));
    out.residuals = Some(Value::Object(residuals));
    out.details = json!({ "sigma": sigma, "points": points });
    let mut files = vec![("curve.csv".to_string(), write_curve_csv(&csv_comments(cfg), &points))];
    files.extend(pair.tuned_file());
    Ok(finish(out, files, summary))
}

#[derive(Serialize)]
struct ScalingEntry {
    n_segments: usize,
    solution_id: String,
    objective: f64,
    restarts: Vec<RestartOutcome>,
    min_rho_c: Option<f64>,
}

fn scaling(cfg: &StudyConfig, exec: &Executor) -> Result<StudyArtifacts, CliError> {
    let ideal = cfg.optimizer.ideal.unitary();
    let (uniform, tuned) = load_uniform(cfg, &ideal, exec)?;
    let uniform_id = solution_id(&uniform);
    let inputs = Inputs {
        uniform_id: Some(uniform_id.clone()),
        uniform_source: Some(if tuned { "tuned" } else { "file" }),
        ..Default::default()
    };
    let mut out = base_output(cfg, inputs);
    let opt = &cfg.optimizer;
    // solutions that do not beat the single-segment coupler at full correlation are not robust
    let floor = robust_objective(&uniform, &cfg.physics, opt.sigma_objective, opt.objective_samples, cfg.seed)
        .map_err(mc_err)?;
    let grid =
        CoefficientGrid { sigma: cfg.grid.sigma.clone(), rho: cfg.grid.rho.clone(), max_sigma: cfg.grid.max_sigma };
    let mut rows = Vec::new();
    let mut entries = Vec::new();
    let mut files = Vec::new();
    let mut minima = Vec::new();
    for &n in &cfg.optimizer.n_segments {
        let res = match optimize_solution(&cfg.optimizer.config(n, cfg.seed), &ideal, &cfg.physics, exec) {
            Ok(r) => r,
            Err(e @ OptimizerError::NoValidSolution { .. }) => {
                numerical(&mut out.flags, &format!("n = {n}"), e);
                continue;
            }
            Err(e) => return Err(optimizer_err(e)),
        };
        let mut min: Option<f64> = None;
        for (restart, sol) in res.solution_set(&ideal, floor) {
            let coeffs = estimate_coefficients(
                &sol,
                &uniform,
                CovarianceMode::Segments,
                &cfg.physics,
                &grid,
                cfg.samples,
                cfg.seed,
                exec,
            )
            .map_err(threshold_err)?;
            match critical_rho_segments(&coeffs) {
                Ok(t) => {
                    min = Some(min.map_or(t.rho_c, |m: f64| m.min(t.rho_c)));
                    rows.push(ScalingRow {
                        n_segments: n,
                        restart,
                        rho_c: t.rho_c,
                        ci_low: t.ci_low,
                        ci_high: t.ci_high,
                        verdict: t.verdict,
                        solution_id: solution_id(&sol),
                    });
                }
                Err(e) => numerical(&mut out.flags, &format!("n = {n}, restart {restart}"), e),
            }
        }
        if let Some(m) = min {
            minima.push((n as f64, m));
        }
        files.push((format!("solution_n{n}.json"), solution_to_json(&res.best)));
        entries.push(ScalingEntry {
            n_segments: n,
            solution_id: solution_id(&res.best),
            objective: res.objective,
            restarts: res.restarts,
            min_rho_c: min,
        });
    }
    let mut summary = format!(
        "scaling_n: min rho_c {}",
        minima.iter().map(|(n, m)| format!("n={n}: {m:.4}")).collect::<Vec<_>>().join(", ")
    );
    match scaling_fit(&minima, cfg.curve.exponent) {
        Ok(fit) => {
            summary.push_str(&format!("; a = {:.4}, r^2 = {:.4}", fit.a, fit.r_squared));
            let resid: Vec<f64> = minima.iter().map(|&(n, m)| m - fit.eval(n)).collect();
            out.curve_fit = Some(json!(fit));
            out.residuals = Some(json!(resid));
        }
        Err(e) => {
            summary.push_str(&format!("; fit failed ({e})"));
            numerical(&mut out.flags, "scaling fit", e);
        }
    }
    out.details = json!({ "objective_floor": floor, "minima": minima, "solutions": entries });
    files.insert(0, ("scaling_n.csv".to_string(), write_scaling_csv(&csv_comments(cfg), &rows)));
    if tuned {
        files.push(("uniform.json".to_string(), solution_to_json(&uniform)));
    }
    Ok(finish(out, files, summary))
}

fn variance(cfg: &StudyConfig, exec: &Executor) -> Result<StudyArtifacts, CliError> {
    let pair = load_pair(cfg, exec)?;
    let checks = variance_chain(
        &pair.cp,
        &pair.uniform,
        &cfg.physics,
        &cfg.grid.rho,
        &cfg.grid.sigma,
        cfg.samples,
        cfg.seed,
        exec,
    )
    .map_err(threshold_err)?;
    let mut out = base_output(cfg, pair.inputs());
    let mode = CovarianceMode::Segments;
    let mut rows = Vec::new();
    let mut list = Vec::new();
    let (mut applicable, mut bound, mut dominance) = (0, 0, 0);
    for c in &checks {
        rows.push(SweepRow::new(mode, c.sigma, c.rho, 1.0, pair.cp.len(), &c.cp, &pair.cp_id));
        rows.push(SweepRow::new(mode, c.sigma, c.rho, 1.0, 1, &c.phy, &pair.uniform_id));
        if c.applicable {
            applicable += 1;
            bound += c.bound_ok() as usize;
            dominance += c.dominance_ok() as usize;
        }
        list.push(json!({ "check": c, "bound_ok": c.bound_ok(), "dominance_ok": c.dominance_ok() }));
    }
    out.details = json!({ "checks": list });
    let summary = format!(
        "variance_theorem: {applicable} of {} points applicable; bound holds at {bound}, dominance at {dominance}",
        checks.len()
    );
    let mut files = vec![("variance_theorem.csv".to_string(), write_sweep_csv(&csv_comments(cfg), &rows))];
    files.extend(pair.tuned_file());
    Ok(finish(out, files, summary))
}

fn optimize(cfg: &StudyConfig, exec: &Executor) -> Result<StudyArtifacts, CliError> {
    let ideal = cfg.optimizer.ideal.unitary();
    let mut out = base_output(cfg, Inputs::default());
    let mut files = Vec::new();
    let mut entries = Vec::new();
    let mut parts = Vec::new();
    for &n in &cfg.optimizer.n_segments {
        let res =
            optimize_solution(&cfg.optimizer.config(n, cfg.seed), &ideal, &cfg.physics, exec).map_err(optimizer_err)?;
        parts.push(format!("n={n}: objective {:.6}, nominal {:.6}", res.objective, res.nominal_fidelity));
        files.push((format!("solution_n{n}.json"), solution_to_json(&res.best)));
        entries.push(json!({
            "n_segments": n,
            "solution_id": solution_id(&res.best),
            "best_restart": res.best_index,
            "objective": res.objective,
            "nominal_fidelity": res.nominal_fidelity,
            "restarts": res.restarts,
        }));
    }
    if let [single] = cfg.optimizer.n_segments.as_slice() {
        out.inputs.n_segments = Some(*single);
    }
    out.details = json!({ "solutions": entries });
    Ok(finish(out, files, format!("optimize: {}", parts.join("; "))))
}

fn finish(output: StudyOutput, mut files: Vec<(String, String)>, summary: String) -> StudyArtifacts {
    let mut json = serde_json::to_string_pretty(&output).expect("output serializes");
    json.push('\n');
    files.insert(0, (format!("{}.json", output.study_kind), json));
    StudyArtifacts { output, files, summary }
}

/// Runs a study in memory.
pub fn compute_study(cfg: &StudyConfig, exec: &Executor) -> Result<StudyArtifacts, CliError> {
    cfg.validate()?;
    match cfg.study {
        StudyKind::SweepRho => sweep(cfg, exec, Axis::Rho),
        StudyKind::SweepRhoBar => sweep(cfg, exec, Axis::RhoBar),
        StudyKind::Coefficients => coefficients(cfg, exec),
        StudyKind::Curve => curve(cfg, exec),
        StudyKind::ScalingN => scaling(cfg, exec),
        StudyKind::VarianceTheorem => variance(cfg, exec),
        StudyKind::Optimize => optimize(cfg, exec),
    }
}

/// Runs a study and writes its files into `out_dir`. Returns the written
/// paths together with the artifacts.
pub fn run_study(
    cfg: &StudyConfig,
    out_dir: &Path,
    exec: &Executor,
) -> Result<(StudyArtifacts, Vec<PathBuf>), CliError> {
    let artifacts = compute_study(cfg, exec)?;
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::Io(format!("{}: {e}", out_dir.display())))?;
    let mut written = Vec::new();
    for (name, contents) in &artifacts.files {
        let path = out_dir.join(name);
        std::fs::write(&path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        written.push(path);
    }
    Ok((artifacts, written))
}
