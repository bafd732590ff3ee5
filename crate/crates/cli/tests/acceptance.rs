//! Acceptance suite. Runs every primary criterion at full sample size and
//! prints one PASS/FAIL line per criterion; exits non-zero if any fails.

use std::path::PathBuf;
use std::time::Instant;

use nalgebra::{DMatrix, Matrix2};
use num_complex::Complex64;
use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::TestRunner;

use cp_threshold::coupler::{CompositeSolution, CouplerPhysics};
use cp_threshold::error_model::{build_covariance, psd_factor, sample_errors, CorrelationSpec, CovarianceMode};
use cp_threshold::mc::Executor;
use cp_threshold::solution_io::fixtures;
use cp_threshold::su2::{compose, evolve, gate_fidelity, Hamiltonian2};
use cp_threshold::threshold::{
    critical_curve, critical_rho_empirical, critical_rho_segments, critical_rho_waveguides, estimate_coefficients,
    fit_bilinear_curve, fit_polynomial_curve, g_factor, variance_chain, Axis, BisectionConfig, CoefficientGrid,
    CrossingSetup, ThresholdResult, Verdict,
};
use cp_threshold_cli::{compute_study, StudyConfig};

const SAMPLES: usize = 200_000;
const SEED: u64 = 20261016;
/// Width spreads in um: 3, 5 and 6.67 nm.
const SIGMAS: [f64; 3] = [0.003, 0.005, 0.00667];
const SIGMA_MAIN: f64 = 0.00667;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn draw<S: Strategy>(runner: &mut TestRunner, s: &S) -> S::Value {
    s.new_tree(runner).expect("strategy yields a value").current()
}

fn expm(h: Hamiltonian2, z: f64) -> Matrix2<Complex64> {
    let (d, k) = (Complex64::new(h.detuning, 0.0), Complex64::new(h.coupling, 0.0));
    (Matrix2::new(d, k, k, -d) * Complex64::new(0.0, -z)).exp()
}

fn criterion_1() -> Outcome {
    let mut runner = TestRunner::deterministic();
    let strat = (-0.5..0.5f64, 0.0..0.5f64, 0.0..40.0f64, 0.0..40.0f64, 0.0..std::f64::consts::TAU);
    let (mut unitarity, mut oracle, mut semigroup, mut phase) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..2000 {
        let (d, k, z1, z2, phi) = draw(&mut runner, &strat);
        let h = Hamiltonian2::new(d, k);
        let u = evolve(h, z1).unwrap();
        unitarity = unitarity.max(u.unitarity_residual());
        let m = expm(h, z1);
        let e = u.entries();
        for (idx, (r, c)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
            oracle = oracle.max((e[idx] - m[(r, c)]).norm());
        }
        let split = compose(&[u, evolve(h, z2).unwrap()]).unwrap();
        semigroup = semigroup.max(split.distance(&evolve(h, z1 + z2).unwrap()));
        let v = evolve(Hamiltonian2::new(k, d), z2).unwrap();
        phase = phase.max((gate_fidelity(&v, &u.with_global_phase(phi)) - gate_fidelity(&v, &u)).abs());
    }
    let worst = unitarity.max(oracle).max(semigroup).max(phase);
    check(
        worst <= 1e-12,
        format!("unitarity {unitarity:.1e}, expm {oracle:.1e}, semigroup {semigroup:.1e}, phase {phase:.1e}"),
    )
}

/// Entry of the general covariance written as the four Kronecker terms.
fn four_term(spec: &CorrelationSpec, mode: CovarianceMode, r: usize, c: usize) -> f64 {
    let (rho, rho_bar) = match mode {
        CovarianceMode::Segments => (spec.rho, 1.0),
        CovarianceMode::Waveguides => (1.0, spec.rho_bar),
        CovarianceMode::General => (spec.rho, spec.rho_bar),
    };
    let m = spec.m;
    let (i, a, j, b) = (r / m, r % m, c / m, c % m);
    let delta = |x: usize, y: usize| if x == y { 1.0 } else { 0.0 };
    let off = |x: usize, y: usize| 1.0 - delta(x, y);
    let s2 = spec.sigma * spec.sigma;
    s2 * (delta(i, j) * delta(a, b)
        + rho_bar * delta(i, j) * off(a, b)
        + rho * off(i, j) * delta(a, b)
        + rho * rho_bar * off(i, j) * off(a, b))
}

fn criterion_2() -> Outcome {
    let mut runner = TestRunner::deterministic();
    let strat = (1usize..=6, 0.0..=1.0f64, 0.0..=1.0f64, 1e-3..0.03f64);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (n, rho, rho_bar, sigma) = draw(&mut runner, &strat);
        let spec = CorrelationSpec::new(sigma, rho, rho_bar, n);
        for mode in [CovarianceMode::Segments, CovarianceMode::Waveguides, CovarianceMode::General] {
            let cov = build_covariance(&spec, mode).unwrap();
            for r in 0..cov.dim() {
                for c in 0..cov.dim() {
                    worst = worst.max((cov.get(r, c) - four_term(&spec, mode, r, c)).abs() / (sigma * sigma));
                }
            }
        }
    }
    let spec = CorrelationSpec::new(0.005, 0.4, 0.7, 3);
    let cov = build_covariance(&spec, CovarianceMode::General).unwrap();
    let count = 100_000;
    let draws = sample_errors(&psd_factor(&cov).unwrap(), count, SEED);
    let mut z_max = 0.0f64;
    for r in 0..cov.dim() {
        for c in r..cov.dim() {
            let prod: Vec<f64> = draws.iter().map(|x| x[r] * x[c]).collect();
            let mean = prod.iter().sum::<f64>() / count as f64;
            let var = prod.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (count - 1) as f64;
            z_max = z_max.max((mean - cov.get(r, c)).abs() / (var / count as f64).sqrt());
        }
    }
    check(worst <= 1e-14 && z_max <= 5.0, format!("oracle rel err {worst:.1e}, empirical max |z| {z_max:.2}"))
}

struct Pair {
    cp: CompositeSolution,
    uniform: CompositeSolution,
    phys: CouplerPhysics,
}

impl Pair {
    fn reference(n: usize) -> Self {
        Pair {
            cp: fixtures::reference(n).expect("shipped reference"),
            uniform: fixtures::reference_uniform(),
            phys: CouplerPhysics::default(),
        }
    }

    fn empirical(&self, mode: CovarianceMode, axis: Axis, sigma: f64, exec: &Executor) -> ThresholdResult {
        let setup =
            CrossingSetup { cp: &self.cp, uniform: &self.uniform, phys: &self.phys, mode, axis, fixed: 1.0, sigma };
        let cfg = BisectionConfig { samples: SAMPLES, seed: SEED, ..Default::default() };
        critical_rho_empirical(&setup, &cfg, exec).expect("bisection runs")
    }

    fn closed_form(&self, mode: CovarianceMode, exec: &Executor) -> Result<ThresholdResult, String> {
        let c = estimate_coefficients(
            &self.cp,
            &self.uniform,
            mode,
            &self.phys,
            &CoefficientGrid::default(),
            SAMPLES,
            SEED,
            exec,
        )
        .map_err(|e| e.to_string())?;
        match mode {
            CovarianceMode::Waveguides => critical_rho_waveguides(&c),
            _ => critical_rho_segments(&c),
        }
        .map_err(|e| e.to_string())
    }
}

fn show(r: &ThresholdResult) -> String {
    match r.verdict {
        Verdict::Crossing => format!("{:.4}+-{:.4}", r.rho_c, r.half_width()),
        Verdict::BelowRange => "below".into(),
        Verdict::AboveRange => "above".into(),
    }
}

fn criterion_3(exec: &Executor) -> Outcome {
    let pair = Pair::reference(3);
    let rs: Vec<ThresholdResult> =
        SIGMAS.iter().map(|&s| pair.empirical(CovarianceMode::Segments, Axis::Rho, s, exec)).collect();
    let crossing = rs.iter().all(|r| r.verdict == Verdict::Crossing);
    let lo = rs.iter().map(|r| r.rho_c).fold(f64::INFINITY, f64::min);
    let hi = rs.iter().map(|r| r.rho_c).fold(f64::NEG_INFINITY, f64::max);
    let joint = rs.iter().enumerate().all(|(i, a)| rs[i + 1..].iter().all(|b| a.agrees_with(b)));
    check(
        crossing && hi - lo <= 0.03,
        format!(
            "rho_c {} (spread {:.4}, pairwise joint-CI agreement {joint})",
            rs.iter().map(show).collect::<Vec<_>>().join(", "),
            hi - lo
        ),
    )
}

/// Bisection thresholds in both modes for the reference couplers, reused by
/// criteria 4, 5 and 7.
struct Thresholds {
    rows: Vec<(usize, CovarianceMode, Result<ThresholdResult, String>, ThresholdResult)>,
}

impl Thresholds {
    fn compute(exec: &Executor) -> Self {
        let mut rows = Vec::new();
        for n in 3..=5 {
            let pair = Pair::reference(n);
            for (mode, axis) in [(CovarianceMode::Segments, Axis::Rho), (CovarianceMode::Waveguides, Axis::RhoBar)] {
                let closed = pair.closed_form(mode, exec);
                let emp = pair.empirical(mode, axis, SIGMA_MAIN, exec);
                rows.push((n, mode, closed, emp));
            }
        }
        Thresholds { rows }
    }

    fn empirical(&self, n: usize, mode: CovarianceMode) -> &ThresholdResult {
        &self.rows.iter().find(|r| r.0 == n && r.1 == mode).expect("computed").3
    }
}

fn criterion_4(t: &Thresholds) -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for (n, mode, closed, emp) in &t.rows {
        let agree = match closed {
            Ok(c) => c.agrees_with(emp),
            Err(_) => false,
        };
        ok &= agree;
        let c = closed.as_ref().map(show).unwrap_or_else(|e| format!("error ({e})"));
        parts.push(format!("n{n} {mode}: {c} vs {}{}", show(emp), if agree { "" } else { " MISMATCH" }));
    }
    check(ok, parts.join("; "))
}

fn criterion_5(t: &Thresholds) -> Outcome {
    let seg = t.empirical(3, CovarianceMode::Segments);
    let wg = t.empirical(3, CovarianceMode::Waveguides);
    check(wg.ci_low > seg.ci_high, format!("waveguides {} > segments {}", show(wg), show(seg)))
}

fn config(name: &str) -> StudyConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    StudyConfig::load(&path).expect("shipped config loads")
}

fn criterion_6(exec: &Executor) -> Outcome {
    let mut cfg = config("scaling_n.toml");
    cfg.samples = SAMPLES;
    let art = compute_study(&cfg, exec).map_err(|e| e.to_string())?;
    let minima = &art.output.details["minima"];
    let fit = art.output.curve_fit.as_ref().ok_or("no scaling fit")?;
    let r2 = fit["r_squared"].as_f64().ok_or("no r_squared")?;
    check(r2 >= 0.9, format!("minima {minima}, a = {:.4}, r^2 = {r2:.3}", fit["a"].as_f64().unwrap_or(f64::NAN)))
}

fn criterion_7(t: &Thresholds) -> Outcome {
    let a = t.empirical(3, CovarianceMode::Waveguides);
    let b = t.empirical(5, CovarianceMode::Waveguides);
    let joint = a.half_width().hypot(b.half_width());
    check(
        a.verdict == Verdict::Crossing && b.verdict == Verdict::Crossing && a.agrees_with(b),
        format!("n3 {}, n5 {}, |diff| {:.4} vs joint {joint:.4}", show(a), show(b), (a.rho_c - b.rho_c).abs()),
    )
}

fn criterion_8(exec: &Executor) -> Outcome {
    let cfg = config("variance_theorem.toml");
    let pair = Pair::reference(3);
    let checks =
        variance_chain(&pair.cp, &pair.uniform, &pair.phys, &cfg.grid.rho, &cfg.grid.sigma, SAMPLES, SEED, exec)
            .map_err(|e| e.to_string())?;
    let applicable: Vec<_> = checks.iter().filter(|c| c.applicable).collect();
    let bound_fail: Vec<String> =
        applicable.iter().filter(|c| !c.bound_ok()).map(|c| format!("(rho {}, sigma {})", c.rho, c.sigma)).collect();
    let dom_fail = applicable.iter().filter(|c| !c.dominance_ok()).count();
    let sqrt2 = std::f64::consts::SQRT_2;
    let ratio_dev =
        checks.iter().filter(|c| c.sigma <= 0.00667).map(|c| (c.phy_ratio / sqrt2 - 1.0).abs()).fold(0.0, f64::max);
    check(
        !applicable.is_empty() && bound_fail.is_empty() && dom_fail == 0 && ratio_dev <= 0.05,
        format!(
            "{} of {} applicable; bound fails at [{}]; dominance fails at {dom_fail}; phy ratio max dev {:.1}%",
            applicable.len(),
            checks.len(),
            bound_fail.join(" "),
            100.0 * ratio_dev
        ),
    )
}

fn curve_residuals(name: &str, cubic: bool, max_tol: f64, mean_tol: f64, exec: &Executor) -> Outcome {
    let cfg = config(name);
    let pair = Pair::reference(3);
    let bis = BisectionConfig { samples: SAMPLES, ..cfg.bisection_config() };
    let pts = critical_curve(&pair.cp, &pair.uniform, &pair.phys, cfg.grid.sigma[0], &cfg.grid.rho_bar, &bis, exec)
        .map_err(|e| e.to_string())?;
    let xy: Vec<(f64, f64)> =
        pts.iter().filter(|p| p.verdict == Verdict::Crossing).map(|p| (p.rho_bar, p.rho)).collect();
    let fit = if cubic { fit_polynomial_curve(&xy, 3) } else { fit_bilinear_curve(&xy) }.map_err(|e| e.to_string())?;
    let res: Vec<f64> = xy.iter().map(|&(rb, r)| fit.eval(rb).map_or(f64::INFINITY, |v| (v - r).abs())).collect();
    let mean = res.iter().sum::<f64>() / res.len() as f64;
    // residuals are relative to the full correlation range [0, 1]
    let ok = xy.len() >= 5 && fit.max_residual <= max_tol && mean <= mean_tol;
    check(ok, format!("{} points, max {:.2e}, mean {mean:.2e}", xy.len(), fit.max_residual))
}

fn criterion_9(exec: &Executor) -> Outcome {
    let small = curve_residuals("curve_small_sigma.toml", false, 0.01, 0.005, exec);
    let large = curve_residuals("curve_large_sigma.toml", true, 0.02, 0.01, exec);
    let text = |r: &Outcome| match r {
        Ok(s) | Err(s) => s.clone(),
    };
    check(
        small.is_ok() && large.is_ok(),
        format!("bilinear at small sigma: {}; cubic at large sigma: {}", text(&small), text(&large)),
    )
}

fn criterion_10() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for name in ["coefficients_waveguides.toml", "variance_theorem.toml", "sweep_rho_bar.toml"] {
        let mut cfg = config(name);
        cfg.samples = SAMPLES;
        let mut reference: Option<Vec<(String, String)>> = None;
        for w in [1, 2, 4] {
            let exec = Executor::new(w).map_err(|e| e.to_string())?;
            let files = compute_study(&cfg, &exec).map_err(|e| e.to_string())?.files;
            match &reference {
                None => reference = Some(files),
                Some(r) if *r != files => {
                    ok = false;
                    parts.push(format!("{name} differs at {w} workers"));
                }
                Some(_) => {}
            }
        }
        parts.push(format!("{name} identical"));
    }
    check(ok, parts.join(", "))
}

fn trace_oracle(b: &DMatrix<f64>, rho: f64) -> f64 {
    let n = b.nrows();
    let k = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { rho });
    let bk = b * &k;
    (&bk * &bk).trace().sqrt() / bk.trace().abs()
}

const G_ULPS: f64 = 8.0;

fn criterion_11() -> Outcome {
    let mut runner = TestRunner::deterministic();
    let strat = (1usize..=6, 1usize..=4, prop::collection::vec(-1.0..1.0f64, 24), 0.0..=1.0f64);
    let (mut drawn, mut worst, mut at_one, mut out_of_range) = (0, 0.0f64, 0.0f64, 0);
    while drawn < 200 {
        let (n, r, vals, rho) = draw(&mut runner, &strat);
        let a = DMatrix::from_iterator(n, r, vals.into_iter().take(n * r));
        let b = -(&a * a.transpose());
        if b.trace().abs() < 1e-9 || b.sum().abs() < 1e-9 {
            continue;
        }
        drawn += 1;
        let g = g_factor(&b, rho).map_err(|e| e.to_string())?;
        worst = worst.max((g - trace_oracle(&b, rho)).abs());
        // rank-one b gives G = 1 exactly; allow a few ulps of rounding above it
        out_of_range += usize::from(!(0.0..=1.0 + G_ULPS * f64::EPSILON).contains(&g));
        at_one = at_one.max((g_factor(&b, 1.0).map_err(|e| e.to_string())? - 1.0).abs());
    }
    check(
        at_one == 0.0 && out_of_range == 0 && worst <= 1e-9,
        format!("G(1) - 1 max {at_one:e}, {out_of_range} outside [0, 1 + {G_ULPS} ulp], oracle max err {worst:.1e}"),
    )
}

fn main() {
    let exec = Executor::new(std::thread::available_parallelism().map_or(1, |n| n.get())).expect("thread pool");
    let start = Instant::now();
    let mut failures = 0;
    let mut report = |id: usize, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let r = f();
        let (tag, detail) = match &r {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        failures += usize::from(r.is_err());
        println!("criterion {id:>2}: {tag} ({:.0} s) {detail}", t.elapsed().as_secs_f64());
    };
    report(1, &mut criterion_1);
    report(2, &mut criterion_2);
    report(3, &mut || criterion_3(&exec));
    let thresholds = Thresholds::compute(&exec);
    report(4, &mut || criterion_4(&thresholds));
    report(5, &mut || criterion_5(&thresholds));
    report(6, &mut || criterion_6(&exec));
    report(7, &mut || criterion_7(&thresholds));
    report(8, &mut || criterion_8(&exec));
    report(9, &mut || criterion_9(&exec));
    report(10, &mut criterion_10);
    report(11, &mut criterion_11);
    println!("acceptance: {} of 11 criteria passed in {:.0} s", 11 - failures, start.elapsed().as_secs_f64());
    if failures > 0 {
        std::process::exit(1);
    }
}
