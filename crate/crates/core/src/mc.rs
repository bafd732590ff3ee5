//! Monte Carlo fidelity statistics.
//!
//! Sample `k` always uses the standard normals of stream `(seed, k)`, and
//! per-sample values are reduced sequentially in index order, so results are
//! bit-identical for any worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coupler::{composite_unitary_flat, CompositeSolution, CouplerError, CouplerPhysics};
use crate::error_model::{
    build_covariance, psd_factor, CorrelationSpec, CovarianceMode, ErrorModelError, Factor, NormalStream,
};
use crate::su2::gate_fidelity;

/// Minimum sample count accepted by the estimators.
pub const MIN_SAMPLES: usize = 100;
/// Rejected-sample fraction above which a result is flagged unreliable.
pub const MAX_REJECTED_FRACTION: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum McError {
    #[error("need at least {MIN_SAMPLES} samples, got {0}")]
    TooFewSamples(usize),
    #[error("correlation spec has n = {spec} segments but the solution has {solution}")]
    SegmentMismatch { spec: usize, solution: usize },
    #[error("the comparison gate must have exactly one segment, got {0}")]
    UniformNotSingle(usize),
    #[error("every sample was rejected")]
    AllRejected,
    #[error("could not start worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Coupler(#[from] CouplerError),
    #[error(transparent)]
    ErrorModel(#[from] ErrorModelError),
}

/// Fixed-size worker pool. Results never depend on the number of workers.
pub struct Executor {
    pool: rayon::ThreadPool,
    workers: usize,
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Executor").field("workers", &self.workers).finish()
    }
}

impl Executor {
    pub fn new(workers: usize) -> Result<Self, McError> {
        let workers = workers.max(1);
        let pool =
            rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(|e| McError::Pool(e.to_string()))?;
        Ok(Executor { pool, workers })
    }

    pub fn single() -> Self {
        Executor::new(1).expect("single-thread pool")
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    /// Maps `f` over `0..count`, returning results in index order.
    pub fn map_indices<T, S, I, F>(&self, count: usize, init: I, f: F) -> Vec<T>
    where
        T: Send,
        I: Fn() -> S + Sync + Send,
        F: Fn(&mut S, u64) -> T + Sync + Send,
    {
        self.pool.install(|| (0..count as u64).into_par_iter().map_init(&init, &f).collect())
    }
}

/// Mean and spread of the fidelity over Monte Carlo samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityStats {
    pub mean: f64,
    pub std: f64,
    pub stderr_mean: f64,
    /// Asymptotic `std / sqrt(2 samples)`; exact only for Gaussian fidelities.
    pub stderr_std: f64,
    /// Accepted samples.
    pub samples: usize,
    pub seed: u64,
    pub rejected: usize,
    pub unreliable: bool,
}

fn rejected_flag(rejected: usize, total: usize) -> bool {
    rejected as f64 > MAX_REJECTED_FRACTION * total as f64
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var =
        if values.len() > 1 { values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

impl FidelityStats {
    fn from_values(values: &[f64], seed: u64, rejected: usize) -> Self {
        let (mean, std) = mean_std(values);
        let n = values.len() as f64;
        FidelityStats {
            mean,
            std,
            stderr_mean: std / n.sqrt(),
            stderr_std: std / (2.0 * n).sqrt(),
            samples: values.len(),
            seed,
            rejected,
            unreliable: rejected_flag(rejected, values.len() + rejected),
        }
    }
}

/// Statistics of `F_cp - F_phy` from common random numbers, plus both arms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedStats {
    pub cp: FidelityStats,
    pub phy: FidelityStats,
    pub diff_mean: f64,
    pub diff_std: f64,
    pub diff_stderr: f64,
    /// `std_cp - std_phy`.
    pub std_diff: f64,
    /// Delta-method standard error of `std_diff`.
    pub std_diff_stderr: f64,
    pub samples: usize,
    pub seed: u64,
    pub rejected: usize,
    pub unreliable: bool,
}

struct Sampler {
    factor: Factor,
    stream: NormalStream,
}

impl Sampler {
    fn new(spec: &CorrelationSpec, mode: CovarianceMode, seed: u64) -> Result<Self, McError> {
        let cov = build_covariance(spec, mode)?;
        Ok(Sampler { factor: psd_factor(&cov)?, stream: NormalStream::new(seed) })
    }

    fn dim(&self) -> usize {
        self.factor.dim()
    }

    fn draw(&self, index: u64, g: &mut [f64], eps: &mut [f64]) {
        self.stream.fill(index, g);
        self.factor.apply(g, eps);
    }
}

fn fidelity_at(
    sol: &CompositeSolution,
    eps: &[f64],
    m: usize,
    phys: &CouplerPhysics,
) -> Result<Option<f64>, CouplerError> {
    match composite_unitary_flat(sol, eps, m, phys) {
        Ok(u) => Ok(Some(gate_fidelity(sol.ideal(), &u))),
        Err(e) if e.is_perturbation() => Ok(None),
        Err(e) => Err(e),
    }
}

fn check_samples(samples: usize) -> Result<(), McError> {
    if samples < MIN_SAMPLES {
        Err(McError::TooFewSamples(samples))
    } else {
        Ok(())
    }
}

/// Sample mean and standard deviation of the fidelity of `sol` under `spec`.
#[allow(clippy::too_many_arguments)]
pub fn fidelity_stats(
    sol: &CompositeSolution,
    spec: &CorrelationSpec,
    mode: CovarianceMode,
    phys: &CouplerPhysics,
    samples: usize,
    seed: u64,
    exec: &Executor,
) -> Result<FidelityStats, McError> {
    check_samples(samples)?;
    if spec.n != sol.len() {
        return Err(McError::SegmentMismatch { spec: spec.n, solution: sol.len() });
    }
    phys.validate()?;
    let sampler = Sampler::new(spec, mode, seed)?;
    let dim = sampler.dim();
    let m = spec.m;
    let raw = exec.map_indices(
        samples,
        || (vec![0.0; dim], vec![0.0; dim]),
        |(g, eps), k| {
            sampler.draw(k, g, eps);
            fidelity_at(sol, eps, m, phys)
        },
    );
    let mut values = Vec::with_capacity(samples);
    let mut rejected = 0;
    for r in raw {
        match r? {
            Some(v) => values.push(v),
            None => rejected += 1,
        }
    }
    if values.is_empty() {
        return Err(McError::AllRejected);
    }
    Ok(FidelityStats::from_values(&values, seed, rejected))
}

/// Per-sample fidelities of both arms of a paired run, in sample-index order.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSamples {
    /// Sample index of each retained pair.
    pub index: Vec<u64>,
    pub cp: Vec<f64>,
    pub phy: Vec<f64>,
    pub requested: usize,
    pub rejected: usize,
    pub seed: u64,
}

/// Runs both arms on common random numbers. The single-segment arm sees the
/// errors drawn for the first segment of the composite arm; a pair is dropped
/// when either arm draws an unphysical width.
#[allow(clippy::too_many_arguments)]
pub fn paired_samples(
    cp: &CompositeSolution,
    uniform: &CompositeSolution,
    spec: &CorrelationSpec,
    mode: CovarianceMode,
    phys: &CouplerPhysics,
    samples: usize,
    seed: u64,
    exec: &Executor,
) -> Result<PairedSamples, McError> {
    check_samples(samples)?;
    if uniform.len() != 1 {
        return Err(McError::UniformNotSingle(uniform.len()));
    }
    if spec.n != cp.len() {
        return Err(McError::SegmentMismatch { spec: spec.n, solution: cp.len() });
    }
    phys.validate()?;
    let sampler = Sampler::new(spec, mode, seed)?;
    let dim = sampler.dim();
    let m = spec.m;
    let raw = exec.map_indices(
        samples,
        || (vec![0.0; dim], vec![0.0; dim]),
        |(g, eps), k| -> Result<Option<(f64, f64)>, CouplerError> {
            sampler.draw(k, g, eps);
            let a = fidelity_at(cp, eps, m, phys)?;
            let b = fidelity_at(uniform, &eps[..m], m, phys)?;
            Ok(a.zip(b))
        },
    );
    let mut out = PairedSamples {
        index: Vec::with_capacity(samples),
        cp: Vec::with_capacity(samples),
        phy: Vec::with_capacity(samples),
        requested: samples,
        rejected: 0,
        seed,
    };
    for (k, r) in raw.into_iter().enumerate() {
        match r? {
            Some((a, b)) => {
                out.index.push(k as u64);
                out.cp.push(a);
                out.phy.push(b);
            }
            None => out.rejected += 1,
        }
    }
    if out.cp.is_empty() {
        return Err(McError::AllRejected);
    }
    Ok(out)
}

impl PairedSamples {
    pub fn stats(&self) -> PairedStats {
        let diffs: Vec<f64> = self.cp.iter().zip(&self.phy).map(|(a, b)| a - b).collect();
        let (diff_mean, diff_std) = mean_std(&diffs);
        let cp_stats = FidelityStats::from_values(&self.cp, self.seed, self.rejected);
        let phy_stats = FidelityStats::from_values(&self.phy, self.seed, self.rejected);
        let n = diffs.len() as f64;

        // influence function of the sample std: ((x - mu)^2 - s^2) / (2 s)
        let influence = |x: f64, st: &FidelityStats| {
            if st.std > 0.0 {
                ((x - st.mean).powi(2) - st.std * st.std) / (2.0 * st.std)
            } else {
                0.0
            }
        };
        let infl: Vec<f64> =
            self.cp.iter().zip(&self.phy).map(|(&a, &b)| influence(a, &cp_stats) - influence(b, &phy_stats)).collect();
        let (_, infl_sd) = mean_std(&infl);

        PairedStats {
            cp: cp_stats,
            phy: phy_stats,
            diff_mean,
            diff_std,
            diff_stderr: diff_std / n.sqrt(),
            std_diff: cp_stats.std - phy_stats.std,
            std_diff_stderr: infl_sd / n.sqrt(),
            samples: diffs.len(),
            seed: self.seed,
            rejected: self.rejected,
            unreliable: rejected_flag(self.rejected, self.requested),
        }
    }

    /// Means of both arms over `batches` contiguous blocks of sample indices.
    /// Empty blocks (possible only with heavy rejection) are skipped.
    pub fn batch_means(&self, batches: usize) -> Vec<(f64, f64)> {
        let batches = batches.max(1);
        let mut sums = vec![(0.0, 0.0, 0usize); batches];
        for ((&k, &a), &b) in self.index.iter().zip(&self.cp).zip(&self.phy) {
            let slot = (k as usize * batches) / self.requested;
            let s = &mut sums[slot.min(batches - 1)];
            s.0 += a;
            s.1 += b;
            s.2 += 1;
        }
        sums.into_iter().filter(|s| s.2 > 0).map(|(a, b, c)| (a / c as f64, b / c as f64)).collect()
    }
}

/// Paired estimate of `F_cp - F_phy` on common random numbers.
#[allow(clippy::too_many_arguments)]
pub fn paired_fidelity_diff(
    cp: &CompositeSolution,
    uniform: &CompositeSolution,
    spec: &CorrelationSpec,
    mode: CovarianceMode,
    phys: &CouplerPhysics,
    samples: usize,
    seed: u64,
    exec: &Executor,
) -> Result<PairedStats, McError> {
    Ok(paired_samples(cp, uniform, spec, mode, phys, samples, seed, exec)?.stats())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupler::Segment;
    use crate::su2::Unitary2;

    fn table_one(phys: &CouplerPhysics) -> CompositeSolution {
        let sol = CompositeSolution::new(
            vec![
                Segment::new(0.4125, 0.4685, 22.5835),
                Segment::new(0.449, 0.382, 24.7905),
                Segment::new(0.412, 0.468, 22.5195),
            ],
            Unitary2::identity(),
        )
        .unwrap();
        sol.with_ideal(sol.nominal_unitary(phys).unwrap())
    }

    fn uniform(phys: &CouplerPhysics) -> CompositeSolution {
        let z = phys.complete_coupling_length(0.45).unwrap();
        CompositeSolution::new(vec![Segment::new(0.45, 0.45, z)], Unitary2::full_transfer()).unwrap()
    }

    #[test]
    fn zero_sigma_gives_nominal() {
        let p = CouplerPhysics::default();
        let sol = table_one(&p).with_ideal(Unitary2::full_transfer());
        let spec = CorrelationSpec::new(0.0, 0.5, 0.5, 3);
        let st = fidelity_stats(&sol, &spec, CovarianceMode::General, &p, 200, 3, &Executor::single()).unwrap();
        assert!((st.mean - sol.nominal_fidelity(&p).unwrap()).abs() < 1e-14);
        assert!(st.std < 1e-15);
        assert_eq!(st.rejected, 0);
    }

    #[test]
    fn single_segment_loses_fidelity() {
        let p = CouplerPhysics::default();
        let u = uniform(&p);
        let spec = CorrelationSpec::new(0.00667, 0.0, 0.0, 1);
        let st = fidelity_stats(&u, &spec, CovarianceMode::General, &p, 1000, 5, &Executor::single()).unwrap();
        assert!(st.mean < 1.0);
        assert!((st.stderr_mean - st.std / 1000f64.sqrt()).abs() < 1e-18);
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = CouplerPhysics::default();
        let u = uniform(&p);
        let ex = Executor::single();
        let spec = CorrelationSpec::new(0.001, 0.0, 0.0, 1);
        assert_eq!(
            fidelity_stats(&u, &spec, CovarianceMode::General, &p, 10, 1, &ex).unwrap_err(),
            McError::TooFewSamples(10)
        );
        let spec3 = CorrelationSpec::new(0.001, 0.0, 0.0, 3);
        assert!(matches!(
            fidelity_stats(&u, &spec3, CovarianceMode::General, &p, 100, 1, &ex),
            Err(McError::SegmentMismatch { .. })
        ));
        let t = table_one(&p);
        assert!(matches!(
            paired_fidelity_diff(&t, &t, &spec3, CovarianceMode::General, &p, 100, 1, &ex),
            Err(McError::UniformNotSingle(3))
        ));
    }

    #[test]
    fn paired_with_itself_is_zero() {
        let p = CouplerPhysics::default();
        let u = uniform(&p);
        let spec = CorrelationSpec::new(0.00667, 0.3, 0.6, 1);
        let st = paired_fidelity_diff(&u, &u, &spec, CovarianceMode::General, &p, 500, 8, &Executor::single()).unwrap();
        assert_eq!(st.diff_mean, 0.0);
        assert_eq!(st.diff_std, 0.0);
        assert_eq!(st.std_diff, 0.0);
    }

    #[test]
    fn paired_at_zero_sigma_is_nominal_difference() {
        let p = CouplerPhysics::default();
        let t = table_one(&p).with_ideal(Unitary2::full_transfer());
        let u = uniform(&p);
        let spec = CorrelationSpec::new(0.0, 0.3, 0.6, 3);
        let st = paired_fidelity_diff(&t, &u, &spec, CovarianceMode::General, &p, 100, 8, &Executor::single()).unwrap();
        let expected = t.nominal_fidelity(&p).unwrap() - u.nominal_fidelity(&p).unwrap();
        assert!((st.diff_mean - expected).abs() < 1e-14);
    }

    #[test]
    fn huge_sigma_counts_rejections() {
        let p = CouplerPhysics::default();
        let u = uniform(&p);
        let spec = CorrelationSpec::new(0.3, 0.0, 0.0, 1);
        let st = fidelity_stats(&u, &spec, CovarianceMode::General, &p, 400, 2, &Executor::single()).unwrap();
        assert!(st.rejected > 0);
        assert!(st.unreliable);
        assert_eq!(st.samples + st.rejected, 400);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let p = CouplerPhysics::default();
        let t = table_one(&p);
        let u = uniform(&p).with_ideal(*t.ideal());
        let spec = CorrelationSpec::new(0.005, 0.4, 0.8, 3);
        let runs: Vec<PairedStats> = [1, 4, 16]
            .iter()
            .map(|&w| {
                paired_fidelity_diff(&t, &u, &spec, CovarianceMode::General, &p, 3000, 42, &Executor::new(w).unwrap())
                    .unwrap()
            })
            .collect();
        for r in &runs[1..] {
            assert_eq!(r.diff_mean.to_bits(), runs[0].diff_mean.to_bits());
            assert_eq!(r.cp.std.to_bits(), runs[0].cp.std.to_bits());
            assert_eq!(r.std_diff_stderr.to_bits(), runs[0].std_diff_stderr.to_bits());
        }
    }
}
