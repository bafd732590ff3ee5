use nalgebra::DMatrix;

use super::ThresholdError;

/// `G(rho) = sqrt(Tr(b K b K)) / |Tr(b K)|` with `K = (1 - rho) I + rho J`,
/// `J` the all-ones matrix. For negative semidefinite `b` this lies in
/// `[0, 1]` and equals 1 at full correlation.
///
/// Traces are expanded in `s = 1^T b 1` and `q = 1^T b^2 1` so the
/// full-correlation value is exactly `sqrt(s^2) / |s| = 1`.
pub fn g_factor(b: &DMatrix<f64>, rho: f64) -> Result<f64, ThresholdError> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(ThresholdError::OutOfRange(rho));
    }
    let n = b.nrows();
    if n == 0 || b.ncols() != n {
        return Err(ThresholdError::NotSymmetric);
    }
    let scale = b.amax();
    if (b - b.transpose()).amax() > 1e-12 * scale {
        return Err(ThresholdError::NotSymmetric);
    }
    let row_sums: Vec<f64> = b.row_iter().map(|r| r.sum()).collect();
    let s: f64 = row_sums.iter().sum();
    let q: f64 = row_sums.iter().map(|v| v * v).sum();
    let tr = b.trace();
    let tr2 = b.component_mul(b).sum();
    let one = 1.0 - rho;
    let tr_bk = one * tr + rho * s;
    let tr_bkbk = one * one * tr2 + 2.0 * rho * one * q + rho * rho * s * s;
    if tr_bk == 0.0 || !tr_bk.is_finite() {
        return Err(ThresholdError::ZeroTrace);
    }
    Ok(tr_bkbk.max(0.0).sqrt() / tr_bk.abs())
}
