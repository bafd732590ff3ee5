//! Correlation factor G(rho) against explicit matrix traces.

use nalgebra::DMatrix;
use proptest::prelude::*;

use cp_threshold::threshold::g_factor;

fn oracle(b: &DMatrix<f64>, rho: f64) -> f64 {
    let n = b.nrows();
    let k = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { rho });
    let bk = b * &k;
    (&bk * &bk).trace().sqrt() / bk.trace().abs()
}

/// Negative semidefinite `-A A^T` with `A` of shape `n x r`.
fn nsd() -> impl Strategy<Value = DMatrix<f64>> {
    (1usize..=6, 1usize..=4).prop_flat_map(|(n, r)| {
        prop::collection::vec(-1.0..1.0f64, n * r).prop_map(move |v| {
            let a = DMatrix::from_vec(n, r, v);
            -(&a * a.transpose())
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn matches_trace_oracle(b in nsd(), rho in 0.0..=1.0f64) {
        prop_assume!(b.trace().abs() > 1e-6);
        let g = g_factor(&b, rho).unwrap();
        let o = oracle(&b, rho);
        prop_assert!((g - o).abs() <= 1e-9 * o.max(1.0), "{g} vs {o}");
    }

    #[test]
    fn bounded_and_one_at_full_correlation(b in nsd(), rho in 0.0..=1.0f64) {
        let s = b.sum();
        prop_assume!(b.trace().abs() > 1e-6 && s.abs() > 1e-6 * b.amax());
        let g = g_factor(&b, rho).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&g), "{g}");
        prop_assert!((g_factor(&b, 1.0).unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn rejects_bad_input() {
    let b = DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.0, -1.0]);
    assert!(g_factor(&b, 0.5).is_err());
    let b = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -1.0]);
    assert!(g_factor(&b, 1.5).is_err());
    let zero = DMatrix::<f64>::zeros(2, 2);
    assert!(g_factor(&zero, 0.5).is_err());
}
