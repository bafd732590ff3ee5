#![no_main]

use cp_threshold::error_model::{psd_factor, CovarianceMatrix};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cov) = CovarianceMatrix::from_csv(text) {
        // small accepted matrices must round-trip and factor or fail cleanly
        if cov.dim() <= 16 {
            let again = CovarianceMatrix::from_csv(&cov.to_csv()).expect("re-parse of written matrix");
            assert_eq!(again.dim(), cov.dim());
            let _ = psd_factor(&cov);
        }
    }
});
