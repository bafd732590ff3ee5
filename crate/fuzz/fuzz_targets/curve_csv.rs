#![no_main]

use cp_threshold::records::{parse_curve_csv, write_curve_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(points) = parse_curve_csv(text) {
        let again = parse_curve_csv(&write_curve_csv(&[], &points)).expect("re-parse of written points");
        assert_eq!(again.len(), points.len());
    }
});
