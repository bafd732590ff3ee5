#![no_main]

use cp_threshold::records::{parse_scaling_csv, write_scaling_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(rows) = parse_scaling_csv(text) {
        let again = parse_scaling_csv(&write_scaling_csv(&[], &rows)).expect("re-parse of written rows");
        assert_eq!(again.len(), rows.len());
    }
});
