#![no_main]

use cp_threshold::solution_io::{parse_solution, solution_to_json};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(sol) = parse_solution(text) {
        // anything accepted must survive a write/read cycle unchanged
        let again = parse_solution(&solution_to_json(&sol)).expect("re-parse of written solution");
        assert_eq!(again, sol);
    }
});
