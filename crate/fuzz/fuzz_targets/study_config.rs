#![no_main]

use cp_threshold_cli::StudyConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = StudyConfig::parse(text) {
        let _ = cfg.validate();
        serde_json::to_string(&cfg).expect("parsed config serializes");
    }
});
