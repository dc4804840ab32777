//! Sweep config parsing and grid expansion must never panic.

#![no_main]

use libfuzzer_sys::fuzz_target;

use edt::harness::SweepConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(config) = SweepConfig::from_json(text) {
            let _ = config.grid();
        }
    }
});
