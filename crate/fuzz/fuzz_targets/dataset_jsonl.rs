//! JSONL dataset parsing must never panic, whatever the bytes.

#![no_main]

use libfuzzer_sys::fuzz_target;

use edt::harness::{parse_dataset, Task};

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        for task in [
            Task::Summarization,
            Task::Qa,
            Task::Translation,
            Task::Freeform,
        ] {
            let _ = parse_dataset(text, task);
        }
    }
});
