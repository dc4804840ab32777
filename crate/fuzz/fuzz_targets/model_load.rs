//! The model-file decoder must never panic on arbitrary bytes, and anything
//! it accepts must re-encode to exactly the input (the format is canonical).

#![no_main]

use libfuzzer_sys::fuzz_target;

use edt::ngram::NGramModel;

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = NGramModel::load(data) {
        assert_eq!(model.save(), data, "canonical re-encode must round-trip");
        // Exercise the query paths with arbitrary context ids.
        let _ = model.logits(&[0, 1, u32::MAX], &[2]);
        let _ = model.unconditional_logits(&[]);
        let _ = model.encode("the quick brown fox");
    }
});
