#![no_main]

use libfuzzer_sys::fuzz_target;
use tiktoc::metrics::{codebleu, CodeBleuWeights};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let (a, b) = text.split_once('\u{0}').unwrap_or((text, text));
    if let Ok(cb) = codebleu(a, b, CodeBleuWeights::default()) {
        assert!((0.0..=1.0 + 1e-9).contains(&cb.score));
    }
});
