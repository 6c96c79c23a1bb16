#![no_main]

use libfuzzer_sys::fuzz_target;
use tiktoc::tokenizer::Tokenizer;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(tok) = Tokenizer::train([text], 300) {
        assert_eq!(tok.decode(&tok.encode(text)), text);
        let _ = Tokenizer::from_merges(tok.merges().to_vec());
    }
});
