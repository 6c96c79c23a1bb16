#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(src) = std::str::from_utf8(data) else { return };
    let _ = minilang::parse_program(src);
    let _ = minilang::surface_tokens(src);
    if let Ok(sig) = minilang::parse_signature("fn f(a: int, s: string) -> int") {
        if let Ok(unit) = minilang::compile(src, &sig) {
            let limits = minilang::Limits { timeout: std::time::Duration::from_millis(50), ..Default::default() };
            let _ = unit.run(vec![minilang::Value::Int(3), minilang::Value::str("abc")], limits);
        }
    }
});
