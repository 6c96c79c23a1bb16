#![no_main]

use std::sync::OnceLock;

use libfuzzer_sys::fuzz_target;
use tiktoc::data::{parse_problems, parse_submissions, Problem};

static PROBLEMS: &str = r#"[{"problem_id":"inc","statement":"Add one.","entry_signature":"fn inc(a: int) -> int",
"tests":[{"input":[1],"expected_output":2},{"input":[5],"expected_output":6}]}]"#;

fn problems() -> &'static std::collections::BTreeMap<String, Problem> {
    static P: OnceLock<std::collections::BTreeMap<String, Problem>> = OnceLock::new();
    P.get_or_init(|| parse_problems(PROBLEMS).expect("seed problems parse"))
}

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_submissions(text, problems());
    }
});
