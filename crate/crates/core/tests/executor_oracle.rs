mod common;

#[test]
fn backend_agrees_with_reference_interpreter() {
    let c = common::executor_oracle(600, 17);
    assert!(c.pass, "{}", c.detail);
}

#[test]
fn compile_failures_and_loops_fail_every_test() {
    let c = common::labeling_rules();
    assert!(c.pass, "{}", c.detail);
}
