mod common;

#[test]
fn csv_labels_reconcile_with_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let c = common::heatmap_reconciliation(dir.path());
    assert!(c.pass, "{}", c.detail);
}
