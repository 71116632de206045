//! Runs the full acceptance suite and prints one line per criterion.

#[test]
fn acceptance_suite() {
    let results = al_lab::acceptance::run_all();
    let mut failed = Vec::new();
    for r in &results {
        let status = if r.passed { "pass" } else { "FAIL" };
        println!("[{status}] {:2}. {} — {}", r.index, r.name, r.detail);
        if !r.passed {
            failed.push(r.index);
        }
    }
    assert_eq!(results.len(), 10);
    assert!(failed.is_empty(), "criteria failed: {failed:?}");
}
