//! End-to-end run of the aggregated identity suite.

use hierwave::verify::{verify_suite, Fault};

#[test]
fn default_suite_passes() {
    let report = verify_suite(1, None).unwrap();
    for check in &report.checks {
        println!(
            "[{}] {}: {:?}",
            if check.passed { "PASS" } else { "FAIL" },
            check.name,
            check.measured
        );
    }
    assert!(report.all_passed(), "verify suite must pass on the default setup");
}

#[test]
fn injected_fault_is_detected() {
    let report = verify_suite(1, Some(Fault::FlipFluxSign)).unwrap();
    let adj = report
        .checks
        .iter()
        .find(|c| c.name == "adjointness-A-Astar")
        .unwrap();
    assert!(!adj.passed, "flux sign fault must break adjointness");
}
