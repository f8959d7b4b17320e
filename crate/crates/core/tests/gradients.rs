use bms_core::gradsuite::{run_suite, SuiteConfig};
use bms_core::tensor::{GradCheckConfig, OP_NAMES};

#[test]
fn full_suite_passes_on_at_least_100_instances() {
    let start = std::time::Instant::now();
    let report = run_suite(&SuiteConfig::default()).unwrap();
    for e in &report.entries {
        println!(
            "{:<10} {:<28} n={:<3} max_rel={:.2e} {}",
            e.group, e.component, e.instances, e.max_rel_err, e.passed
        );
    }
    let bad: Vec<_> = report.failures().map(|e| e.component.clone()).collect();
    assert!(bad.is_empty(), "failing components: {bad:?}");
    assert!(
        report.instances() >= 100,
        "{} instances",
        report.instances()
    );
    for op in OP_NAMES {
        assert!(
            report
                .entries
                .iter()
                .any(|e| e.group == "op" && e.component == *op),
            "{op} unchecked"
        );
    }
    assert!(start.elapsed().as_secs() < 120);
}

#[test]
fn injected_fault_is_reported_by_op_name() {
    for op in ["sigmoid", "conv2d", "logsumexp"] {
        let cfg = SuiteConfig {
            check: GradCheckConfig {
                fault: Some(op.to_string()),
                ..GradCheckConfig::default()
            },
            ..SuiteConfig::default()
        };
        let report = run_suite(&cfg).unwrap();
        let op_entry = report
            .entries
            .iter()
            .find(|e| e.group == "op" && e.component == op)
            .unwrap();
        assert!(!op_entry.passed, "{op} fault went unnoticed");
        let others_ok = report
            .entries
            .iter()
            .filter(|e| e.group == "op" && e.component != op)
            .all(|e| e.passed);
        assert!(others_ok, "fault in {op} leaked into other op checks");
    }
}
