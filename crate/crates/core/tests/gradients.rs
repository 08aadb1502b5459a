mod support;

use std::time::Instant;

use support::gradcheck::run_suite;

#[test]
fn every_op_matches_finite_differences() {
    let start = Instant::now();
    let results = run_suite(11, 20);
    for r in &results {
        eprintln!("{:<14} instances={:>3} max_rel_err={:.3e}", r.op, r.instances, r.max_rel_err);
    }
    for r in &results {
        assert!(r.instances >= 20, "{}: {} instances", r.op, r.instances);
        assert!(r.max_rel_err < 1e-3, "{}: relative error {:.3e}", r.op, r.max_rel_err);
    }
    assert!(start.elapsed().as_secs_f64() < 60.0);
}
