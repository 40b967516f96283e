mod common;

use common::streams::check_stream_gradient;

#[test]
fn capped_streams_match_finite_differences() {
    // τ out of reach: every stream runs to the cap of 3 steps
    let c = check_stream_gradient(50.0, 3, 4, 11);
    assert!(c.decision_times.iter().all(|&t| t == 3));
    assert!(c.rel_error < 1e-4, "relative error {:e}", c.rel_error);
}

#[test]
fn threshold_decided_streams_match_finite_differences() {
    let c = check_stream_gradient(1.2, 4, 6, 5);
    assert!(!c.decision_times_moved);
    assert!(c.decision_times.iter().all(|&t| (1..=4).contains(&t)));
    assert!(c.decision_times.iter().any(|&t| t > 1), "{:?}", c.decision_times);
    assert!(c.rel_error < 1e-4, "relative error {:e}", c.rel_error);
}
