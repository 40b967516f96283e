//! Randomized properties of the accumulator, threshold and readout, shared by
//! the property tests and the acceptance suite.

use cbgt_net::cbgt::{run_stream_traced, AccumulatorState, Threshold};
use cbgt_net::models::EvidenceVector;
use cbgt_net::numerics::softmax;
use proptest::collection::vec;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestError, TestRng, TestRunner};

pub const CASES: u32 = 1000;

/// A runner with a fixed seed so failures reproduce.
pub fn runner() -> TestRunner {
    let config = Config {
        cases: CASES,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn logits(k: usize, steps: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    vec(vec(-8.0f64..8.0, k), steps)
}

fn softmax_stream(k: usize, steps: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    logits(k, steps).prop_map(|rows| rows.iter().map(|r| softmax(r).unwrap()).collect())
}

fn run(
    rows: &[Vec<f64>],
    k: usize,
    tau: f64,
    max_steps: usize,
) -> std::result::Result<(cbgt_net::cbgt::StreamResult, usize), TestCaseError> {
    let mut it = rows.iter();
    let (result, trace) = run_stream_traced(0, 0, k, Threshold::new(tau).unwrap(), max_steps, || {
        Ok(it.next().map(|r| EvidenceVector(r.clone())))
    })
    .map_err(|e| TestCaseError::fail(e.to_string()))?;
    Ok((result, trace.len()))
}

fn report(outcome: std::result::Result<(), TestError<impl std::fmt::Debug>>) -> std::result::Result<(), String> {
    outcome.map_err(|e| e.to_string())
}

/// The decision fires at the first step whose running sum reaches τ in some
/// category, and never earlier.
pub fn first_crossing_minimality() -> std::result::Result<(), String> {
    let strategy = (2usize..7).prop_flat_map(|k| (Just(k), 0.05f64..5.0, softmax_stream(k, 64)));
    report(runner().run(&strategy, |(k, tau, rows)| {
        let (result, consumed) = run(&rows, k, tau, 64)?;
        let mut sums = vec![0.0f64; k];
        let mut first = None;
        for (t, row) in rows.iter().enumerate() {
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v;
            }
            if sums.iter().any(|&s| s >= tau) {
                first = Some(t + 1);
                break;
            }
        }
        // softmax rows put at least 1/k somewhere each step, so 64 steps always suffice
        let first = first.expect("crossing within the horizon");
        prop_assert!(result.decided_by_threshold);
        prop_assert_eq!(result.decision_time, first);
        prop_assert_eq!(consumed, first);
        Ok(())
    }))
}

/// Incremental accumulation agrees with a column-wise explicit sum.
pub fn accumulator_matches_explicit_sum() -> std::result::Result<(), String> {
    let strategy = (1usize..9).prop_flat_map(|k| (Just(k), (1usize..60).prop_flat_map(move |n| vec(vec(-10.0f64..10.0, k), n))));
    report(runner().run(&strategy, |(k, rows)| {
        let mut state = AccumulatorState::<f64>::new(k);
        for r in &rows {
            state.accumulate(r).unwrap();
        }
        prop_assert_eq!(state.steps(), rows.len());
        for i in 0..k {
            let explicit: f64 = rows.iter().map(|r| r[i]).sum();
            prop_assert!((state.evidence()[i] - explicit).abs() <= 1e-9, "category {}", i);
        }
        Ok(())
    }))
}

/// Readout lies on the simplex and ignores a constant shift of its input.
pub fn softmax_simplex_and_shift() -> std::result::Result<(), String> {
    let strategy = (1usize..12).prop_flat_map(|k| (vec(-50.0f64..50.0, k), -100.0f64..100.0));
    report(runner().run(&strategy, |(x, c)| {
        let y = softmax(&x).unwrap();
        prop_assert!(y.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!((y.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
        let z = softmax(&shifted).unwrap();
        for (a, b) in y.iter().zip(&z) {
            prop_assert!((a - b).abs() <= 1e-12, "{} vs {}", a, b);
        }
        Ok(())
    }))
}

/// Softmax evidence adds at most 1 per step to any category, so no decision
/// can come before step ⌈τ⌉.
pub fn decision_time_at_least_ceil_tau() -> std::result::Result<(), String> {
    let strategy = (2usize..7).prop_flat_map(|k| (Just(k), 0.01f64..6.0, softmax_stream(k, 64)));
    report(runner().run(&strategy, |(k, tau, rows)| {
        let (result, _) = run(&rows, k, tau, 64)?;
        prop_assert!(result.decided_by_threshold);
        prop_assert!(result.decision_time as f64 >= tau.ceil(), "t_d {} for tau {}", result.decision_time, tau);
        Ok(())
    }))
}

pub const ALL: [super::Check; 4] = [
    ("first-crossing minimality", first_crossing_minimality),
    ("accumulator equals explicit sum", accumulator_matches_explicit_sum),
    ("softmax simplex and shift invariance", softmax_simplex_and_shift),
    ("t_d >= ceil(tau) under softmax evidence", decision_time_at_least_ceil_tau),
];
