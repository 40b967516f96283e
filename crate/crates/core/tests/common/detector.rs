//! Convergence-detector checks against a separately written reference.

use cbgt_net::train::{ConvergenceDetector, NRMSD_THRESHOLD, SMOOTHING, WINDOW};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Textbook recursion and statistics, kept deliberately naive.
struct Reference {
    smoothed: Vec<f64>,
}

impl Reference {
    fn push(&mut self, x: f64) {
        let s = match self.smoothed.last() {
            None => x,
            Some(&prev) => 0.995 * prev + 0.005 * x,
        };
        self.smoothed.push(s);
    }

    fn nrmsd(&self) -> Option<f64> {
        if self.smoothed.len() < 100 {
            return None;
        }
        let w = &self.smoothed[self.smoothed.len() - 100..];
        let mean = w.iter().sum::<f64>() / 100.0;
        let var = w.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / 100.0;
        Some(var.sqrt() / mean)
    }
}

pub fn constant_stream_converges_at_point_100() -> Result<(), String> {
    for value in [0.8, 0.25, 1.0, 0.9137] {
        let mut d = ConvergenceDetector::default();
        for i in 1..=100 {
            let c = d.update(value).map_err(|e| e.to_string())?;
            if c != (i == 100) {
                return Err(format!("value {value}: converged = {c} at point {i}"));
            }
        }
        if d.nrmsd() != Some(0.0) {
            return Err(format!("value {value}: NRMSD {:?} at point 100", d.nrmsd()));
        }
    }
    Ok(())
}

pub fn recursion_matches_reference() -> Result<(), String> {
    if (SMOOTHING, WINDOW, NRMSD_THRESHOLD) != (0.995, 100, 0.0015) {
        return Err("detector constants changed".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for trial in 0..20 {
        let mut d = ConvergenceDetector::default();
        let mut r = Reference { smoothed: Vec::new() };
        let mut level = rng.random_range(0.1..0.9);
        for t in 0..600 {
            level = (level + rng.random_range(-0.02..0.02f64)).clamp(0.0, 1.0);
            let x = if trial % 2 == 0 { level } else { (level * 256.0).round() / 256.0 };
            d.update(x).map_err(|e| e.to_string())?;
            r.push(x);
            let (a, b) = (d.smoothed().unwrap(), *r.smoothed.last().unwrap());
            if (a - b).abs() > 1e-12 {
                return Err(format!("trial {trial} point {t}: smoothed {a} vs reference {b}"));
            }
            match (d.nrmsd(), r.nrmsd()) {
                (None, None) => {}
                (Some(a), Some(b)) if (a - b).abs() <= 1e-12 => {}
                (a, b) => return Err(format!("trial {trial} point {t}: NRMSD {a:?} vs reference {b:?}")),
            }
        }
    }
    Ok(())
}

pub fn detector_replays_identically() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let stream: Vec<f64> = (0..3000)
        .map(|t| (0.9 - 0.5 * (-(t as f64) / 300.0).exp() + rng.random_range(-0.01..0.01)).clamp(0.0, 1.0))
        .collect();
    let trace = || {
        let mut d = ConvergenceDetector::default();
        stream
            .iter()
            .map(|&x| {
                let c = d.update(x).unwrap();
                (d.smoothed().unwrap().to_bits(), d.nrmsd().map(f64::to_bits), c)
            })
            .collect::<Vec<_>>()
    };
    let (a, b) = (trace(), trace());
    if a != b {
        return Err("two detectors fed the same stream disagree".into());
    }
    if !a.iter().any(|t| t.2) {
        return Err("the replay stream never converged".into());
    }
    Ok(())
}

pub const ALL: [super::Check; 3] = [
    ("constant stream converges at point 100 with NRMSD 0", constant_stream_converges_at_point_100),
    ("recursion matches an independent reference to 1e-12", recursion_matches_reference),
    ("detector is replay-deterministic", detector_replays_identically),
];
