use std::collections::VecDeque;

use crate::error::{Error, Result};

pub const SMOOTHING: f64 = 0.995;
pub const WINDOW: usize = 100;
pub const NRMSD_THRESHOLD: f64 = 0.0015;

/// Declares training converged once exponentially smoothed validation
/// accuracy has flattened out.
///
/// `s_0 = x_0` and `s_t = α·s_{t-1} + (1 − α)·x_t`. Over the last `window`
/// smoothed values, NRMSD is the population standard deviation divided by
/// the mean. Convergence needs a full window and NRMSD below the threshold.
/// A window whose mean is zero never counts as converged.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceDetector {
    alpha: f64,
    window: usize,
    threshold: f64,
    smoothed: Option<f64>,
    recent: VecDeque<f64>,
    points: usize,
}

impl Default for ConvergenceDetector {
    fn default() -> Self {
        Self::new(SMOOTHING, WINDOW, NRMSD_THRESHOLD).expect("default parameters are valid")
    }
}

impl ConvergenceDetector {
    pub fn new(alpha: f64, window: usize, threshold: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::invalid(format!("smoothing factor {alpha} outside [0, 1)")));
        }
        if window == 0 {
            return Err(Error::invalid("convergence window must be at least 1"));
        }
        if threshold.is_nan() || threshold <= 0.0 {
            return Err(Error::invalid(format!("NRMSD threshold {threshold} must be positive")));
        }
        Ok(Self {
            alpha,
            window,
            threshold,
            smoothed: None,
            recent: VecDeque::with_capacity(window),
            points: 0,
        })
    }

    /// Number of accuracies fed so far.
    pub fn points(&self) -> usize {
        self.points
    }

    pub fn smoothed(&self) -> Option<f64> {
        self.smoothed
    }

    /// NRMSD of the current window, once it is full and its mean is non-zero.
    pub fn nrmsd(&self) -> Option<f64> {
        if self.recent.len() < self.window {
            return None;
        }
        let n = self.recent.len() as f64;
        let mean = self.recent.iter().sum::<f64>() / n;
        if mean == 0.0 {
            return None;
        }
        // deviations from the first element keep a constant window exactly at zero
        let first = self.recent[0];
        let shift = self.recent.iter().map(|s| s - first).sum::<f64>() / n;
        let var = self.recent.iter().map(|s| (s - first - shift).powi(2)).sum::<f64>() / n;
        Some(var.sqrt() / mean)
    }

    /// Feeds one validation accuracy and reports whether training has now
    /// converged.
    pub fn update(&mut self, accuracy: f64) -> Result<bool> {
        if !(0.0..=1.0).contains(&accuracy) {
            return Err(Error::invalid(format!("validation accuracy {accuracy} outside [0, 1]")));
        }
        let s = match self.smoothed {
            None => accuracy,
            // α·prev + (1 − α)·x, arranged so that x == prev leaves prev unchanged
            Some(prev) => prev + (1.0 - self.alpha) * (accuracy - prev),
        };
        self.smoothed = Some(s);
        if self.recent.len() == self.window {
            self.recent.pop_front();
        }
        self.recent.push_back(s);
        self.points += 1;
        Ok(self.converged())
    }

    pub fn converged(&self) -> bool {
        self.nrmsd().is_some_and(|v| v < self.threshold)
    }
}

pub fn update_convergence(detector: &mut ConvergenceDetector, validation_accuracy: f64) -> Result<bool> {
    detector.update(validation_accuracy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_stream_converges_at_the_hundredth_point() {
        let mut d = ConvergenceDetector::default();
        for i in 1..=100 {
            let c = d.update(0.8).unwrap();
            assert_eq!(c, i == 100, "point {i}");
        }
        assert_eq!(d.nrmsd(), Some(0.0));
    }

    #[test]
    fn alternating_stream_does_not_converge_early() {
        let mut d = ConvergenceDetector::default();
        for i in 0..100 {
            assert!(!d.update((i % 2) as f64).unwrap());
        }
    }

    #[test]
    fn spike_then_constant_eventually_converges() {
        let mut d = ConvergenceDetector::default();
        d.update(1.0).unwrap();
        let mut at = None;
        for i in 2..=5000 {
            if d.update(0.5).unwrap() {
                at = Some(i);
                break;
            }
        }
        let at = at.expect("converges");
        assert!(at > 100);
    }

    #[test]
    fn zero_mean_window_is_not_converged() {
        let mut d = ConvergenceDetector::default();
        for _ in 0..150 {
            assert!(!d.update(0.0).unwrap());
        }
        assert_eq!(d.nrmsd(), None);
    }

    #[test]
    fn out_of_range_accuracy_is_rejected() {
        let mut d = ConvergenceDetector::default();
        assert!(d.update(1.5).is_err());
        assert!(d.update(f64::NAN).is_err());
    }
}
