use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdEstimator {
    /// Divide by G.
    Population,
    /// Divide by G - 1 (Bessel-corrected).
    Sample,
}

pub fn mean_std(values: &[f64], estimator: StdEstimator) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|r| (r - mean) * (r - mean)).sum();
    let denom = match estimator {
        StdEstimator::Population => n as f64,
        StdEstimator::Sample if n > 1 => (n - 1) as f64,
        StdEstimator::Sample => 1.0,
    };
    (mean, (ss / denom).sqrt())
}

/// Group-relative advantages `(R_i - mean) / max(std, floor)`.
///
/// Groups whose spread does not exceed the floor get all-zero advantages
/// rather than amplified rounding noise.
pub fn compute_advantages(rewards: &[f64], estimator: StdEstimator, std_floor: f64) -> Vec<f64> {
    let (mean, std) = mean_std(rewards, estimator);
    if !(std > std_floor) {
        return vec![0.0; rewards.len()];
    }
    rewards.iter().map(|r| (r - mean) / std).collect()
}
