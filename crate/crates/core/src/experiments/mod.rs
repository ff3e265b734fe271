//! End-to-end studies: randomized identification from exact policies,
//! sample-size sweeps from noisy demonstrations, and a multi-vehicle
//! scenario summarized in a table of mean policy and trajectory errors.
//!
//! Every run is a pure function of its configuration and base seed. Work
//! items (episodes, repetitions) draw from their own ChaCha8 stream and are
//! collected in order, so outputs do not depend on thread scheduling.

pub mod random;
pub mod scenario;
pub mod study;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cls::DEFAULT_TAU;
use crate::error::{Error, Result};
use crate::identify::{IdentifyOptions, Positivity, QStructure};
pub use random::StudyRanges;

/// Settings shared by the experiment runners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Randomized study episodes.
    pub episodes: usize,
    /// Demonstration counts for sweeps, ascending.
    pub samples: Vec<usize>,
    /// Also run identification from the exact policy.
    pub include_exact: bool,
    pub reps: usize,
    pub base_seed: u64,
    /// Standard deviation of the input-observation noise.
    pub obs_noise: f64,
    pub tau: f64,
    pub strict_positivity: bool,
    pub q_unconstrained: bool,
    pub ranges: StudyRanges,
    /// Redraw cap for random games without a unique equilibrium.
    pub max_draws: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            episodes: 100,
            samples: vec![20, 100],
            include_exact: true,
            reps: 10,
            base_seed: 7,
            obs_noise: 0.01,
            tau: DEFAULT_TAU,
            strict_positivity: false,
            q_unconstrained: false,
            ranges: StudyRanges::default(),
            max_draws: 10,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.episodes == 0 || self.reps == 0 || self.max_draws == 0 {
            return bad("episodes, reps and max_draws must be at least 1");
        }
        if self.samples.contains(&0) {
            return bad("sample sizes must be at least 1");
        }
        if self.samples.windows(2).any(|w| w[0] >= w[1]) {
            return bad("sample sizes must be strictly ascending");
        }
        if !(self.obs_noise >= 0.0 && self.obs_noise.is_finite()) {
            return bad("observation noise must be finite and >= 0");
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("tau must be positive");
        }
        Ok(())
    }

    pub fn identify_options(&self) -> IdentifyOptions {
        IdentifyOptions {
            tau: self.tau,
            positivity: if self.strict_positivity {
                Positivity::Strict
            } else {
                Positivity::Diagonal
            },
            q_structure: if self.q_unconstrained {
                QStructure::Unconstrained
            } else {
                QStructure::Symmetric
            },
            ..IdentifyOptions::default()
        }
    }
}

/// RNG for work item `stream` under `base_seed`.
pub fn stream_rng(base_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(stream);
    rng
}

/// Seed for the demonstrations of sample size `n`, repetition `rep`.
pub fn rollout_seed(base_seed: u64, n: usize, rep: usize) -> u64 {
    stream_rng(base_seed, ((n as u64) << 32) | rep as u64).next_u64()
}

/// Median of the finite values, `NaN` if there are none.
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(ExperimentConfig::default().validate().is_ok());
        let c = ExperimentConfig {
            samples: vec![100, 20],
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = ExperimentConfig {
            reps: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn median_ignores_failures() {
        assert_eq!(median(&[3.0, f64::NAN, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0]), 2.5);
        assert!(median(&[f64::INFINITY]).is_nan());
    }

    #[test]
    fn seeds_differ_by_item() {
        assert_ne!(rollout_seed(7, 20, 0), rollout_seed(7, 20, 1));
        assert_ne!(rollout_seed(7, 20, 0), rollout_seed(7, 100, 0));
        assert_eq!(rollout_seed(7, 20, 3), rollout_seed(7, 20, 3));
    }
}
