//! Least-squares recovery of affine feedback policies from demonstrations,
//! and the sample-size bound for that regression.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{singular_values, Svd};
use crate::model::{Dynamics, NashPolicy, TrajectoryBatch};

/// Relative eigenvalue tolerance for the rank of the regressor Gram matrix.
pub const RANK_TOL: f64 = 1e-10;

/// Augmented regressor `[X_t; 1ᵀ]`.
fn regressor(batch: &TrajectoryBatch, t: usize) -> DMatrix<f64> {
    let x = &batch.states[t];
    let (nx, n) = x.shape();
    let mut z = DMatrix::from_element(nx + 1, n, 1.0);
    z.view_mut((0, 0), (nx, n)).copy_from(x);
    z
}

/// Gram matrix `Ψ = Z Zᵀ / n` of the augmented regressor at `t` with its
/// extreme eigenvalues and numerical rank.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GramReport {
    #[serde(skip)]
    pub psi: DMatrix<f64>,
    pub sigma_max: f64,
    pub sigma_min: f64,
    pub rank: usize,
}

pub fn empirical_gram(batch: &TrajectoryBatch, t: usize) -> GramReport {
    let z = regressor(batch, t);
    let n = z.ncols().max(1) as f64;
    let psi = (&z * z.transpose()) / n;
    let eig = SymmetricEigen::new(psi.clone()).eigenvalues;
    let sigma_max = eig.max().max(0.0);
    let sigma_min = eig.min().max(0.0);
    let rank = eig.iter().filter(|&&v| v > RANK_TOL * sigma_max).count();
    GramReport {
        psi,
        sigma_max,
        sigma_min,
        rank,
    }
}

/// Fits `[K, α]` per player and step by minimizing `‖[K, α] Z_t + U_t‖²`.
/// One SVD of the shared regressor is reused across players.
pub fn estimate_policy(batch: &TrajectoryBatch, d: &Dynamics) -> Result<NashPolicy> {
    let (nx, horizon, players) = (d.nx(), d.horizon, d.num_players);
    if batch.states.len() != horizon + 1 || batch.inputs.len() != players {
        return Err(Error::dim(
            "trajectories",
            "batch does not match the game dimensions",
        ));
    }
    let mut policy = NashPolicy::zeros(d);
    for t in 0..horizon {
        let gram = empirical_gram(batch, t);
        if gram.rank < nx + 1 {
            return Err(Error::RankDeficient {
                t,
                rank: gram.rank,
                required: nx + 1,
            });
        }
        let svd = Svd::new(&regressor(batch, t).transpose());
        let cutoff = svd.max() * RANK_TOL.sqrt();
        for i in 0..players {
            let rhs = -batch.inputs[i][t].transpose();
            let wt = svd.solve(&rhs, cutoff);
            let w = wt.transpose();
            policy.gains[i][t] = w.columns(0, nx).into_owned();
            policy.offsets[i][t] = w.column(nx).into_owned();
        }
    }
    Ok(policy)
}

/// Spectral and Frobenius norms of `[K̂ - K, α̂ - α]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AugmentedError {
    pub spectral: f64,
    pub frobenius: f64,
}

pub fn augmented_error(est: &NashPolicy, truth: &NashPolicy, i: usize, t: usize) -> AugmentedError {
    let diff = est.augmented(i, t) - truth.augmented(i, t);
    let spectral = if diff.is_empty() {
        0.0
    } else {
        singular_values(&diff).max()
    };
    AugmentedError {
        spectral,
        frobenius: diff.norm(),
    }
}

/// Largest augmented-policy error over all players and steps.
pub fn max_policy_error(est: &NashPolicy, truth: &NashPolicy) -> AugmentedError {
    let mut out = AugmentedError {
        spectral: 0.0,
        frobenius: 0.0,
    };
    for i in 0..truth.num_players() {
        for t in 0..truth.horizon() {
            let e = augmented_error(est, truth, i, t);
            out.spectral = out.spectral.max(e.spectral);
            out.frobenius = out.frobenius.max(e.frobenius);
        }
    }
    out
}

/// Inputs to the sample-size bound. `noise_param` is the sub-Gaussian
/// parameter of the observation noise and `confidence` the failure
/// probability; `regressor_bound` bounds the regressor norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComplexityInputs {
    pub sigma_max: f64,
    pub sigma_min: f64,
    pub rank: usize,
    pub regressor_bound: f64,
    pub noise_param: f64,
    pub confidence: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleComplexityReport {
    pub inputs: ComplexityInputs,
    pub n_noise: f64,
    pub n_rand: f64,
    pub n_required: u64,
}

/// `n = ⌈max(N₁, N_rand)⌉` with
/// `N₁ = 8 a² δ_ν² / (ε² σ_min²) · ln(2p/δ)` and
/// `N_rand = (4/3)(6σ_max + σ_min)(p a² + σ_max) / σ_min² · ln(2p/δ)`.
pub fn sample_complexity(c: ComplexityInputs) -> Result<SampleComplexityReport> {
    if !(c.sigma_min > 0.0) {
        return Err(Error::DegenerateRegressor {
            sigma_min: c.sigma_min,
        });
    }
    if !(c.confidence > 0.0 && c.confidence < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence must lie in (0, 1), got {}",
            c.confidence
        )));
    }
    if !(c.accuracy > 0.0) || c.rank == 0 || c.sigma_max < c.sigma_min {
        return Err(Error::InvalidArgument(
            "accuracy > 0, rank >= 1 and sigma_max >= sigma_min required".into(),
        ));
    }
    let p = c.rank as f64;
    let log = (2.0 * p / c.confidence).ln();
    let a2 = c.regressor_bound * c.regressor_bound;
    let n_noise = 8.0 * a2 * c.noise_param * c.noise_param
        / (c.accuracy * c.accuracy * c.sigma_min * c.sigma_min)
        * log;
    let n_rand = 4.0 / 3.0 * (6.0 * c.sigma_max + c.sigma_min) * (p * a2 + c.sigma_max)
        / (c.sigma_min * c.sigma_min)
        * log;
    let n_required = (n_noise.max(n_rand).ceil() as u64).max(1);
    Ok(SampleComplexityReport {
        inputs: c,
        n_noise,
        n_rand,
        n_required,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn scalar_dynamics(horizon: usize) -> Dynamics {
        Dynamics {
            num_players: 1,
            horizon,
            state_dims: vec![1],
            input_dim: 1,
            a: vec![DMatrix::identity(1, 1); horizon],
            b: vec![vec![DMatrix::identity(1, 1); horizon]],
            mu0: DVector::zeros(1),
            chi0: DMatrix::zeros(1, 1),
            sigma: vec![DMatrix::zeros(1, 1); horizon],
        }
    }

    fn batch(xs: &[f64], us: &[f64]) -> TrajectoryBatch {
        let n = xs.len();
        TrajectoryBatch {
            num_samples: n,
            states: vec![DMatrix::from_row_slice(1, n, xs), DMatrix::zeros(1, n)],
            inputs: vec![vec![DMatrix::from_row_slice(1, n, us)]],
            obs_noise_sigma: 0.0,
            seed: None,
        }
    }

    #[test]
    fn two_points_determine_affine_policy() {
        let (k, a) = (0.5, 0.2);
        let b = batch(&[0.0, 1.0], &[-a, -k - a]);
        let p = estimate_policy(&b, &scalar_dynamics(1)).unwrap();
        assert!((p.gains[0][0][(0, 0)] - k).abs() < 1e-10);
        assert!((p.offsets[0][0][0] - a).abs() < 1e-10);
    }

    #[test]
    fn single_sample_is_rank_deficient() {
        let b = batch(&[0.3], &[-0.1]);
        match estimate_policy(&b, &scalar_dynamics(1)) {
            Err(Error::RankDeficient {
                t: 0,
                rank: 1,
                required: 2,
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gram_of_single_zero_state() {
        let g = empirical_gram(&batch(&[0.0], &[0.0]), 0);
        assert_eq!(g.psi, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]));
        assert_eq!(g.rank, 1);
        let same = empirical_gram(&batch(&[0.7, 0.7, 0.7], &[0.0; 3]), 0);
        assert_eq!(same.rank, 1);
    }

    fn hand_inputs() -> ComplexityInputs {
        ComplexityInputs {
            sigma_max: 1.0,
            sigma_min: 1.0,
            rank: 2,
            regressor_bound: 1.0,
            noise_param: 0.1,
            confidence: 0.1,
            accuracy: 0.1,
        }
    }

    #[test]
    fn hand_sample_complexity() {
        let r = sample_complexity(hand_inputs()).unwrap();
        // 2p/δ = 40; N₁ = 8·0.01/0.01·ln 40, N_rand = (4/3)·7·3·ln 40
        let ln40 = 40f64.ln();
        assert!((r.n_noise - 8.0 * ln40).abs() < 1e-12, "{r:?}");
        assert!((r.n_rand - 28.0 * ln40).abs() < 1e-12);
        assert_eq!(r.n_required, 104);
    }

    #[test]
    fn complexity_limits_and_scaling() {
        let loose = sample_complexity(ComplexityInputs {
            accuracy: 1e300,
            ..hand_inputs()
        })
        .unwrap();
        assert_eq!(loose.n_required, loose.n_rand.ceil() as u64);
        let base = sample_complexity(hand_inputs()).unwrap();
        let doubled = sample_complexity(ComplexityInputs {
            regressor_bound: 2.0,
            ..hand_inputs()
        })
        .unwrap();
        assert!((doubled.n_noise / base.n_noise - 4.0).abs() < 1e-12);
        assert!(doubled.n_rand / base.n_rand < 4.0);
    }

    #[test]
    fn degenerate_regressor_rejected() {
        let e = sample_complexity(ComplexityInputs {
            sigma_min: 0.0,
            ..hand_inputs()
        })
        .unwrap_err();
        assert!(e.to_string().contains("degenerate regressor distribution"));
    }
}
