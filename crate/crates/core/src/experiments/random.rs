//! Random game generators.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{closed_loop, solve_nash};
use crate::model::{Costs, Dynamics, GameSpec, NashPolicy, ValueRecursion};

/// Sampling ranges for the three-player randomized study game.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyRanges {
    /// Uniform range of the diagonal entries of `Q`.
    pub q: (f64, f64),
    /// Uniform range of the diagonal entries of `R`.
    pub r: (f64, f64),
    /// Uniform range of the two weights building `l`.
    pub rho: (f64, f64),
    /// `χ0 = chi0 · I`
    pub chi0: f64,
    /// `Σ_t = sigma · I`
    pub sigma: f64,
}

impl Default for StudyRanges {
    fn default() -> Self {
        StudyRanges {
            q: (0.1, 2.0),
            r: (0.1, 2.0),
            rho: (0.1, 1.0),
            chi0: 0.01,
            sigma: 0.01,
        }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        return lo;
    }
    Uniform::new(lo, hi).expect("valid range").sample(rng)
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Three players on a shared 3-dimensional state, `T = 20`, `A_t = I` and
/// `B_t^i = e_i`. Every `Q_t^i`, `R_t^i` is diagonal with uniform entries,
/// `l_t^i = ρ₁[1, -1, 0] + ρ₂[0, 1, -1]` and `μ0 ~ N(0, I)`.
pub fn study_game<R: Rng + ?Sized>(rng: &mut R, ranges: &StudyRanges) -> Result<GameSpec> {
    let (n, nx, horizon) = (3, 3, 20);
    let mu0 = DVector::from_fn(nx, |_, _| normal(rng));
    let dynamics = Dynamics {
        num_players: n,
        horizon,
        state_dims: vec![1; n],
        input_dim: 1,
        a: vec![DMatrix::identity(nx, nx); horizon],
        b: (0..n)
            .map(|i| vec![DMatrix::from_fn(nx, 1, |r, _| if r == i { 1.0 } else { 0.0 }); horizon])
            .collect(),
        mu0,
        chi0: DMatrix::identity(nx, nx) * ranges.chi0,
        sigma: vec![DMatrix::identity(nx, nx) * ranges.sigma; horizon],
    };
    let basis1 = DVector::from_vec(vec![1.0, -1.0, 0.0]);
    let basis2 = DVector::from_vec(vec![0.0, 1.0, -1.0]);
    let mut costs = Costs {
        q: vec![],
        l: vec![],
        r: vec![],
    };
    for _ in 0..n {
        let q = (0..horizon)
            .map(|_| DMatrix::from_diagonal(&DVector::from_fn(nx, |_, _| uniform(rng, ranges.q))))
            .collect();
        let l = (0..horizon)
            .map(|_| &basis1 * uniform(rng, ranges.rho) + &basis2 * uniform(rng, ranges.rho))
            .collect();
        let r = (0..horizon)
            .map(|_| DMatrix::from_element(1, 1, uniform(rng, ranges.r)))
            .collect();
        costs.q.push(q);
        costs.l.push(l);
        costs.r.push(r);
    }
    GameSpec::new(dynamics, costs)
}

/// Size limits for the general random family used by property tests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FamilyLimits {
    pub max_players: usize,
    pub max_nx: usize,
    pub max_nu: usize,
    pub max_horizon: usize,
}

impl Default for FamilyLimits {
    fn default() -> Self {
        FamilyLimits {
            max_players: 3,
            max_nx: 4,
            max_nu: 2,
            max_horizon: 10,
        }
    }
}

/// Random time-varying game: `A_t` near identity, Gaussian `B_t^i`, PSD
/// `Q_t^i`, Gaussian `l_t^i`, diagonal positive `R_t^i`, small noise.
pub fn family_game<R: Rng + ?Sized>(rng: &mut R, limits: &FamilyLimits) -> Result<GameSpec> {
    let n = rng.random_range(1..=limits.max_players);
    let nx = rng.random_range(1..=limits.max_nx);
    let nu = rng.random_range(1..=limits.max_nu.min(nx));
    let horizon = rng.random_range(1..=limits.max_horizon);
    let mut state_dims = vec![0; n];
    for k in 0..nx {
        state_dims[k % n] += 1;
    }
    let scale = 1.0 / (nx as f64).sqrt();
    let mut gauss =
        |rows: usize, cols: usize, s: f64| DMatrix::from_fn(rows, cols, |_, _| s * normal(rng));
    let a = (0..horizon)
        .map(|_| DMatrix::identity(nx, nx) + gauss(nx, nx, 0.3 * scale))
        .collect();
    let b = (0..n)
        .map(|_| (0..horizon).map(|_| gauss(nx, nu, 0.7)).collect())
        .collect();
    let mu0 = gauss(nx, 1, 1.0).column(0).into_owned();
    let mut q = Vec::with_capacity(n);
    let mut l = Vec::with_capacity(n);
    let mut r = Vec::with_capacity(n);
    for _ in 0..n {
        let mut qi = Vec::with_capacity(horizon);
        let mut li = Vec::with_capacity(horizon);
        let mut ri = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let g = gauss(nx, nx, scale);
            qi.push(&g * g.transpose() + DMatrix::identity(nx, nx) * 0.1);
            li.push(gauss(nx, 1, 0.5).column(0).into_owned());
            let d = gauss(nu, 1, 1.0);
            ri.push(DMatrix::from_diagonal(&DVector::from_fn(nu, |k, _| {
                0.5 + d[k].abs()
            })));
        }
        q.push(qi);
        l.push(li);
        r.push(ri);
    }
    let dynamics = Dynamics {
        num_players: n,
        horizon,
        state_dims,
        input_dim: nu,
        a,
        b,
        mu0,
        chi0: DMatrix::identity(nx, nx) * 0.1,
        sigma: vec![DMatrix::identity(nx, nx) * 0.01; horizon],
    };
    GameSpec::new(dynamics, Costs { q, l, r })
}

/// A drawn game together with its equilibrium.
#[derive(Debug, Clone)]
pub struct SolvedGame {
    pub game: GameSpec,
    pub policy: NashPolicy,
    pub value: ValueRecursion,
    /// Draws needed, including the accepted one.
    pub draws: usize,
}

/// Draws games until one has a unique equilibrium with invertible
/// closed-loop matrices, giving up after `max_draws`.
pub fn draw_solvable<R, F>(rng: &mut R, max_draws: usize, mut gen: F) -> Result<SolvedGame>
where
    R: Rng + ?Sized,
    F: FnMut(&mut R) -> Result<GameSpec>,
{
    let mut last = None;
    for draws in 1..=max_draws.max(1) {
        let game = gen(rng)?;
        match solve_nash(&game) {
            Ok((policy, value, _)) => {
                if let Some((t, step)) = closed_loop(&game.dynamics, &policy)
                    .iter()
                    .enumerate()
                    .find(|(_, s)| !s.invertible)
                {
                    last = Some(Error::SingularClosedLoop { t, cond: step.cond });
                    continue;
                }
                return Ok(SolvedGame {
                    game,
                    policy,
                    value,
                    draws,
                });
            }
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::InvalidArgument("no draws".into())))
}
