#![allow(dead_code)]

use lqg_core::experiments::random::{draw_solvable, family_game, FamilyLimits, SolvedGame};
use lqg_core::experiments::stream_rng;
use lqg_core::identify::{assemble_m, build_terms, identify_costs, IdentifyOptions};
use lqg_core::linalg::vec_of;
use lqg_core::{NashPolicy, Result};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// The `k`-th solvable game of the general random family under `seed`.
pub fn family(seed: u64, k: u64) -> SolvedGame {
    let mut rng = stream_rng(seed, k);
    draw_solvable(&mut rng, 50, |r| family_game(r, &FamilyLimits::default()))
        .expect("solvable family game")
}

pub fn families(seed: u64, count: u64) -> Vec<SolvedGame> {
    (0..count).map(|k| family(seed, k)).collect()
}

pub fn gaussian<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Which parts of a policy a perturbation touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Gains,
    Offsets,
    Both,
}

/// A random policy direction with unit Frobenius norm over the selected
/// players and parts.
pub fn policy_direction<R: Rng>(
    rng: &mut R,
    like: &NashPolicy,
    players: &[usize],
    part: Part,
) -> NashPolicy {
    let mut dir = NashPolicy {
        gains: like
            .gains
            .iter()
            .map(|g| {
                g.iter()
                    .map(|k| DMatrix::zeros(k.nrows(), k.ncols()))
                    .collect()
            })
            .collect(),
        offsets: like
            .offsets
            .iter()
            .map(|a| a.iter().map(|v| DVector::zeros(v.len())).collect())
            .collect(),
    };
    let mut norm2 = 0.0;
    for &i in players {
        for t in 0..like.horizon() {
            let mut k = gaussian(rng, like.gains[i][t].nrows(), like.gains[i][t].ncols());
            let mut a = gaussian(rng, like.offsets[i][t].len(), 1)
                .column(0)
                .into_owned();
            match part {
                Part::Gains => a.fill(0.0),
                Part::Offsets => k.fill(0.0),
                Part::Both => {}
            }
            norm2 += k.norm_squared() + a.norm_squared();
            dir.gains[i][t] = k;
            dir.offsets[i][t] = a;
        }
    }
    let s = 1.0 / norm2.sqrt();
    dir.gains.iter_mut().flatten().for_each(|k| *k *= s);
    dir.offsets.iter_mut().flatten().for_each(|a| *a *= s);
    dir
}

/// `base + eps · dir`
pub fn perturb(base: &NashPolicy, dir: &NashPolicy, eps: f64) -> NashPolicy {
    let mut out = base.clone();
    for (o, d) in out
        .gains
        .iter_mut()
        .flatten()
        .zip(dir.gains.iter().flatten())
    {
        *o += d * eps;
    }
    for (o, d) in out
        .offsets
        .iter_mut()
        .flatten()
        .zip(dir.offsets.iter().flatten())
    {
        *o += d * eps;
    }
    out
}

pub fn ok<T>(r: Result<T>) -> T {
    r.unwrap_or_else(|e| panic!("{e}"))
}

/// `‖M θ‖` of the generating costs at every player and cost step.
pub fn true_cost_residuals(g: &SolvedGame) -> Vec<f64> {
    let d = &g.game.dynamics;
    let mut out = Vec::new();
    for t in 1..=d.horizon {
        let terms = ok(build_terms(d, &g.policy, t - 1));
        for i in 0..d.num_players {
            let q = g.game.q(i, t);
            let l = g.game.l(i, t);
            let delta_bar = vec_of(&(&g.value.value_quadratic[i][t] - q));
            let omega_bar = &g.value.value_linear[i][t] - l;
            let m = assemble_m(
                &terms.s[i],
                &terms.e[i],
                &d.b[i][t - 1],
                &g.policy.gains[i][t - 1],
                &delta_bar,
                &omega_bar,
            );
            let theta: Vec<f64> = vec_of(q)
                .iter()
                .chain(l.iter())
                .chain(vec_of(g.game.r(i, t - 1)).iter())
                .copied()
                .chain([1.0])
                .collect();
            out.push((m * DVector::from_vec(theta)).norm());
        }
    }
    out
}

/// Concatenated identified cost vectors and active sets.
fn identified(g: &SolvedGame, policy: &NashPolicy) -> Option<(DVector<f64>, Vec<Vec<usize>>)> {
    let id = identify_costs(&g.game.dynamics, policy, &IdentifyOptions::default()).ok()?;
    let theta: Vec<f64> = id
        .steps
        .iter()
        .flatten()
        .flat_map(|s| s.theta.iter().copied())
        .collect();
    let active = id
        .steps
        .iter()
        .flatten()
        .map(|s| s.active_set.clone())
        .collect();
    Some((DVector::from_vec(theta), active))
}

pub const CONTINUITY_EPS: [f64; 3] = [1e-6, 1e-5, 1e-4];

/// `‖θ(π + ε d) − θ(π)‖` for family game `k` (seed 21) along a random
/// direction, one entry per [`CONTINUITY_EPS`]. `None` when any
/// perturbation changes an active set.
pub fn continuity_distances(k: u64) -> Option<Vec<f64>> {
    let g = family(21, k);
    let (theta0, active0) = identified(&g, &g.policy)?;
    let players: Vec<usize> = (0..g.game.num_players()).collect();
    let dir = policy_direction(&mut stream_rng(22, k), &g.policy, &players, Part::Both);
    CONTINUITY_EPS
        .iter()
        .map(|&e| {
            let (theta, active) = identified(&g, &perturb(&g.policy, &dir, e))?;
            (active == active0).then(|| (theta - &theta0).norm())
        })
        .collect()
}
