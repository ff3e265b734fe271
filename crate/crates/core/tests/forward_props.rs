mod common;

use common::{family, ok, perturb, policy_direction, Part};
use lqg_core::experiments::stream_rng;
use lqg_core::forward::substitution_residuals;
use lqg_core::simulate::{expected_trajectory, rollout};
use lqg_core::{expected_cost, solve_nash};
use proptest::prelude::*;

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 64,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn equilibrium_satisfies_optimality_conditions(seed in any::<u64>()) {
        let g = family(seed, 0);
        let res = substitution_residuals(&g.game, &g.policy, &g.value);
        prop_assert!(res.gain <= 1e-9 && res.offset <= 1e-9, "{res:?}");
    }

    #[test]
    fn value_matrices_are_symmetric(seed in any::<u64>()) {
        let g = family(seed, 0);
        for p in g.value.value_quadratic.iter().flatten() {
            prop_assert!((p - p.transpose()).amax() <= 1e-10 * p.amax().max(1.0));
        }
    }

    #[test]
    fn unilateral_deviation_never_pays(
        seed in any::<u64>(),
        scale in prop_oneof![Just(1e-2), Just(1e-1)],
        part in prop_oneof![Just(Part::Gains), Just(Part::Offsets), Just(Part::Both)],
    ) {
        let g = family(seed, 0);
        let base = ok(expected_cost(&g.game, &g.policy));
        let mut rng = stream_rng(seed, 1);
        for i in 0..g.game.num_players() {
            let dir = policy_direction(&mut rng, &g.policy, &[i], part);
            let cost = ok(expected_cost(&g.game, &perturb(&g.policy, &dir, scale)));
            prop_assert!(cost[i] - base[i] >= -1e-9, "player {i}: {} -> {}", base[i], cost[i]);
        }
    }

    #[test]
    fn scaling_one_players_costs_keeps_the_equilibrium(seed in any::<u64>(), c in 0.1f64..10.0) {
        let g = family(seed, 0);
        let i = (seed % g.game.num_players() as u64) as usize;
        let mut scaled = g.game.clone();
        scaled.costs.scale_player(i, c);
        let (policy, _, _) = ok(solve_nash(&scaled));
        for (a, b) in policy.gains.iter().flatten().zip(g.policy.gains.iter().flatten()) {
            prop_assert!((a - b).amax() <= 1e-10 * b.amax().max(1.0));
        }
        for (a, b) in policy.offsets.iter().flatten().zip(g.policy.offsets.iter().flatten()) {
            prop_assert!((a - b).amax() <= 1e-10 * b.amax().max(1.0));
        }
    }
}

#[test]
fn sample_means_approach_expected_trajectory() {
    let n = 4000;
    for k in 0..5 {
        let g = family(11, k);
        let d = &g.game.dynamics;
        let exp = ok(expected_trajectory(d, &g.policy));
        let batch = ok(rollout(d, &g.policy, n, 100 + k, 0.0));
        for (t, states) in batch.states.iter().enumerate() {
            for r in 0..d.nx() {
                let row = states.row(r);
                let mean = row.mean();
                let sd = row.variance().sqrt();
                let tol = 5.0 * sd / (n as f64).sqrt() + 1e-9;
                assert!(
                    (mean - exp.states[t][r]).abs() <= tol,
                    "game {k}, t={t}, dim {r}: {mean} vs {}",
                    exp.states[t][r]
                );
            }
        }
    }
}

#[test]
fn scalar_expected_cost_matches_monte_carlo() {
    // A = B = Q = R = 1, one step, μ0 = 1, χ0 = 1, no process noise.
    let text = r#"{"num_players": 1, "horizon": 1, "state_dims": [1], "input_dim": 1,
        "A": [[1.0]], "B": [[[1.0]]], "mu0": [1.0], "chi0": [[1.0]], "Sigma": [[0.0]],
        "Q": [[[1.0]]], "l": [[0.0]], "R": [[[1.0]]]}"#;
    let g = ok(lqg_core::config::parse_game(
        &serde_json::from_str(text).unwrap(),
    ));
    let (policy, _, _) = ok(solve_nash(&g));
    let exact = ok(expected_cost(&g, &policy))[0];
    // x1 = x0 / 2, u0 = -x0 / 2, E[x0²] = 2.
    assert!((exact - 1.0).abs() < 1e-15);
    let n = 1_000_000;
    let batch = ok(rollout(&g.dynamics, &policy, n, 3, 0.0));
    let costs: Vec<f64> = (0..n)
        .map(|s| batch.states[1][(0, s)].powi(2) + batch.inputs[0][0][(0, s)].powi(2))
        .collect();
    let mean = costs.iter().sum::<f64>() / n as f64;
    let sd = (costs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    assert!(
        (mean - exact).abs() <= 3.0 * sd / (n as f64).sqrt(),
        "{mean} vs {exact}"
    );
}
