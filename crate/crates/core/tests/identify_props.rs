mod common;

use common::{continuity_distances, family, ok, true_cost_residuals, CONTINUITY_EPS};
use lqg_core::identify::{identify_costs, recursion_step, verify_roundtrip, IdentifyOptions};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn generating_costs_lie_in_the_null_space(seed in any::<u64>()) {
        let g = family(seed, 0);
        for r in true_cost_residuals(&g) {
            prop_assert!(r <= 1e-8, "residual {r}");
        }
    }

    #[test]
    fn true_cost_recursion_reproduces_the_value(seed in any::<u64>()) {
        let g = family(seed, 0);
        let d = &g.game.dynamics;
        for t in 1..d.horizon {
            let bs: Vec<_> = (0..d.num_players).map(|j| &d.b[j][t]).collect();
            let alphas: Vec<_> = (0..d.num_players).map(|j| &g.policy.offsets[j][t]).collect();
            for i in 0..d.num_players {
                let (dl, om) = recursion_step(
                    &g.value.closed_loop[t],
                    &g.policy.gains[i][t],
                    &g.policy.offsets[i][t],
                    &bs,
                    &alphas,
                    g.game.r(i, t),
                    &g.value.value_quadratic[i][t + 1],
                    &g.value.value_linear[i][t + 1],
                );
                let p = &g.value.value_quadratic[i][t];
                let p_back = lqg_core::linalg::unvec(dl.as_slice(), d.nx(), d.nx()) + g.game.q(i, t);
                prop_assert!((p - p_back).amax() <= 1e-10 * p.amax().max(1.0));
                let z = &g.value.value_linear[i][t];
                prop_assert!((z - (om + g.game.l(i, t))).amax() <= 1e-10 * z.amax().max(1.0));
            }
        }
    }

    #[test]
    fn exact_policy_round_trip(seed in any::<u64>()) {
        let g = family(seed, 0);
        let id = ok(identify_costs(&g.game.dynamics, &g.policy, &IdentifyOptions::default()));
        let rt = ok(verify_roundtrip(&g.game.dynamics, &id.costs, &g.policy));
        prop_assert!(rt.failure.is_none());
        // A min-norm selection near tau at later steps can leave an earlier
        // step without an exactly consistent cost; the round trip then
        // inherits that residual.
        let bound = if id.max_residual() <= 1e-24 { 1e-8 } else { 1e-4 };
        prop_assert!(rt.policy_error() <= bound, "policy error {} at residual {:e}", rt.policy_error(), id.max_residual());
    }

    #[test]
    fn identified_costs_respect_bounds(seed in any::<u64>()) {
        let g = family(seed, 0);
        let opts = IdentifyOptions::default();
        let id = ok(identify_costs(&g.game.dynamics, &g.policy, &opts));
        for s in id.steps.iter().flatten() {
            prop_assert_eq!(s.theta[s.theta.len() - 1], 1.0);
            for &k in &id.constrained {
                prop_assert!(s.theta[k] >= opts.tau * (1.0 - 1e-12));
            }
        }
    }
}

#[test]
fn identification_is_locally_lipschitz() {
    let mut checked = 0;
    for k in 0..30 {
        let Some(dist) = continuity_distances(k) else {
            continue;
        };
        // Fitted at the largest step, checked at the smaller ones.
        let c = dist[2] / CONTINUITY_EPS[2];
        for (d, e) in dist.iter().zip(CONTINUITY_EPS).take(2) {
            let ratio = d / e;
            assert!(
                ratio <= 10.0 * c && ratio >= c / 10.0,
                "game {k}: ratio {ratio} vs fitted {c}"
            );
        }
        checked += 1;
    }
    assert!(checked >= 20, "only {checked} games kept their active sets");
}
