use lqg_core::cls::{feasibility_violation, solve_cls, solve_cls_oracle, ClsProblem, ClsStatus};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn problem(max_l: usize, full_rank: bool) -> impl Strategy<Value = ClsProblem> {
    (2..=max_l)
        .prop_flat_map(move |l| {
            let rows = if full_rank {
                (l - 1)..=(l + 3)
            } else {
                1..=(l + 3)
            };
            (Just(l), rows)
        })
        .prop_flat_map(|(l, rows)| {
            (
                Just(l),
                Just(rows),
                prop::collection::vec(-3.0..3.0f64, rows * l),
                prop::collection::vec(any::<bool>(), l - 1),
                prop_oneof![Just(1e-3), 0.01..1.0f64],
            )
        })
        .prop_map(|(l, rows, data, mask, tau)| {
            let d = mask
                .iter()
                .enumerate()
                .filter(|(_, &b)| b)
                .map(|(j, _)| j)
                .collect();
            ClsProblem::new(DMatrix::from_row_slice(rows, l, &data), d, tau).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn solver_dominates_oracle(p in problem(5, true)) {
        let s = solve_cls(&p);
        let o = solve_cls_oracle(&p, 1e-2).unwrap();
        prop_assert_eq!(s.status, ClsStatus::Optimal);
        prop_assert!(s.residual <= o.residual + 1e-8 * o.residual.max(1.0),
            "solver {} oracle {}", s.residual, o.residual);
    }

    #[test]
    fn solution_is_feasible_and_stationary(p in problem(12, false)) {
        let s = solve_cls(&p);
        prop_assert_eq!(s.status, ClsStatus::Optimal);
        prop_assert!(feasibility_violation(&p, &s.theta) <= 1e-12);
        prop_assert_eq!(s.theta[p.len() - 1], 1.0);
        prop_assert!(s.kkt_residual <= 1e-8, "kkt {}", s.kkt_residual);
        for &j in &s.active_set {
            prop_assert_eq!(s.theta[j], p.tau);
        }
    }

    #[test]
    fn residual_grows_with_tau(p in problem(8, false), bump in 0.0..1.0f64) {
        let s = solve_cls(&p);
        let tighter = ClsProblem::new(p.m.clone(), p.constrained.clone(), p.tau + bump).unwrap();
        let t = solve_cls(&tighter);
        prop_assert!(t.residual >= s.residual - 1e-9 * s.residual.max(1.0));
    }

    #[test]
    fn solver_is_deterministic(p in problem(8, false)) {
        prop_assert_eq!(solve_cls(&p), solve_cls(&p));
    }
}
