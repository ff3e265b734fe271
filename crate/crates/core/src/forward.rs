//! Feedback Nash equilibrium of an LQG game via the coupled backward
//! Riccati recursion.
//!
//! At every step the players' first-order conditions
//! `(R^i + Bⁱᵀ P^i_{t+1} Bⁱ) K^i = Bⁱᵀ P^i_{t+1} (A - Σ_{j≠i} B^j K^j)`
//! are coupled through the other players' gains. Moving the coupling to the
//! left-hand side gives one stacked linear system `Φ_t K = Y_t` whose matrix
//! is exactly the existence matrix, so each step costs one pivoted LU solve
//! and a singular `Φ_t` is reported at the step where it occurs.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, COND_LIMIT};
use crate::model::{ensure_policy, Dynamics, GameSpec, NashPolicy, ValueRecursion};

/// Invertibility of the stacked matrix `Φ_t` at every step.
#[derive(Debug, Clone, PartialEq)]
pub struct ExistenceReport {
    /// `phi[t]`, t = 0..T-1, each `N n_u × N n_u`.
    pub phi: Vec<DMatrix<f64>>,
    pub cond: Vec<f64>,
    pub invertible: Vec<bool>,
    pub exists_unique: bool,
}

impl ExistenceReport {
    /// The first step, in backward order, at which `Φ_t` is singular.
    pub fn first_failure(&self) -> Option<usize> {
        self.invertible.iter().rposition(|ok| !ok)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopStep {
    pub f: DMatrix<f64>,
    pub invertible: bool,
    pub cond: f64,
}

/// Assembles `Φ_t` from the next-step value matrices `P^i_{t+1}`.
pub fn assemble_phi(
    d: &Dynamics,
    t: usize,
    p_next: &[&DMatrix<f64>],
    r: &[&DMatrix<f64>],
) -> DMatrix<f64> {
    let (n, nu) = (d.num_players, d.nu());
    let mut phi = DMatrix::zeros(n * nu, n * nu);
    for i in 0..n {
        let bt_p = d.b[i][t].transpose() * p_next[i];
        for j in 0..n {
            let mut block = &bt_p * &d.b[j][t];
            if i == j {
                block += r[i];
            }
            phi.view_mut((i * nu, j * nu), (nu, nu)).copy_from(&block);
        }
    }
    phi
}

/// Solves the game. Fails at the first `t` (in backward order) where `Φ_t`
/// has condition number above [`COND_LIMIT`].
pub fn solve_nash(game: &GameSpec) -> Result<(NashPolicy, ValueRecursion, ExistenceReport)> {
    let (policy, value, report) = backward_pass(game);
    if let Some(t) = report.first_failure() {
        return Err(Error::Existence {
            t,
            cond: report.cond[t],
        });
    }
    Ok((policy, value, report))
}

/// Runs the recursion to completion even when some `Φ_t` is singular; the
/// report records where that happened (the policy there is a least-squares
/// solution and should not be trusted).
pub fn backward_pass(game: &GameSpec) -> (NashPolicy, ValueRecursion, ExistenceReport) {
    let d = &game.dynamics;
    let (n, t_len, nx, nu) = (d.num_players, d.horizon, d.nx(), d.nu());

    let mut p = vec![vec![DMatrix::zeros(nx, nx); t_len + 1]; n];
    let mut zeta = vec![vec![DVector::zeros(nx); t_len + 1]; n];
    for i in 0..n {
        p[i][t_len] = game.q(i, t_len).clone();
        zeta[i][t_len] = game.l(i, t_len).clone();
    }
    let mut policy = NashPolicy::zeros(d);
    let mut closed_loop = vec![DMatrix::zeros(nx, nx); t_len];
    let mut phis = vec![DMatrix::zeros(n * nu, n * nu); t_len];
    let mut conds = vec![0.0; t_len];
    let mut invertible = vec![true; t_len];

    for t in (0..t_len).rev() {
        let p_next: Vec<&DMatrix<f64>> = (0..n).map(|i| &p[i][t + 1]).collect();
        let r_t: Vec<&DMatrix<f64>> = (0..n).map(|i| game.r(i, t)).collect();
        let phi = assemble_phi(d, t, &p_next, &r_t);

        let mut rhs_k = DMatrix::zeros(n * nu, nx);
        let mut rhs_a = DVector::zeros(n * nu);
        for i in 0..n {
            let bt = d.b[i][t].transpose();
            rhs_k
                .view_mut((i * nu, 0), (nu, nx))
                .copy_from(&(&bt * &p[i][t + 1] * &d.a[t]));
            rhs_a
                .rows_mut(i * nu, nu)
                .copy_from(&(&bt * &zeta[i][t + 1]));
        }

        let c = linalg::cond(&phi);
        conds[t] = c;
        invertible[t] = c < COND_LIMIT;
        let (k_stack, a_stack) = match phi.clone().lu().solve(&rhs_k) {
            Some(k) if invertible[t] => {
                let a = phi
                    .clone()
                    .lu()
                    .solve(&rhs_a)
                    .expect("same LU factorization succeeded");
                (k, a)
            }
            _ => {
                // Keep going with a least-squares step so the report covers every t.
                let pinv = phi
                    .clone()
                    .pseudo_inverse(f64::EPSILON * c.min(1e300))
                    .unwrap_or(DMatrix::zeros(n * nu, n * nu));
                (&pinv * &rhs_k, &pinv * &rhs_a)
            }
        };
        phis[t] = phi;

        let mut f = d.a[t].clone();
        let mut b_alpha = DVector::zeros(nx);
        for i in 0..n {
            let k = k_stack.rows(i * nu, nu).into_owned();
            let a = a_stack.rows(i * nu, nu).into_owned();
            f -= &d.b[i][t] * &k;
            b_alpha += &d.b[i][t] * &a;
            policy.gains[i][t] = k;
            policy.offsets[i][t] = a;
        }

        for i in 0..n {
            let k = &policy.gains[i][t];
            let a = &policy.offsets[i][t];
            let r = game.r(i, t);
            let mut p_t = f.transpose() * &p[i][t + 1] * &f + k.transpose() * r * k;
            let mut z_t =
                f.transpose() * (&zeta[i][t + 1] - &p[i][t + 1] * &b_alpha) + k.transpose() * r * a;
            if t >= 1 {
                p_t += game.q(i, t);
                z_t += game.l(i, t);
            }
            p[i][t] = p_t;
            zeta[i][t] = z_t;
        }
        closed_loop[t] = f;
    }

    let cl_cond: Vec<f64> = closed_loop.iter().map(linalg::cond).collect();
    let cl_invertible = cl_cond.iter().map(|&c| c < COND_LIMIT).collect();
    let value = ValueRecursion {
        value_quadratic: p,
        value_linear: zeta,
        closed_loop,
        cl_cond,
        cl_invertible,
    };
    let exists_unique = invertible.iter().all(|&b| b);
    let report = ExistenceReport {
        phi: phis,
        cond: conds,
        invertible,
        exists_unique,
    };
    (policy, value, report)
}

/// Rebuilds the existence report from an already computed value recursion.
pub fn check_existence(game: &GameSpec, value: &ValueRecursion) -> ExistenceReport {
    let d = &game.dynamics;
    let (n, t_len) = (d.num_players, d.horizon);
    let mut phi = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let p_next: Vec<&DMatrix<f64>> = (0..n).map(|i| &value.value_quadratic[i][t + 1]).collect();
        let r_t: Vec<&DMatrix<f64>> = (0..n).map(|i| game.r(i, t)).collect();
        phi.push(assemble_phi(d, t, &p_next, &r_t));
    }
    let cond: Vec<f64> = phi.iter().map(linalg::cond).collect();
    let invertible: Vec<bool> = cond.iter().map(|&c| c < COND_LIMIT).collect();
    let exists_unique = invertible.iter().all(|&b| b);
    ExistenceReport {
        phi,
        cond,
        invertible,
        exists_unique,
    }
}

/// `F_t = A_t - Σ_j B^j_t K^j_t` with an invertibility flag for each step.
pub fn closed_loop(d: &Dynamics, policy: &NashPolicy) -> Vec<ClosedLoopStep> {
    (0..d.horizon)
        .map(|t| {
            let f = closed_loop_at(d, policy, t);
            let cond = linalg::cond(&f);
            ClosedLoopStep {
                invertible: cond < COND_LIMIT,
                cond,
                f,
            }
        })
        .collect()
}

pub(crate) fn closed_loop_at(d: &Dynamics, policy: &NashPolicy, t: usize) -> DMatrix<f64> {
    let mut f = d.a[t].clone();
    for i in 0..d.num_players {
        f -= &d.b[i][t] * &policy.gains[i][t];
    }
    f
}

/// Exact expected cost of each player under an affine policy, by
/// propagating the Gaussian state mean and covariance.
///
/// The state term is `x'Qx + 2l'x`, the stage cost whose value function
/// `x'Px + 2ζ'x` the equilibrium recursion produces.
pub fn expected_cost(game: &GameSpec, policy: &NashPolicy) -> Result<Vec<f64>> {
    let d = &game.dynamics;
    ensure_policy(d, policy)?;
    let n = d.num_players;
    let mut mean = d.mu0.clone();
    let mut cov = d.chi0.clone();
    let mut cost = vec![0.0; n];
    for t in 0..d.horizon {
        let f = closed_loop_at(d, policy, t);
        // Stage input terms at t.
        for (i, c) in cost.iter_mut().enumerate() {
            let k = &policy.gains[i][t];
            let u_mean = -(k * &mean) - &policy.offsets[i][t];
            let u_cov = k * &cov * k.transpose();
            let r = game.r(i, t);
            *c += (u_mean.transpose() * r * &u_mean)[(0, 0)] + (r * &u_cov).trace();
        }
        let mut drift = DVector::zeros(d.nx());
        for i in 0..n {
            drift += &d.b[i][t] * &policy.offsets[i][t];
        }
        mean = &f * &mean - drift;
        cov = &f * &cov * f.transpose() + &d.sigma[t];
        for (i, c) in cost.iter_mut().enumerate() {
            let q = game.q(i, t + 1);
            *c += (mean.transpose() * q * &mean)[(0, 0)]
                + (q * &cov).trace()
                + 2.0 * game.l(i, t + 1).dot(&mean);
        }
    }
    Ok(cost)
}

/// Largest substitution residual of the gain and offset optimality
/// conditions over all players and steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubstitutionResidual {
    pub gain: f64,
    pub offset: f64,
}

pub fn substitution_residuals(
    game: &GameSpec,
    policy: &NashPolicy,
    value: &ValueRecursion,
) -> SubstitutionResidual {
    let d = &game.dynamics;
    let n = d.num_players;
    let mut out = SubstitutionResidual {
        gain: 0.0,
        offset: 0.0,
    };
    for t in 0..d.horizon {
        for i in 0..n {
            let b = &d.b[i][t];
            let p = &value.value_quadratic[i][t + 1];
            let z = &value.value_linear[i][t + 1];
            let lhs = game.r(i, t) + b.transpose() * p * b;
            let mut a_minus = d.a[t].clone();
            let mut b_alpha = DVector::zeros(d.nx());
            for j in (0..n).filter(|&j| j != i) {
                a_minus -= &d.b[j][t] * &policy.gains[j][t];
                b_alpha += &d.b[j][t] * &policy.offsets[j][t];
            }
            let rk = &lhs * &policy.gains[i][t] - b.transpose() * p * a_minus;
            let ra = &lhs * &policy.offsets[i][t] - b.transpose() * (z - p * b_alpha);
            out.gain = out.gain.max(rk.norm());
            out.offset = out.offset.max(ra.norm());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::*;

    #[test]
    fn scalar_game_hand_values() {
        let g = scalar_game();
        let (pol, val, rep) = solve_nash(&g).unwrap();
        assert_eq!(val.value_quadratic[0][1][(0, 0)], 1.0);
        assert!((pol.gains[0][0][(0, 0)] - 0.5).abs() < 1e-15);
        assert_eq!(pol.offsets[0][0][0], 0.0);
        assert!((rep.phi[0][(0, 0)] - 2.0).abs() < 1e-15);
        assert!(rep.exists_unique);
    }

    #[test]
    fn zero_state_cost_gives_zero_policy() {
        let g = constant_game(
            m(2, 2, &[1.0, 0.1, 0.0, 1.0]),
            vec![m(2, 1, &[1.0, 0.5]), m(2, 1, &[0.0, 1.0])],
            DMatrix::zeros(2, 2),
            DVector::zeros(2),
            m(1, 1, &[0.7]),
            4,
            DVector::from_vec(vec![1.0, -1.0]),
        );
        let (pol, _, _) = solve_nash(&g).unwrap();
        for i in 0..2 {
            for t in 0..4 {
                assert_eq!(pol.gains[i][t].amax(), 0.0);
                assert_eq!(pol.offsets[i][t].amax(), 0.0);
            }
        }
    }

    #[test]
    fn two_player_scalar_symmetric_solution() {
        let g = two_player_scalar_game();
        let (pol, _, rep) = solve_nash(&g).unwrap();
        // Independent route: the 2x2 system [[2,1],[1,2]] k = [1,1].
        let phi = m(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let k = phi.lu().solve(&DVector::from_vec(vec![1.0, 1.0])).unwrap();
        for i in 0..2 {
            assert!((pol.gains[i][0][(0, 0)] - 1.0 / 3.0).abs() < 1e-15);
            assert!((pol.gains[i][0][(0, 0)] - k[i]).abs() < 1e-15);
        }
        assert!((&rep.phi[0] - m(2, 2, &[2.0, 1.0, 1.0, 2.0])).amax() < 1e-15);
        assert!((rep.phi[0].determinant() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_input_matrix_reduces_phi_to_r() {
        let g = constant_game(
            DMatrix::identity(2, 2),
            vec![DMatrix::zeros(2, 1), DMatrix::zeros(2, 1)],
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            m(1, 1, &[0.3]),
            2,
            DVector::zeros(2),
        );
        let (_, val, _) = solve_nash(&g).unwrap();
        let rep = check_existence(&g, &val);
        assert!(rep.exists_unique);
        assert!((&rep.phi[0] - DMatrix::from_diagonal_element(2, 2, 0.3)).amax() < 1e-15);
    }

    #[test]
    fn closed_loop_values() {
        let g = scalar_game();
        let (pol, _, _) = solve_nash(&g).unwrap();
        let cl = closed_loop(&g.dynamics, &pol);
        assert!((cl[0].f[(0, 0)] - 0.5).abs() < 1e-15 && cl[0].invertible);

        let mut dead = pol.clone();
        dead.gains[0][0][(0, 0)] = 1.0;
        assert!(!closed_loop(&g.dynamics, &dead)[0].invertible);

        let g2 = two_player_scalar_game();
        let (pol2, _, _) = solve_nash(&g2).unwrap();
        assert!((closed_loop(&g2.dynamics, &pol2)[0].f[(0, 0)] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn expected_cost_scalar() {
        let g = scalar_game();
        let (pol, _, _) = solve_nash(&g).unwrap();
        let c = expected_cost(&g, &pol).unwrap();
        assert!((c[0] - 0.5).abs() < 1e-15);

        let mut g1 = g.clone();
        g1.dynamics.chi0 = m(1, 1, &[1.0]);
        // E[x1²] = 0.25 (1 + 1), E[u0²] = 0.25 (1 + 1)
        assert!((expected_cost(&g1, &pol).unwrap()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_costs_zero_expected_cost() {
        let mut g = scalar_game();
        g.costs.q[0][0] = DMatrix::zeros(1, 1);
        g.costs.r[0][0] = m(1, 1, &[1e-300]);
        let pol = NashPolicy::zeros(&g.dynamics);
        assert_eq!(expected_cost(&g, &pol).unwrap()[0], 0.0);
    }

    #[test]
    fn terminal_conditions_exact() {
        let g = two_player_scalar_game();
        let (_, val, _) = solve_nash(&g).unwrap();
        for i in 0..2 {
            assert_eq!(&val.value_quadratic[i][1], g.q(i, 1));
            assert_eq!(&val.value_linear[i][1], g.l(i, 1));
        }
    }

    #[test]
    fn singular_phi_reports_step() {
        // Two identical players with R ≈ 0: Φ_t ≈ [[1, 1], [1, 1]].
        let g = constant_game(
            m(1, 1, &[1.0]),
            vec![m(1, 1, &[1.0]), m(1, 1, &[1.0])],
            m(1, 1, &[1.0]),
            DVector::zeros(1),
            m(1, 1, &[1e-300]),
            3,
            DVector::zeros(1),
        );
        let rep = backward_pass(&g).2;
        assert!(!rep.exists_unique);
        match solve_nash(&g) {
            Err(Error::Existence { t, .. }) => assert_eq!(t, 2),
            other => panic!("expected existence failure, got {other:?}"),
        }
    }
}
