//! Constrained least squares `min ‖Mθ‖²` subject to `θ_j ≥ τ` on a selected
//! index set and a last entry fixed to 1.
//!
//! The fixed coordinate is moved to the right-hand side and the lower bounds
//! are shifted to zero, leaving a least-squares problem with a mix of free
//! and nonnegative variables. That problem is solved by a primal active-set
//! method (Lawson–Hanson with free variables); every working-set subproblem
//! is a minimum-change SVD solve on the passive columns.
//!
//! When the optimum is not unique the minimum-norm optimizer is returned. The
//! optimal set is `{θ : Mθ = Mθ*, bounds}`; writing `θ = θ₀ + N w` over the
//! null space of the free columns turns the selection into the least-distance
//! problem `min ‖w‖ s.t. G w ≥ h`, which is solved through its NNLS dual.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{lstsq_min_norm, null_space};

pub const DEFAULT_TAU: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClsTolerances {
    /// Allowed violation of `θ_j ≥ τ`.
    pub feasibility: f64,
    /// Bound on the KKT stationarity residual.
    pub kkt: f64,
    /// Active-set changes allowed per decision variable.
    pub changes_per_variable: usize,
}

impl Default for ClsTolerances {
    fn default() -> Self {
        ClsTolerances {
            feasibility: 1e-12,
            kkt: 1e-8,
            changes_per_variable: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClsProblem {
    /// `m × L` system matrix; the last column multiplies the fixed entry.
    pub m: DMatrix<f64>,
    /// Zero-based indices held at `≥ tau`; never contains `L - 1`.
    pub constrained: Vec<usize>,
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClsStatus {
    Optimal,
    /// Iteration cap hit; `theta` is the best feasible iterate.
    IterationCap,
    /// Converged but the returned point fails the KKT check.
    KktViolation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClsSolution {
    pub theta: DVector<f64>,
    /// `‖Mθ‖²`
    pub residual: f64,
    /// Constrained indices sitting at `τ`.
    pub active_set: Vec<usize>,
    pub iterations: usize,
    pub status: ClsStatus,
    pub kkt_residual: f64,
}

impl ClsProblem {
    pub fn new(m: DMatrix<f64>, mut constrained: Vec<usize>, tau: f64) -> Result<Self> {
        let l = m.ncols();
        if l == 0 {
            return Err(Error::InvalidArgument("CLS matrix has no columns".into()));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "tau must be positive, got {tau}"
            )));
        }
        constrained.sort_unstable();
        constrained.dedup();
        if let Some(&j) = constrained.iter().find(|&&j| j >= l - 1) {
            return Err(Error::InvalidArgument(format!(
                "constrained index {j} out of range (the fixed index is {})",
                l - 1
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "CLS matrix has non-finite entries".into(),
            ));
        }
        Ok(ClsProblem {
            m,
            constrained,
            tau,
        })
    }

    pub fn len(&self) -> usize {
        self.m.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.m.ncols() == 0
    }

    fn bounded_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.len() - 1];
        for &j in &self.constrained {
            mask[j] = true;
        }
        mask
    }

    pub fn residual(&self, theta: &DVector<f64>) -> f64 {
        (&self.m * theta).norm_squared()
    }
}

pub fn solve_cls(problem: &ClsProblem) -> ClsSolution {
    solve_cls_with(problem, &ClsTolerances::default())
}

pub fn solve_cls_with(problem: &ClsProblem, tol: &ClsTolerances) -> ClsSolution {
    let lower: Vec<Option<f64>> = problem
        .bounded_mask()
        .into_iter()
        .map(|b| b.then_some(problem.tau))
        .collect();
    solve_lower_bounded(&problem.m, &lower, tol)
}

/// Same problem with an individual lower bound per decision coordinate
/// (`lower[j]` for `j < L - 1`, `None` when free).
pub fn solve_lower_bounded(
    m: &DMatrix<f64>,
    lower: &[Option<f64>],
    tol: &ClsTolerances,
) -> ClsSolution {
    let n = m.ncols() - 1;
    assert_eq!(lower.len(), n, "one bound slot per decision coordinate");
    let bounded: Vec<bool> = lower.iter().map(Option::is_some).collect();
    let a = m.columns(0, n).into_owned();
    let c = m.column(n).into_owned();

    // y = z + lower, z_D ≥ 0
    let shift = DVector::from_iterator(n, lower.iter().map(|b| b.unwrap_or(0.0)));
    let rhs = -(&c + &a * &shift);
    let cap = tol.changes_per_variable * m.ncols();
    let run = bounded_lsq(&a, &rhs, &bounded, cap);
    let y_star = &run.z + &shift;

    let clamp = |y: &mut DVector<f64>, snap: bool| {
        for (j, b) in lower.iter().enumerate() {
            if let Some(lo) = *b {
                let band = if snap { 1e-10 * lo.abs().max(1.0) } else { 0.0 };
                if y[j] - lo <= band {
                    y[j] = lo;
                }
            }
        }
    };
    let mut y = min_norm_optimal(&a, &y_star, lower);
    // Snap tiny violations and near-active entries onto the bound.
    clamp(&mut y, true);
    let best = objective(&a, &c, &y_star);
    if objective(&a, &c, &y) > best + 1e-14 * (1.0 + best) {
        y = y_star;
        clamp(&mut y, false);
    }

    let mut theta = DVector::zeros(n + 1);
    theta.rows_mut(0, n).copy_from(&y);
    theta[n] = 1.0;
    let active_set: Vec<usize> = (0..n).filter(|&j| lower[j] == Some(y[j])).collect();
    let kkt = stationarity(m, &theta, &active_set);
    let status = if !run.converged {
        ClsStatus::IterationCap
    } else if kkt > tol.kkt {
        ClsStatus::KktViolation
    } else {
        ClsStatus::Optimal
    };
    ClsSolution {
        residual: (m * &theta).norm_squared(),
        theta,
        active_set,
        iterations: run.changes,
        status,
        kkt_residual: kkt,
    }
}

/// Largest KKT stationarity violation of `θ`: `|∂_j ‖Mθ‖²|` on free and
/// inactive coordinates, the negative part of the multiplier on active ones.
pub fn kkt_residual(problem: &ClsProblem, theta: &DVector<f64>, active_set: &[usize]) -> f64 {
    stationarity(&problem.m, theta, active_set)
}

fn stationarity(m: &DMatrix<f64>, theta: &DVector<f64>, active_set: &[usize]) -> f64 {
    let n = m.ncols() - 1;
    let grad = m.transpose() * (m * theta) * 2.0;
    let mut active = vec![false; n];
    for &j in active_set {
        active[j] = true;
    }
    (0..n)
        .map(|j| {
            if active[j] {
                (-grad[j]).max(0.0)
            } else {
                grad[j].abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Largest violation of `θ_j ≥ τ` over the constrained set (0 if feasible).
pub fn feasibility_violation(problem: &ClsProblem, theta: &DVector<f64>) -> f64 {
    problem
        .constrained
        .iter()
        .map(|&j| (problem.tau - theta[j]).max(0.0))
        .fold(0.0, f64::max)
}

fn objective(a: &DMatrix<f64>, c: &DVector<f64>, y: &DVector<f64>) -> f64 {
    (a * y + c).norm_squared()
}

struct BoundedRun {
    z: DVector<f64>,
    changes: usize,
    converged: bool,
}

/// `min ‖A z − b‖²` with `z_j ≥ 0` where `bounded[j]`, other entries free.
fn bounded_lsq(a: &DMatrix<f64>, b: &DVector<f64>, bounded: &[bool], cap: usize) -> BoundedRun {
    let n = a.ncols();
    let mut z = DVector::zeros(n);
    let mut at_bound = bounded.to_vec();
    let mut refused = vec![false; n];
    let mut changes = 0;
    let scale = a.norm() * b.norm() + a.norm_squared();
    let grad_tol = 1e-13 * scale.max(f64::MIN_POSITIVE);
    let mut just_freed: Option<usize> = None;

    loop {
        // Inner loop: move to the minimizer over the passive set, dropping
        // blocking variables back onto their bounds.
        loop {
            let passive: Vec<usize> = (0..n).filter(|&j| !at_bound[j]).collect();
            let s = passive_step(a, b, &z, &passive);
            let mut alpha = 1.0;
            let mut blocking = None;
            for &j in &passive {
                if bounded[j] && s[j] < 0.0 {
                    let step = z[j] / (z[j] - s[j]);
                    if step < alpha {
                        alpha = step;
                        blocking = Some(j);
                    }
                }
            }
            let Some(jb) = blocking else {
                z = s;
                break;
            };
            if just_freed == Some(jb) && alpha <= 0.0 {
                // The freed variable cannot move; put it back and refuse it
                // until something else changes.
                at_bound[jb] = true;
                z[jb] = 0.0;
                refused[jb] = true;
                break;
            }
            z += (&s - &z) * alpha;
            for &j in &passive {
                if bounded[j] && (j == jb || z[j] <= 0.0) {
                    z[j] = 0.0;
                    at_bound[j] = true;
                }
            }
            changes += 1;
            if changes > cap {
                return BoundedRun {
                    z,
                    changes,
                    converged: false,
                };
            }
        }
        if let Some(j) = just_freed.take() {
            if !at_bound[j] {
                refused.iter_mut().for_each(|r| *r = false);
            }
        }

        let grad = a.transpose() * (a * &z - b);
        let entering = (0..n)
            .filter(|&j| at_bound[j] && !refused[j] && grad[j] < -grad_tol)
            .min_by(|&p, &q| grad[p].total_cmp(&grad[q]));
        let Some(j) = entering else {
            return BoundedRun {
                z,
                changes,
                converged: true,
            };
        };
        at_bound[j] = false;
        just_freed = Some(j);
        changes += 1;
        if changes > cap {
            return BoundedRun {
                z,
                changes,
                converged: false,
            };
        }
    }
}

/// Minimum-change minimizer over the passive columns, bound entries zero.
fn passive_step(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    z: &DVector<f64>,
    passive: &[usize],
) -> DVector<f64> {
    let n = a.ncols();
    let mut s = DVector::zeros(n);
    if passive.is_empty() {
        return s;
    }
    let a_p = a.select_columns(passive);
    let z_p = DVector::from_iterator(passive.len(), passive.iter().map(|&j| z[j]));
    let r = b - &a_p * &z_p;
    let d = lstsq_min_norm(&a_p, &r);
    for (k, &j) in passive.iter().enumerate() {
        s[j] = z_p[k] + d[k];
    }
    s
}

/// Minimum-norm point of `{y : A y = A y*, y_j ≥ lower_j}`.
fn min_norm_optimal(
    a: &DMatrix<f64>,
    y_star: &DVector<f64>,
    lower: &[Option<f64>],
) -> DVector<f64> {
    let n = a.ncols();
    if n == 0 {
        return y_star.clone();
    }
    let basis = null_space(a);
    if basis.ncols() == 0 {
        return y_star.clone();
    }
    let target = a * y_star;
    let y0 = lstsq_min_norm(a, &target);
    let rows: Vec<usize> = (0..n).filter(|&j| lower[j].is_some()).collect();
    let h = DVector::from_iterator(
        rows.len(),
        rows.iter().map(|&j| lower[j].unwrap_or(0.0) - y0[j]),
    );
    if h.iter().all(|&v| v <= 0.0) {
        return y0;
    }
    let g = basis.select_rows(&rows);
    match least_distance(&g, &h) {
        Some(w) => y0 + &basis * w,
        None => y_star.clone(),
    }
}

/// `min ‖w‖ s.t. G w ≥ h` via the NNLS dual
/// `min ‖[Gᵀ; hᵀ] u − e‖, u ≥ 0`.
fn least_distance(g: &DMatrix<f64>, h: &DVector<f64>) -> Option<DVector<f64>> {
    let (k, m) = g.shape();
    let mut e = DMatrix::zeros(m + 1, k);
    e.view_mut((0, 0), (m, k)).copy_from(&g.transpose());
    e.row_mut(m).copy_from(&h.transpose());
    let mut f = DVector::zeros(m + 1);
    f[m] = 1.0;
    let run = bounded_lsq(&e, &f, &vec![true; k], 10 * (k + 1) + 50);
    let r = &e * &run.z - &f;
    if r.norm() < 1e-14 || r[m].abs() < 1e-300 {
        return None;
    }
    Some(-r.rows(0, m) / r[m])
}

/// Brute-force reference solver for small problems (`L ≤ 5`).
///
/// Enumerates every subset of constrained indices pinned at `τ`, solves the
/// remaining unconstrained least squares by QR (pseudo-inverse when rank
/// deficient), and keeps the best feasible candidate. For `L ≤ 3` the
/// feasible box `[τ, τ + 4] × [-4, 4]` is additionally scanned on a grid of
/// the given resolution.
pub fn solve_cls_oracle(problem: &ClsProblem, grid_resolution: f64) -> Result<ClsSolution> {
    let l = problem.len();
    if l > 5 {
        return Err(Error::InvalidArgument(format!(
            "oracle supports L <= 5, got {l}"
        )));
    }
    let n = l - 1;
    let tau = problem.tau;
    let bounded = problem.bounded_mask();
    let mut best: Option<(f64, DVector<f64>)> = None;
    let consider = |theta: DVector<f64>, best: &mut Option<(f64, DVector<f64>)>| {
        let r = problem.residual(&theta);
        if best.as_ref().is_none_or(|(b, _)| r < *b) {
            *best = Some((r, theta));
        }
    };

    let d = &problem.constrained;
    for mask in 0u32..(1 << d.len()) {
        let pinned: Vec<usize> = (0..d.len())
            .filter(|&k| mask & (1 << k) != 0)
            .map(|k| d[k])
            .collect();
        let rest: Vec<usize> = (0..n).filter(|j| !pinned.contains(j)).collect();
        let mut theta = DVector::zeros(l);
        theta[n] = 1.0;
        for &j in &pinned {
            theta[j] = tau;
        }
        if !rest.is_empty() {
            let a = problem.m.select_columns(&rest);
            let rhs = -(&problem.m * &theta);
            let x = oracle_lstsq(&a, &rhs);
            for (k, &j) in rest.iter().enumerate() {
                theta[j] = x[k];
            }
        }
        if (0..n).all(|j| !bounded[j] || theta[j] >= tau - 1e-9) {
            for j in 0..n {
                if bounded[j] && theta[j] < tau {
                    theta[j] = tau;
                }
            }
            consider(theta, &mut best);
        }
    }

    if (1..=2).contains(&n) && grid_resolution > 0.0 {
        let width = 4.0;
        let steps = (width / grid_resolution).round() as usize;
        let axis = |j: usize, k: usize| {
            if bounded[j] {
                tau + k as f64 * grid_resolution
            } else {
                -width + 2.0 * k as f64 * grid_resolution
            }
        };
        let rows = problem.m.nrows();
        let col = |j: usize| problem.m.column(j).iter().copied().collect::<Vec<f64>>();
        let c = col(n);
        let a0 = col(0);
        let a1 = if n == 2 { col(1) } else { vec![0.0; rows] };
        let steps1 = if n == 2 { steps } else { 0 };
        let mut grid_best = (f64::INFINITY, 0.0, 0.0);
        for k0 in 0..=steps {
            let y0 = axis(0, k0);
            for k1 in 0..=steps1 {
                let y1 = if n == 2 { axis(1, k1) } else { 0.0 };
                let r: f64 = (0..rows)
                    .map(|i| (c[i] + y0 * a0[i] + y1 * a1[i]).powi(2))
                    .sum();
                if r < grid_best.0 {
                    grid_best = (r, y0, y1);
                }
            }
        }
        let mut theta = DVector::zeros(l);
        theta[n] = 1.0;
        theta[0] = grid_best.1;
        if n == 2 {
            theta[1] = grid_best.2;
        }
        consider(theta, &mut best);
    }

    let (residual, theta) =
        best.ok_or_else(|| Error::InvalidArgument("oracle found no feasible point".into()))?;
    let active_set: Vec<usize> = problem
        .constrained
        .iter()
        .copied()
        .filter(|&j| (theta[j] - tau).abs() <= 1e-12)
        .collect();
    Ok(ClsSolution {
        kkt_residual: kkt_residual(problem, &theta, &active_set),
        theta,
        residual,
        active_set,
        iterations: 0,
        status: ClsStatus::Optimal,
    })
}

fn oracle_lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if a.nrows() >= a.ncols() {
        let qr = a.clone().qr();
        let r = qr.r();
        let full_rank = (0..r.ncols()).all(|k| r[(k, k)].abs() > 1e-10 * r.amax().max(1e-300));
        if full_rank {
            let qtb = qr.q().transpose() * b;
            if let Some(x) = r.solve_upper_triangular(&qtb) {
                return x;
            }
        }
    }
    a.clone()
        .pseudo_inverse(1e-12)
        .map(|p| p * b)
        .unwrap_or_else(|_| DVector::zeros(a.ncols()))
}
