//! Cost identification from feedback Nash policies.
//!
//! For known dynamics and policies, the cost vector of player `i` at step `t`
//! `θ = (vec Q_t, l_t, vec R_{t-1}, 1)` lies in the null space of
//!
//! ```text
//! M = [ S   0   -Kᵀ⊗I   S Δ̄ ]
//!     [ 0   Bᵀ  -Eᵀ⊗I   Bᵀ Ω̄ ]
//! ```
//!
//! with `S = F_{t-1}ᵀ ⊗ B_{t-1}ᵀ` and `E = K F⁻¹ Σ_j B^j α^j + α` taken at
//! `t - 1`. The terms `Δ̄, Ω̄` carry the value function from later steps, so
//! the costs are identified backward from `t = T` (where both vanish),
//! solving one constrained least-squares problem per player and step and
//! propagating the value function with the identified costs.
//!
//! The decision variables are a reduced parametrization of `θ`: off-diagonal
//! entries of `R` are structurally zero, and by default `Q` is restricted to
//! symmetric matrices (each off-diagonal pair becomes one variable whose
//! column is `(m_jk + m_kj)/√2`, preserving the Euclidean norm of `θ`).

use std::f64::consts::SQRT_2;
use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::cls::{solve_lower_bounded, ClsStatus, ClsTolerances, DEFAULT_TAU};
use crate::error::{Error, Result};
use crate::forward::{closed_loop_at, solve_nash};
use crate::linalg::{asymmetry, cond, fmt_f64, symmetrize, unvec, vec_of, COND_LIMIT};
use crate::model::{ensure_policy, Costs, Dynamics, GameSpec, NashPolicy};
use crate::simulate::{expected_trajectory, ExpectedTrajectory};

/// Which entries of `θ` are bounded below by `τ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Positivity {
    /// Diagonals of `Q` and `R`; `l` and off-diagonal `Q` entries are free.
    #[default]
    Diagonal,
    /// Every unknown entry of `Q`, `l` and the diagonal of `R`.
    Strict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QStructure {
    /// Identify `Q` within symmetric matrices.
    #[default]
    Symmetric,
    /// Identify all `n_x²` entries independently, then use `(Q + Qᵀ)/2`
    /// downstream.
    Unconstrained,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentifyOptions {
    pub tau: f64,
    pub positivity: Positivity,
    pub q_structure: QStructure,
    pub tolerances: ClsTolerances,
}

impl Default for IdentifyOptions {
    fn default() -> Self {
        IdentifyOptions {
            tau: DEFAULT_TAU,
            positivity: Positivity::default(),
            q_structure: QStructure::default(),
            tolerances: ClsTolerances::default(),
        }
    }
}

/// Per-step terms shared by all players: `F_t` and, per player, `S_t^i`
/// and `E_t^i`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTerms {
    pub closed_loop: DMatrix<f64>,
    pub s: Vec<DMatrix<f64>>,
    pub e: Vec<DVector<f64>>,
}

/// Builds `F_t`, `S_t^i = F_tᵀ ⊗ B_t^iᵀ` and `E_t^i` for policy step `t`.
pub fn build_terms(d: &Dynamics, policy: &NashPolicy, t: usize) -> Result<StepTerms> {
    let f = closed_loop_at(d, policy, t);
    let c = cond(&f);
    if c >= COND_LIMIT {
        return Err(Error::SingularClosedLoop { t, cond: c });
    }
    let mut drive = DVector::zeros(d.nx());
    for j in 0..d.num_players {
        drive += &d.b[j][t] * &policy.offsets[j][t];
    }
    let lu = f.clone().lu();
    let f_inv_drive = lu
        .solve(&drive)
        .ok_or(Error::SingularClosedLoop { t, cond: c })?;
    let s = (0..d.num_players)
        .map(|i| f.transpose().kronecker(&d.b[i][t].transpose()))
        .collect();
    let e = (0..d.num_players)
        .map(|i| &policy.gains[i][t] * &f_inv_drive + &policy.offsets[i][t])
        .collect();
    Ok(StepTerms {
        closed_loop: f,
        s,
        e,
    })
}

/// Assembles the full `(n_u n_x + n_u) × L` system for one player and step.
pub fn assemble_m(
    s: &DMatrix<f64>,
    e: &DVector<f64>,
    b: &DMatrix<f64>,
    k: &DMatrix<f64>,
    delta_bar: &DVector<f64>,
    omega_bar: &DVector<f64>,
) -> DMatrix<f64> {
    let (nx, nu) = (b.nrows(), b.ncols());
    let l = nx * nx + nx + nu * nu + 1;
    let rows = nu * nx + nu;
    let eye = DMatrix::<f64>::identity(nu, nu);
    let mut m = DMatrix::zeros(rows, l);
    m.view_mut((0, 0), (nu * nx, nx * nx)).copy_from(s);
    m.view_mut((0, nx * nx + nx), (nu * nx, nu * nu))
        .copy_from(&-k.transpose().kronecker(&eye));
    m.view_mut((0, l - 1), (nu * nx, 1))
        .copy_from(&(s * delta_bar));
    m.view_mut((nu * nx, nx * nx), (nu, nx))
        .copy_from(&b.transpose());
    m.view_mut((nu * nx, nx * nx + nx), (nu, nu * nu))
        .copy_from(&-e.transpose().kronecker(&eye));
    m.view_mut((nu * nx, l - 1), (nu, 1))
        .copy_from(&(b.transpose() * omega_bar));
    m
}

/// Value-function carry terms for step `t` from the value at `t + 1`:
/// `Δ̄ = vec(Fᵀ P F + Kᵀ R K)`, `Ω̄ = Fᵀ(ζ - P Σ_j B^j α^j) + Kᵀ R α`.
#[allow(clippy::too_many_arguments)]
pub fn recursion_step(
    f: &DMatrix<f64>,
    k: &DMatrix<f64>,
    alpha: &DVector<f64>,
    bs: &[&DMatrix<f64>],
    alphas: &[&DVector<f64>],
    r: &DMatrix<f64>,
    p_next: &DMatrix<f64>,
    zeta_next: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let delta = f.transpose() * p_next * f + k.transpose() * r * k;
    let mut drive = DVector::zeros(f.nrows());
    for (b, a) in bs.iter().zip(alphas) {
        drive += *b * *a;
    }
    let omega = f.transpose() * (zeta_next - p_next * drive) + k.transpose() * r * alpha;
    (vec_of(&delta), omega)
}

/// Identification output for one player and cost step `t ∈ 1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentifiedStep {
    /// Full cost vector `(vec Q_t, l_t, vec R_{t-1}, 1)` as solved.
    pub theta: DVector<f64>,
    /// `‖M θ‖²`
    pub residual: f64,
    /// Indices into `theta` held at the lower bound.
    pub active_set: Vec<usize>,
    pub m: DMatrix<f64>,
    pub delta_bar: DVector<f64>,
    pub omega_bar: DVector<f64>,
    pub status: ClsStatus,
    pub kkt_residual: f64,
    /// Largest entry of `|Q - Qᵀ|` before symmetrization.
    pub q_asymmetry: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentificationResult {
    pub tau: f64,
    /// Indices of `θ` bounded below by `tau`.
    pub constrained: Vec<usize>,
    /// `steps[i][t - 1]` for cost step `t`.
    pub steps: Vec<Vec<IdentifiedStep>>,
    /// Identified costs with `Q` symmetrized.
    pub costs: Costs,
}

impl IdentificationResult {
    pub fn step(&self, i: usize, t: usize) -> &IdentifiedStep {
        &self.steps[i][t - 1]
    }

    pub fn max_residual(&self) -> f64 {
        self.steps
            .iter()
            .flatten()
            .map(|s| s.residual)
            .fold(0.0, f64::max)
    }

    pub fn game(&self, d: &Dynamics) -> Result<GameSpec> {
        GameSpec::new(d.clone(), self.costs.clone())
    }
}

/// Column map from the reduced decision vector to the full `θ`.
struct Parametrization {
    /// `L × L_red`, last column maps the fixed entry.
    expand: DMatrix<f64>,
    lower: Vec<Option<f64>>,
    constrained_full: Vec<usize>,
}

impl Parametrization {
    fn new(nx: usize, nu: usize, opts: &IdentifyOptions) -> Self {
        let l = nx * nx + nx + nu * nu + 1;
        let tau = opts.tau;
        let strict = opts.positivity == Positivity::Strict;
        let mut cols: Vec<Vec<(usize, f64)>> = Vec::new();
        let mut lower = Vec::new();
        let mut constrained_full = Vec::new();
        match opts.q_structure {
            QStructure::Symmetric => {
                for c in 0..nx {
                    for r in 0..=c {
                        if r == c {
                            cols.push(vec![(c * nx + r, 1.0)]);
                            lower.push(Some(tau));
                        } else {
                            cols.push(vec![(c * nx + r, 1.0 / SQRT_2), (r * nx + c, 1.0 / SQRT_2)]);
                            lower.push(strict.then_some(tau * SQRT_2));
                        }
                    }
                }
            }
            QStructure::Unconstrained => {
                for c in 0..nx {
                    for r in 0..nx {
                        cols.push(vec![(c * nx + r, 1.0)]);
                        lower.push((r == c || strict).then_some(tau));
                    }
                }
            }
        }
        for c in 0..nx {
            for r in 0..nx {
                if r == c || strict {
                    constrained_full.push(c * nx + r);
                }
            }
        }
        for j in 0..nx {
            cols.push(vec![(nx * nx + j, 1.0)]);
            lower.push(strict.then_some(tau));
            if strict {
                constrained_full.push(nx * nx + j);
            }
        }
        for k in 0..nu {
            let idx = nx * nx + nx + k * nu + k;
            cols.push(vec![(idx, 1.0)]);
            lower.push(Some(tau));
            constrained_full.push(idx);
        }
        cols.push(vec![(l - 1, 1.0)]);
        let mut expand = DMatrix::zeros(l, cols.len());
        for (k, col) in cols.iter().enumerate() {
            for &(idx, w) in col {
                expand[(idx, k)] = w;
            }
        }
        Parametrization {
            expand,
            lower,
            constrained_full,
        }
    }
}

/// Identifies every player's costs backward from `t = T`, given the known
/// dynamics and a Nash policy (exact or estimated).
pub fn identify_costs(
    d: &Dynamics,
    policy: &NashPolicy,
    opts: &IdentifyOptions,
) -> Result<IdentificationResult> {
    ensure_policy(d, policy)?;
    if !(opts.tau > 0.0 && opts.tau.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "tau must be positive, got {}",
            opts.tau
        )));
    }
    let (nx, nu, horizon, players) = (d.nx(), d.nu(), d.horizon, d.num_players);
    let terms = (0..horizon)
        .map(|t| build_terms(d, policy, t))
        .collect::<Result<Vec<_>>>()?;
    let param = Parametrization::new(nx, nu, opts);

    let mut delta: Vec<DVector<f64>> = vec![DVector::zeros(nx * nx); players];
    let mut omega: Vec<DVector<f64>> = vec![DVector::zeros(nx); players];
    let mut steps: Vec<Vec<Option<IdentifiedStep>>> = vec![vec![None; horizon]; players];
    let mut costs = Costs {
        q: vec![vec![DMatrix::zeros(nx, nx); horizon]; players],
        l: vec![vec![DVector::zeros(nx); horizon]; players],
        r: vec![vec![DMatrix::zeros(nu, nu); horizon]; players],
    };

    for t in (1..=horizon).rev() {
        let pt = t - 1;
        let term = &terms[pt];
        for i in 0..players {
            let m = assemble_m(
                &term.s[i],
                &term.e[i],
                &d.b[i][pt],
                &policy.gains[i][pt],
                &delta[i],
                &omega[i],
            );
            if m.columns(0, m.ncols() - 1).amax() == 0.0 {
                log::warn!(
                    "player {}, t={t}: system matrix vanishes; costs are unidentifiable",
                    i + 1
                );
            }
            let reduced = &m * &param.expand;
            let sol = solve_lower_bounded(&reduced, &param.lower, &opts.tolerances);
            match sol.status {
                ClsStatus::IterationCap => {
                    return Err(Error::ClsNonConvergence { player: i + 1, t })
                }
                ClsStatus::KktViolation => log::warn!(
                    "player {}, t={t}: KKT residual {:e} above tolerance",
                    i + 1,
                    sol.kkt_residual
                ),
                ClsStatus::Optimal => {}
            }
            let theta = &param.expand * &sol.theta;
            let expand = &param.expand;
            let mut active: Vec<usize> = sol
                .active_set
                .iter()
                .flat_map(|&k| (0..expand.nrows()).filter(move |&r| expand[(r, k)] != 0.0))
                .collect();
            active.sort_unstable();

            let q_raw = unvec(&theta.as_slice()[..nx * nx], nx, nx);
            let q_asym = asymmetry(&q_raw);
            if q_asym > 0.0 && opts.q_structure == QStructure::Unconstrained {
                log::debug!(
                    "player {}, t={t}: identified Q asymmetry {q_asym:e}, symmetrized",
                    i + 1
                );
            }
            costs.q[i][pt] = symmetrize(&q_raw);
            costs.l[i][pt] = theta.rows(nx * nx, nx).into_owned();
            let r_vec = theta.rows(nx * nx + nx, nu * nu).into_owned();
            costs.r[i][pt] = unvec(r_vec.as_slice(), nu, nu);
            steps[i][pt] = Some(IdentifiedStep {
                residual: (&m * &theta).norm_squared(),
                theta,
                active_set: active,
                m,
                delta_bar: delta[i].clone(),
                omega_bar: omega[i].clone(),
                status: sol.status,
                kkt_residual: sol.kkt_residual,
                q_asymmetry: q_asym,
            });
        }
        if t == 1 {
            break;
        }
        // Carry the value at t back to step t - 1.
        let bs: Vec<&DMatrix<f64>> = (0..players).map(|j| &d.b[j][pt]).collect();
        let alphas: Vec<&DVector<f64>> = (0..players).map(|j| &policy.offsets[j][pt]).collect();
        for i in 0..players {
            let p_t = unvec(delta[i].as_slice(), nx, nx) + &costs.q[i][pt];
            let zeta_t = &omega[i] + &costs.l[i][pt];
            let (dl, om) = recursion_step(
                &term.closed_loop,
                &policy.gains[i][pt],
                &policy.offsets[i][pt],
                &bs,
                &alphas,
                &costs.r[i][pt],
                &p_t,
                &zeta_t,
            );
            delta[i] = dl;
            omega[i] = om;
        }
    }

    let steps = steps
        .into_iter()
        .map(|v| {
            v.into_iter()
                .map(|s| s.expect("every step solved"))
                .collect()
        })
        .collect();
    Ok(IdentificationResult {
        tau: opts.tau,
        constrained: param.constrained_full,
        steps,
        costs,
    })
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return MeanStd {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        MeanStd {
            mean,
            std: var.sqrt(),
        }
    }
}

/// Errors of the policy and expected trajectories recovered from identified
/// costs, relative to a reference policy.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundTrip {
    /// Set when the identified game has no unique equilibrium; all errors
    /// are then `inf`.
    pub failure: Option<String>,
    /// `‖K̂ - K‖_F` per `[i][t]`.
    pub k_err: Vec<Vec<f64>>,
    /// `‖α̂ - α‖₂` per `[i][t]`.
    pub alpha_err: Vec<Vec<f64>>,
    /// `‖x̂_t - x_t‖₂`, t = 0..=T.
    pub x_err: Vec<f64>,
    /// `‖û_t - u_t‖₂` per `[i][t]`.
    pub u_err: Vec<Vec<f64>>,
    pub recovered_policy: Option<NashPolicy>,
    pub reference_trajectory: ExpectedTrajectory,
    pub recovered_trajectory: Option<ExpectedTrajectory>,
}

/// Table-style aggregates: `K̄, ᾱ, ū` over all (player, step) pairs and
/// `x̄` over t = 1..=T.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RoundTripSummary {
    pub k: MeanStd,
    pub alpha: MeanStd,
    pub x: MeanStd,
    pub u: MeanStd,
}

impl RoundTrip {
    pub fn summary(&self) -> RoundTripSummary {
        let flat = |v: &Vec<Vec<f64>>| v.iter().flatten().copied().collect::<Vec<_>>();
        RoundTripSummary {
            k: MeanStd::of(&flat(&self.k_err)),
            alpha: MeanStd::of(&flat(&self.alpha_err)),
            x: MeanStd::of(&self.x_err[1..]),
            u: MeanStd::of(&flat(&self.u_err)),
        }
    }

    /// Largest `‖[K̂ - K, α̂ - α]‖_F` over players and steps.
    pub fn policy_error(&self) -> f64 {
        self.k_err
            .iter()
            .flatten()
            .zip(self.alpha_err.iter().flatten())
            .map(|(k, a)| (k * k + a * a).sqrt())
            .fold(0.0, f64::max)
    }

    pub fn state_error(&self) -> f64 {
        self.x_err.iter().copied().fold(0.0, f64::max)
    }

    pub fn input_error(&self) -> f64 {
        self.u_err.iter().flatten().copied().fold(0.0, f64::max)
    }
}

/// Re-solves the game under `costs` and compares the resulting policy and
/// noise-free trajectories with those of `reference`.
pub fn verify_roundtrip(d: &Dynamics, costs: &Costs, reference: &NashPolicy) -> Result<RoundTrip> {
    ensure_policy(d, reference)?;
    let reference_trajectory = expected_trajectory(d, reference)?;
    let game = GameSpec::new(d.clone(), costs.clone())?;
    let (players, horizon) = (d.num_players, d.horizon);
    let inf_grid = || vec![vec![f64::INFINITY; horizon]; players];
    let policy = match solve_nash(&game) {
        Ok((p, _, _)) => p,
        Err(e @ Error::Existence { .. }) => {
            return Ok(RoundTrip {
                failure: Some(e.to_string()),
                k_err: inf_grid(),
                alpha_err: inf_grid(),
                x_err: vec![f64::INFINITY; horizon + 1],
                u_err: inf_grid(),
                recovered_policy: None,
                reference_trajectory,
                recovered_trajectory: None,
            })
        }
        Err(e) => return Err(e),
    };
    let traj = expected_trajectory(d, &policy)?;
    let grid = |f: &dyn Fn(usize, usize) -> f64| -> Vec<Vec<f64>> {
        (0..players)
            .map(|i| (0..horizon).map(|t| f(i, t)).collect())
            .collect()
    };
    let k_err = grid(&|i, t| (&policy.gains[i][t] - &reference.gains[i][t]).norm());
    let alpha_err = grid(&|i, t| (&policy.offsets[i][t] - &reference.offsets[i][t]).norm());
    let u_err = grid(&|i, t| (&traj.inputs[i][t] - &reference_trajectory.inputs[i][t]).norm());
    let x_err = (0..=horizon)
        .map(|t| (&traj.states[t] - &reference_trajectory.states[t]).norm())
        .collect();
    Ok(RoundTrip {
        failure: None,
        k_err,
        alpha_err,
        x_err,
        u_err,
        recovered_policy: Some(policy),
        reference_trajectory,
        recovered_trajectory: Some(traj),
    })
}

/// `player,t,residual,active_set_size`, players 1-based, `t` the cost step.
pub fn write_residuals<W: Write>(w: W, result: &IdentificationResult) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["player", "t", "residual", "active_set_size"])?;
    for (i, steps) in result.steps.iter().enumerate() {
        for (k, s) in steps.iter().enumerate() {
            out.write_record([
                (i + 1).to_string(),
                (k + 1).to_string(),
                fmt_f64(s.residual),
                s.active_set.len().to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// `player,t,k_err,alpha_err,mean,std`: one row per (player, step), then
/// summary rows labelled `mean_K`, `mean_alpha`, `mean_x`, `mean_u` in the
/// player column with only `mean` and `std` filled.
pub fn write_metrics<W: Write>(w: W, rt: &RoundTrip) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["player", "t", "k_err", "alpha_err", "mean", "std"])?;
    for (i, (ks, als)) in rt.k_err.iter().zip(&rt.alpha_err).enumerate() {
        for (t, (k, a)) in ks.iter().zip(als).enumerate() {
            out.write_record([
                (i + 1).to_string(),
                t.to_string(),
                fmt_f64(*k),
                fmt_f64(*a),
                String::new(),
                String::new(),
            ])?;
        }
    }
    let s = rt.summary();
    for (label, v) in [
        ("mean_K", s.k),
        ("mean_alpha", s.alpha),
        ("mean_x", s.x),
        ("mean_u", s.u),
    ] {
        out.write_record([label, "", "", "", &fmt_f64(v.mean), &fmt_f64(v.std)])?;
    }
    out.flush()?;
    Ok(())
}
