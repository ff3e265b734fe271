//! Data model for finite-horizon LQG games.
//!
//! Time indexing follows the stage cost
//! `Σ_{t=0}^{T-1} ‖x_{t+1}‖²_{Q_{t+1}} + l_{t+1}ᵀ x_{t+1} + ‖u_t‖²_{R_t}`:
//! dynamics, input weights and process noise are indexed `t = 0..T-1`,
//! while the state weights `Q` and `l` are indexed `t = 1..=T`. The `q` and
//! `l` vectors below are stored zero-based, so `costs.q[i][k]` holds
//! `Q^i_{k+1}`; use [`GameSpec::q`] and [`GameSpec::l`] to index by time.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Tolerance on symmetry and minimum eigenvalue of covariance inputs.
pub const COV_TOL: f64 = 1e-10;

/// Known part of a game: dynamics, initial state and process noise.
#[derive(Debug, Clone, PartialEq)]
pub struct Dynamics {
    pub num_players: usize,
    pub horizon: usize,
    pub state_dims: Vec<usize>,
    pub input_dim: usize,
    /// `a[t]`, t = 0..T-1
    pub a: Vec<DMatrix<f64>>,
    /// `b[i][t]`, t = 0..T-1
    pub b: Vec<Vec<DMatrix<f64>>>,
    pub mu0: DVector<f64>,
    pub chi0: DMatrix<f64>,
    /// `sigma[t]`, t = 0..T-1
    pub sigma: Vec<DMatrix<f64>>,
}

/// Per-player cost parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Costs {
    /// `q[i][k]` is `Q^i_{k+1}`.
    pub q: Vec<Vec<DMatrix<f64>>>,
    /// `l[i][k]` is `l^i_{k+1}`.
    pub l: Vec<Vec<DVector<f64>>>,
    /// `r[i][t]` is `R^i_t`.
    pub r: Vec<Vec<DMatrix<f64>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameSpec {
    pub dynamics: Dynamics,
    pub costs: Costs,
}

/// Affine feedback policies `u^i_t = -K^i_t x_t - α^i_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct NashPolicy {
    /// `gains[i][t]`, each `n_u × n_x`.
    pub gains: Vec<Vec<DMatrix<f64>>>,
    /// `offsets[i][t]`, each of length `n_u`.
    pub offsets: Vec<Vec<DVector<f64>>>,
}

/// Value-function parameters produced by the backward recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueRecursion {
    /// `value_quadratic[i][t]` is `P^i_t` for t = 0..=T. `P^i_0` carries no
    /// stage term on `x_0`.
    pub value_quadratic: Vec<Vec<DMatrix<f64>>>,
    /// `value_linear[i][t]` is `ζ^i_t` for t = 0..=T.
    pub value_linear: Vec<Vec<DVector<f64>>>,
    /// `closed_loop[t] = A_t - Σ_j B^j_t K^j_t`.
    pub closed_loop: Vec<DMatrix<f64>>,
    pub cl_cond: Vec<f64>,
    pub cl_invertible: Vec<bool>,
}

/// A batch of `n` demonstrations; column `s` of every matrix is sample `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    pub num_samples: usize,
    /// `states[t]`, t = 0..=T, each `n_x × n`.
    pub states: Vec<DMatrix<f64>>,
    /// `inputs[i][t]`, t = 0..T-1, each `n_u × n` (observed, possibly noisy).
    pub inputs: Vec<Vec<DMatrix<f64>>>,
    pub obs_noise_sigma: f64,
    pub seed: Option<u64>,
}

impl Dynamics {
    pub fn nx(&self) -> usize {
        self.state_dims.iter().sum()
    }

    pub fn nu(&self) -> usize {
        self.input_dim
    }

    /// Length of the cost parameter vector `θ`: `n_x² + n_x + n_u² + 1`.
    pub fn theta_len(&self) -> usize {
        let (nx, nu) = (self.nx(), self.nu());
        nx * nx + nx + nu * nu + 1
    }

    pub fn validate(&self) -> Result<()> {
        let (n, t_len, nx, nu) = (self.num_players, self.horizon, self.nx(), self.nu());
        if n == 0 {
            return Err(Error::dim("num_players", "must be at least 1"));
        }
        if t_len == 0 {
            return Err(Error::dim("horizon", "must be at least 1"));
        }
        if self.state_dims.len() != n {
            return Err(Error::dim(
                "state_dims",
                format!("expected {n} entries, got {}", self.state_dims.len()),
            ));
        }
        if nx == 0 || nu == 0 {
            return Err(Error::dim(
                "state_dims/input_dim",
                "dimensions must be positive",
            ));
        }
        check_len("A", self.a.len(), t_len)?;
        for (t, a) in self.a.iter().enumerate() {
            check_shape(&format!("A[{t}]"), a, nx, nx)?;
        }
        check_len("B", self.b.len(), n)?;
        for (i, bi) in self.b.iter().enumerate() {
            check_len(&format!("B[{i}]"), bi.len(), t_len)?;
            for (t, b) in bi.iter().enumerate() {
                check_shape(&format!("B[{i}][{t}]"), b, nx, nu)?;
            }
        }
        if self.mu0.len() != nx {
            return Err(Error::dim(
                "mu0",
                format!("expected length {nx}, got {}", self.mu0.len()),
            ));
        }
        check_shape("chi0", &self.chi0, nx, nx)?;
        check_psd("chi0", &self.chi0)?;
        check_len("Sigma", self.sigma.len(), t_len)?;
        for (t, s) in self.sigma.iter().enumerate() {
            let path = format!("Sigma[{t}]");
            check_shape(&path, s, nx, nx)?;
            check_psd(&path, s)?;
        }
        check_finite_all(self)?;
        Ok(())
    }
}

fn check_finite_all(d: &Dynamics) -> Result<()> {
    let finite = |m: &DMatrix<f64>| m.iter().all(|v| v.is_finite());
    if !d.a.iter().all(finite) {
        return Err(Error::parse("A", "non-finite entry"));
    }
    if !d.b.iter().flatten().all(finite) {
        return Err(Error::parse("B", "non-finite entry"));
    }
    if !d.mu0.iter().all(|v| v.is_finite()) {
        return Err(Error::parse("mu0", "non-finite entry"));
    }
    Ok(())
}

fn check_len(path: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::dim(
            path,
            format!("expected {want} entries, got {got}"),
        ));
    }
    Ok(())
}

fn check_shape(path: &str, m: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::dim(
            path,
            format!("expected {rows}x{cols}, got {}x{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(())
}

fn check_psd(path: &str, m: &DMatrix<f64>) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPsd {
            path: path.into(),
            msg: "non-finite entry".into(),
        });
    }
    let asym = linalg::asymmetry(m);
    if asym > COV_TOL {
        return Err(Error::NotPsd {
            path: path.into(),
            msg: format!("asymmetry {asym:e}"),
        });
    }
    let min = linalg::min_sym_eigenvalue(m);
    if min < -COV_TOL {
        return Err(Error::NotPsd {
            path: path.into(),
            msg: format!("min eigenvalue {min:e}"),
        });
    }
    Ok(())
}

impl Costs {
    pub fn validate(&self, dyn_: &Dynamics) -> Result<()> {
        let (n, t_len, nx, nu) = (dyn_.num_players, dyn_.horizon, dyn_.nx(), dyn_.nu());
        check_len("Q", self.q.len(), n)?;
        check_len("l", self.l.len(), n)?;
        check_len("R", self.r.len(), n)?;
        for i in 0..n {
            check_len(&format!("Q[{i}]"), self.q[i].len(), t_len)?;
            check_len(&format!("l[{i}]"), self.l[i].len(), t_len)?;
            check_len(&format!("R[{i}]"), self.r[i].len(), t_len)?;
            for k in 0..t_len {
                let path = format!("Q[{i}][{k}]");
                check_shape(&path, &self.q[i][k], nx, nx)?;
                if self.q[i][k].iter().any(|v| !v.is_finite()) {
                    return Err(Error::parse(path, "non-finite entry"));
                }
                let asym = linalg::asymmetry(&self.q[i][k]);
                if asym > COV_TOL {
                    log::warn!(
                        "{path}: Q is not symmetric (asymmetry {asym:e}); accepted as given"
                    );
                }
                let path = format!("l[{i}][{k}]");
                if self.l[i][k].len() != nx {
                    return Err(Error::dim(
                        path,
                        format!("expected length {nx}, got {}", self.l[i][k].len()),
                    ));
                }
                if self.l[i][k].iter().any(|v| !v.is_finite()) {
                    return Err(Error::parse(path, "non-finite entry"));
                }
                let path = format!("R[{i}][{k}]");
                check_shape(&path, &self.r[i][k], nu, nu)?;
                if !is_diagonal_positive(&self.r[i][k]) {
                    return Err(Error::NotDiagonalPositive { path });
                }
            }
        }
        Ok(())
    }

    /// Multiplies every cost term of player `i` by `c`.
    pub fn scale_player(&mut self, i: usize, c: f64) {
        self.q[i].iter_mut().for_each(|m| *m *= c);
        self.l[i].iter_mut().for_each(|v| *v *= c);
        self.r[i].iter_mut().for_each(|m| *m *= c);
    }
}

fn is_diagonal_positive(r: &DMatrix<f64>) -> bool {
    let n = r.nrows();
    (0..n).all(|a| {
        (0..n).all(|b| {
            if a == b {
                r[(a, b)] > 0.0 && r[(a, b)].is_finite()
            } else {
                r[(a, b)] == 0.0
            }
        })
    })
}

impl GameSpec {
    pub fn new(dynamics: Dynamics, costs: Costs) -> Result<Self> {
        dynamics.validate()?;
        costs.validate(&dynamics)?;
        Ok(GameSpec { dynamics, costs })
    }

    pub fn num_players(&self) -> usize {
        self.dynamics.num_players
    }

    pub fn horizon(&self) -> usize {
        self.dynamics.horizon
    }

    pub fn nx(&self) -> usize {
        self.dynamics.nx()
    }

    pub fn nu(&self) -> usize {
        self.dynamics.nu()
    }

    pub fn a(&self, t: usize) -> &DMatrix<f64> {
        &self.dynamics.a[t]
    }

    pub fn b(&self, i: usize, t: usize) -> &DMatrix<f64> {
        &self.dynamics.b[i][t]
    }

    /// `Q^i_t` for `t ∈ 1..=T`.
    pub fn q(&self, i: usize, t: usize) -> &DMatrix<f64> {
        debug_assert!(t >= 1 && t <= self.horizon());
        &self.costs.q[i][t - 1]
    }

    /// `l^i_t` for `t ∈ 1..=T`.
    pub fn l(&self, i: usize, t: usize) -> &DVector<f64> {
        debug_assert!(t >= 1 && t <= self.horizon());
        &self.costs.l[i][t - 1]
    }

    /// `R^i_t` for `t ∈ 0..T`.
    pub fn r(&self, i: usize, t: usize) -> &DMatrix<f64> {
        &self.costs.r[i][t]
    }
}

impl NashPolicy {
    pub fn zeros(d: &Dynamics) -> Self {
        let (n, t_len, nx, nu) = (d.num_players, d.horizon, d.nx(), d.nu());
        NashPolicy {
            gains: vec![vec![DMatrix::zeros(nu, nx); t_len]; n],
            offsets: vec![vec![DVector::zeros(nu); t_len]; n],
        }
    }

    pub fn num_players(&self) -> usize {
        self.gains.len()
    }

    pub fn horizon(&self) -> usize {
        self.gains.first().map_or(0, Vec::len)
    }

    /// `[K, α]` for player `i` at time `t`, an `n_u × (n_x + 1)` matrix.
    pub fn augmented(&self, i: usize, t: usize) -> DMatrix<f64> {
        let k = &self.gains[i][t];
        let mut m = DMatrix::zeros(k.nrows(), k.ncols() + 1);
        m.view_mut((0, 0), k.shape()).copy_from(k);
        m.set_column(k.ncols(), &self.offsets[i][t]);
        m
    }
}

/// Lists every structural incompatibility between `policy` and the game
/// dimensions. Players are reported 1-based, time 0-based.
pub fn validate_policy(d: &Dynamics, policy: &NashPolicy) -> Vec<String> {
    let mut out = Vec::new();
    let (n, t_len, nx, nu) = (d.num_players, d.horizon, d.nx(), d.nu());
    if policy.gains.len() != n {
        out.push(format!(
            "gains: expected {n} players, got {}",
            policy.gains.len()
        ));
    }
    if policy.offsets.len() != n {
        out.push(format!(
            "offsets: expected {n} players, got {}",
            policy.offsets.len()
        ));
    }
    for (i, gi) in policy.gains.iter().enumerate().take(n) {
        if gi.len() != t_len {
            out.push(format!(
                "player {}: expected {t_len} gains, got {}",
                i + 1,
                gi.len()
            ));
        }
        for (t, k) in gi.iter().enumerate() {
            if k.shape() != (nu, nx) {
                out.push(format!("player {}, t={t}: gain shape", i + 1));
            } else if k.iter().any(|v| !v.is_finite()) {
                out.push(format!("player {}, t={t}: non-finite K", i + 1));
            }
        }
    }
    for (i, ai) in policy.offsets.iter().enumerate().take(n) {
        if ai.len() != t_len {
            out.push(format!(
                "player {}: expected {t_len} offsets, got {}",
                i + 1,
                ai.len()
            ));
        }
        for (t, a) in ai.iter().enumerate() {
            if a.len() != nu {
                out.push(format!("player {}, t={t}: offset shape", i + 1));
            } else if a.iter().any(|v| !v.is_finite()) {
                out.push(format!("player {}, t={t}: non-finite α", i + 1));
            }
        }
    }
    out
}

pub(crate) fn ensure_policy(d: &Dynamics, policy: &NashPolicy) -> Result<()> {
    let v = validate_policy(d, policy);
    if v.is_empty() {
        Ok(())
    } else {
        Err(Error::dim("policy", v.join("; ")))
    }
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn scalar_policy_is_compatible() {
        let g = scalar_game();
        let p = NashPolicy::zeros(&g.dynamics);
        assert!(validate_policy(&g.dynamics, &p).is_empty());
    }

    #[test]
    fn wrong_gain_rows_reported() {
        let g = scalar_game();
        let mut p = NashPolicy::zeros(&g.dynamics);
        p.gains[0][0] = DMatrix::zeros(2, 1);
        assert_eq!(
            validate_policy(&g.dynamics, &p),
            vec!["player 1, t=0: gain shape".to_string()]
        );
    }

    #[test]
    fn nan_offset_reported() {
        let mut g = two_player_scalar_game();
        // Lengthen the horizon so t=3 exists.
        g.dynamics.horizon = 4;
        let mut p = NashPolicy::zeros(&g.dynamics);
        p.offsets[1][3][0] = f64::NAN;
        assert_eq!(
            validate_policy(&g.dynamics, &p),
            vec!["player 2, t=3: non-finite α".to_string()]
        );
    }

    #[test]
    fn non_diagonal_r_rejected() {
        let g = scalar_game();
        let mut costs = g.costs.clone();
        let mut d = g.dynamics.clone();
        d.input_dim = 2;
        d.b = vec![vec![m(1, 2, &[1.0, 0.0])]];
        costs.r = vec![vec![m(2, 2, &[1.0, 0.1, 0.1, 1.0])]];
        let err = GameSpec::new(d, costs).unwrap_err();
        assert!(err.to_string().contains("R must be diagonal"), "{err}");
    }

    #[test]
    fn non_psd_covariance_rejected() {
        let g = scalar_game();
        let mut d = g.dynamics.clone();
        d.sigma[0] = m(1, 1, &[-0.5]);
        let err = GameSpec::new(d, g.costs.clone()).unwrap_err();
        assert!(
            matches!(err, Error::NotPsd { ref path, .. } if path == "Sigma[0]"),
            "{err}"
        );
    }

    #[test]
    fn theta_len_exceeds_row_count() {
        for nx in 1..8 {
            for nu in 1..5 {
                let l = nx * nx + nx + nu * nu + 1;
                assert!(nu * (nx + 1) < l);
            }
        }
    }
}
