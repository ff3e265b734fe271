//! Monte Carlo demonstrations under the affine Nash policy.
//!
//! Sample `s` draws its process noise (initial state and `ω_t`) from ChaCha8
//! stream `2s` and its input-observation noise from stream `2s + 1`, both
//! keyed by the base seed. Observation noise therefore never perturbs the
//! state draws, and results do not depend on how samples are scheduled.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forward::closed_loop_at;
use crate::linalg::{fmt_f64, psd_sqrt};
use crate::model::{ensure_policy, Dynamics, NashPolicy, TrajectoryBatch};

/// Noise-free rollout from `μ0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedTrajectory {
    /// t = 0..=T
    pub states: Vec<DVector<f64>>,
    /// `inputs[i][t]`, t = 0..T-1
    pub inputs: Vec<Vec<DVector<f64>>>,
}

fn sample_rngs(base_seed: u64, s: usize) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut process = ChaCha8Rng::seed_from_u64(base_seed);
    process.set_stream(2 * s as u64);
    let mut obs = ChaCha8Rng::seed_from_u64(base_seed);
    obs.set_stream(2 * s as u64 + 1);
    (process, obs)
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)))
}

struct Sample {
    states: Vec<DVector<f64>>,
    inputs: Vec<Vec<DVector<f64>>>,
}

/// Draws `n` demonstrations. Dynamics are driven by the true input
/// `-K x - α`; the recorded input adds `N(0, σ_ν² I)` noise.
pub fn rollout(
    d: &Dynamics,
    policy: &NashPolicy,
    n: usize,
    base_seed: u64,
    obs_noise_sigma: f64,
) -> Result<TrajectoryBatch> {
    ensure_policy(d, policy)?;
    if n == 0 {
        return Err(Error::InvalidArgument(
            "sample count must be at least 1".into(),
        ));
    }
    if !(obs_noise_sigma >= 0.0 && obs_noise_sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "observation noise must be >= 0, got {obs_noise_sigma}"
        )));
    }
    let (nx, nu, horizon, players) = (d.nx(), d.nu(), d.horizon, d.num_players);
    let chi_sqrt = psd_sqrt(&d.chi0).map_err(|e| not_psd("chi0", e))?;
    let sigma_sqrt = d
        .sigma
        .iter()
        .enumerate()
        .map(|(t, s)| psd_sqrt(s).map_err(|e| not_psd(&format!("Sigma[{t}]"), e)))
        .collect::<Result<Vec<_>>>()?;

    let samples: Vec<Sample> = (0..n)
        .into_par_iter()
        .map(|s| {
            let (mut process, mut obs) = sample_rngs(base_seed, s);
            let mut x = &d.mu0 + &chi_sqrt * normal_vec(&mut process, nx);
            let mut states = Vec::with_capacity(horizon + 1);
            let mut inputs = vec![Vec::with_capacity(horizon); players];
            for t in 0..horizon {
                let mut next = &d.a[t] * &x;
                for i in 0..players {
                    let u = -(&policy.gains[i][t] * &x) - &policy.offsets[i][t];
                    next += &d.b[i][t] * &u;
                    let nu_noise = normal_vec(&mut obs, nu) * obs_noise_sigma;
                    inputs[i].push(u + nu_noise);
                }
                next += &sigma_sqrt[t] * normal_vec(&mut process, nx);
                states.push(std::mem::replace(&mut x, next));
            }
            states.push(x);
            Sample { states, inputs }
        })
        .collect();

    let states = (0..=horizon)
        .map(|t| DMatrix::from_fn(nx, n, |r, s| samples[s].states[t][r]))
        .collect();
    let inputs = (0..players)
        .map(|i| {
            (0..horizon)
                .map(|t| DMatrix::from_fn(nu, n, |r, s| samples[s].inputs[i][t][r]))
                .collect()
        })
        .collect();
    Ok(TrajectoryBatch {
        num_samples: n,
        states,
        inputs,
        obs_noise_sigma,
        seed: Some(base_seed),
    })
}

fn not_psd(path: &str, eig: f64) -> Error {
    Error::NotPsd {
        path: path.into(),
        msg: format!("eigenvalue {eig:e}"),
    }
}

pub fn expected_trajectory(d: &Dynamics, policy: &NashPolicy) -> Result<ExpectedTrajectory> {
    ensure_policy(d, policy)?;
    let mut x = d.mu0.clone();
    let mut states = vec![x.clone()];
    let mut inputs = vec![Vec::with_capacity(d.horizon); d.num_players];
    for t in 0..d.horizon {
        let mut drift = DVector::zeros(d.nx());
        for i in 0..d.num_players {
            let u = -(&policy.gains[i][t] * &x) - &policy.offsets[i][t];
            drift += &d.b[i][t] * &policy.offsets[i][t];
            inputs[i].push(u);
        }
        x = closed_loop_at(d, policy, t) * &x - drift;
        states.push(x.clone());
    }
    Ok(ExpectedTrajectory { states, inputs })
}

/// Sample-major long format: `sample,t,kind,player,dim,value`. Players are
/// 1-based and empty for state rows; `dim` is 0-based.
pub fn write_trajectories<W: Write>(w: W, batch: &TrajectoryBatch) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["sample", "t", "kind", "player", "dim", "value"])?;
    let horizon = batch.states.len() - 1;
    for s in 0..batch.num_samples {
        for t in 0..=horizon {
            let (ss, ts) = (s.to_string(), t.to_string());
            for (k, v) in batch.states[t].column(s).iter().enumerate() {
                out.write_record([ss.as_str(), &ts, "state", "", &k.to_string(), &fmt_f64(*v)])?;
            }
            if t == horizon {
                continue;
            }
            for (i, ui) in batch.inputs.iter().enumerate() {
                let ps = (i + 1).to_string();
                for (k, v) in ui[t].column(s).iter().enumerate() {
                    out.write_record([
                        ss.as_str(),
                        &ts,
                        "input",
                        &ps,
                        &k.to_string(),
                        &fmt_f64(*v),
                    ])?;
                }
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads the format of [`write_trajectories`]; the game dimensions fix the
/// shapes and every entry must be present exactly once.
pub fn read_trajectories<R: Read>(r: R, d: &Dynamics) -> Result<TrajectoryBatch> {
    let (nx, nu, horizon, players) = (d.nx(), d.nu(), d.horizon, d.num_players);
    let bad = |line: usize, msg: String| Error::Parse {
        path: format!("trajectory line {line}"),
        msg,
    };
    let mut rows: Vec<(usize, usize, Option<usize>, usize, f64)> = Vec::new();
    let mut reader = csv::Reader::from_reader(r);
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["sample", "t", "kind", "player", "dim", "value"] {
        return Err(bad(
            1,
            "expected header sample,t,kind,player,dim,value".into(),
        ));
    }
    for (k, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let num = |idx: usize| -> Result<usize> {
            rec[idx]
                .parse()
                .map_err(|_| bad(line, format!("bad integer '{}'", &rec[idx])))
        };
        let (s, t, dim) = (num(0)?, num(1)?, num(4)?);
        let value: f64 = rec[5]
            .parse()
            .map_err(|_| bad(line, format!("bad value '{}'", &rec[5])))?;
        let player = match &rec[2] {
            "state" => None,
            "input" => {
                let p = num(3)?;
                if p == 0 || p > players {
                    return Err(bad(line, format!("player {p} out of range")));
                }
                Some(p - 1)
            }
            other => return Err(bad(line, format!("unknown kind '{other}'"))),
        };
        let (t_max, dim_max) = if player.is_some() {
            (horizon, nu)
        } else {
            (horizon + 1, nx)
        };
        if t >= t_max || dim >= dim_max {
            return Err(bad(line, format!("index out of range (t={t}, dim={dim})")));
        }
        rows.push((s, t, player, dim, value));
    }
    let n = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
    if n == 0 {
        return Err(bad(1, "no samples".into()));
    }
    let mut states = vec![DMatrix::from_element(nx, n, f64::NAN); horizon + 1];
    let mut inputs = vec![vec![DMatrix::from_element(nu, n, f64::NAN); horizon]; players];
    for (s, t, player, dim, v) in rows {
        let slot = match player {
            None => &mut states[t][(dim, s)],
            Some(i) => &mut inputs[i][t][(dim, s)],
        };
        if !slot.is_nan() {
            return Err(bad(
                0,
                format!("duplicate entry sample={s} t={t} dim={dim}"),
            ));
        }
        *slot = v;
    }
    let missing = states
        .iter()
        .chain(inputs.iter().flatten())
        .any(|m| m.iter().any(|v| v.is_nan()));
    if missing {
        return Err(bad(0, "missing entries for some samples".into()));
    }
    Ok(TrajectoryBatch {
        num_samples: n,
        states,
        inputs,
        obs_noise_sigma: f64::NAN,
        seed: None,
    })
}
