//! Randomized identification study and sample-size sweeps.

use std::fmt;
use std::io::Write;

use rayon::prelude::*;

use super::random::{draw_solvable, study_game};
use super::{median, rollout_seed, stream_rng, ExperimentConfig};
use crate::error::Result;
use crate::estimate::{estimate_policy, max_policy_error};
use crate::forward::solve_nash;
use crate::identify::{identify_costs, verify_roundtrip, RoundTrip};
use crate::linalg::fmt_f64;
use crate::model::{GameSpec, NashPolicy};
use crate::simulate::{rollout, ExpectedTrajectory};

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub episode: usize,
    /// Games drawn until one had a unique equilibrium.
    pub draws: usize,
    pub max_residual: f64,
    pub policy_err: f64,
    pub state_err: f64,
    pub input_err: f64,
    pub reference: ExpectedTrajectory,
    pub recovered: ExpectedTrajectory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub label: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomizedStudy {
    pub episodes: Vec<EpisodeOutcome>,
    pub failures: Vec<Failure>,
}

/// Draws `cfg.episodes` games, identifies costs from each exact Nash
/// policy, and measures how well the identified costs reproduce it.
pub fn run_randomized_study(cfg: &ExperimentConfig) -> Result<RandomizedStudy> {
    cfg.validate()?;
    let opts = cfg.identify_options();
    let results: Vec<std::result::Result<EpisodeOutcome, Failure>> = (0..cfg.episodes)
        .into_par_iter()
        .map(|k| {
            let fail = |reason: String| Failure {
                label: k.to_string(),
                reason,
            };
            let mut rng = stream_rng(cfg.base_seed, k as u64);
            let sg = draw_solvable(&mut rng, cfg.max_draws, |r| study_game(r, &cfg.ranges))
                .map_err(|e| fail(e.to_string()))?;
            let d = &sg.game.dynamics;
            let id = identify_costs(d, &sg.policy, &opts).map_err(|e| fail(e.to_string()))?;
            let rt = verify_roundtrip(d, &id.costs, &sg.policy).map_err(|e| fail(e.to_string()))?;
            if let Some(reason) = rt.failure.clone() {
                return Err(fail(reason));
            }
            Ok(EpisodeOutcome {
                episode: k,
                draws: sg.draws,
                max_residual: id.max_residual(),
                policy_err: rt.policy_error(),
                state_err: rt.state_error(),
                input_err: rt.input_error(),
                recovered: rt.recovered_trajectory.clone().expect("set on success"),
                reference: rt.reference_trajectory,
            })
        })
        .collect();
    let mut study = RandomizedStudy {
        episodes: Vec::new(),
        failures: Vec::new(),
    };
    for r in results {
        match r {
            Ok(e) => study.episodes.push(e),
            Err(f) => {
                log::warn!("episode {} failed: {}", f.label, f.reason);
                study.failures.push(f);
            }
        }
    }
    Ok(study)
}

/// `episode,max_residual,policy_err,state_err,input_err`
pub fn write_episodes<W: Write>(w: W, study: &RandomizedStudy) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "episode",
        "max_residual",
        "policy_err",
        "state_err",
        "input_err",
    ])?;
    for e in &study.episodes {
        out.write_record([
            e.episode.to_string(),
            fmt_f64(e.max_residual),
            fmt_f64(e.policy_err),
            fmt_f64(e.state_err),
            fmt_f64(e.input_err),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// `episode,t,source,dim,value` with `source` in {true, recovered}.
pub fn write_episode_trajectories<W: Write>(w: W, study: &RandomizedStudy) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["episode", "t", "source", "dim", "value"])?;
    for e in &study.episodes {
        let ep = e.episode.to_string();
        for (source, traj) in [("true", &e.reference), ("recovered", &e.recovered)] {
            for (t, x) in traj.states.iter().enumerate() {
                for (k, v) in x.iter().enumerate() {
                    out.write_record([
                        ep.as_str(),
                        &t.to_string(),
                        source,
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

/// `label,reason`
pub fn write_failures<W: Write>(w: W, failures: &[Failure]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["label", "reason"])?;
    for f in failures {
        out.write_record([&f.label, &f.reason])?;
    }
    out.flush()?;
    Ok(())
}

/// Number of demonstrations, or identification from the exact policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SampleSize {
    Exact,
    Samples(usize),
}

impl fmt::Display for SampleSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SampleSize::Exact => write!(f, "exact"),
            SampleSize::Samples(n) => write!(f, "{n}"),
        }
    }
}

/// One sweep repetition. Errors are `NaN` when the repetition failed.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub n: SampleSize,
    pub rep: usize,
    /// Largest `‖[K̂ - K, α̂ - α]‖_F` of the estimated policy.
    pub policy_err: f64,
    /// Largest policy error after identification and re-solving.
    pub theta_err_proxy: f64,
    /// Table-style means `K̄, ᾱ, x̄, ū` of the round trip.
    pub k_err: f64,
    pub alpha_err: f64,
    pub x_err: f64,
    pub u_err: f64,
    pub failure: Option<String>,
    pub round_trip: Option<RoundTrip>,
}

impl SweepRow {
    fn failed(n: SampleSize, rep: usize, reason: String) -> Self {
        let nan = f64::NAN;
        SweepRow {
            n,
            rep,
            policy_err: nan,
            theta_err_proxy: nan,
            k_err: nan,
            alpha_err: nan,
            x_err: nan,
            u_err: nan,
            failure: Some(reason),
            round_trip: None,
        }
    }
}

fn sweep_item(
    game: &GameSpec,
    truth: &NashPolicy,
    cfg: &ExperimentConfig,
    n: SampleSize,
    rep: usize,
) -> SweepRow {
    let d = &game.dynamics;
    let run = || -> Result<SweepRow> {
        let estimate = match n {
            SampleSize::Exact => truth.clone(),
            SampleSize::Samples(k) => {
                let batch = rollout(
                    d,
                    truth,
                    k,
                    rollout_seed(cfg.base_seed, k, rep),
                    cfg.obs_noise,
                )?;
                estimate_policy(&batch, d)?
            }
        };
        let id = identify_costs(d, &estimate, &cfg.identify_options())?;
        let rt = verify_roundtrip(d, &id.costs, truth)?;
        if let Some(reason) = rt.failure.clone() {
            return Ok(SweepRow::failed(n, rep, reason));
        }
        let s = rt.summary();
        Ok(SweepRow {
            n,
            rep,
            policy_err: max_policy_error(&estimate, truth).frobenius,
            theta_err_proxy: rt.policy_error(),
            k_err: s.k.mean,
            alpha_err: s.alpha.mean,
            x_err: s.x.mean,
            u_err: s.u.mean,
            failure: None,
            round_trip: Some(rt),
        })
    };
    run().unwrap_or_else(|e| SweepRow::failed(n, rep, e.to_string()))
}

/// For every sample size (and the exact policy when enabled) and every
/// repetition: simulate, estimate, identify, and re-solve.
pub fn run_sample_sweep(game: &GameSpec, cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let (truth, _, _) = solve_nash(game)?;
    let mut sizes: Vec<SampleSize> = cfg
        .samples
        .iter()
        .map(|&n| SampleSize::Samples(n))
        .collect();
    if cfg.include_exact {
        sizes.insert(0, SampleSize::Exact);
    }
    let items: Vec<(SampleSize, usize)> = sizes
        .iter()
        .flat_map(|&n| (0..cfg.reps).map(move |r| (n, r)))
        .collect();
    let rows: Vec<SweepRow> = items
        .par_iter()
        .map(|&(n, rep)| sweep_item(game, &truth, cfg, n, rep))
        .collect();
    for r in &rows {
        if let Some(reason) = &r.failure {
            log::warn!("n={}, rep={} failed: {reason}", r.n, r.rep);
        }
    }
    Ok(rows)
}

/// Median of each error column per sample size, in first-seen order.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepMedians {
    pub n: SampleSize,
    pub completed: usize,
    pub failed: usize,
    pub policy_err: f64,
    pub theta_err_proxy: f64,
    pub k_err: f64,
    pub alpha_err: f64,
    pub x_err: f64,
    pub u_err: f64,
}

pub fn sweep_medians(rows: &[SweepRow]) -> Vec<SweepMedians> {
    let mut order: Vec<SampleSize> = Vec::new();
    for r in rows {
        if !order.contains(&r.n) {
            order.push(r.n);
        }
    }
    order
        .into_iter()
        .map(|n| {
            let group: Vec<&SweepRow> = rows.iter().filter(|r| r.n == n).collect();
            let col =
                |f: fn(&SweepRow) -> f64| median(&group.iter().map(|r| f(r)).collect::<Vec<_>>());
            let failed = group.iter().filter(|r| r.failure.is_some()).count();
            SweepMedians {
                n,
                completed: group.len() - failed,
                failed,
                policy_err: col(|r| r.policy_err),
                theta_err_proxy: col(|r| r.theta_err_proxy),
                k_err: col(|r| r.k_err),
                alpha_err: col(|r| r.alpha_err),
                x_err: col(|r| r.x_err),
                u_err: col(|r| r.u_err),
            }
        })
        .collect()
}

/// `n,rep,policy_err,theta_err_proxy,k_err,alpha_err,x_err,u_err`; failed
/// repetitions carry `NaN`.
pub fn write_sweep<W: Write>(w: W, rows: &[SweepRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "n",
        "rep",
        "policy_err",
        "theta_err_proxy",
        "k_err",
        "alpha_err",
        "x_err",
        "u_err",
    ])?;
    for r in rows {
        out.write_record([
            r.n.to_string(),
            r.rep.to_string(),
            fmt_f64(r.policy_err),
            fmt_f64(r.theta_err_proxy),
            fmt_f64(r.k_err),
            fmt_f64(r.alpha_err),
            fmt_f64(r.x_err),
            fmt_f64(r.u_err),
        ])?;
    }
    out.flush()?;
    Ok(())
}
