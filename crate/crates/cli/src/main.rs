use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use lqg_core::config::{
    costs_to_json, existence_to_json, load_costs, load_dynamics, load_game, load_policy,
    policy_to_json, read_json, save_policy, value_to_json, write_json,
};
use lqg_core::estimate::{empirical_gram, estimate_policy, sample_complexity, ComplexityInputs};
use lqg_core::experiments::random::{draw_solvable, study_game};
use lqg_core::experiments::scenario::{run_scenario, write_scenario_trajectories, write_table};
use lqg_core::experiments::study::{
    run_randomized_study, run_sample_sweep, write_episode_trajectories, write_episodes,
    write_failures, write_sweep,
};
use lqg_core::experiments::{stream_rng, ExperimentConfig};
use lqg_core::forward::backward_pass;
use lqg_core::identify::{identify_costs, verify_roundtrip, write_metrics, write_residuals};
use lqg_core::simulate::{read_trajectories, rollout, write_trajectories};

/// Forward and inverse solvers for finite-horizon LQG games.
#[derive(Parser)]
#[command(name = "lqg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the feedback Nash equilibrium.
    Solve {
        #[arg(long)]
        game: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the value recursion (P, ζ, closed loops).
        #[arg(long)]
        value: Option<PathBuf>,
        /// Also write the per-step existence report.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Draw noisy demonstrations under a policy.
    Simulate {
        #[arg(long)]
        game: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        samples: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        obs_noise: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate a policy from demonstrations by least squares.
    Estimate {
        #[arg(long)]
        traj: PathBuf,
        /// Game or dynamics file giving the dimensions.
        #[arg(long)]
        dims: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write the sample-size bound evaluated at every step.
        #[arg(long)]
        complexity_report: Option<PathBuf>,
        /// Target accuracy.
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
        /// Failure probability.
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        /// Bound on the regressor norm.
        #[arg(long, default_value_t = 1.0)]
        alpha_bound: f64,
        /// Sub-Gaussian parameter of the observation noise; defaults to `--delta`.
        #[arg(long)]
        noise_param: Option<f64>,
    },
    /// Identify costs that make a policy a Nash equilibrium.
    Identify {
        #[arg(long)]
        game: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[command(flatten)]
        id: IdentifyFlags,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        residuals: Option<PathBuf>,
    },
    /// Re-solve with identified costs and compare against a reference policy.
    Verify {
        #[arg(long)]
        game: PathBuf,
        #[arg(long)]
        costs: PathBuf,
        #[arg(long)]
        ref_policy: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bundled studies.
    Example {
        #[command(subcommand)]
        kind: Example,
    },
    /// Identification error against the number of demonstrations.
    Sweep {
        /// Game file; a random study game is drawn from the seed when absent.
        #[arg(long)]
        game: Option<PathBuf>,
        #[command(flatten)]
        exp: ExperimentFlags,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summary table of exact and finite-sample identification on a scenario.
    Scenario {
        #[arg(long)]
        game: PathBuf,
        #[command(flatten)]
        exp: ExperimentFlags,
        #[arg(long)]
        out: PathBuf,
        /// Per-repetition rows.
        #[arg(long)]
        rows: Option<PathBuf>,
        /// True and recovered expected states.
        #[arg(long)]
        trajectories: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum Example {
    /// Identification from exact policies on random three-player games.
    Randomized {
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        id: IdentifyFlags,
    },
}

#[derive(Args, Clone)]
struct IdentifyFlags {
    #[arg(long)]
    tau: Option<f64>,
    /// Bound every unknown entry, not only the diagonals of Q and R.
    #[arg(long)]
    strict_positivity: bool,
    /// Identify all entries of Q independently, then symmetrize.
    #[arg(long)]
    q_unconstrained: bool,
}

#[derive(Args, Clone)]
struct ExperimentFlags {
    /// Comma-separated demonstration counts, ascending.
    #[arg(long, value_delimiter = ',')]
    samples: Option<Vec<usize>>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    obs_noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Skip identification from the exact policy.
    #[arg(long)]
    no_exact: bool,
    /// JSON experiment configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    id: IdentifyFlags,
}

impl IdentifyFlags {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(t) = self.tau {
            cfg.tau = t;
        }
        cfg.strict_positivity |= self.strict_positivity;
        cfg.q_unconstrained |= self.q_unconstrained;
    }
}

impl ExperimentFlags {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = base_config(self.config.as_deref())?;
        if let Some(s) = &self.samples {
            cfg.samples = s.clone();
        }
        if let Some(r) = self.reps {
            cfg.reps = r;
        }
        if let Some(s) = self.obs_noise {
            cfg.obs_noise = s;
        }
        if let Some(s) = self.seed {
            cfg.base_seed = s;
        }
        if self.no_exact {
            cfg.include_exact = false;
        }
        self.id.apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn base_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => {
            let v = read_json(p)?;
            serde_json::from_value(v)
                .with_context(|| format!("invalid experiment config {}", p.display()))
        }
        None => Ok(ExperimentConfig::default()),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| {
        format!("cannot create {}", path.display())
    })?))
}

/// Exit code for runs in which some episodes or repetitions failed.
const PARTIAL_FAILURE: u8 = 2;

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Solve {
            game,
            out,
            value,
            report,
        } => {
            let g = load_game(&game)?;
            let (policy, val, rep) = backward_pass(&g);
            if let Some(p) = report {
                write_json(&p, &existence_to_json(&rep))?;
            }
            if let Some(t) = rep.first_failure() {
                bail!(
                    "no unique equilibrium: the coupled system at t={t} is singular (cond {:e})",
                    rep.cond[t]
                );
            }
            save_policy(&out, &policy)?;
            if let Some(p) = value {
                write_json(&p, &value_to_json(&val))?;
            }
        }
        Command::Simulate {
            game,
            policy,
            samples,
            seed,
            obs_noise,
            out,
        } => {
            let d = load_dynamics(&game)?;
            let batch = rollout(&d, &load_policy(&policy)?, samples, seed, obs_noise)?;
            write_trajectories(create(&out)?, &batch)?;
        }
        Command::Estimate {
            traj,
            dims,
            out,
            complexity_report,
            eps,
            delta,
            alpha_bound,
            noise_param,
        } => {
            let d = load_dynamics(&dims)?;
            let batch = read_trajectories(
                File::open(&traj).with_context(|| format!("cannot open {}", traj.display()))?,
                &d,
            )?;
            let policy = estimate_policy(&batch, &d)?;
            write_json(&out, &policy_to_json(&policy))?;
            if let Some(p) = complexity_report {
                let mut steps = Vec::with_capacity(d.horizon);
                let mut worst = 0;
                for t in 0..d.horizon {
                    let g = empirical_gram(&batch, t);
                    let r = sample_complexity(ComplexityInputs {
                        sigma_max: g.sigma_max,
                        sigma_min: g.sigma_min,
                        rank: g.rank,
                        regressor_bound: alpha_bound,
                        noise_param: noise_param.unwrap_or(delta),
                        confidence: delta,
                        accuracy: eps,
                    })?;
                    worst = worst.max(r.n_required);
                    steps.push(json!({ "t": t, "report": r }));
                }
                write_json(
                    &p,
                    &json!({ "num_samples": batch.num_samples, "n_required": worst, "steps": steps }),
                )?;
            }
        }
        Command::Identify {
            game,
            policy,
            id,
            out,
            residuals,
        } => {
            let d = load_dynamics(&game)?;
            let mut cfg = ExperimentConfig::default();
            id.apply(&mut cfg);
            let res = identify_costs(&d, &load_policy(&policy)?, &cfg.identify_options())?;
            let mut v = costs_to_json(&res.costs);
            v["tau"] = json!(res.tau);
            v["max_residual"] = json!(res.max_residual());
            write_json(&out, &v)?;
            if let Some(p) = residuals {
                write_residuals(create(&p)?, &res)?;
            }
        }
        Command::Verify {
            game,
            costs,
            ref_policy,
            out,
        } => {
            let d = load_dynamics(&game)?;
            let rt = verify_roundtrip(&d, &load_costs(&costs, &d)?, &load_policy(&ref_policy)?)?;
            write_metrics(create(&out)?, &rt)?;
            if let Some(reason) = rt.failure {
                log::error!("identified game has no unique equilibrium: {reason}");
                return Ok(PARTIAL_FAILURE);
            }
        }
        Command::Example {
            kind:
                Example::Randomized {
                    episodes,
                    seed,
                    out_dir,
                    config,
                    id,
                },
        } => {
            let mut cfg = base_config(config.as_deref())?;
            if let Some(e) = episodes {
                cfg.episodes = e;
            }
            if let Some(s) = seed {
                cfg.base_seed = s;
            }
            id.apply(&mut cfg);
            let study = run_randomized_study(&cfg)?;
            fs::create_dir_all(&out_dir)?;
            write_episodes(create(&out_dir.join("episodes.csv"))?, &study)?;
            write_episode_trajectories(create(&out_dir.join("trajectories.csv"))?, &study)?;
            write_failures(create(&out_dir.join("failures.csv"))?, &study.failures)?;
            if !study.failures.is_empty() {
                log::error!(
                    "{} of {} episodes failed",
                    study.failures.len(),
                    cfg.episodes
                );
                return Ok(PARTIAL_FAILURE);
            }
        }
        Command::Sweep { game, exp, out } => {
            let cfg = exp.config()?;
            let g = match game {
                Some(p) => load_game(&p)?,
                None => {
                    let mut rng = stream_rng(cfg.base_seed, u64::MAX);
                    draw_solvable(&mut rng, cfg.max_draws, |r| study_game(r, &cfg.ranges))?.game
                }
            };
            let rows = run_sample_sweep(&g, &cfg)?;
            write_sweep(create(&out)?, &rows)?;
            if rows.iter().any(|r| r.failure.is_some()) {
                return Ok(PARTIAL_FAILURE);
            }
        }
        Command::Scenario {
            game,
            exp,
            out,
            rows,
            trajectories,
        } => {
            let cfg = exp.config()?;
            let outcome = run_scenario(&load_game(&game)?, &cfg)?;
            write_table(create(&out)?, &outcome.table)?;
            if let Some(p) = rows {
                write_sweep(create(&p)?, &outcome.rows)?;
            }
            if let Some(p) = trajectories {
                write_scenario_trajectories(create(&p)?, &outcome)?;
            }
            if outcome.rows.iter().any(|r| r.failure.is_some()) {
                return Ok(PARTIAL_FAILURE);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
