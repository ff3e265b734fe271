//! Three-vehicle intersection game and the table-style scenario runner.
//!
//! Each vehicle is a planar double integrator with state `[p_x, p_y, v_x,
//! v_y]` and acceleration input. Vehicle `i` tracks a straight nominal path
//! through the intersection (quadratic position and velocity tracking, with
//! a heavier terminal weight) and receives linear separation terms that
//! reward distance from the other vehicles while their nominal paths are
//! close.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::study::{run_sample_sweep, SampleSize, SweepRow};
use super::{median, ExperimentConfig};
use crate::error::Result;
use crate::forward::solve_nash;
use crate::identify::MeanStd;
use crate::linalg::fmt_f64;
use crate::model::{Costs, Dynamics, GameSpec};
use crate::simulate::{expected_trajectory, ExpectedTrajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntersectionParams {
    pub dt: f64,
    pub horizon: usize,
    /// Distance from the intersection centre to start and goal.
    pub reach: f64,
    /// Lateral lane offset.
    pub lane: f64,
    pub position_weight: f64,
    pub terminal_position_weight: f64,
    pub velocity_weight: f64,
    pub control_weight: f64,
    pub separation_weight: f64,
    /// Nominal distance below which separation terms are active.
    pub separation_radius: f64,
    /// `χ0 = init_var · I`
    pub init_var: f64,
    /// `Σ_t = process_var · I`
    pub process_var: f64,
}

impl Default for IntersectionParams {
    fn default() -> Self {
        IntersectionParams {
            dt: 0.2,
            horizon: 20,
            reach: 6.0,
            lane: 0.5,
            position_weight: 0.2,
            terminal_position_weight: 5.0,
            velocity_weight: 0.5,
            control_weight: 1.0,
            separation_weight: 0.5,
            separation_radius: 4.0,
            init_var: 1.0,
            process_var: 0.05,
        }
    }
}

const VEHICLES: usize = 3;
const BLOCK: usize = 4;

/// Start and goal positions: west to east, south to north, east to west.
fn endpoints(p: &IntersectionParams) -> [([f64; 2], [f64; 2]); VEHICLES] {
    let (r, w) = (p.reach, p.lane);
    [([-r, -w], [r, -w]), ([w, -r], [w, r]), ([r, w], [-r, w])]
}

pub fn intersection_game(p: &IntersectionParams) -> Result<GameSpec> {
    let (dt, horizon) = (p.dt, p.horizon);
    let nx = VEHICLES * BLOCK;
    let mut a = DMatrix::identity(nx, nx);
    for v in 0..VEHICLES {
        a[(v * BLOCK, v * BLOCK + 2)] = dt;
        a[(v * BLOCK + 1, v * BLOCK + 3)] = dt;
    }
    let b: Vec<DMatrix<f64>> = (0..VEHICLES)
        .map(|v| {
            let mut b = DMatrix::zeros(nx, 2);
            for k in 0..2 {
                b[(v * BLOCK + k, k)] = 0.5 * dt * dt;
                b[(v * BLOCK + 2 + k, k)] = dt;
            }
            b
        })
        .collect();

    let ends = endpoints(p);
    let total = dt * horizon as f64;
    let velocity = |v: usize| {
        [
            (ends[v].1[0] - ends[v].0[0]) / total,
            (ends[v].1[1] - ends[v].0[1]) / total,
        ]
    };
    let nominal = |v: usize, t: usize| {
        let s = t as f64 / horizon as f64;
        [
            ends[v].0[0] + s * (ends[v].1[0] - ends[v].0[0]),
            ends[v].0[1] + s * (ends[v].1[1] - ends[v].0[1]),
        ]
    };
    let mut mu0 = DVector::zeros(nx);
    for v in 0..VEHICLES {
        let vel = velocity(v);
        mu0.rows_mut(v * BLOCK, BLOCK).copy_from_slice(&[
            ends[v].0[0],
            ends[v].0[1],
            vel[0],
            vel[1],
        ]);
    }

    let mut costs = Costs {
        q: vec![],
        l: vec![],
        r: vec![],
    };
    for i in 0..VEHICLES {
        let (mut qi, mut li) = (Vec::new(), Vec::new());
        for t in 1..=horizon {
            let wp = if t == horizon {
                p.terminal_position_weight
            } else {
                p.position_weight
            };
            let pos = nominal(i, t);
            let vel = velocity(i);
            let target = [pos[0], pos[1], vel[0], vel[1]];
            let weights = [wp, wp, p.velocity_weight, p.velocity_weight];
            let mut q = DMatrix::zeros(nx, nx);
            let mut l = DVector::zeros(nx);
            for k in 0..BLOCK {
                let idx = i * BLOCK + k;
                q[(idx, idx)] = weights[k];
                l[idx] = -weights[k] * target[k];
            }
            for j in (0..VEHICLES).filter(|&j| j != i) {
                let other = nominal(j, t);
                let diff = [pos[0] - other[0], pos[1] - other[1]];
                let dist = diff[0].hypot(diff[1]);
                if dist >= p.separation_radius || dist == 0.0 {
                    continue;
                }
                let w = p.separation_weight * (1.0 - dist / p.separation_radius);
                for k in 0..2 {
                    let dir = diff[k] / dist;
                    l[i * BLOCK + k] -= w * dir;
                    l[j * BLOCK + k] += w * dir;
                }
            }
            qi.push(q);
            li.push(l);
        }
        costs.q.push(qi);
        costs.l.push(li);
        costs
            .r
            .push(vec![DMatrix::identity(2, 2) * p.control_weight; horizon]);
    }

    let dynamics = Dynamics {
        num_players: VEHICLES,
        horizon,
        state_dims: vec![BLOCK; VEHICLES],
        input_dim: 2,
        a: vec![a; horizon],
        b: b.into_iter().map(|bi| vec![bi; horizon]).collect(),
        mu0,
        chi0: DMatrix::identity(nx, nx) * p.init_var,
        sigma: vec![DMatrix::identity(nx, nx) * p.process_var; horizon],
    };
    GameSpec::new(dynamics, costs)
}

/// Summary of one source (exact policy or a demonstration count).
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub source: SampleSize,
    pub completed: usize,
    pub failed: usize,
    /// Mean and standard deviation over repetitions of `K̄, ᾱ, x̄, ū`.
    pub k: MeanStd,
    pub alpha: MeanStd,
    pub x: MeanStd,
    pub u: MeanStd,
    /// Medians over repetitions of `K̄, ᾱ, x̄, ū`.
    pub median: [f64; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutcome {
    pub rows: Vec<SweepRow>,
    pub table: Vec<TableRow>,
    pub truth: ExpectedTrajectory,
}

pub fn summarize(rows: &[SweepRow]) -> Vec<TableRow> {
    let mut order: Vec<SampleSize> = Vec::new();
    for r in rows {
        if !order.contains(&r.n) {
            order.push(r.n);
        }
    }
    order
        .into_iter()
        .map(|source| {
            let ok: Vec<&SweepRow> = rows
                .iter()
                .filter(|r| r.n == source && r.failure.is_none())
                .collect();
            let failed = rows
                .iter()
                .filter(|r| r.n == source && r.failure.is_some())
                .count();
            let col = |f: fn(&SweepRow) -> f64| ok.iter().map(|r| f(r)).collect::<Vec<_>>();
            let cols = [
                col(|r| r.k_err),
                col(|r| r.alpha_err),
                col(|r| r.x_err),
                col(|r| r.u_err),
            ];
            TableRow {
                source,
                completed: ok.len(),
                failed,
                k: MeanStd::of(&cols[0]),
                alpha: MeanStd::of(&cols[1]),
                x: MeanStd::of(&cols[2]),
                u: MeanStd::of(&cols[3]),
                median: [
                    median(&cols[0]),
                    median(&cols[1]),
                    median(&cols[2]),
                    median(&cols[3]),
                ],
            }
        })
        .collect()
}

/// Runs the sweep protocol on a scenario game and tabulates it.
pub fn run_scenario(game: &GameSpec, cfg: &ExperimentConfig) -> Result<ScenarioOutcome> {
    let rows = run_sample_sweep(game, cfg)?;
    let table = summarize(&rows);
    let (truth_policy, _, _) = solve_nash(game)?;
    let truth = expected_trajectory(&game.dynamics, &truth_policy)?;
    Ok(ScenarioOutcome { rows, table, truth })
}

/// `source,completed,failed,k_mean,k_std,alpha_mean,alpha_std,x_mean,x_std,u_mean,u_std,k_median,alpha_median,x_median,u_median`
pub fn write_table<W: Write>(w: W, table: &[TableRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "source",
        "completed",
        "failed",
        "k_mean",
        "k_std",
        "alpha_mean",
        "alpha_std",
        "x_mean",
        "x_std",
        "u_mean",
        "u_std",
        "k_median",
        "alpha_median",
        "x_median",
        "u_median",
    ])?;
    for r in table {
        let mut rec = vec![
            r.source.to_string(),
            r.completed.to_string(),
            r.failed.to_string(),
        ];
        for m in [r.k, r.alpha, r.x, r.u] {
            rec.push(fmt_f64(m.mean));
            rec.push(fmt_f64(m.std));
        }
        rec.extend(r.median.iter().map(|v| fmt_f64(*v)));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// `source,t,dim,value`: the true expected states, then the recovered ones
/// from the first successful repetition of each source.
pub fn write_scenario_trajectories<W: Write>(w: W, outcome: &ScenarioOutcome) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["source", "t", "dim", "value"])?;
    let mut emit = |source: &str, traj: &ExpectedTrajectory| -> Result<()> {
        for (t, x) in traj.states.iter().enumerate() {
            for (k, v) in x.iter().enumerate() {
                out.write_record([source, &t.to_string(), &k.to_string(), &fmt_f64(*v)])?;
            }
        }
        Ok(())
    };
    emit("true", &outcome.truth)?;
    for row in &outcome.table {
        let first = outcome
            .rows
            .iter()
            .filter(|r| r.n == row.source)
            .find_map(|r| {
                r.round_trip
                    .as_ref()
                    .and_then(|rt| rt.recovered_trajectory.as_ref())
            });
        if let Some(traj) = first {
            emit(&row.source.to_string(), traj)?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{closed_loop, solve_nash};

    #[test]
    fn intersection_game_is_solvable() {
        let g = intersection_game(&IntersectionParams::default()).unwrap();
        assert_eq!(
            (g.nx(), g.nu(), g.num_players(), g.horizon()),
            (12, 2, 3, 20)
        );
        let (policy, _, _) = solve_nash(&g).unwrap();
        assert!(closed_loop(&g.dynamics, &policy)
            .iter()
            .all(|s| s.invertible));
        // Vehicles approach their goals.
        let traj = expected_trajectory(&g.dynamics, &policy).unwrap();
        let end = &traj.states[20];
        assert!(
            (end[0] - 6.0).abs() < 1.5,
            "vehicle 1 ends at x = {}",
            end[0]
        );
        assert!(
            (end[5] - 6.0).abs() < 1.5,
            "vehicle 2 ends at y = {}",
            end[5]
        );
    }

    #[test]
    fn bundled_file_matches_defaults() {
        let text = include_str!("../../data/intersection.json");
        let bundled = crate::config::parse_game(&serde_json::from_str(text).unwrap()).unwrap();
        assert_eq!(
            bundled,
            intersection_game(&IntersectionParams::default()).unwrap()
        );
    }

    #[test]
    fn summary_matches_rows() {
        let g = intersection_game(&IntersectionParams {
            horizon: 4,
            ..Default::default()
        })
        .unwrap();
        let cfg = ExperimentConfig {
            samples: vec![40],
            reps: 3,
            ..Default::default()
        };
        let out = run_scenario(&g, &cfg).unwrap();
        let rows: Vec<&SweepRow> = out
            .rows
            .iter()
            .filter(|r| r.n == SampleSize::Samples(40))
            .collect();
        let mean = rows.iter().map(|r| r.k_err).sum::<f64>() / rows.len() as f64;
        let t = out
            .table
            .iter()
            .find(|r| r.source == SampleSize::Samples(40))
            .unwrap();
        assert!((t.k.mean - mean).abs() <= 1e-12);
        let mut buf = Vec::new();
        write_table(&mut buf, &out.table).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
    }
}
