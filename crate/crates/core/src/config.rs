//! JSON configuration files for games, policies, value recursions and
//! identified costs.
//!
//! Matrices are row-major nested arrays. Any time-indexed field may be given
//! once (constant over the horizon) or as an array of `T` entries; the
//! nesting depth disambiguates the two. Files written by this module always
//! use the expanded per-time form.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::forward::ExistenceReport;
use crate::model::{Costs, Dynamics, GameSpec, NashPolicy, ValueRecursion};

pub fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
}

pub fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Loads and validates a full game (dynamics and costs).
pub fn load_game(path: &Path) -> Result<GameSpec> {
    parse_game(&read_json(path)?)
}

/// Loads only the dynamics part of a game file; cost keys are ignored.
pub fn load_dynamics(path: &Path) -> Result<Dynamics> {
    parse_dynamics(&read_json(path)?)
}

pub fn save_game(path: &Path, game: &GameSpec) -> Result<()> {
    write_json(path, &game_to_json(game))
}

pub fn parse_game(v: &Value) -> Result<GameSpec> {
    let dynamics = parse_dynamics(v)?;
    let costs = parse_costs(v, &dynamics)?;
    GameSpec::new(dynamics, costs)
}

pub fn parse_dynamics(v: &Value) -> Result<Dynamics> {
    let num_players = get_usize(v, "num_players")?;
    let horizon = get_usize(v, "horizon")?;
    let input_dim = get_usize(v, "input_dim")?;
    let state_dims = field(v, "state_dims")?
        .as_array()
        .ok_or_else(|| Error::parse("state_dims", "expected an array of integers"))?
        .iter()
        .enumerate()
        .map(|(k, x)| {
            x.as_u64().map(|u| u as usize).ok_or_else(|| {
                Error::parse(
                    format!("state_dims[{k}]"),
                    "expected a non-negative integer",
                )
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if horizon == 0 {
        return Err(Error::dim("horizon", "must be at least 1"));
    }
    let a = parse_matrix_seq(field(v, "A")?, "A", horizon)?;
    let b = per_player(field(v, "B")?, "B", num_players, |x, p| {
        parse_matrix_seq(x, p, horizon)
    })?;
    let mu0 = parse_vector(field(v, "mu0")?, "mu0")?;
    let chi0 = parse_matrix(field(v, "chi0")?, "chi0")?;
    let sigma = parse_matrix_seq(field(v, "Sigma")?, "Sigma", horizon)?;
    let d = Dynamics {
        num_players,
        horizon,
        state_dims,
        input_dim,
        a,
        b,
        mu0,
        chi0,
        sigma,
    };
    d.validate()?;
    Ok(d)
}

/// Parses the `Q`, `l`, `R` keys against known dynamics.
pub fn parse_costs(v: &Value, d: &Dynamics) -> Result<Costs> {
    let n = d.num_players;
    let t_len = d.horizon;
    let q = per_player(field(v, "Q")?, "Q", n, |x, p| parse_matrix_seq(x, p, t_len))?;
    let l = per_player(field(v, "l")?, "l", n, |x, p| parse_vector_seq(x, p, t_len))?;
    let r = per_player(field(v, "R")?, "R", n, |x, p| parse_matrix_seq(x, p, t_len))?;
    let costs = Costs { q, l, r };
    costs.validate(d)?;
    Ok(costs)
}

pub fn dynamics_to_json(d: &Dynamics) -> Value {
    json!({
        "num_players": d.num_players,
        "horizon": d.horizon,
        "state_dims": d.state_dims,
        "input_dim": d.input_dim,
        "A": d.a.iter().map(matrix_json).collect::<Vec<_>>(),
        "B": d.b.iter().map(|bi| bi.iter().map(matrix_json).collect::<Vec<_>>()).collect::<Vec<_>>(),
        "mu0": vector_json(&d.mu0),
        "chi0": matrix_json(&d.chi0),
        "Sigma": d.sigma.iter().map(matrix_json).collect::<Vec<_>>(),
    })
}

pub fn costs_to_json(c: &Costs) -> Value {
    json!({
        "Q": nested_matrices(&c.q),
        "l": c.l.iter().map(|li| li.iter().map(vector_json).collect::<Vec<_>>()).collect::<Vec<_>>(),
        "R": nested_matrices(&c.r),
    })
}

pub fn game_to_json(g: &GameSpec) -> Value {
    let mut v = dynamics_to_json(&g.dynamics);
    let c = costs_to_json(&g.costs);
    let obj = v.as_object_mut().expect("object");
    for (k, x) in c.as_object().expect("object") {
        obj.insert(k.clone(), x.clone());
    }
    v
}

pub fn policy_to_json(p: &NashPolicy) -> Value {
    json!({
        "K": nested_matrices(&p.gains),
        "alpha": p.offsets.iter().map(|ai| ai.iter().map(vector_json).collect::<Vec<_>>()).collect::<Vec<_>>(),
    })
}

pub fn parse_policy(v: &Value) -> Result<NashPolicy> {
    let k = field(v, "K")?
        .as_array()
        .ok_or_else(|| Error::parse("K", "expected an array indexed [player][t]"))?;
    let alpha = field(v, "alpha")?
        .as_array()
        .ok_or_else(|| Error::parse("alpha", "expected an array indexed [player][t]"))?;
    let gains = k
        .iter()
        .enumerate()
        .map(|(i, ki)| {
            let path = format!("K[{i}]");
            ki.as_array()
                .ok_or_else(|| Error::parse(&path, "expected an array over t"))?
                .iter()
                .enumerate()
                .map(|(t, m)| parse_matrix(m, &format!("{path}[{t}]")))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let offsets = alpha
        .iter()
        .enumerate()
        .map(|(i, ai)| {
            let path = format!("alpha[{i}]");
            ai.as_array()
                .ok_or_else(|| Error::parse(&path, "expected an array over t"))?
                .iter()
                .enumerate()
                .map(|(t, x)| parse_vector(x, &format!("{path}[{t}]")))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NashPolicy { gains, offsets })
}

pub fn load_policy(path: &Path) -> Result<NashPolicy> {
    parse_policy(&read_json(path)?)
}

pub fn save_policy(path: &Path, p: &NashPolicy) -> Result<()> {
    write_json(path, &policy_to_json(p))
}

/// Loads the `Q`, `l`, `R` keys of a costs or game file against known
/// dynamics.
pub fn load_costs(path: &Path, d: &Dynamics) -> Result<Costs> {
    parse_costs(&read_json(path)?, d)
}

pub fn existence_to_json(r: &ExistenceReport) -> Value {
    json!({
        "exists_unique": r.exists_unique,
        "first_failure": r.first_failure(),
        "phi_cond": r.cond.iter().map(|&c| finite_or_null(c)).collect::<Vec<_>>(),
        "phi_invertible": r.invertible,
    })
}

pub fn value_to_json(v: &ValueRecursion) -> Value {
    json!({
        "P": nested_matrices(&v.value_quadratic),
        "zeta": v.value_linear.iter().map(|zi| zi.iter().map(vector_json).collect::<Vec<_>>()).collect::<Vec<_>>(),
        "F": v.closed_loop.iter().map(matrix_json).collect::<Vec<_>>(),
        "F_cond": v.cl_cond.iter().map(|&c| finite_or_null(c)).collect::<Vec<_>>(),
        "F_invertible": v.cl_invertible,
    })
}

pub fn matrix_json(m: &DMatrix<f64>) -> Value {
    Value::Array(
        (0..m.nrows())
            .map(|r| Value::Array((0..m.ncols()).map(|c| json!(m[(r, c)])).collect()))
            .collect(),
    )
}

pub fn vector_json(v: &DVector<f64>) -> Value {
    Value::Array(v.iter().map(|x| json!(x)).collect())
}

pub(crate) fn finite_or_null(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

fn nested_matrices(m: &[Vec<DMatrix<f64>>]) -> Value {
    Value::Array(
        m.iter()
            .map(|mi| Value::Array(mi.iter().map(matrix_json).collect()))
            .collect(),
    )
}

fn field<'a>(v: &'a Value, key: &str) -> Result<&'a Value> {
    v.get(key).ok_or_else(|| Error::parse(key, "missing field"))
}

fn get_usize(v: &Value, key: &str) -> Result<usize> {
    field(v, key)?
        .as_u64()
        .map(|u| u as usize)
        .ok_or_else(|| Error::parse(key, "expected a non-negative integer"))
}

/// Number of nested array levels along the first element.
fn depth(v: &Value) -> usize {
    match v {
        Value::Array(a) => 1 + a.first().map_or(0, depth),
        _ => 0,
    }
}

fn parse_number(v: &Value, path: &str) -> Result<f64> {
    let x = v
        .as_f64()
        .ok_or_else(|| Error::parse(path, "expected a number"))?;
    if !x.is_finite() {
        return Err(Error::parse(path, "non-finite number"));
    }
    Ok(x)
}

pub fn parse_vector(v: &Value, path: &str) -> Result<DVector<f64>> {
    let arr = v
        .as_array()
        .ok_or_else(|| Error::parse(path, "expected an array of numbers"))?;
    let data = arr
        .iter()
        .enumerate()
        .map(|(k, x)| parse_number(x, &format!("{path}[{k}]")))
        .collect::<Result<Vec<_>>>()?;
    Ok(DVector::from_vec(data))
}

pub fn parse_matrix(v: &Value, path: &str) -> Result<DMatrix<f64>> {
    let rows = v
        .as_array()
        .ok_or_else(|| Error::parse(path, "expected a matrix (array of rows)"))?;
    let mut data = Vec::new();
    let mut ncols = None;
    for (r, row) in rows.iter().enumerate() {
        let rp = format!("{path}[{r}]");
        let row = parse_vector(row, &rp)?;
        match ncols {
            None => ncols = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(Error::dim(
                    rp,
                    format!("ragged row: expected {c} columns, got {}", row.len()),
                ))
            }
            _ => {}
        }
        data.extend(row.iter());
    }
    Ok(DMatrix::from_row_slice(
        rows.len(),
        ncols.unwrap_or(0),
        &data,
    ))
}

fn parse_matrix_seq(v: &Value, path: &str, horizon: usize) -> Result<Vec<DMatrix<f64>>> {
    match depth(v) {
        2 => Ok(vec![parse_matrix(v, path)?; horizon]),
        3 => {
            let arr = v.as_array().expect("depth 3 is an array");
            if arr.len() != horizon {
                return Err(Error::dim(
                    path,
                    format!("expected {horizon} per-time matrices, got {}", arr.len()),
                ));
            }
            arr.iter()
                .enumerate()
                .map(|(t, m)| parse_matrix(m, &format!("{path}[{t}]")))
                .collect()
        }
        _ => Err(Error::parse(
            path,
            "expected a matrix or an array of per-time matrices",
        )),
    }
}

fn parse_vector_seq(v: &Value, path: &str, horizon: usize) -> Result<Vec<DVector<f64>>> {
    match depth(v) {
        1 => Ok(vec![parse_vector(v, path)?; horizon]),
        2 => {
            let arr = v.as_array().expect("depth 2 is an array");
            if arr.len() != horizon {
                return Err(Error::dim(
                    path,
                    format!("expected {horizon} per-time vectors, got {}", arr.len()),
                ));
            }
            arr.iter()
                .enumerate()
                .map(|(t, x)| parse_vector(x, &format!("{path}[{t}]")))
                .collect()
        }
        _ => Err(Error::parse(
            path,
            "expected a vector or an array of per-time vectors",
        )),
    }
}

fn per_player<T>(
    v: &Value,
    path: &str,
    n: usize,
    f: impl Fn(&Value, &str) -> Result<T>,
) -> Result<Vec<T>> {
    let arr = v
        .as_array()
        .ok_or_else(|| Error::parse(path, "expected an array indexed by player"))?;
    if arr.len() != n {
        return Err(Error::dim(
            path,
            format!("expected {n} players, got {}", arr.len()),
        ));
    }
    arr.iter()
        .enumerate()
        .map(|(i, x)| f(x, &format!("{path}[{i}]")))
        .collect()
}
