use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const GAME: &str = concat!(
    env!("CARGO_MANIFEST_DIR"),
    "/../core/data/intersection.json"
);

fn lqg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lqg"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = lqg(dir, args);
    assert!(
        out.status.success(),
        "lqg {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Runs the full pipeline in `dir` and returns every output file.
fn pipeline(dir: &Path) -> Vec<PathBuf> {
    ok(
        dir,
        &[
            "solve",
            "--game",
            GAME,
            "--out",
            "policy.json",
            "--value",
            "value.json",
            "--report",
            "report.json",
        ],
    );
    ok(
        dir,
        &[
            "simulate",
            "--game",
            GAME,
            "--policy",
            "policy.json",
            "--samples",
            "30",
            "--seed",
            "5",
            "--obs-noise",
            "0.01",
            "--out",
            "traj.csv",
        ],
    );
    ok(
        dir,
        &[
            "estimate",
            "--traj",
            "traj.csv",
            "--dims",
            GAME,
            "--out",
            "est.json",
            "--complexity-report",
            "cx.json",
        ],
    );
    ok(
        dir,
        &[
            "identify",
            "--game",
            GAME,
            "--policy",
            "policy.json",
            "--out",
            "costs.json",
            "--residuals",
            "res.csv",
        ],
    );
    ok(
        dir,
        &[
            "verify",
            "--game",
            GAME,
            "--costs",
            "costs.json",
            "--ref-policy",
            "policy.json",
            "--out",
            "metrics.csv",
        ],
    );
    ok(
        dir,
        &[
            "example",
            "randomized",
            "--episodes",
            "4",
            "--seed",
            "3",
            "--out-dir",
            "study",
        ],
    );
    ok(
        dir,
        &[
            "sweep",
            "--samples",
            "20,50",
            "--reps",
            "2",
            "--seed",
            "3",
            "--out",
            "sweep.csv",
        ],
    );
    ok(
        dir,
        &[
            "scenario",
            "--game",
            GAME,
            "--samples",
            "30",
            "--reps",
            "2",
            "--out",
            "table.csv",
            "--rows",
            "rows.csv",
            "--trajectories",
            "st.csv",
        ],
    );
    let mut files: Vec<PathBuf> = [
        "policy.json",
        "value.json",
        "report.json",
        "traj.csv",
        "est.json",
        "cx.json",
        "costs.json",
        "res.csv",
        "metrics.csv",
        "study/episodes.csv",
        "study/trajectories.csv",
        "study/failures.csv",
        "sweep.csv",
        "table.csv",
        "rows.csv",
        "st.csv",
    ]
    .iter()
    .map(PathBuf::from)
    .collect();
    files.sort();
    files
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let files = pipeline(a.path());
    pipeline(b.path());
    for f in files {
        let x = fs::read(a.path().join(&f)).unwrap();
        let y = fs::read(b.path().join(&f)).unwrap();
        assert!(!x.is_empty(), "{} is empty", f.display());
        assert!(x == y, "{} differs between runs", f.display());
    }
}

#[test]
fn identified_costs_reproduce_the_policy() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["solve", "--game", GAME, "--out", "policy.json"]);
    ok(
        d,
        &[
            "identify",
            "--game",
            GAME,
            "--policy",
            "policy.json",
            "--out",
            "costs.json",
        ],
    );
    ok(
        d,
        &[
            "verify",
            "--game",
            GAME,
            "--costs",
            "costs.json",
            "--ref-policy",
            "policy.json",
            "--out",
            "m.csv",
        ],
    );
    let text = fs::read_to_string(d.join("m.csv")).unwrap();
    let mut rows = 0;
    for line in text.lines().skip(1).filter(|l| !l.starts_with("mean_")) {
        let cols: Vec<&str> = line.split(',').collect();
        let k: f64 = cols[2].parse().unwrap();
        let a: f64 = cols[3].parse().unwrap();
        assert!(k <= 1e-6 && a <= 1e-6, "{line}");
        rows += 1;
    }
    assert_eq!(rows, 3 * 20);
}

#[test]
fn bad_input_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = lqg(d, &["sweep", "--samples", "100,20", "--out", "x.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ascending"));

    let out = lqg(d, &["solve", "--game", "missing.json", "--out", "p.json"]);
    assert_eq!(out.status.code(), Some(1));

    fs::write(d.join("broken.json"), "{\"num_players\": 2}").unwrap();
    let out = lqg(d, &["solve", "--game", "broken.json", "--out", "p.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!d.join("p.json").exists());
}

#[test]
fn singular_game_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // Two scalar players with Q_T = -1/2 each: det(R + B'PB) = 1 + q1 + q2 = 0 at the last step.
    let game = r#"{
        "num_players": 2, "state_dims": [1, 0], "input_dim": 1, "horizon": 1,
        "A": [[[1.0]]], "B": [[[[1.0]]], [[[1.0]]]],
        "Q": [[[[-0.5]]], [[[-0.5]]]], "l": [[[0.0]], [[0.0]]], "R": [[[[1.0]]], [[[1.0]]]],
        "mu0": [0.0], "chi0": [[1.0]], "Sigma": [[[0.1]]]
    }"#;
    fs::write(d.join("g.json"), game).unwrap();
    let out = lqg(
        d,
        &[
            "solve", "--game", "g.json", "--out", "p.json", "--report", "r.json",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("t=0"));
    let report = fs::read_to_string(d.join("r.json")).unwrap();
    assert!(report.contains("\"exists_unique\": false"));
    assert!(!d.join("p.json").exists());
}
