//! Fixtures shared by the benchmarks.

use lqg_core::cls::ClsProblem;
use lqg_core::experiments::random::{draw_solvable, study_game, SolvedGame, StudyRanges};
use lqg_core::experiments::scenario::{intersection_game, IntersectionParams};
use lqg_core::experiments::stream_rng;
use lqg_core::GameSpec;
use nalgebra::DMatrix;
use rand::Rng;

/// A solvable three-player study game.
pub fn study(seed: u64) -> SolvedGame {
    let mut rng = stream_rng(seed, 0);
    draw_solvable(&mut rng, 10, |r| study_game(r, &StudyRanges::default()))
        .expect("solvable study game")
}

/// The twelve-state, three-vehicle crossing game.
pub fn intersection() -> GameSpec {
    intersection_game(&IntersectionParams::default()).expect("valid scenario")
}

/// Random `rows × l` problem with every free entry bounded below.
pub fn cls_problem(seed: u64, rows: usize, l: usize) -> ClsProblem {
    let mut rng = stream_rng(seed, 1);
    let m = DMatrix::from_fn(rows, l, |_, _| rng.random_range(-1.0..1.0));
    ClsProblem::new(m, (0..l - 1).collect(), 1e-3).expect("valid problem")
}
