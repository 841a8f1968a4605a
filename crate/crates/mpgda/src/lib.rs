//! Manifold proximal gradient descent-ascent solvers for nonsmooth
//! nonconvex-concave minimax problems
//! `min_{x in M} max_{y in S} f(x, y) + h(x) - g(y)`
//! on Riemannian submanifolds (Stiefel, Euclidean, and products), with the
//! benchmark problems and verification oracles used by the experiment
//! harness.

pub mod error;
pub mod manifold;
pub mod problems;
pub mod proxsets;
pub mod solver;
pub mod subsolver;
pub mod verify;

pub mod cli;

pub use error::{Error, Result};
pub use manifold::{random_point, retract, riemannian_grad, tangent_project};
pub use manifold::{Manifold, ManifoldPoint, TangentVector};
pub use problems::{
    gen_fspca_synthetic, gen_ssc_synthetic, load_credit_csv, AnalyticProblem, FspcaProblem,
    MinimaxProblem, SscProblem,
};
pub use proxsets::{
    normal_cone_distance, prox_g_over_s, prox_h, simplex_project, FeasibleSet, Regularizer,
};
pub use solver::{
    bb_stepsize, game_stationarity, rho_schedule_step, run_mpgda_pa, run_mpgda_pga,
    IterateRecord, PASettings, PGASettings, SolveOutcome, SolveStatus, StationarityReport,
};
pub use subsolver::{
    maximize_concave, solve_tangent_prox, ybar_linear, ConcaveMaxResult, TangentProxResult,
};
pub use verify::{brute_force_y_max, fd_gradient_check, replay_descent_ledger, FDReport};
