//! Optimal mechanisms for discrete one-item stages: a backward dynamic program over
//! promised utility whose value functions are sandwiched between concave
//! piecewise-linear bounds, each stage evaluated by a linear program over posted-price
//! mixtures.

pub mod backward_dp;
pub mod extract;
pub mod lp;
pub mod piecewise;
pub mod sandwich;

pub use backward_dp::{backward_dp, stage_value, CompressedStage, SolvedPolicy, StageSolver, StageValue};
pub use extract::extract_mechanism;
pub use lp::{solve_lp, LinearConstraint, LinearProgram, LpSolution, Relation};
pub use piecewise::{Piece, PiecewiseLinearConcave};
pub use sandwich::{sandwich, SandwichResult};
