//! Cost matrices, the balanced and partial transport solvers, and an exact
//! LP oracle for tiny instances.

mod cost;
mod lp;
mod matrix;
mod solver;

pub use cost::{cosine_cost_matrix, MIN_ROW_NORM};
pub use lp::{exact_lp_oracle, Marginals, MAX_ORACLE_CELLS};
pub use matrix::{
    uniform_weights, CostMatrix, DiscreteDistribution, EmbeddingMatrix, Matrix, TransportPlan,
};
pub use solver::{
    solve, solve_ot, solve_pot, SolverConfig, Transport, TransportMode, BALANCE_TOL, DENOM_FLOOR,
};

pub(crate) use cost::{dot, norm};
