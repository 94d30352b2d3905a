//! Energy-aware mining as a multiple-stopping POMDP: belief filtering,
//! grid value iteration, linear threshold policies trained by SPSA,
//! Monte Carlo evaluation and model estimation from hash-rate data.

pub mod data;
pub mod error;
pub mod exec;
pub mod fixtures;
pub mod grid;
pub mod matrix;
pub mod model;
pub mod policy;
pub mod rng;
pub mod sim;
pub mod spsa;
pub mod vi;

pub use error::{Error, Result};
pub use exec::Execution;
pub use grid::SimplexGrid;
pub use matrix::Matrix;
pub use model::{
    build_augmented_model, is_tp2, mlr_compare, validate_model, Action, Belief,
    MlrOrdering, PomdpModel,
};
pub use policy::{check_feasible, from_spherical, LinearThresholdPolicy, Policy, SphericalParams};
pub use sim::{estimate_j, EvalConfig, Estimate};
pub use spsa::{SpsaConfig, TrainingTrace};
pub use vi::{solve_value_iteration, verify_structure, ValueTable, ViConfig};
