//! Sparse static state-feedback synthesis for continuous-time LQ control
//! with an H₂ guarantee under polytopic uncertainty.
//!
//! The plant is lifted to a convex set of `p×p` matrices `W` (`p = n + m`);
//! a stabilizing gain is read off as `K = −W₂ᵀW₁⁻¹`. Sparsity of `K` is
//! encouraged by a penalty on the gain block, handled by a primal-dual
//! splitting scheme whose cone-constrained subproblem is solved in the dual.

pub mod analysis;
pub mod batch;
pub mod cones;
pub mod error;
pub mod inner;
pub mod io;
pub mod l0;
pub mod model;
pub mod outer;
pub mod penalties;
pub mod vectorize;

pub use analysis::{Solution, Status};
pub use error::{Result, SolverError};
pub use model::{lift_plant, validate_plant, LiftedProblem, PlantData};
pub use outer::{solve_relaxed, OuterOptions, RegimeSpec, Relaxation};
