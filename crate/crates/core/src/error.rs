use std::fmt;

use thiserror::Error;

use crate::analysis::Solution;
use crate::inner::DualState;

/// Which standing assumption on the plant failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assumption {
    /// `CᵀD` must vanish.
    CrossTermZero,
    /// `DᵀD` must be positive definite.
    InputWeightDefinite,
    /// `B₁B₁ᵀ` must be positive definite.
    DisturbanceDefinite,
}

impl fmt::Display for Assumption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Assumption::CrossTermZero => write!(f, "CᵀD = 0"),
            Assumption::InputWeightDefinite => write!(f, "DᵀD ≻ 0"),
            Assumption::DisturbanceDefinite => write!(f, "B₁B₁ᵀ ≻ 0"),
        }
    }
}

/// Best iterate handed back when the inner dual solver runs out of sweeps.
#[derive(Debug, Clone)]
pub struct InnerFailure {
    pub vec_w: nalgebra::DVector<f64>,
    pub residual: f64,
    pub sweeps: usize,
    pub state: DualState,
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("plant violates assumption {0}")]
    AssumptionViolated(Assumption),
    #[error("forced zero ({row}, {col}) outside the {m}×{n} gain")]
    ForcedZeroOutOfRange { row: usize, col: usize, m: usize, n: usize },
    #[error("proximal parameter rho must be positive, got {0}")]
    NonPositiveRho(f64),
    #[error("piecewise-quadratic parameters need a1, a2 > 0 and b1 < 0 < b2")]
    InvalidPqParams,
    #[error("sigma must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("penalty weights must be strictly positive")]
    NonPositiveWeights,
    #[error("symmetric eigendecomposition failed")]
    EigFailure,
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("-Ψ has an eigenvalue of {0:e}, below the tolerance")]
    PsiNotNegativeSemidefinite(f64),
    #[error("inner solver stopped after {} sweeps at residual {:e}", .0.sweeps, .0.residual)]
    MaxSweepsExceeded(Box<InnerFailure>),
    #[error("inner solver diverged after {0} sweeps")]
    InnerDiverged(usize),
    #[error("outer iteration did not converge")]
    NotConverged(Box<Solution>),
    #[error("W₁ is singular")]
    SingularW1,
    #[error("closed loop is not Hurwitz (spectral abscissa {0})")]
    NotHurwitz(f64),
    #[error("Lyapunov solve of order {0} exceeds the dense limit")]
    TooLarge(usize),
    #[error("initial gain does not stabilize the plant")]
    K0NotStabilizing,
    #[error("Kleinman iteration did not converge in {0} steps")]
    NoConvergence(usize),
    #[error("point is infeasible (violation {0:e})")]
    InfeasiblePoint(f64),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T, E = SolverError> = std::result::Result<T, E>;
