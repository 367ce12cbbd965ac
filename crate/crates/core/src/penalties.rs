//! Sparsity penalties on the gain variable and their proximal maps.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SolverError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyKind {
    WeightedL1,
    PiecewiseQuadratic,
    ExpSurrogate,
}

/// Coefficients of `g₂(x) = ½a₁x² + b₁x` (x ≤ 0), `½a₂x² + b₂x` (x > 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PqParams {
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
}

impl Default for PqParams {
    fn default() -> Self {
        PqParams {
            a1: 1.0,
            a2: 1.0,
            b1: -1.0,
            b2: 1.0,
        }
    }
}

impl PqParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.a1 > 0.0 && self.a2 > 0.0 && self.b1 < 0.0 && self.b2 > 0.0;
        if ok && [self.a1, self.a2, self.b1, self.b2].iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(SolverError::InvalidPqParams)
        }
    }

    pub fn g2(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.5 * self.a1 * x * x + self.b1 * x
        } else {
            0.5 * self.a2 * x * x + self.b2 * x
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyConfig {
    pub kind: PenaltyKind,
    pub gamma: f64,
    /// `m×n`, strictly positive.
    pub weights: DMatrix<f64>,
    pub pq: PqParams,
    pub sigma: f64,
}

impl PenaltyConfig {
    pub fn new(kind: PenaltyKind, gamma: f64, m: usize, n: usize) -> Self {
        PenaltyConfig {
            kind,
            gamma,
            weights: DMatrix::from_element(m, n, 1.0),
            pq: PqParams::default(),
            sigma: 1.0,
        }
    }

    pub fn with_weights(mut self, weights: DMatrix<f64>) -> Self {
        self.weights = weights;
        self
    }

    pub fn with_pq(mut self, pq: PqParams) -> Self {
        self.pq = pq;
        self
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(SolverError::InvalidInput(format!(
                "gamma must be finite and >= 0, got {}",
                self.gamma
            )));
        }
        check_weights(&self.weights)?;
        match self.kind {
            PenaltyKind::PiecewiseQuadratic => self.pq.validate(),
            PenaltyKind::ExpSurrogate if self.sigma.is_nan() || self.sigma <= 0.0 => {
                Err(SolverError::NonPositiveSigma(self.sigma))
            }
            _ => Ok(()),
        }
    }

    /// `μ_gQ = min_ij w_ij · min(a₁, a₂)`; zero for the non-strongly-convex kinds.
    pub fn mu_gq(&self) -> f64 {
        match self.kind {
            PenaltyKind::PiecewiseQuadratic => self.weights.min() * self.pq.a1.min(self.pq.a2),
            _ => 0.0,
        }
    }

    /// Proximal map of `γ·g` with step `1/ρ`.
    pub fn prox(&self, z: &DMatrix<f64>, rho: f64) -> Result<DMatrix<f64>> {
        match self.kind {
            PenaltyKind::WeightedL1 => prox_weighted_l1(z, self.gamma, &self.weights, rho),
            PenaltyKind::PiecewiseQuadratic => prox_piecewise_quadratic(z, self.gamma, &self.weights, &self.pq, rho),
            PenaltyKind::ExpSurrogate => Err(SolverError::InvalidInput(
                "the exponential surrogate has no closed-form prox; use its weighted-l1 majorizer".into(),
            )),
        }
    }
}

fn check_weights(w: &DMatrix<f64>) -> Result<()> {
    if w.iter().all(|v| *v > 0.0 && v.is_finite()) {
        Ok(())
    } else {
        Err(SolverError::NonPositiveWeights)
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if rho > 0.0 && rho.is_finite() {
        Ok(())
    } else {
        Err(SolverError::NonPositiveRho(rho))
    }
}

/// Entrywise soft-thresholding at `γw_ij/ρ`.
pub fn prox_weighted_l1(z: &DMatrix<f64>, gamma: f64, weights: &DMatrix<f64>, rho: f64) -> Result<DMatrix<f64>> {
    check_rho(rho)?;
    if z.shape() != weights.shape() {
        return Err(SolverError::DimensionMismatch(
            "weights and argument differ in shape".into(),
        ));
    }
    Ok(z.zip_map(weights, |zij, wij| {
        let t = gamma * wij / rho;
        if zij.abs() <= t {
            0.0
        } else {
            (1.0 - t / zij.abs()) * zij
        }
    }))
}

pub fn prox_piecewise_quadratic(
    z: &DMatrix<f64>,
    gamma: f64,
    weights: &DMatrix<f64>,
    pq: &PqParams,
    rho: f64,
) -> Result<DMatrix<f64>> {
    pq.validate()?;
    check_rho(rho)?;
    if z.shape() != weights.shape() {
        return Err(SolverError::DimensionMismatch(
            "weights and argument differ in shape".into(),
        ));
    }
    Ok(z.zip_map(weights, |zij, wij| {
        let gw = gamma * wij;
        if zij >= 0.0 {
            if zij >= gw * pq.b2 / rho {
                (rho * zij - gw * pq.b2) / (gw * pq.a2 + rho)
            } else {
                0.0
            }
        } else if zij <= gw * pq.b1 / rho {
            (rho * zij - gw * pq.b1) / (gw * pq.a1 + rho)
        } else {
            0.0
        }
    }))
}

/// `f_σ(t) = 1 − exp(−t/σ)`.
pub fn f_sigma(t: f64, sigma: f64) -> f64 {
    -(-t / sigma).exp_m1()
}

/// `y_i = f_σ'(x_i) = exp(−x_i/σ)/σ`.
pub fn exp_weight_update(x: &DVector<f64>, sigma: f64) -> Result<DVector<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(SolverError::NonPositiveSigma(sigma));
    }
    if x.iter().any(|v| *v < 0.0 || v.is_nan()) {
        return Err(SolverError::InvalidInput(
            "weight update needs nonnegative magnitudes".into(),
        ));
    }
    Ok(x.map(|xi| (-xi / sigma).exp() / sigma))
}

/// Number of nonzero entries.
pub fn l0_count(p: &DMatrix<f64>) -> usize {
    p.iter().filter(|v| **v != 0.0).count()
}

/// `γ·g(P)` for the configured kind.
pub fn penalty_value(p: &DMatrix<f64>, config: &PenaltyConfig) -> f64 {
    let g = config.gamma;
    match config.kind {
        PenaltyKind::WeightedL1 => g * p.zip_map(&config.weights, |x, w| w * x.abs()).sum(),
        PenaltyKind::PiecewiseQuadratic => g * p.zip_map(&config.weights, |x, w| w * config.pq.g2(x)).sum(),
        PenaltyKind::ExpSurrogate => g * p.iter().map(|x| f_sigma(x.abs(), config.sigma)).sum::<f64>(),
    }
}

/// `γ·‖P‖₀`.
pub fn l0_penalty(p: &DMatrix<f64>, gamma: f64) -> f64 {
    gamma * l0_count(p) as f64
}
