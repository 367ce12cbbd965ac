//! Direct ℓ0-penalized synthesis through the surrogate
//! `H_σ(W̃) = ⟨R, W⟩ + γ Σ f_σ(|P̃_ij|)` with `f_σ(t) = 1 − e^{−t/σ}`.
//!
//! For each `σ` in a geometric schedule the concave surrogate is majorized at
//! the current point by a weighted ℓ1 term (weights `y = f_σ'(|·|)`) plus a
//! proximal anchor, and the resulting convex problem is solved by the
//! splitting scheme. A pass that would raise `H_σ` is rejected.
//!
//! The gain entering the surrogate is the prox variable `P̃`, which carries
//! exact zeros; it agrees with `V₁WV₂ᵀ` up to the subproblem's coupling residual.

use log::{debug, info};
use nalgebra::{DMatrix, DVector};

use crate::analysis::{solution_from_parts, Solution, Status};
use crate::cones::min_eigenvalue;
use crate::error::{Result, SolverError};
use crate::model::LiftedProblem;
use crate::outer::{run_relaxed, OuterOptions, OuterState, RegimeSpec, RelaxedRun};
use crate::penalties::{exp_weight_update, f_sigma, PenaltyConfig, PenaltyKind};

/// Cone violation tolerated by [`h_sigma_objective`].
pub const FEAS_TOL: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct L0Options {
    pub sigma0: f64,
    pub decay: f64,
    pub sigma_min: f64,
    pub lambda: f64,
    pub pass_cap: usize,
    /// Relative change of `H_σ` that ends a stage.
    pub rel_tol: f64,
    /// Options of every weighted-ℓ1 subproblem.
    pub sub: OuterOptions,
}

impl Default for L0Options {
    fn default() -> Self {
        L0Options {
            sigma0: 1.0,
            decay: 0.7,
            sigma_min: 1e-4,
            lambda: 10.0,
            pass_cap: 50,
            rel_tol: 1e-5,
            sub: OuterOptions {
                max_outer: 2_000,
                ..OuterOptions::default()
            },
        }
    }
}

impl L0Options {
    pub fn validate(&self) -> Result<()> {
        let ok = self.decay > 0.0
            && self.decay < 1.0
            && self.lambda > 0.0
            && self.lambda.is_finite()
            && self.sigma_min > 0.0
            && self.sigma_min < self.sigma0
            && self.sigma0 <= 1.0
            && self.pass_cap >= 1;
        if ok {
            Ok(())
        } else {
            Err(SolverError::InvalidInput(
                "l0 options need 0 < decay < 1, lambda > 0, 0 < sigma_min < sigma0 <= 1".into(),
            ))
        }
    }

    /// `σ₀, ασ₀, α²σ₀, …` down to (and including the first value below) `σ_min`.
    pub fn schedule(&self) -> Vec<f64> {
        let mut out = vec![self.sigma0];
        let mut s = self.sigma0;
        while s > self.sigma_min {
            s *= self.decay;
            out.push(s.max(self.sigma_min));
        }
        out
    }
}

/// An iterate of the ℓ0 scheme: symmetrized `vec W̃` and the gain `vec P̃`.
#[derive(Debug, Clone, PartialEq)]
pub struct L0Point {
    pub w_tilde: DVector<f64>,
    pub p_tilde: DVector<f64>,
}

impl L0Point {
    pub fn from_run(lifted: &LiftedProblem, run: &RelaxedRun) -> Self {
        let raw = lifted.unvec(&run.state.w_tilde);
        let w = (&raw + raw.transpose()) * 0.5;
        L0Point {
            w_tilde: DVector::from_column_slice(w.as_slice()),
            p_tilde: run.state.p_tilde.clone(),
        }
    }

    /// Point whose gain is read off `W̃` itself.
    pub fn from_w(lifted: &LiftedProblem, w_tilde: DVector<f64>) -> Self {
        let gain = lifted.gain_block(&lifted.unvec(&w_tilde));
        L0Point {
            p_tilde: DVector::from_column_slice(gain.as_slice()),
            w_tilde,
        }
    }

    pub fn nnz(&self) -> usize {
        self.p_tilde.iter().filter(|v| **v != 0.0).count()
    }
}

/// Smallest weight handed to the prox; `exp(−t/σ)/σ` underflows for tiny `σ`.
const MIN_WEIGHT: f64 = 1e-300;

/// `y = exp(−|gain|/σ)/σ` in gain `vec` order.
pub fn update_y(gain: &DVector<f64>, sigma: f64) -> Result<DVector<f64>> {
    let abs = gain.map(f64::abs);
    Ok(exp_weight_update(&abs, sigma)?.map(|v| v.max(MIN_WEIGHT)))
}

/// Largest cone violation (`W ⪰ 0`, `Ψ_i ⪰ 0`) of a symmetric `W`.
pub fn cone_violation(lifted: &LiftedProblem, w: &DMatrix<f64>) -> Result<f64> {
    let mut worst = min_eigenvalue(w)?;
    for i in 0..lifted.n_vertices() {
        worst = worst.min(min_eigenvalue(&lifted.psi(w, i))?);
    }
    Ok((-worst).max(0.0))
}

/// `⟨R, W⟩ + γ Σ f_σ(|P̃_ij|)`, or `InfeasiblePoint` when a cone constraint
/// is violated by more than [`FEAS_TOL`].
pub fn h_sigma_objective(lifted: &LiftedProblem, point: &L0Point, sigma: f64, gamma: f64) -> Result<f64> {
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(SolverError::NonPositiveSigma(sigma));
    }
    let w = lifted.unvec(&point.w_tilde);
    let viol = cone_violation(lifted, &w)?;
    if viol > FEAS_TOL {
        return Err(SolverError::InfeasiblePoint(viol));
    }
    let surrogate: f64 = point.p_tilde.iter().map(|x| f_sigma(x.abs(), sigma)).sum();
    Ok(lifted.cost(&w) + gamma * surrogate)
}

/// Result of one anchored weighted-ℓ1 solve.
#[derive(Debug, Clone)]
pub struct SubproblemResult {
    pub run: RelaxedRun,
    pub point: L0Point,
}

/// Solve `min ⟨R,W⟩ + γ yᵀ|P̃| + (1/2λ)‖W̃ − W̃_anchor‖²` over the convex set.
pub fn weighted_subproblem(
    lifted: &LiftedProblem,
    y: &DVector<f64>,
    gamma: f64,
    anchor: &DVector<f64>,
    lambda: f64,
    opts: &OuterOptions,
    warm: Option<OuterState>,
) -> Result<SubproblemResult> {
    if y.iter().any(|v| v.is_nan() || *v <= 0.0) {
        return Err(SolverError::NonPositiveWeights);
    }
    let weights = DMatrix::from_column_slice(lifted.m, lifted.n, y.as_slice());
    let penalty = PenaltyConfig::new(PenaltyKind::WeightedL1, gamma, lifted.m, lifted.n).with_weights(weights);
    let regime = if lambda.is_finite() {
        RegimeSpec::anchored(penalty, anchor.clone(), lambda)
    } else {
        RegimeSpec::l1(penalty)
    };
    let run = run_relaxed(lifted, &regime, opts, warm)?;
    let point = L0Point::from_run(lifted, &run);
    Ok(SubproblemResult { run, point })
}

/// One row of the stage trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageRow {
    pub sigma: f64,
    pub pass: usize,
    pub h_sigma: f64,
    pub nnz: usize,
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct L0Outcome {
    pub solution: Solution,
    pub stages: Vec<StageRow>,
}

fn warm_state(lifted: &LiftedProblem, opts: &OuterOptions, run: &RelaxedRun, point: &L0Point) -> OuterState {
    OuterState::warm(
        lifted,
        opts,
        point.w_tilde.clone(),
        point.p_tilde.clone(),
        run.state.lambda.clone(),
    )
}

/// σ-continuation with accepted-descent passes.
///
/// The returned solution carries the status of its last accepted subproblem;
/// the result is a coordinatewise minimizer of the final surrogate at best.
pub fn solve_l0(lifted: &LiftedProblem, gamma: f64, opts: &L0Options) -> Result<L0Outcome> {
    opts.validate()?;
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(SolverError::InvalidInput(format!(
            "gamma must be finite and >= 0, got {gamma}"
        )));
    }
    let gamma = if gamma == 0.0 { 1e-8 } else { gamma };
    let mn = lifted.m * lifted.n;
    let schedule = opts.schedule();

    // Starting point: the first majorizer at P = 0 is plain weighted ℓ1.
    let y0 = DVector::from_element(mn, 1.0 / schedule[0]);
    let first = weighted_subproblem(
        lifted,
        &y0,
        gamma,
        &DVector::zeros(lifted.p * lifted.p),
        f64::INFINITY,
        &opts.sub,
        None,
    )?;
    let mut run = first.run;
    let mut point = first.point;
    let mut stages = Vec::new();

    for &sigma in &schedule {
        let mut h = match h_sigma_objective(lifted, &point, sigma, gamma) {
            Ok(v) => v,
            Err(SolverError::InfeasiblePoint(v)) => {
                debug!("sigma {sigma:.3e}: start point violates the cones by {v:.3e}");
                f64::INFINITY
            }
            Err(e) => return Err(e),
        };
        stages.push(StageRow {
            sigma,
            pass: 0,
            h_sigma: h,
            nnz: point.nnz(),
            accepted: true,
        });
        for pass in 1..=opts.pass_cap {
            let y = update_y(&point.p_tilde, sigma)?;
            let warm = warm_state(lifted, &opts.sub, &run, &point);
            let cand = weighted_subproblem(lifted, &y, gamma, &point.w_tilde, opts.lambda, &opts.sub, Some(warm))?;
            let h_new = match h_sigma_objective(lifted, &cand.point, sigma, gamma) {
                Ok(v) => v,
                Err(SolverError::InfeasiblePoint(_)) => f64::INFINITY,
                Err(e) => return Err(e),
            };
            let scale = if h.is_finite() { h.abs().max(1.0) } else { 1.0 };
            let accepted = h_new.is_finite() && h_new <= h + 1e-10 * scale;
            stages.push(StageRow {
                sigma,
                pass,
                h_sigma: if accepted { h_new } else { h },
                nnz: if accepted { cand.point.nnz() } else { point.nnz() },
                accepted,
            });
            if !accepted {
                debug!("sigma {sigma:.3e} pass {pass}: rejected H {h_new:.6} > {h:.6}");
                break;
            }
            let change = if h.is_finite() {
                (h - h_new) / scale
            } else {
                f64::INFINITY
            };
            run = cand.run;
            point = cand.point;
            h = h_new;
            if change < opts.rel_tol {
                break;
            }
        }
        info!("sigma {sigma:.3e}: H = {h:.6}, nnz = {}", point.nnz());
    }

    let w = lifted.unvec(&point.w_tilde);
    let p = lifted.unvec_gain(&point.p_tilde);
    let penalty = PenaltyConfig::new(PenaltyKind::ExpSurrogate, gamma, lifted.m, lifted.n)
        .with_sigma(*schedule.last().unwrap_or(&opts.sigma_min));
    let mut solution = solution_from_parts(lifted, &penalty, w, p, &run)?;
    solution.penalty = crate::penalties::l0_penalty(&solution.p, gamma);
    if solution.status == Status::NotConverged {
        return Err(SolverError::NotConverged(Box::new(solution)));
    }
    Ok(L0Outcome { solution, stages })
}
