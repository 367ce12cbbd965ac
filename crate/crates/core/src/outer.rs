//! Two-timescale primal-dual splitting for
//!
//! ```text
//! min f(W̃) + g(P̃)   s.t.  𝒜W̃ + ℬP̃ = 0,  W ∈ 𝒞
//! ```
//!
//! with `f = ⟨R, W⟩` (plus a proximal anchor in the ℓ0 subproblems) and `g`
//! one of the gain penalties. The cone-constrained `v`-step is delegated to
//! [`crate::inner`]; the `P̃`-step is a closed-form prox.

use std::time::Instant;

use log::{debug, info, warn};
use nalgebra::{DMatrix, DVector};

use crate::analysis::{build_solution, Solution, Status};
use crate::error::{Result, SolverError};
use crate::inner::{solve_inner, DualState, InnerContext, InnerOptions, SubproblemInput};
use crate::model::LiftedProblem;
use crate::penalties::{penalty_value, PenaltyConfig, PenaltyKind};
use crate::vectorize::SvecConvention;

/// Penalty family requested by a user.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relaxation {
    L1,
    Pq,
    L0,
}

impl std::str::FromStr for Relaxation {
    type Err = SolverError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(Relaxation::L1),
            "pq" => Ok(Relaxation::Pq),
            "l0" => Ok(Relaxation::L0),
            other => Err(SolverError::InvalidInput(format!("unknown relaxation {other:?}"))),
        }
    }
}

impl std::fmt::Display for Relaxation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Relaxation::L1 => "l1",
            Relaxation::Pq => "pq",
            Relaxation::L0 => "l0",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegimeKind {
    L1,
    Pq,
    WeightedL1Anchored,
}

/// Penalty plus the moduli the parameter recursion needs.
#[derive(Debug, Clone)]
pub struct RegimeSpec {
    pub kind: RegimeKind,
    pub penalty: PenaltyConfig,
    pub mu_f: f64,
    pub mu_g: f64,
    pub l_f: f64,
    /// `vec W̃_anchor` for the anchored regime.
    pub anchor: Option<DVector<f64>>,
    /// Anchor weight is `1/λ`.
    pub lambda: f64,
}

impl RegimeSpec {
    pub fn l1(penalty: PenaltyConfig) -> Self {
        RegimeSpec {
            kind: RegimeKind::L1,
            penalty: PenaltyConfig {
                kind: PenaltyKind::WeightedL1,
                ..penalty
            },
            mu_f: 0.0,
            mu_g: 0.0,
            l_f: 0.0,
            anchor: None,
            lambda: f64::INFINITY,
        }
    }

    /// `μ_g = μ_gQ·min(1, γ)`: a valid modulus of `γ·g_Q` for every `γ`.
    pub fn pq(penalty: PenaltyConfig) -> Self {
        let penalty = PenaltyConfig {
            kind: PenaltyKind::PiecewiseQuadratic,
            ..penalty
        };
        let mu_g = penalty.mu_gq() * penalty.gamma.min(1.0);
        RegimeSpec {
            kind: RegimeKind::Pq,
            penalty,
            mu_f: 0.0,
            mu_g,
            l_f: 0.0,
            anchor: None,
            lambda: f64::INFINITY,
        }
    }

    /// Weighted ℓ1 with `(1/2λ)‖W̃ − W̃_anchor‖²` added to `f`.
    pub fn anchored(penalty: PenaltyConfig, anchor: DVector<f64>, lambda: f64) -> Self {
        RegimeSpec {
            kind: RegimeKind::WeightedL1Anchored,
            penalty: PenaltyConfig {
                kind: PenaltyKind::WeightedL1,
                ..penalty
            },
            mu_f: 1.0 / lambda,
            mu_g: 0.0,
            l_f: 1.0 / lambda,
            anchor: Some(anchor),
            lambda,
        }
    }

    pub fn for_relaxation(relaxation: Relaxation, penalty: PenaltyConfig) -> Self {
        match relaxation {
            Relaxation::Pq => RegimeSpec::pq(penalty),
            _ => RegimeSpec::l1(penalty),
        }
    }

    fn validate(&self) -> Result<()> {
        self.penalty.validate()?;
        match self.kind {
            RegimeKind::WeightedL1Anchored => {
                if !(self.lambda > 0.0 && self.lambda.is_finite()) || self.anchor.is_none() {
                    return Err(SolverError::InvalidInput(
                        "anchored regime needs an anchor and lambda > 0".into(),
                    ));
                }
            }
            _ if self.mu_f != 0.0 => {
                return Err(SolverError::InvalidInput("mu_f must vanish without an anchor".into()));
            }
            _ => {}
        }
        if self.mu_g < 0.0 || (self.kind != RegimeKind::Pq && self.mu_g != 0.0) {
            return Err(SolverError::InvalidInput(
                "mu_g must be positive only for the piecewise-quadratic regime".into(),
            ));
        }
        Ok(())
    }

    /// `∇f(u) = vec R (+ (u − anchor)/λ)`.
    fn grad_f(&self, lifted: &LiftedProblem, u: &DVector<f64>) -> DVector<f64> {
        let mut g = lifted.vec_r();
        if let Some(anchor) = &self.anchor {
            g += (u - anchor) / self.lambda;
        }
        g
    }
}

#[derive(Debug, Clone)]
pub struct OuterOptions {
    pub eps1: f64,
    pub eps2: f64,
    pub max_outer: usize,
    pub beta0: f64,
    pub kappa0: f64,
    pub rho_scale: f64,
    pub inner_max_sweeps: usize,
    pub convention: SvecConvention,
}

impl Default for OuterOptions {
    fn default() -> Self {
        OuterOptions {
            eps1: 1e-5,
            eps2: 1e-4,
            max_outer: 50_000,
            beta0: 1.0,
            kappa0: 1.0,
            rho_scale: 1.0,
            inner_max_sweeps: 10_000,
            convention: SvecConvention::Isometric,
        }
    }
}

/// Iterate of the splitting scheme.
#[derive(Debug, Clone)]
pub struct OuterState {
    pub w_tilde: DVector<f64>,
    pub v: DVector<f64>,
    pub p_tilde: DVector<f64>,
    /// `P̃` of the previous iteration, for the dual residual.
    pub p_prev: DVector<f64>,
    pub w: DVector<f64>,
    pub lambda: DVector<f64>,
    pub lambda_bar: DVector<f64>,
    pub theta: f64,
    pub kappa: f64,
    pub beta: f64,
    pub alpha: f64,
    pub iter: usize,
    pub dual: Option<DualState>,
    /// Latest `‖𝒜W̃ + ℬP̃‖`, used for the inner tolerance.
    pub primal_res: f64,
}

impl OuterState {
    /// `W̃ = v = vec I`, `P̃ = w = λ = 0`, `θ = 1`.
    pub fn initial(lifted: &LiftedProblem, opts: &OuterOptions) -> Self {
        let p = lifted.p;
        let eye = DVector::from_column_slice(DMatrix::<f64>::identity(p, p).as_slice());
        let mn = lifted.m * lifted.n;
        let rows = lifted.op.n_rows();
        OuterState {
            w_tilde: eye.clone(),
            v: eye,
            p_tilde: DVector::zeros(mn),
            p_prev: DVector::zeros(mn),
            w: DVector::zeros(mn),
            lambda: DVector::zeros(rows),
            lambda_bar: DVector::zeros(rows),
            theta: 1.0,
            kappa: opts.kappa0,
            beta: opts.beta0,
            alpha: (opts.beta0).sqrt() / lifted.norm_b,
            iter: 0,
            dual: None,
            primal_res: 1.0,
        }
    }

    /// Start from `(W̃, P̃, λ)` of an earlier run with fresh scalar parameters.
    pub fn warm(
        lifted: &LiftedProblem,
        opts: &OuterOptions,
        w_tilde: DVector<f64>,
        p_tilde: DVector<f64>,
        lambda: DVector<f64>,
    ) -> Self {
        let mut s = OuterState::initial(lifted, opts);
        s.v = w_tilde.clone();
        s.w_tilde = w_tilde;
        s.w = p_tilde.clone();
        s.p_prev = p_tilde.clone();
        s.p_tilde = p_tilde;
        s.lambda_bar = lambda.clone();
        s.lambda = lambda;
        s
    }
}

/// Per-iteration quantities of the parameter system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepScalars {
    pub alpha: f64,
    pub eta_g: f64,
    pub eta_f: f64,
    pub tau: f64,
    pub theta_next: f64,
    pub kappa_next: f64,
    pub beta_next: f64,
}

/// `α = √(βθ)/‖ℬ‖`, `η_g = (α+1)β + μ_gα`, `η̃_f = κ + μ_fα`, `τ = α²/η_g`,
/// and the advanced `θ, κ, β`.
pub fn step_scalars(theta: f64, kappa: f64, beta: f64, norm_b: f64, mu_f: f64, mu_g: f64) -> StepScalars {
    let alpha = (beta * theta).sqrt() / norm_b;
    let eta_g = (alpha + 1.0) * beta + mu_g * alpha;
    let eta_f = kappa + mu_f * alpha;
    StepScalars {
        alpha,
        eta_g,
        eta_f,
        tau: alpha * alpha / eta_g,
        theta_next: theta / (1.0 + alpha),
        kappa_next: (kappa + mu_f * alpha) / (1.0 + alpha),
        beta_next: (beta + mu_g * alpha) / (1.0 + alpha),
    }
}

/// Scalars plus the vector auxiliaries `u`, `ỹ`, `ṽ`.
#[derive(Debug, Clone)]
pub struct Auxiliaries {
    pub scalars: StepScalars,
    pub u: DVector<f64>,
    pub y_tilde: DVector<f64>,
    pub v_tilde: DVector<f64>,
}

pub fn step_and_parameters(state: &OuterState, norm_b: f64, regime: &RegimeSpec) -> Auxiliaries {
    let sc = step_scalars(state.theta, state.kappa, state.beta, norm_b, regime.mu_f, regime.mu_g);
    let a = sc.alpha;
    let u = (&state.w_tilde + &state.v * a) / (1.0 + a);
    let y_tilde = &state.p_tilde + (&state.w - &state.p_tilde) * (a * state.beta / sc.eta_g);
    let v_tilde = (&state.v * state.kappa + &u * (regime.mu_f * a)) / sc.eta_f;
    Auxiliaries {
        scalars: sc,
        u,
        y_tilde,
        v_tilde,
    }
}

/// Outcome of the stopping test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decision {
    Continue,
    Stop { primal_res: f64, dual_res: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residuals {
    pub primal: f64,
    pub dual: f64,
    pub eps_pri: f64,
    pub eps_dua: f64,
}

impl Residuals {
    pub fn decision(&self) -> Decision {
        if self.primal <= self.eps_pri && self.dual <= self.eps_dua {
            Decision::Stop {
                primal_res: self.primal,
                dual_res: self.dual,
            }
        } else {
            Decision::Continue
        }
    }
}

/// `r = 𝒜W̃ + ℬP̃`, `s = ρ𝒜ᵀℬ(P̃ − P̃_prev)` and their thresholds.
pub fn residuals(state: &OuterState, lifted: &LiftedProblem, eps1: f64, eps2: f64, rho_scale: f64) -> Residuals {
    let op = &lifted.op;
    let aw = op.apply_a(&state.w_tilde);
    let bp = op.apply_b(&state.p_tilde);
    let r = &aw + &bp;
    let s = op.apply_a_transpose(&op.apply_b(&(&state.p_tilde - &state.p_prev))) * rho_scale;
    let mn = (lifted.m * lifted.n) as f64;
    let eps_pri = (lifted.n_vertices() as f64 + mn).sqrt() * eps1 + eps2 * aw.norm().max(bp.norm());
    let eps_dua = lifted.p as f64 * eps1 + eps2 * op.apply_a_transpose(&state.lambda).norm();
    Residuals {
        primal: r.norm(),
        dual: s.norm(),
        eps_pri,
        eps_dua,
    }
}

pub fn check_convergence(state: &OuterState, lifted: &LiftedProblem, eps1: f64, eps2: f64, rho_scale: f64) -> Decision {
    residuals(state, lifted, eps1, eps2, rho_scale).decision()
}

/// `ε_in = max(1e−8, min(1e−4, 0.1·r))`.
pub fn inner_tolerance(primal_res: f64) -> f64 {
    (0.1 * primal_res).clamp(1e-8, 1e-4)
}

/// Zero the forced entries of a gain-shaped vector.
fn apply_forced(lifted: &LiftedProblem, p: &mut DVector<f64>) {
    for &(i, j) in &lifted.forced_zeros {
        p[i + j * lifted.m] = 0.0;
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IterationReport {
    pub inner_sweeps: usize,
    pub inner_residual: f64,
    pub alpha: f64,
}

/// One pass of the scheme; mutates `state`.
pub fn outer_iteration(
    state: &mut OuterState,
    ctx: &InnerContext<'_>,
    regime: &RegimeSpec,
    opts: &OuterOptions,
) -> Result<IterationReport> {
    let lifted = ctx.lifted;
    let op = &lifted.op;
    let aux = step_and_parameters(state, lifted.norm_b, regime);
    let sc = aux.scalars;
    let a = sc.alpha;

    let d = regime.grad_f(lifted, &aux.u) + op.apply_a_transpose(&state.lambda);
    let input = SubproblemInput {
        d,
        w: state.w.clone(),
        v_tilde: aux.v_tilde,
        alpha: a,
        theta: state.theta,
        eta_f: sc.eta_f,
    };
    let inner_opts = InnerOptions {
        eps: inner_tolerance(state.primal_res),
        max_sweeps: opts.inner_max_sweeps,
    };
    let (v_next, sweeps, inner_res, dual) = match solve_inner(ctx, &input, &inner_opts, state.dual.take()) {
        Ok(out) => (out.vec_w, out.sweeps, out.residual, out.state),
        Err(SolverError::MaxSweepsExceeded(f)) => {
            warn!(
                "iteration {}: inner solve stopped at residual {:.3e}",
                state.iter, f.residual
            );
            (f.vec_w, f.sweeps, f.residual, f.state)
        }
        Err(e) => return Err(e),
    };
    state.dual = Some(dual);

    state.w_tilde = (&state.w_tilde + &v_next * a) / (1.0 + a);
    let coupling = op.apply_a(&v_next);
    state.lambda_bar = &state.lambda + (&coupling + op.apply_b(&state.w)) * (a / state.theta);

    let z = &aux.y_tilde - op.apply_b_transpose(&state.lambda_bar) * sc.tau;
    let zm = lifted.unvec_gain(&z);
    let p_mat = regime.penalty.prox(&zm, 1.0 / sc.tau)?;
    let mut p_next = DVector::from_column_slice(p_mat.as_slice());
    apply_forced(lifted, &mut p_next);

    state.w = &p_next + (&p_next - &state.p_tilde) / a;
    state.lambda = &state.lambda + (&coupling + op.apply_b(&state.w)) * (a / state.theta);
    state.p_prev = std::mem::replace(&mut state.p_tilde, p_next);
    state.v = v_next;
    state.alpha = a;
    state.theta = sc.theta_next;
    state.kappa = sc.kappa_next;
    state.beta = sc.beta_next;
    state.iter += 1;
    Ok(IterationReport {
        inner_sweeps: sweeps,
        inner_residual: inner_res,
        alpha: a,
    })
}

/// One line of the convergence trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub theta: f64,
    pub alpha: f64,
    pub primal_res: f64,
    pub dual_res: f64,
    pub objective: f64,
    pub inner_sweeps: usize,
    pub wall_ms: f64,
}

/// Final iterate and bookkeeping of a relaxed solve.
#[derive(Debug, Clone)]
pub struct RelaxedRun {
    pub state: OuterState,
    pub trace: Vec<TraceRow>,
    pub stopped: bool,
    pub residuals: Residuals,
    pub inner_sweeps: usize,
}

/// Iterate until the stopping rule fires or `max_outer` is reached.
pub fn run_relaxed(
    lifted: &LiftedProblem,
    regime: &RegimeSpec,
    opts: &OuterOptions,
    init: Option<OuterState>,
) -> Result<RelaxedRun> {
    regime.validate()?;
    if !(opts.eps1 > 0.0 && opts.eps2 > 0.0) {
        return Err(SolverError::InvalidInput("eps1 and eps2 must be positive".into()));
    }
    if !(opts.beta0 > 0.0 && opts.kappa0 > 0.0 && opts.rho_scale > 0.0) {
        return Err(SolverError::InvalidInput(
            "beta0, kappa0 and rho_scale must be positive".into(),
        ));
    }
    if regime.penalty.weights.shape() != (lifted.m, lifted.n) {
        return Err(SolverError::DimensionMismatch("penalty weights must be m×n".into()));
    }
    let mut regime = regime.clone();
    if regime.penalty.gamma == 0.0 {
        regime.penalty.gamma = 1e-8;
    }
    let ctx = InnerContext::new(lifted, opts.convention);
    let cold = init.is_none();
    let mut state = init.unwrap_or_else(|| OuterState::initial(lifted, opts));
    let mut trace = Vec::new();
    let start = Instant::now();
    let mut total_sweeps = 0;
    let mut res = residuals(&state, lifted, opts.eps1, opts.eps2, opts.rho_scale);
    let mut stopped = false;
    for _ in 0..opts.max_outer {
        let theta = state.theta;
        let rep = outer_iteration(&mut state, &ctx, &regime, opts)?;
        if cold && state.iter == 1 {
            // W̃₀ = I lies outside the cone for unstable plants and keeps weight
            // θ_k in the running average; restart the average at the first v.
            state.w_tilde = state.v.clone();
        }
        total_sweeps += rep.inner_sweeps;
        res = residuals(&state, lifted, opts.eps1, opts.eps2, opts.rho_scale);
        state.primal_res = res.primal;
        let w = lifted.unvec(&state.w_tilde);
        let p = lifted.unvec_gain(&state.p_tilde);
        let objective = lifted.cost(&w) + penalty_value(&p, &regime.penalty);
        trace.push(TraceRow {
            iter: state.iter,
            theta,
            alpha: rep.alpha,
            primal_res: res.primal,
            dual_res: res.dual,
            objective,
            inner_sweeps: rep.inner_sweeps,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        if state.iter.is_multiple_of(1000) {
            debug!(
                "iter {} r={:.3e} s={:.3e} obj={:.6} sweeps={}",
                state.iter, res.primal, res.dual, objective, rep.inner_sweeps
            );
        }
        if let Decision::Stop { .. } = res.decision() {
            stopped = true;
            break;
        }
    }
    info!(
        "{} after {} iterations (r={:.3e}, s={:.3e}, {} inner sweeps)",
        if stopped { "stopped" } else { "iteration cap reached" },
        state.iter,
        res.primal,
        res.dual,
        total_sweeps
    );
    Ok(RelaxedRun {
        state,
        trace,
        stopped,
        residuals: res,
        inner_sweeps: total_sweeps,
    })
}

/// Solve the ℓ1 or piecewise-quadratic problem and certify the result.
///
/// Returns `NotConverged` with the last iterate when `max_outer` is reached.
pub fn solve_relaxed(lifted: &LiftedProblem, regime: &RegimeSpec, opts: &OuterOptions) -> Result<Solution> {
    let run = run_relaxed(lifted, regime, opts, None)?;
    finish(lifted, regime, run)
}

pub(crate) fn finish(lifted: &LiftedProblem, regime: &RegimeSpec, run: RelaxedRun) -> Result<Solution> {
    let sol = build_solution(lifted, &regime.penalty, &run)?;
    if sol.status == Status::NotConverged {
        return Err(SolverError::NotConverged(Box::new(sol)));
    }
    Ok(sol)
}
