//! The `v`-subproblem of the outer scheme,
//!
//! ```text
//! min ⟨d, vec W⟩ + σ₁‖𝒜 vec W + ℬw‖² + σ₂‖vec W − ṽ‖²
//! s.t. W ⪰ 0,  Ψ_i(W) ⪰ 0  (i = 1..M)
//! ```
//!
//! solved through its explicit dual by symmetric Gauss-Seidel proximal
//! coordinate descent. With `x = svec(W)` and `vec W = Dx` the Lagrangian is
//! minimized at `x = M⁻¹(q − ℒ(X))` where
//! `M = 2σ₁(𝒜D)ᵀ(𝒜D) + 2σ₂DᵀD`, `q = −2σ₁(𝒜D)ᵀℬw + 2σ₂Dᵀṽ`,
//! `ℒ(X) = Dᵀd − X₀ + Σ G_iᵀX_i` and `svec Ψ_i = −G_i x − c`.
//! The dual objective to minimize is
//! `Θ̂(X) = −ℒᵀΨℒ − ⟨ℒ, Ω⟩ − Σ⟨X_i, c⟩` with `Ψ = −½M⁻¹`, `Ω = M⁻¹q`.

use nalgebra::{DMatrix, DVector};

use crate::cones::{max_eigenvalue, project_psd, sym_eigen, SpdFactor};
use crate::error::{InnerFailure, Result, SolverError};
use crate::model::LiftedProblem;
use crate::vectorize::{SvecConvention, SvecMaps};

/// Tolerance on the smallest eigenvalue of `−Ψ`.
pub const PSI_TOL: f64 = 1e-6;

/// Operators that depend only on the lifted problem and the svec convention.
#[derive(Debug, Clone)]
pub struct InnerContext<'a> {
    pub lifted: &'a LiftedProblem,
    pub conv: SvecConvention,
    /// Duplication map for order `p`, `p² × s`.
    pub dup: DMatrix<f64>,
    /// `DᵀD` (identity in the isometric convention).
    pub dtd: DMatrix<f64>,
    /// `𝒜D`.
    pub ad: DMatrix<f64>,
    /// `(𝒜D)ᵀ(𝒜D)`.
    pub adt_ad: DMatrix<f64>,
    /// `G_i`, one per vertex, `n(n+1)/2 × s`.
    pub g_list: Vec<DMatrix<f64>>,
    /// `svec(B₁B₁ᵀ)`.
    pub c: DVector<f64>,
}

impl<'a> InnerContext<'a> {
    pub fn new(lifted: &'a LiftedProblem, conv: SvecConvention) -> Self {
        let maps_p = &lifted.maps_p;
        let maps_n = &lifted.maps_n;
        let dup = maps_p.duplication_matrix(conv);
        let dtd = dup.transpose() * &dup;
        let ad = lifted.op.a_times_duplication(maps_p, conv);
        let adt_ad = ad.transpose() * &ad;
        let s = maps_p.len();
        let v2 = &lifted.v2;
        let g_list = lifted
            .f_list
            .iter()
            .map(|f| {
                let mut g = DMatrix::zeros(maps_n.len(), s);
                for k in 0..s {
                    let mut e = DVector::zeros(s);
                    e[k] = 1.0;
                    let ek = maps_p.unsvec(&e, conv);
                    let img = v2 * (f * &ek + &ek * f.transpose()) * v2.transpose();
                    g.set_column(k, &maps_n.svec(&img, conv));
                }
                g
            })
            .collect();
        let c = maps_n.svec(&lifted.plant.b1b1t, conv);
        InnerContext {
            lifted,
            conv,
            dup,
            dtd,
            ad,
            adt_ad,
            g_list,
            c,
        }
    }

    pub fn svec_len(&self) -> usize {
        self.lifted.maps_p.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.g_list.len()
    }

    fn maps(&self, block: usize) -> &SvecMaps {
        if block == 0 {
            &self.lifted.maps_p
        } else {
            &self.lifted.maps_n
        }
    }

    /// `Π` onto the PSD cone in svec coordinates of block `block`.
    pub fn project_block(&self, block: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        let maps = self.maps(block);
        let s = maps.unsvec(x, self.conv);
        Ok(maps.svec(&project_psd(&s)?, self.conv))
    }

    /// `svec Ψ_i` evaluated at `x = svec W`.
    pub fn psi_svec(&self, vertex: usize, x: &DVector<f64>) -> DVector<f64> {
        -(&self.g_list[vertex] * x) - &self.c
    }
}

/// Data of one subproblem instance, as produced by the outer iteration.
#[derive(Debug, Clone)]
pub struct SubproblemInput {
    /// Linear term `d_k ∈ ℝ^{p²}`.
    pub d: DVector<f64>,
    /// Extrapolated gain variable `w_k ∈ ℝ^{mn}`.
    pub w: DVector<f64>,
    /// Proximal center `ṽ_k ∈ ℝ^{p²}`.
    pub v_tilde: DVector<f64>,
    pub alpha: f64,
    pub theta: f64,
    pub eta_f: f64,
}

/// `M = 2σ₁(𝒜D)ᵀ(𝒜D) + 2σ₂DᵀD`.
pub fn m_matrix(adt_ad: &DMatrix<f64>, dtd: &DMatrix<f64>, sigma1: f64, sigma2: f64) -> DMatrix<f64> {
    adt_ad * (2.0 * sigma1) + dtd * (2.0 * sigma2)
}

/// Quadratic data of the dual for one subproblem.
#[derive(Debug, Clone)]
pub struct DualData<'a> {
    pub ctx: &'a InnerContext<'a>,
    pub sigma1: f64,
    pub sigma2: f64,
    pub m_mat: DMatrix<f64>,
    pub m_factor: SpdFactor,
    pub m_inv: DMatrix<f64>,
    pub q: DVector<f64>,
    /// `ℬw_k`.
    pub b_tilde: DVector<f64>,
    /// `Dᵀd_k`.
    pub dd: DVector<f64>,
    pub v_tilde: DVector<f64>,
    /// `Ψ = −½M⁻¹`.
    pub psi: DMatrix<f64>,
    /// `Ω = M⁻¹q`.
    pub omega: DVector<f64>,
    /// Block Hessians `L₀ = −2Ψ`, `L_i = 2G_i(−Ψ)G_iᵀ`.
    pub l_ops: Vec<DMatrix<f64>>,
    /// `ρ_i = λ_max(L_i)`.
    pub rho: Vec<f64>,
    /// `σ₁‖b̃‖² + σ₂‖ṽ‖² − ½qᵀM⁻¹q`, the offset between `θ` and `−Θ̂`.
    offset: f64,
}

pub fn assemble_dual_data<'a>(ctx: &'a InnerContext<'a>, input: &SubproblemInput) -> Result<DualData<'a>> {
    let SubproblemInput {
        alpha, theta, eta_f, ..
    } = *input;
    if !(alpha > 0.0 && theta > 0.0 && eta_f > 0.0) {
        return Err(SolverError::InvalidInput(format!(
            "subproblem needs positive alpha, theta, eta_f (got {alpha}, {theta}, {eta_f})"
        )));
    }
    let sigma1 = alpha / (2.0 * theta);
    let sigma2 = eta_f / (2.0 * alpha);
    let m_mat = m_matrix(&ctx.adt_ad, &ctx.dtd, sigma1, sigma2);
    let m_factor = SpdFactor::new(&m_mat)?;
    let m_inv = m_factor.inverse();

    let b_tilde = ctx.lifted.op.apply_b(&input.w);
    let q = ctx.ad.tr_mul(&b_tilde) * (-2.0 * sigma1) + ctx.dup.tr_mul(&input.v_tilde) * (2.0 * sigma2);
    let dd = ctx.dup.tr_mul(&input.d);
    let omega = &m_inv * &q;
    let psi = &m_inv * -0.5;

    let eig = sym_eigen(&m_inv)?;
    let min_neg_psi = 0.5 * eig.eigenvalues.min();
    if min_neg_psi < -PSI_TOL {
        return Err(SolverError::PsiNotNegativeSemidefinite(min_neg_psi));
    }
    let mut l_ops = Vec::with_capacity(ctx.n_vertices() + 1);
    let mut rho = Vec::with_capacity(ctx.n_vertices() + 1);
    l_ops.push(m_inv.clone());
    rho.push(eig.eigenvalues.max());
    for g in &ctx.g_list {
        let li = g * &m_inv * g.transpose();
        let li = (&li + li.transpose()) * 0.5;
        rho.push(max_eigenvalue(&li)?);
        l_ops.push(li);
    }
    let offset = sigma1 * b_tilde.norm_squared() + sigma2 * input.v_tilde.norm_squared() - 0.5 * q.dot(&omega);
    Ok(DualData {
        ctx,
        sigma1,
        sigma2,
        m_mat,
        m_factor,
        m_inv,
        q,
        b_tilde,
        dd,
        v_tilde: input.v_tilde.clone(),
        psi,
        omega,
        l_ops,
        rho,
        offset,
    })
}

/// Multipliers `(X₀, X₁, …, X_M)` in svec coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    pub blocks: Vec<DVector<f64>>,
}

impl DualState {
    pub fn zeros(ctx: &InnerContext<'_>) -> Self {
        let mut blocks = vec![DVector::zeros(ctx.svec_len())];
        for _ in 0..ctx.n_vertices() {
            blocks.push(DVector::zeros(ctx.lifted.maps_n.len()));
        }
        DualState { blocks }
    }

    pub fn scaled(&self, k: f64) -> Self {
        DualState {
            blocks: self.blocks.iter().map(|b| b * k).collect(),
        }
    }
}

impl DualData<'_> {
    /// `ℒ(X) = Dᵀd − X₀ + Σ G_iᵀX_i`.
    pub fn lagrangian_map(&self, state: &DualState) -> DVector<f64> {
        let mut l = &self.dd - &state.blocks[0];
        for (g, x) in self.ctx.g_list.iter().zip(&state.blocks[1..]) {
            l.gemv_tr(1.0, g, x, 1.0);
        }
        l
    }

    /// `z = M⁻¹(ℒ − q)`; the Lagrangian minimizer is `−z`.
    fn z_of(&self, l: &DVector<f64>) -> DVector<f64> {
        &self.m_inv * l - &self.omega
    }

    fn block_gradient(&self, block: usize, z: &DVector<f64>) -> DVector<f64> {
        if block == 0 {
            -z
        } else {
            &self.ctx.g_list[block - 1] * z - &self.ctx.c
        }
    }

    /// `∇_i Θ̂` for every block.
    pub fn gradient(&self, state: &DualState) -> Vec<DVector<f64>> {
        let z = self.z_of(&self.lagrangian_map(state));
        (0..state.blocks.len()).map(|b| self.block_gradient(b, &z)).collect()
    }

    /// `Θ̂(X)`, the dual objective minimized by the sweeps.
    pub fn dual_objective(&self, state: &DualState) -> f64 {
        let l = self.lagrangian_map(state);
        let lin: f64 = state.blocks[1..].iter().map(|x| x.dot(&self.ctx.c)).sum();
        0.5 * l.dot(&(&self.m_inv * &l)) - l.dot(&self.omega) - lin
    }

    /// Lagrange dual function `θ(X) = −Θ̂(X) + const`; a lower bound on the
    /// subproblem optimum for every PSD `X`.
    pub fn dual_value(&self, state: &DualState) -> f64 {
        -self.dual_objective(state) + self.offset
    }

    /// Subproblem objective at `x = svec W` (cone constraints not included).
    pub fn primal_objective(&self, x: &DVector<f64>) -> f64 {
        let ctx = self.ctx;
        let vec_w = &ctx.dup * x;
        let aff = &ctx.ad * x + &self.b_tilde;
        self.dd.dot(x) + self.sigma1 * aff.norm_squared() + self.sigma2 * (vec_w - &self.v_tilde).norm_squared()
    }

    /// Most negative eigenvalue among `W` and the `Ψ_i` (0 if feasible).
    pub fn cone_violation(&self, x: &DVector<f64>) -> Result<f64> {
        let ctx = self.ctx;
        let w = ctx.lifted.maps_p.unsvec(x, ctx.conv);
        let mut worst = crate::cones::min_eigenvalue(&w)?;
        for i in 0..ctx.n_vertices() {
            let psi = ctx.lifted.maps_n.unsvec(&ctx.psi_svec(i, x), ctx.conv);
            worst = worst.min(crate::cones::min_eigenvalue(&psi)?);
        }
        Ok((-worst).max(0.0))
    }
}

fn update_block(data: &DualData<'_>, state: &mut DualState, l: &mut DVector<f64>, block: usize) -> Result<()> {
    let z = data.z_of(l);
    let grad = data.block_gradient(block, &z);
    let trial = &state.blocks[block] - grad / data.rho[block];
    let new = data.ctx.project_block(block, &trial)?;
    let delta = &new - &state.blocks[block];
    if block == 0 {
        *l -= &delta;
    } else {
        l.gemv_tr(1.0, &data.ctx.g_list[block - 1], &delta, 1.0);
    }
    state.blocks[block] = new;
    Ok(())
}

/// One symmetric Gauss-Seidel pass: `X_M … X_1`, then `X_0`, then `X_1 … X_M`,
/// each a projected step with the block's Lipschitz constant.
pub fn sgs_sweep(state: &DualState, data: &DualData<'_>) -> Result<DualState> {
    let mut next = state.clone();
    let mut l = data.lagrangian_map(&next);
    let nv = data.ctx.n_vertices();
    for b in (1..=nv).rev() {
        update_block(data, &mut next, &mut l, b)?;
    }
    update_block(data, &mut next, &mut l, 0)?;
    for b in 1..=nv {
        update_block(data, &mut next, &mut l, b)?;
    }
    Ok(next)
}

/// `max_i ‖X_i − Π(X_i − ∇_i)‖ / (1 + ‖X_i‖ + ‖∇_i‖)`.
pub fn dual_residual(state: &DualState, data: &DualData<'_>) -> Result<f64> {
    let grads = data.gradient(state);
    let mut err: f64 = 0.0;
    for (b, (x, g)) in state.blocks.iter().zip(&grads).enumerate() {
        let p = data.ctx.project_block(b, &(x - g))?;
        let e = (x - p).norm() / (1.0 + x.norm() + g.norm());
        if !e.is_finite() {
            return Ok(f64::INFINITY);
        }
        err = err.max(e);
    }
    Ok(err)
}

/// `svec W = M⁻¹(q − ℒ(X))`.
pub fn recover_primal(data: &DualData<'_>, state: &DualState) -> DVector<f64> {
    let l = data.lagrangian_map(state);
    -data.z_of(&l)
}

#[derive(Debug, Clone, Copy)]
pub struct InnerOptions {
    pub eps: f64,
    pub max_sweeps: usize,
}

impl Default for InnerOptions {
    fn default() -> Self {
        InnerOptions {
            eps: 1e-4,
            max_sweeps: 10_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct InnerOutcome {
    /// `vec W = D·svec W`.
    pub vec_w: DVector<f64>,
    pub svec_w: DVector<f64>,
    pub sweeps: usize,
    pub residual: f64,
    pub state: DualState,
}

/// Sweep until the relative residual drops below `eps`.
pub fn solve_inner(
    ctx: &InnerContext<'_>,
    input: &SubproblemInput,
    opts: &InnerOptions,
    warm_start: Option<DualState>,
) -> Result<InnerOutcome> {
    let data = assemble_dual_data(ctx, input)?;
    solve_with_data(&data, opts, warm_start)
}

pub fn solve_with_data(
    data: &DualData<'_>,
    opts: &InnerOptions,
    warm_start: Option<DualState>,
) -> Result<InnerOutcome> {
    if opts.eps.is_nan() || opts.eps <= 0.0 {
        return Err(SolverError::InvalidInput("inner tolerance must be positive".into()));
    }
    let mut state = warm_start.unwrap_or_else(|| DualState::zeros(data.ctx));
    let mut residual = f64::INFINITY;
    let mut sweeps = 0;
    while sweeps < opts.max_sweeps.max(1) {
        state = sgs_sweep(&state, data)?;
        sweeps += 1;
        residual = dual_residual(&state, data)?;
        if residual.is_infinite() {
            return Err(SolverError::InnerDiverged(sweeps));
        }
        if residual < opts.eps {
            break;
        }
    }
    // A blown-up state can look stationary once x − ∇ rounds to x.
    if !data.dual_objective(&state).is_finite() {
        return Err(SolverError::InnerDiverged(sweeps));
    }
    let svec_w = recover_primal(data, &state);
    let vec_w = &data.ctx.dup * &svec_w;
    if residual >= opts.eps {
        return Err(SolverError::MaxSweepsExceeded(Box::new(InnerFailure {
            vec_w,
            residual,
            sweeps,
            state,
        })));
    }
    Ok(InnerOutcome {
        vec_w,
        svec_w,
        sweeps,
        residual,
        state,
    })
}
