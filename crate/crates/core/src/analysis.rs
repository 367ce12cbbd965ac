//! Gain recovery and closed-loop certification.
//!
//! Gains follow the `u = −Kx` convention: the closed loop of vertex `i` is
//! `A_i − B₂,iK` and `K = −W₂ᵀW₁⁻¹`.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::cones::min_eigenvalue;
use crate::error::{Result, SolverError};
use crate::model::{LiftedProblem, PlantData};
use crate::outer::{RelaxedRun, TraceRow};
use crate::penalties::{penalty_value, PenaltyConfig};

/// Default relative threshold below which a gain entry counts as zero.
pub const SPARSITY_TOL: f64 = 1e-6;
/// Slack allowed in `⟨R, W⟩ ≥ J_i`.
pub const BOUND_SLACK: f64 = 1e-4;
/// Largest state dimension handled by the dense Lyapunov solve.
pub const LYAP_MAX_ORDER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    /// Stopping rule met and the closed-loop certificate holds.
    Converged,
    /// Iteration cap reached first.
    NotConverged,
    /// Stopping rule met but stability or the cost bound failed.
    CertificationFailed,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Converged => "converged",
            Status::NotConverged => "not_converged",
            Status::CertificationFailed => "certification_failed",
        }
    }
}

impl std::str::FromStr for Status {
    type Err = SolverError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "converged" => Ok(Status::Converged),
            "not_converged" => Ok(Status::NotConverged),
            "certification_failed" => Ok(Status::CertificationFailed),
            other => Err(SolverError::InvalidInput(format!("unknown status {other:?}"))),
        }
    }
}

/// Residuals of the convex constraints at a given `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct Feasibility {
    pub min_eig_w: f64,
    pub min_eig_psi: Vec<f64>,
    /// Largest `|W₁[a, b]|`, `a ≠ b`.
    pub offdiag_w1: f64,
    /// `‖V₁WV₂ᵀ − P‖_∞`.
    pub gain_mismatch: f64,
}

impl Feasibility {
    pub fn worst(&self) -> f64 {
        let cone = self.min_eig_psi.iter().fold(self.min_eig_w, |a, &b| a.min(b));
        (-cone).max(self.offdiag_w1).max(self.gain_mismatch).max(0.0)
    }
}

pub fn feasibility(lifted: &LiftedProblem, w: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<Feasibility> {
    let n = lifted.n;
    let mut off: f64 = 0.0;
    for a in 0..n {
        for b in 0..n {
            if a != b {
                off = off.max(w[(a, b)].abs());
            }
        }
    }
    let psi = (0..lifted.n_vertices())
        .map(|i| min_eigenvalue(&lifted.psi(w, i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Feasibility {
        min_eig_w: min_eigenvalue(w)?,
        min_eig_psi: psi,
        offdiag_w1: off,
        gain_mismatch: (lifted.gain_block(w) - p).amax(),
    })
}

/// Closed-loop evidence for a gain.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    /// Spectral abscissa of `A_i − B₂,iK` per vertex.
    pub margins: Vec<f64>,
    /// H₂ cost per vertex (`+∞` when unstable).
    pub j_vertex: Vec<f64>,
    pub j_upper: f64,
}

impl Certificate {
    pub fn stable(&self) -> bool {
        self.margins.iter().all(|m| *m < 0.0)
    }

    pub fn j_vertex_max(&self) -> f64 {
        self.j_vertex.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn bound_holds(&self) -> bool {
        self.j_upper >= self.j_vertex_max() - BOUND_SLACK
    }

    pub fn passed(&self) -> bool {
        self.stable() && self.bound_holds()
    }
}

pub fn certify(plant: &PlantData, k: &DMatrix<f64>, j_upper: f64) -> Result<Certificate> {
    let mut margins = Vec::with_capacity(plant.vertices.len());
    let mut j_vertex = Vec::with_capacity(plant.vertices.len());
    for (a, b2) in &plant.vertices {
        let m = stability_check(a, b2, k)?;
        margins.push(m);
        j_vertex.push(if m < 0.0 {
            vertex_cost(plant, a, b2, k)?
        } else {
            f64::INFINITY
        });
    }
    Ok(Certificate {
        margins,
        j_vertex,
        j_upper,
    })
}

/// Result of a relaxed or ℓ0 solve.
#[derive(Debug, Clone)]
pub struct Solution {
    /// `unvec(W̃)`.
    pub w: DMatrix<f64>,
    /// Prox variable; carries the exact zeros.
    pub p: DMatrix<f64>,
    pub k: DMatrix<f64>,
    /// `⟨R, W⟩`.
    pub j_upper: f64,
    pub j_vertex: Vec<f64>,
    pub margins: Vec<f64>,
    /// `true` where `K` is structurally nonzero.
    pub pattern: DMatrix<bool>,
    pub n_zeros: usize,
    pub feasibility: Feasibility,
    pub trace: Vec<TraceRow>,
    pub status: Status,
    pub iterations: usize,
    pub inner_sweeps: usize,
    pub primal_res: f64,
    pub dual_res: f64,
    pub eps_pri: f64,
    pub eps_dua: f64,
    pub gamma: f64,
    pub penalty: f64,
}

impl Solution {
    pub fn j_vertex_max(&self) -> f64 {
        self.j_vertex.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn certificate(&self) -> Certificate {
        Certificate {
            margins: self.margins.clone(),
            j_vertex: self.j_vertex.clone(),
            j_upper: self.j_upper,
        }
    }
}

/// `W` with `W₁` off-diagonals cleared and the gain block replaced by `P`.
pub fn polish(lifted: &LiftedProblem, w: &DMatrix<f64>, p: &DMatrix<f64>) -> DMatrix<f64> {
    let n = lifted.n;
    let m = lifted.m;
    let mut out = w.clone();
    for a in 0..n {
        for b in 0..n {
            if a != b {
                out[(a, b)] = 0.0;
            }
        }
    }
    out.view_mut((n, 0), (m, n)).copy_from(p);
    out.view_mut((0, n), (n, m)).copy_from(&p.transpose());
    out
}

pub(crate) fn build_solution(lifted: &LiftedProblem, penalty: &PenaltyConfig, run: &RelaxedRun) -> Result<Solution> {
    let raw = lifted.unvec(&run.state.w_tilde);
    let w = (&raw + raw.transpose()) * 0.5;
    let p = lifted.unvec_gain(&run.state.p_tilde);
    solution_from_parts(lifted, penalty, w, p, run)
}

pub(crate) fn solution_from_parts(
    lifted: &LiftedProblem,
    penalty: &PenaltyConfig,
    w: DMatrix<f64>,
    p: DMatrix<f64>,
    run: &RelaxedRun,
) -> Result<Solution> {
    let k = recover_gain(&polish(lifted, &w, &p), lifted.n)?;
    let j_upper = lifted.cost(&w);
    let cert = certify(lifted.plant.plant(), &k, j_upper)?;
    let (pattern, n_zeros) = sparsity_report(&k, SPARSITY_TOL);
    let status = if !run.stopped {
        Status::NotConverged
    } else if cert.passed() {
        Status::Converged
    } else {
        Status::CertificationFailed
    };
    Ok(Solution {
        feasibility: feasibility(lifted, &w, &p)?,
        penalty: penalty_value(&p, penalty),
        w,
        p,
        k,
        j_upper,
        j_vertex: cert.j_vertex,
        margins: cert.margins,
        pattern,
        n_zeros,
        trace: run.trace.clone(),
        status,
        iterations: run.state.iter,
        inner_sweeps: run.inner_sweeps,
        primal_res: run.residuals.primal,
        dual_res: run.residuals.dual,
        eps_pri: run.residuals.eps_pri,
        eps_dua: run.residuals.eps_dua,
        gamma: penalty.gamma,
    })
}

/// `K = −W₂ᵀW₁⁻¹`, inverting only `diag(W₁)` once its off-diagonals are
/// below `1e−4`.
pub fn recover_gain(w: &DMatrix<f64>, n: usize) -> Result<DMatrix<f64>> {
    let p = w.nrows();
    if !w.is_square() || n == 0 || n >= p {
        return Err(SolverError::DimensionMismatch(format!(
            "cannot split a {p}×{p} matrix at n = {n}"
        )));
    }
    let m = p - n;
    let w1 = w.view((0, 0), (n, n)).into_owned();
    let w2t = w.view((n, 0), (m, n)).into_owned();
    let scale = w1.amax().max(f64::MIN_POSITIVE);
    let mut off: f64 = 0.0;
    for a in 0..n {
        for b in 0..n {
            if a != b {
                off = off.max(w1[(a, b)].abs());
            }
        }
    }
    if off <= 1e-4 {
        let d = w1.diagonal();
        if d.iter().any(|x| x.abs() <= 1e-14 * scale) {
            return Err(SolverError::SingularW1);
        }
        Ok(DMatrix::from_fn(m, n, |i, j| -w2t[(i, j)] / d[j]))
    } else {
        warn!("W1 off-diagonal entries reach {off:.3e}; using the full inverse");
        let inv = w1.try_inverse().ok_or(SolverError::SingularW1)?;
        Ok(-(w2t * inv))
    }
}

/// Largest real part of the eigenvalues.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> Result<f64> {
    if !a.is_square() {
        return Err(SolverError::DimensionMismatch(
            "spectral abscissa of a non-square matrix".into(),
        ));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::EigFailure);
    }
    Ok(a.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Spectral abscissa of `A − B₂K`.
pub fn stability_check(a: &DMatrix<f64>, b2: &DMatrix<f64>, k: &DMatrix<f64>) -> Result<f64> {
    if b2.nrows() != a.nrows() || k.shape() != (b2.ncols(), a.ncols()) {
        return Err(SolverError::DimensionMismatch("A, B2 and K are inconsistent".into()));
    }
    spectral_abscissa(&(a - b2 * k))
}

/// Solve `A W + W Aᵀ + Q = 0` for Hurwitz `A`.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if n > LYAP_MAX_ORDER {
        return Err(SolverError::TooLarge(n));
    }
    if q.shape() != (n, n) {
        return Err(SolverError::DimensionMismatch("Lyapunov right-hand side".into()));
    }
    let abscissa = spectral_abscissa(a)?;
    if abscissa >= 0.0 {
        return Err(SolverError::NotHurwitz(abscissa));
    }
    let eye = DMatrix::<f64>::identity(n, n);
    let big = eye.kronecker(a) + a.kronecker(&eye);
    let rhs = -DVector::from_column_slice(q.as_slice());
    let sol = big.lu().solve(&rhs).ok_or(SolverError::NotHurwitz(abscissa))?;
    let w = DMatrix::from_column_slice(n, n, sol.as_slice());
    Ok((&w + w.transpose()) * 0.5)
}

fn vertex_cost(plant: &PlantData, a: &DMatrix<f64>, b2: &DMatrix<f64>, k: &DMatrix<f64>) -> Result<f64> {
    let acl = a - b2 * k;
    let wc = solve_lyapunov(&acl, &(&plant.b1 * plant.b1.transpose()))?;
    let ccl = &plant.c - &plant.d * k;
    Ok((&ccl * wc * ccl.transpose()).trace())
}

/// `J(K) = Tr((C − DK)W_c(C − DK)ᵀ)` for the nominal `(A, B₂)`.
pub fn h2_cost(plant: &PlantData, k: &DMatrix<f64>) -> Result<f64> {
    vertex_cost(plant, &plant.a, &plant.b2, k)
}

/// `J(K)` at every vertex.
pub fn h2_cost_vertices(plant: &PlantData, k: &DMatrix<f64>) -> Result<Vec<f64>> {
    plant
        .vertices
        .iter()
        .map(|(a, b2)| vertex_cost(plant, a, b2, k))
        .collect()
}

/// Zero iff `|x| ≤ tol·max(1, max|x|)`. Returns the nonzero mask and the zero count.
pub fn sparsity_report(k: &DMatrix<f64>, tol: f64) -> (DMatrix<bool>, usize) {
    let thr = tol * k.amax().max(1.0);
    let pattern = k.map(|x| x.abs() > thr);
    let zeros = pattern.iter().filter(|b| !**b).count();
    (pattern, zeros)
}

#[derive(Debug, Clone)]
pub struct RiccatiResult {
    pub k: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub j: f64,
    /// `Tr(P_j B₁B₁ᵀ)` of every Newton iterate.
    pub costs: Vec<f64>,
}

pub const KLEINMAN_MAX_ITER: usize = 50;

/// Kleinman-Newton iteration for the LQR Riccati equation with
/// `Q_x = CᵀC`, `R_u = DᵀD`, started from a stabilizing `K₀`.
pub fn riccati_oracle(plant: &PlantData, k0: &DMatrix<f64>) -> Result<RiccatiResult> {
    if plant.vertices.len() != 1 {
        return Err(SolverError::InvalidInput(
            "the Riccati oracle needs a single-vertex plant".into(),
        ));
    }
    let qx = plant.c.transpose() * &plant.c;
    if qx.amax() == 0.0 {
        return Err(SolverError::InvalidInput(
            "CᵀC vanishes; the LQR cost is degenerate".into(),
        ));
    }
    let ru = plant.d.transpose() * &plant.d;
    let ru_inv = ru.clone().try_inverse().ok_or(SolverError::NotPositiveDefinite)?;
    let b1b1t = &plant.b1 * plant.b1.transpose();
    let a = &plant.a;
    let b2 = &plant.b2;
    if stability_check(a, b2, k0)? >= 0.0 {
        return Err(SolverError::K0NotStabilizing);
    }
    let mut k = k0.clone();
    let mut costs = Vec::new();
    for _ in 0..KLEINMAN_MAX_ITER {
        let acl = a - b2 * &k;
        let rhs = &qx + k.transpose() * &ru * &k;
        let p = solve_lyapunov(&acl.transpose(), &rhs)?;
        let k_next = &ru_inv * b2.transpose() * &p;
        costs.push((&p * &b1b1t).trace());
        let step = (&k_next - &k).amax();
        k = k_next;
        if step <= 1e-13 * (1.0 + k.amax()) {
            let j = (&p * &b1b1t).trace();
            return Ok(RiccatiResult { k, p, j, costs });
        }
    }
    Err(SolverError::NoConvergence(KLEINMAN_MAX_ITER))
}

/// State trajectories of `ẋ = (A − B₂K)x` from `x(0) = B₁e_j`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// `states[j][t]` for disturbance channel `j`.
    pub states: Vec<Vec<DVector<f64>>>,
}

pub fn simulate_impulse(plant: &PlantData, k: &DMatrix<f64>, horizon: f64, dt: f64) -> Result<Trajectory> {
    if !(dt > 0.0 && horizon >= 0.0) {
        return Err(SolverError::InvalidInput(
            "simulation needs dt > 0 and horizon >= 0".into(),
        ));
    }
    if k.shape() != (plant.m(), plant.n()) {
        return Err(SolverError::DimensionMismatch("gain shape".into()));
    }
    let acl = &plant.a - &plant.b2 * k;
    let steps = (horizon / dt).round() as usize;
    let times: Vec<f64> = (0..=steps).map(|i| i as f64 * dt).collect();
    let states = (0..plant.b1.ncols())
        .map(|j| {
            let mut x = plant.b1.column(j).into_owned();
            let mut out = Vec::with_capacity(steps + 1);
            out.push(x.clone());
            for _ in 0..steps {
                let k1 = &acl * &x;
                let k2 = &acl * (&x + &k1 * (0.5 * dt));
                let k3 = &acl * (&x + &k2 * (0.5 * dt));
                let k4 = &acl * (&x + &k3 * dt);
                x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
                out.push(x.clone());
            }
            out
        })
        .collect();
    Ok(Trajectory { times, states })
}
