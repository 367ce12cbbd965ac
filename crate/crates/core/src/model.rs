//! Plant description, assumption checks and the lifting to `p = n + m`
//! block matrices.

use nalgebra::DMatrix;

use crate::cones::{sym_eigen, SymmetricFactor};
use crate::error::{Assumption, Result, SolverError};
use crate::vectorize::{
    assemble_constraint_operator, build_diag_constraints, build_svec_maps, ConstraintOperator, DiagPair, SvecMaps,
};

/// `ẋ = Ax + B₂u + B₁w`, `z = Cx + Du`, with optional polytopic vertices
/// `(A_i, B₂,i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantData {
    pub a: DMatrix<f64>,
    pub b2: DMatrix<f64>,
    pub b1: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub vertices: Vec<(DMatrix<f64>, DMatrix<f64>)>,
}

impl PlantData {
    /// Plant with the single vertex `(A, B₂)`.
    pub fn new(a: DMatrix<f64>, b2: DMatrix<f64>, b1: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Self {
        let vertices = vec![(a.clone(), b2.clone())];
        PlantData {
            a,
            b2,
            b1,
            c,
            d,
            vertices,
        }
    }

    pub fn with_vertices(mut self, vertices: Vec<(DMatrix<f64>, DMatrix<f64>)>) -> Self {
        self.vertices = vertices;
        self
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b2.ncols()
    }
}

/// A plant that passed [`validate_plant`], with its Gram products cached.
#[derive(Debug, Clone)]
pub struct ValidatedPlant {
    plant: PlantData,
    pub ctc: DMatrix<f64>,
    pub dtd: DMatrix<f64>,
    pub b1b1t: DMatrix<f64>,
}

impl ValidatedPlant {
    pub fn plant(&self) -> &PlantData {
        &self.plant
    }

    pub fn n(&self) -> usize {
        self.plant.n()
    }

    pub fn m(&self) -> usize {
        self.plant.m()
    }
}

impl std::ops::Deref for ValidatedPlant {
    type Target = PlantData;
    fn deref(&self) -> &PlantData {
        &self.plant
    }
}

fn check_shape(name: &str, mat: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if mat.shape() != (rows, cols) {
        return Err(SolverError::DimensionMismatch(format!(
            "{name} is {}×{}, expected {rows}×{cols}",
            mat.nrows(),
            mat.ncols()
        )));
    }
    Ok(())
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

fn is_definite(s: &DMatrix<f64>, tol: f64) -> Result<bool> {
    let SymmetricFactor { eigenvalues, .. } = sym_eigen(s)?;
    Ok(eigenvalues.min() > tol)
}

pub fn validate_plant(plant: PlantData) -> Result<ValidatedPlant> {
    let n = plant.a.nrows();
    let m = plant.b2.ncols();
    if n == 0 || m == 0 {
        return Err(SolverError::DimensionMismatch("n and m must be at least 1".into()));
    }
    check_shape("A", &plant.a, n, n)?;
    check_shape("B2", &plant.b2, n, m)?;
    let l = plant.b1.ncols();
    check_shape("B1", &plant.b1, n, l)?;
    let q = plant.c.nrows();
    check_shape("C", &plant.c, q, n)?;
    check_shape("D", &plant.d, q, m)?;
    if plant.vertices.is_empty() {
        return Err(SolverError::DimensionMismatch("vertex list is empty".into()));
    }
    for (i, (ai, bi)) in plant.vertices.iter().enumerate() {
        check_shape(&format!("vertex {i} A"), ai, n, n)?;
        check_shape(&format!("vertex {i} B2"), bi, n, m)?;
    }
    let all = [&plant.a, &plant.b2, &plant.b1, &plant.c, &plant.d];
    if all.iter().any(|x| x.iter().any(|v| !v.is_finite())) {
        return Err(SolverError::InvalidInput("non-finite matrix entry".into()));
    }

    let scale = all.iter().map(|x| x.amax()).fold(1.0_f64, f64::max);
    let tol = 1e-12 * scale;
    let ctd = plant.c.transpose() * &plant.d;
    if ctd.amax() > tol {
        return Err(SolverError::AssumptionViolated(Assumption::CrossTermZero));
    }
    let dtd = symmetrize(plant.d.transpose() * &plant.d);
    if !is_definite(&dtd, tol)? {
        return Err(SolverError::AssumptionViolated(Assumption::InputWeightDefinite));
    }
    let b1b1t = symmetrize(&plant.b1 * plant.b1.transpose());
    if !is_definite(&b1b1t, tol)? {
        return Err(SolverError::AssumptionViolated(Assumption::DisturbanceDefinite));
    }
    let ctc = symmetrize(plant.c.transpose() * &plant.c);
    Ok(ValidatedPlant { plant, ctc, dtd, b1b1t })
}

/// Every operator derived from a validated plant.
#[derive(Debug, Clone)]
pub struct LiftedProblem {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    /// `F_i = [A_i B₂,i; 0 0]`.
    pub f_list: Vec<DMatrix<f64>>,
    /// `blockdiag(B₁B₁ᵀ, 0)`.
    pub q: DMatrix<f64>,
    /// `blockdiag(CᵀC, DᵀD)`.
    pub r: DMatrix<f64>,
    /// `[0, I_m]`.
    pub v1: DMatrix<f64>,
    /// `[I_n, 0]`.
    pub v2: DMatrix<f64>,
    pub diag_pairs: Vec<DiagPair>,
    pub maps_p: SvecMaps,
    pub maps_n: SvecMaps,
    pub op: ConstraintOperator,
    pub norm_b: f64,
    pub forced_zeros: Vec<(usize, usize)>,
    pub plant: ValidatedPlant,
}

pub fn lift_plant(plant: ValidatedPlant, forced_zeros: &[(usize, usize)]) -> Result<LiftedProblem> {
    let n = plant.n();
    let m = plant.m();
    let p = n + m;
    let f_list = plant
        .vertices
        .iter()
        .map(|(ai, bi)| {
            let mut f = DMatrix::zeros(p, p);
            f.view_mut((0, 0), (n, n)).copy_from(ai);
            f.view_mut((0, n), (n, m)).copy_from(bi);
            f
        })
        .collect();
    let mut q = DMatrix::zeros(p, p);
    q.view_mut((0, 0), (n, n)).copy_from(&plant.b1b1t);
    let mut r = DMatrix::zeros(p, p);
    r.view_mut((0, 0), (n, n)).copy_from(&plant.ctc);
    r.view_mut((n, n), (m, m)).copy_from(&plant.dtd);
    let mut v1 = DMatrix::zeros(m, p);
    v1.view_mut((0, n), (m, m)).fill_with_identity();
    let mut v2 = DMatrix::zeros(n, p);
    v2.view_mut((0, 0), (n, n)).fill_with_identity();

    let mut fz = forced_zeros.to_vec();
    fz.sort_unstable();
    fz.dedup();
    let diag_pairs = build_diag_constraints(n, p);
    let op = assemble_constraint_operator(n, m, &diag_pairs, &fz)?;
    let norm_b = op.norm_b();
    Ok(LiftedProblem {
        n,
        m,
        p,
        f_list,
        q,
        r,
        v1,
        v2,
        diag_pairs,
        maps_p: build_svec_maps(p),
        maps_n: build_svec_maps(n),
        op,
        norm_b,
        forced_zeros: fz,
        plant,
    })
}

impl LiftedProblem {
    pub fn n_vertices(&self) -> usize {
        self.f_list.len()
    }

    /// `Ψ_i(W) = −V₂(F_iW + WF_iᵀ + Q)V₂ᵀ`.
    pub fn psi(&self, w: &DMatrix<f64>, vertex: usize) -> DMatrix<f64> {
        let f = &self.f_list[vertex];
        let inner = f * w + w * f.transpose() + &self.q;
        -(&self.v2 * inner * self.v2.transpose())
    }

    /// `V₁WV₂ᵀ = W₂ᵀ`.
    pub fn gain_block(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        &self.v1 * w * self.v2.transpose()
    }

    /// `⟨R, W⟩`.
    pub fn cost(&self, w: &DMatrix<f64>) -> f64 {
        self.r.dot(w)
    }

    pub fn vec_r(&self) -> nalgebra::DVector<f64> {
        nalgebra::DVector::from_column_slice(self.r.as_slice())
    }

    /// `p×p` matrix from its column-major `vec`.
    pub fn unvec(&self, v: &nalgebra::DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.p, self.p, v.as_slice())
    }

    /// `m×n` matrix from a gain-shaped `vec`.
    pub fn unvec_gain(&self, v: &nalgebra::DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.m, self.n, v.as_slice())
    }
}

/// The three example plants used by the tests and the CLI fixtures.
pub mod fixtures {
    use nalgebra::DMatrix;

    use super::PlantData;

    fn b2_three() -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 2, &[0.9315, 0.7939, 0.9722, 0.1061, 0.5317, 0.7750])
    }

    fn cd_three() -> (DMatrix<f64>, DMatrix<f64>) {
        let mut c = DMatrix::zeros(3, 3);
        c[(0, 0)] = 1.0;
        let d = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        (c, d)
    }

    /// Unstable 3-state, 2-input plant.
    pub fn example1() -> PlantData {
        let a = DMatrix::from_row_slice(
            3,
            3,
            &[0.2220, 0.9186, 0.7659, 0.8707, 0.4884, 0.5184, 0.2067, 0.6117, 0.2968],
        );
        let (c, d) = cd_three();
        PlantData::new(a, b2_three(), DMatrix::identity(3, 3), c, d)
    }

    /// 5-state, 2-input plant.
    pub fn example2() -> PlantData {
        let a = DMatrix::from_row_slice(
            5,
            5,
            &[
                0.3079, 0.1879, 0.1797, 0.2935, 0.6537, //
                0.5194, 0.2695, 0.5388, 0.9624, 0.5366, //
                0.7683, 0.4962, 0.2828, 0.9132, 0.9957, //
                0.7892, 0.7391, 0.7609, 0.5682, 0.1420, //
                0.8706, 0.1950, 0.2697, 0.4855, 0.9753,
            ],
        );
        let b2 = DMatrix::from_row_slice(
            5,
            2,
            &[
                0.6196, 0.6414, 0.7205, 0.9233, 0.2951, 0.8887, 0.6001, 0.6447, 0.7506, 0.2956,
            ],
        );
        let mut c = DMatrix::zeros(5, 5);
        c[(0, 0)] = 1.0;
        c[(1, 1)] = 1.0;
        let mut d = DMatrix::zeros(5, 2);
        d[(2, 0)] = 1.0;
        d[(3, 1)] = 1.0;
        PlantData::new(a, b2, DMatrix::identity(5, 5), c, d)
    }

    /// Triple integrator chain with the first example's input matrix.
    pub fn example3() -> PlantData {
        let a = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let (c, d) = cd_three();
        PlantData::new(a, b2_three(), DMatrix::identity(3, 3), c, d)
    }
}
