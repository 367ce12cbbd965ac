//! Dense symmetric kernels: eigendecomposition, PSD projection, SPD solves.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Result, SolverError};

/// Eigenvalues below this are treated as zero when checking cone membership.
pub const PSD_CLAMP: f64 = 1e-10;

/// `S = V·diag(λ)·Vᵀ`.
#[derive(Debug, Clone)]
pub struct SymmetricFactor {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl SymmetricFactor {
    pub fn order(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `V·diag(f(λ))·Vᵀ`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let v = &self.eigenvectors;
        let scaled = DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)] * f(self.eigenvalues[j]));
        scaled * v.transpose()
    }
}

pub fn sym_eigen(s: &DMatrix<f64>) -> Result<SymmetricFactor> {
    if !s.is_square() {
        return Err(SolverError::DimensionMismatch(
            "eigendecomposition of a non-square matrix".into(),
        ));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::EigFailure);
    }
    let sym = (s + s.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 0).ok_or(SolverError::EigFailure)?;
    Ok(SymmetricFactor {
        eigenvalues: eig.eigenvalues,
        eigenvectors: eig.eigenvectors,
    })
}

/// Frobenius-nearest PSD matrix: eigenvalues clamped at zero.
pub fn project_psd(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let f = sym_eigen(s)?;
    let out = f.map(|l| l.max(0.0));
    Ok((&out + out.transpose()) * 0.5)
}

pub fn max_eigenvalue(s: &DMatrix<f64>) -> Result<f64> {
    Ok(sym_eigen(s)?.eigenvalues.max())
}

pub fn min_eigenvalue(s: &DMatrix<f64>) -> Result<f64> {
    Ok(sym_eigen(s)?.eigenvalues.min())
}

/// Cholesky factor of an SPD matrix, reusable across right-hand sides.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
}

impl SpdFactor {
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(SolverError::DimensionMismatch(
                "SPD factor of a non-square matrix".into(),
            ));
        }
        let sym = (m + m.transpose()) * 0.5;
        let chol = Cholesky::new(sym).ok_or(SolverError::NotPositiveDefinite)?;
        Ok(SpdFactor { chol })
    }

    pub fn solve(&self, q: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(q)
    }

    pub fn solve_matrix(&self, q: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(q)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let inv = self.chol.inverse();
        (&inv + inv.transpose()) * 0.5
    }
}

pub fn solve_spd(m: &DMatrix<f64>, q: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(SpdFactor::new(m)?.solve(q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sym(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        &a + a.transpose()
    }

    fn random_psd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose()
    }

    #[test]
    fn projection_examples() {
        let i3 = DMatrix::<f64>::identity(3, 3);
        assert_abs_diff_eq!(project_psd(&i3).unwrap(), i3, epsilon = 1e-14);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, -3.0]));
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.0]));
        assert_abs_diff_eq!(project_psd(&d).unwrap(), expected, epsilon = 1e-14);
        let x = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert_abs_diff_eq!(
            project_psd(&x).unwrap(),
            DMatrix::from_element(2, 2, 0.5),
            epsilon = 1e-14
        );
    }

    #[test]
    fn max_eigenvalue_examples() {
        assert_abs_diff_eq!(max_eigenvalue(&DMatrix::identity(3, 3)).unwrap(), 1.0, epsilon = 1e-14);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 5.0, 2.0]));
        assert_abs_diff_eq!(max_eigenvalue(&d).unwrap(), 5.0, epsilon = 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = random_sym(&mut rng, 8);
        let oracle = s.clone().symmetric_eigenvalues().max();
        assert!((max_eigenvalue(&s).unwrap() - oracle).abs() <= 1e-10 * oracle.abs().max(1.0));
    }

    #[test]
    fn spd_solves() {
        let two = DMatrix::<f64>::identity(2, 2) * 2.0;
        let x = solve_spd(&two, &DVector::from_vec(vec![2.0, 4.0])).unwrap();
        assert_abs_diff_eq!(x, DVector::from_vec(vec![1.0, 2.0]), epsilon = 1e-15);
        let q = DVector::from_vec(vec![3.0, -1.0, 0.5]);
        assert_abs_diff_eq!(solve_spd(&DMatrix::identity(3, 3), &q).unwrap(), q, epsilon = 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_psd(&mut rng, 12) + DMatrix::identity(12, 12) * 0.1;
        let q = DVector::from_fn(12, |_, _| rng.random_range(-1.0..1.0));
        let x = solve_spd(&m, &q).unwrap();
        let res = (&m * &x - &q).norm();
        assert!(res <= 1e-10 * (m.norm() * x.norm() + q.norm()));
        assert!(matches!(
            solve_spd(&(-DMatrix::<f64>::identity(2, 2)), &DVector::zeros(2)),
            Err(SolverError::NotPositiveDefinite)
        ));
    }

    #[test]
    fn factor_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_sym(&mut rng, 7);
        let f = sym_eigen(&s).unwrap();
        assert!((f.map(|l| l) - &s).norm() <= 1e-10 * s.norm().max(1.0));
    }

    #[test]
    fn projection_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..50 {
            let d = rng.random_range(1..7);
            let s = random_sym(&mut rng, d);
            let p = project_psd(&s).unwrap();
            assert!(min_eigenvalue(&p).unwrap() >= -PSD_CLAMP);
            assert_abs_diff_eq!(project_psd(&p).unwrap(), p.clone(), epsilon = 1e-12);
            let dist = (&s - &p).norm();
            for _ in 0..50 {
                let y = random_psd(&mut rng, d);
                assert!(dist <= (&s - &y).norm() + 1e-12);
            }
            let s2 = random_sym(&mut rng, d);
            let p2 = project_psd(&s2).unwrap();
            assert!((&p - &p2).norm() <= (&s - &s2).norm() + 1e-12);
        }
    }
}
