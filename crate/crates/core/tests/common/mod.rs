#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sparselq::inner::SubproblemInput;
use sparselq::model::{lift_plant, validate_plant, LiftedProblem, PlantData};

/// Random plant with `C = [I; 0]`, `D = [0; I]`, `B1 = I`, so `CᵀD = 0`.
pub fn random_plant(seed: u64, n: usize, m: usize) -> PlantData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let b2 = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
    let mut c = DMatrix::zeros(n + m, n);
    c.view_mut((0, 0), (n, n)).fill_with_identity();
    let mut d = DMatrix::zeros(n + m, m);
    d.view_mut((n, 0), (m, m)).fill_with_identity();
    PlantData::new(a, b2, DMatrix::identity(n, n), c, d)
}

/// Plant for which a diagonal-`W₁` certificate exists: with `K`, diagonal
/// `D ≻ 0` and skew `N` drawn at random, `A = B₂K + (N − εI)D⁻¹` makes
/// `(A − B₂K)D + D(A − B₂K)ᵀ = −2εI`.
pub fn feasible_plant(seed: u64, n: usize, m: usize) -> PlantData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9) ^ 0xfea5);
    let b2 = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
    let k = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.5..1.5));
    let dinv = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| 1.0 / rng.random_range(0.5..2.0)));
    let s = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let skew = (&s - s.transpose()) * 0.5;
    let eps = rng.random_range(0.2..1.0);
    let a = &b2 * &k + (skew - DMatrix::identity(n, n) * eps) * dinv;
    let base = random_plant(seed, n, m);
    PlantData::new(a, b2, base.b1, base.c, base.d)
}

pub fn lift(plant: PlantData) -> LiftedProblem {
    lift_plant(validate_plant(plant).unwrap(), &[]).unwrap()
}

/// Subproblem data around the identity with a perturbed cost.
pub fn random_input(lifted: &LiftedProblem, seed: u64) -> SubproblemInput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let p = lifted.p;
    let noise = DMatrix::from_fn(p, p, |_, _| 0.1 * rng.random_range(-1.0..1.0));
    let dm = lifted.unvec(&lifted.vec_r()) + (&noise + noise.transpose()) * 0.5;
    SubproblemInput {
        d: DVector::from_column_slice(dm.as_slice()),
        w: DVector::from_fn(lifted.m * lifted.n, |_, _| rng.random_range(-1.0..1.0)),
        v_tilde: DVector::from_column_slice(DMatrix::<f64>::identity(p, p).as_slice()),
        alpha: rng.random_range(0.2..1.0),
        theta: rng.random_range(0.2..1.0),
        eta_f: rng.random_range(0.2..1.0),
    }
}

fn psd_part(s: &DMatrix<f64>) -> DMatrix<f64> {
    let e = SymmetricEigen::new((s + s.transpose()) * 0.5);
    let l = e.eigenvalues.map(|x| x.max(0.0));
    &e.eigenvectors * DMatrix::from_diagonal(&l) * e.eigenvectors.transpose()
}

fn min_eig(s: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new((s + s.transpose()) * 0.5).eigenvalues.min()
}

/// Orthonormal basis of the symmetric `p×p` matrices, row-major upper triangle.
fn sym_basis(p: usize) -> Vec<DMatrix<f64>> {
    let mut out = Vec::new();
    for i in 0..p {
        for j in i..p {
            let mut b = DMatrix::zeros(p, p);
            if i == j {
                b[(i, i)] = 1.0;
            } else {
                b[(i, j)] = 0.5f64.sqrt();
                b[(j, i)] = 0.5f64.sqrt();
            }
            out.push(b);
        }
    }
    out
}

/// Result of the dual projected-gradient oracle.
pub struct OracleResult {
    pub primal: f64,
    pub dual: f64,
    pub violation: f64,
    pub steps: usize,
}

/// Projected gradient ascent on the Lagrange dual of
/// `min ⟨D,W⟩ + σ₁‖𝒜W + b‖² + σ₂‖W − Ṽ‖²` s.t. `W ⪰ 0`, `Ψ_i(W) ⪰ 0`,
/// written from the plant matrices without the library's operators.
pub fn pg_oracle(plant: &PlantData, input: &SubproblemInput, max_steps: usize) -> OracleResult {
    let n = plant.a.nrows();
    let m = plant.b2.ncols();
    let p = n + m;
    let sigma1 = input.alpha / (2.0 * input.theta);
    let sigma2 = input.eta_f / (2.0 * input.alpha);
    let dmat = DMatrix::from_column_slice(p, p, input.d.as_slice());
    let vt = DMatrix::from_column_slice(p, p, input.v_tilde.as_slice());
    let basis = sym_basis(p);
    let s = basis.len();

    // rows: off-diagonal entries of W₁, then W[n+r, c] − w_rc
    let mut picks: Vec<(usize, usize)> = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            picks.push((a, b));
        }
    }
    let n_diag = picks.len();
    for c in 0..n {
        for r in 0..m {
            picks.push((n + r, c));
        }
    }
    let mut bvec = DVector::zeros(picks.len());
    for c in 0..n {
        for r in 0..m {
            bvec[n_diag + c * m + r] = -input.w[r + c * m];
        }
    }
    let amat = DMatrix::from_fn(picks.len(), s, |row, k| basis[k][picks[row]]);

    let h = amat.transpose() * &amat * (2.0 * sigma1) + DMatrix::identity(s, s) * (2.0 * sigma2);
    let g = DVector::from_fn(s, |k, _| dmat.dot(&basis[k]) - 2.0 * sigma2 * vt.dot(&basis[k]))
        + amat.transpose() * &bvec * (2.0 * sigma1);
    let konst = sigma1 * bvec.norm_squared() + sigma2 * vt.norm_squared();
    let h_inv = h.clone().try_inverse().unwrap();
    let f = |x: &DVector<f64>| 0.5 * x.dot(&(&h * x)) + g.dot(x) + konst;

    let verts: Vec<(DMatrix<f64>, DMatrix<f64>)> = plant.vertices.clone();
    let b1b1 = &plant.b1 * plant.b1.transpose();
    let wmat = |x: &DVector<f64>| {
        basis
            .iter()
            .zip(x.iter())
            .fold(DMatrix::zeros(p, p), |acc, (b, v)| acc + b * *v)
    };
    // Ψ(W) = −(A W₁₁ + B₂ W₂₁ + W₁₁Aᵀ + W₁₂B₂ᵀ + B₁B₁ᵀ), with linear part `lin`
    let lin = |a: &DMatrix<f64>, b2: &DMatrix<f64>, w: &DMatrix<f64>| -> DMatrix<f64> {
        let w11 = w.view((0, 0), (n, n)).into_owned();
        let w21 = w.view((n, 0), (m, n)).into_owned();
        let t = a * &w11 + b2 * &w21;
        -(&t + t.transpose())
    };
    let psi = |i: usize, w: &DMatrix<f64>| lin(&verts[i].0, &verts[i].1, w) - &b1b1;
    // adjoint of x ↦ (W(x), lin_i(W(x)))
    let lin_cols: Vec<Vec<DMatrix<f64>>> = verts
        .iter()
        .map(|(a, b2)| basis.iter().map(|bk| lin(a, b2, bk)).collect())
        .collect();
    let adjoint = |y0: &DMatrix<f64>, ys: &[DMatrix<f64>]| {
        DVector::from_fn(s, |k, _| {
            let mut v = y0.dot(&basis[k]);
            for (i, y) in ys.iter().enumerate() {
                v += y.dot(&lin_cols[i][k]);
            }
            v
        })
    };
    let argmin = |y0: &DMatrix<f64>, ys: &[DMatrix<f64>]| &h_inv * (adjoint(y0, ys) - &g);
    let dual_at = |y0: &DMatrix<f64>, ys: &[DMatrix<f64>], x: &DVector<f64>| {
        let w = wmat(x);
        let mut v = f(x) - y0.dot(&w);
        for (i, y) in ys.iter().enumerate() {
            v -= y.dot(&psi(i, &w));
        }
        v
    };

    // Lipschitz constant of the dual gradient: ‖J H⁻¹ Jᵀ‖ over all blocks
    let mut jac_rows: Vec<DVector<f64>> = Vec::new();
    for i in 0..p {
        for j in 0..p {
            jac_rows.push(DVector::from_fn(s, |k, _| basis[k][(i, j)]));
        }
    }
    for cols in &lin_cols {
        for i in 0..n {
            for j in 0..n {
                jac_rows.push(DVector::from_fn(s, |k, _| cols[k][(i, j)]));
            }
        }
    }
    let jac = DMatrix::from_fn(jac_rows.len(), s, |r, c| jac_rows[r][c]);
    let big = &jac * &h_inv * jac.transpose();
    let lip = SymmetricEigen::new((&big + big.transpose()) * 0.5).eigenvalues.max();
    let step = 1.0 / lip;

    let mut y0 = DMatrix::zeros(p, p);
    let mut ys = vec![DMatrix::zeros(n, n); verts.len()];
    let mut steps = 0;
    for _ in 0..max_steps {
        let x = argmin(&y0, &ys);
        let w = wmat(&x);
        let ny0 = psd_part(&(&y0 - &w * step));
        let nys: Vec<DMatrix<f64>> = ys
            .iter()
            .enumerate()
            .map(|(i, y)| psd_part(&(y - psi(i, &w) * step)))
            .collect();
        let moved = (&ny0 - &y0).norm() + nys.iter().zip(&ys).map(|(a, b)| (a - b).norm()).sum::<f64>();
        y0 = ny0;
        ys = nys;
        steps += 1;
        if moved < 1e-15 {
            break;
        }
    }
    let x = argmin(&y0, &ys);
    let w = wmat(&x);
    let mut worst = min_eig(&w);
    for i in 0..verts.len() {
        worst = worst.min(min_eig(&psi(i, &w)));
    }
    OracleResult {
        primal: f(&x),
        dual: dual_at(&y0, &ys, &x),
        violation: (-worst).max(0.0),
        steps,
    }
}
