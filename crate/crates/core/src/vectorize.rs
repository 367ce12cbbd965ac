//! Index bookkeeping between symmetric matrices and their vectorizations,
//! plus the sparse equality operator `(𝒜, ℬ)` that couples `vec(W)` to the
//! gain variable.
//!
//! `vec` is column-major throughout: `vec(W)[i + j·d] = W[i, j]`. The half
//! vectorization `svec` lists the lower triangle column by column
//! (`i ≥ j`, `j` outer), which is the ordering of the elimination matrix
//! `L = Σ_{i≥j} u_ij (vec E_ij)ᵀ`.

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Result, SolverError};

/// Which half-vectorization is in use.
///
/// `Plain` stores `S[i, j]` verbatim; `Isometric` scales off-diagonal
/// coordinates by `√2` so that the Euclidean norm of `svec(S)` equals the
/// Frobenius norm of `S` and the PSD cone stays self-dual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SvecConvention {
    Plain,
    #[default]
    Isometric,
}

/// Elimination/duplication maps for symmetric matrices of one order.
#[derive(Debug, Clone)]
pub struct SvecMaps {
    dim: usize,
    /// `(i, j)` with `i ≥ j` for every svec coordinate, in svec order.
    coords: Vec<(usize, usize)>,
}

pub fn build_svec_maps(dim: usize) -> SvecMaps {
    let mut coords = Vec::with_capacity(dim * (dim + 1) / 2);
    for j in 0..dim {
        for i in j..dim {
            coords.push((i, j));
        }
    }
    SvecMaps { dim, coords }
}

impl SvecMaps {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of svec coordinates, `d(d+1)/2`.
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[(usize, usize)] {
        &self.coords
    }

    fn off_scale(conv: SvecConvention) -> f64 {
        match conv {
            SvecConvention::Plain => 1.0,
            SvecConvention::Isometric => std::f64::consts::SQRT_2,
        }
    }

    /// `svec(S)`; only the lower triangle of `s` is read.
    pub fn svec(&self, s: &DMatrix<f64>, conv: SvecConvention) -> DVector<f64> {
        let k = Self::off_scale(conv);
        DVector::from_iterator(
            self.len(),
            self.coords
                .iter()
                .map(|&(i, j)| if i == j { s[(i, j)] } else { k * s[(i, j)] }),
        )
    }

    /// Inverse of [`svec`](Self::svec): the symmetric matrix with these coordinates.
    pub fn unsvec(&self, x: &DVector<f64>, conv: SvecConvention) -> DMatrix<f64> {
        let k = Self::off_scale(conv);
        let mut s = DMatrix::zeros(self.dim, self.dim);
        for (&(i, j), &v) in self.coords.iter().zip(x.iter()) {
            if i == j {
                s[(i, i)] = v;
            } else {
                s[(i, j)] = v / k;
                s[(j, i)] = v / k;
            }
        }
        s
    }

    /// `T·vec(S)` for an arbitrary (not necessarily symmetric) `vec` input.
    ///
    /// For the isometric map this is `D_isoᵀ`, i.e. off-diagonal coordinates
    /// receive `(S_ij + S_ji)/√2`; for the plain map it picks `S_ij`, `i ≥ j`.
    pub fn eliminate(&self, vec_s: &DVector<f64>, conv: SvecConvention) -> DVector<f64> {
        let d = self.dim;
        let h = std::f64::consts::FRAC_1_SQRT_2;
        DVector::from_iterator(
            self.len(),
            self.coords.iter().map(|&(i, j)| {
                if i == j {
                    vec_s[i + j * d]
                } else {
                    match conv {
                        SvecConvention::Plain => vec_s[i + j * d],
                        SvecConvention::Isometric => h * (vec_s[i + j * d] + vec_s[j + i * d]),
                    }
                }
            }),
        )
    }

    /// `D·svec` = `vec` of the symmetric matrix.
    pub fn duplicate(&self, x: &DVector<f64>, conv: SvecConvention) -> DVector<f64> {
        let s = self.unsvec(x, conv);
        DVector::from_column_slice(s.as_slice())
    }

    /// `Dᵀ·vec(S)` for an arbitrary `vec` input (adjoint of duplication).
    pub fn duplicate_adjoint(&self, vec_s: &DVector<f64>, conv: SvecConvention) -> DVector<f64> {
        let d = self.dim;
        let k = match conv {
            SvecConvention::Plain => 1.0,
            SvecConvention::Isometric => std::f64::consts::FRAC_1_SQRT_2,
        };
        DVector::from_iterator(
            self.len(),
            self.coords.iter().map(|&(i, j)| {
                if i == j {
                    vec_s[i + j * d]
                } else {
                    k * (vec_s[i + j * d] + vec_s[j + i * d])
                }
            }),
        )
    }

    /// Dense elimination matrix `T` (`svec = T·vec`), `d(d+1)/2 × d²`.
    pub fn elimination_matrix(&self, conv: SvecConvention) -> DMatrix<f64> {
        let d = self.dim;
        let mut t = DMatrix::zeros(self.len(), d * d);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        for (r, &(i, j)) in self.coords.iter().enumerate() {
            if i == j {
                t[(r, i + j * d)] = 1.0;
            } else {
                match conv {
                    SvecConvention::Plain => t[(r, i + j * d)] = 1.0,
                    SvecConvention::Isometric => {
                        t[(r, i + j * d)] = h;
                        t[(r, j + i * d)] = h;
                    }
                }
            }
        }
        t
    }

    /// Dense duplication matrix `D` (`vec = D·svec`), `d² × d(d+1)/2`.
    pub fn duplication_matrix(&self, conv: SvecConvention) -> DMatrix<f64> {
        let d = self.dim;
        let mut dm = DMatrix::zeros(d * d, self.len());
        let v = match conv {
            SvecConvention::Plain => 1.0,
            SvecConvention::Isometric => std::f64::consts::FRAC_1_SQRT_2,
        };
        for (c, &(i, j)) in self.coords.iter().enumerate() {
            if i == j {
                dm[(i + j * d, c)] = 1.0;
            } else {
                dm[(i + j * d, c)] = v;
                dm[(j + i * d, c)] = v;
            }
        }
        dm
    }
}

/// One strict-upper-triangle selector pair `(V_j1, V_j2)`:
/// `V_j1·W·V_j2 = W[row, col]`.
#[derive(Debug, Clone)]
pub struct DiagPair {
    pub row: usize,
    pub col: usize,
    pub left: RowDVector<f64>,
    pub right: DVector<f64>,
}

/// Selectors forcing the leading `n×n` block to be diagonal, in the stacked
/// order `(1,2), …, (1,n), (2,3), …, (n−1,n)`.
pub fn build_diag_constraints(n: usize, p: usize) -> Vec<DiagPair> {
    assert!(n >= 1 && n <= p, "need 1 <= n <= p");
    let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
    for a in 0..n.saturating_sub(1) {
        for b in (a + 1)..n {
            let mut left = RowDVector::zeros(p);
            left[a] = 1.0;
            let mut right = DVector::zeros(p);
            right[b] = 1.0;
            pairs.push(DiagPair {
                row: a,
                col: b,
                left,
                right,
            });
        }
    }
    pairs
}

/// Sparse row: `(column, value)` entries.
pub type SparseRow = Vec<(usize, f64)>;

/// The stacked equality `𝒜·vec(W) + ℬ·vec(P) = 0`.
///
/// Rows come in three groups: `N = n(n−1)/2` diagonal constraints on `W₁`,
/// `mn` gain-extraction rows `vec(V₁WV₂ᵀ) − vec(P)`, and one row per forced
/// zero `[V₁WV₂ᵀ]_ij = 0`. `ℬ` is `−I_mn` on the gain rows and zero elsewhere,
/// so `‖ℬ‖ = 1`.
#[derive(Debug, Clone)]
pub struct ConstraintOperator {
    n: usize,
    m: usize,
    rows: Vec<SparseRow>,
    n_diag: usize,
    forced: Vec<(usize, usize)>,
}

pub fn assemble_constraint_operator(
    n: usize,
    m: usize,
    diag_pairs: &[DiagPair],
    forced_zeros: &[(usize, usize)],
) -> Result<ConstraintOperator> {
    let p = n + m;
    let mut rows: Vec<SparseRow> = Vec::with_capacity(diag_pairs.len() + m * n + forced_zeros.len());
    // V_j2ᵀ ⊗ V_j1 rows
    for pair in diag_pairs {
        let mut row = SparseRow::new();
        for (b, &vb) in pair.right.iter().enumerate() {
            if vb == 0.0 {
                continue;
            }
            for (a, &va) in pair.left.iter().enumerate() {
                if va != 0.0 {
                    row.push((a + b * p, va * vb));
                }
            }
        }
        rows.push(row);
    }
    // V₂ ⊗ V₁: row (r + c·m) picks W[n + r, c]
    for c in 0..n {
        for r in 0..m {
            rows.push(vec![((n + r) + c * p, 1.0)]);
        }
    }
    for &(i, j) in forced_zeros {
        if i >= m || j >= n {
            return Err(SolverError::ForcedZeroOutOfRange { row: i, col: j, m, n });
        }
        rows.push(vec![((n + i) + j * p, 1.0)]);
    }
    Ok(ConstraintOperator {
        n,
        m,
        rows,
        n_diag: diag_pairs.len(),
        forced: forced_zeros.to_vec(),
    })
}

impl ConstraintOperator {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        let p = self.n + self.m;
        p * p
    }

    pub fn n_diag(&self) -> usize {
        self.n_diag
    }

    pub fn n_gain(&self) -> usize {
        self.m * self.n
    }

    pub fn forced_zeros(&self) -> &[(usize, usize)] {
        &self.forced
    }

    /// Offset of the first gain-extraction row.
    pub fn gain_offset(&self) -> usize {
        self.n_diag
    }

    pub fn rows(&self) -> &[SparseRow] {
        &self.rows
    }

    /// Spectral norm of `ℬ`; its nonzero block is `−I`.
    pub fn norm_b(&self) -> f64 {
        1.0
    }

    /// `𝒜·x` for `x ∈ ℝ^{p²}`.
    pub fn apply_a(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.rows.len(),
            self.rows
                .iter()
                .map(|row| row.iter().map(|&(c, v)| v * x[c]).sum::<f64>()),
        )
    }

    /// `𝒜ᵀ·λ`.
    pub fn apply_a_transpose(&self, lambda: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n_cols());
        for (row, &l) in self.rows.iter().zip(lambda.iter()) {
            for &(c, v) in row {
                out[c] += v * l;
            }
        }
        out
    }

    /// `ℬ·vec(P)`.
    pub fn apply_b(&self, p: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.rows.len());
        for k in 0..self.n_gain() {
            out[self.n_diag + k] = -p[k];
        }
        out
    }

    /// `ℬᵀ·λ`.
    pub fn apply_b_transpose(&self, lambda: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.n_gain(), (0..self.n_gain()).map(|k| -lambda[self.n_diag + k]))
    }

    /// Dense copy of `𝒜`.
    pub fn a_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.rows.len(), self.n_cols());
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, v) in row {
                a[(r, c)] += v;
            }
        }
        a
    }

    /// Dense copy of `ℬ`.
    pub fn b_dense(&self) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.rows.len(), self.n_gain());
        for k in 0..self.n_gain() {
            b[(self.n_diag + k, k)] = -1.0;
        }
        b
    }

    /// `𝒜·D` for a duplication map on `ℝ^{p²}`, dense (`rows × svec len`).
    pub fn a_times_duplication(&self, maps: &SvecMaps, conv: SvecConvention) -> DMatrix<f64> {
        let d = maps.duplication_matrix(conv);
        let mut out = DMatrix::zeros(self.rows.len(), maps.len());
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, v) in row {
                for k in 0..d.ncols() {
                    out[(r, k)] += v * d[(c, k)];
                }
            }
        }
        out
    }
}
