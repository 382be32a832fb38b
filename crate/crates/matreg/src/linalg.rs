//! Dense linear-algebra utilities for matrix-variate statistics.
//!
//! Kronecker products, vec/vech and their inverses, commutation and duplication
//! matrices, projections, semi-orthogonal bases with completions, and stable
//! log-determinants. Everything here is a pure function on dense matrices;
//! problem sizes stay small (hundreds of rows at most) so no sparse storage
//! is used.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Tolerance for the semi-orthogonality check `G'G = I`.
pub const SEMI_ORTHO_TOL: f64 = 1e-10;

/// Relative tolerance for the symmetry check on covariance-like matrices.
pub const SYMMETRY_RTOL: f64 = 1e-12;

/// Relative cutoff below which singular values are treated as zero in
/// pseudoinverses.
pub const PINV_RTOL: f64 = 1e-12;

/// Semi-orthogonal basis: an `r x u` matrix with orthonormal columns, `u <= r`.
///
/// `u = 0` encodes the trivial subspace (an `r x 0` matrix). The span is the
/// meaningful quantity; two bases of the same subspace differ by a right
/// rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct SemiOrthoBasis {
    mat: DMatrix<f64>,
}

impl SemiOrthoBasis {
    /// Validates `mat' * mat = I_u` within [`SEMI_ORTHO_TOL`].
    pub fn new(mat: DMatrix<f64>) -> Result<Self> {
        let (r, u) = mat.shape();
        if u > r {
            return Err(Error::InvalidBasis(format!(
                "basis must be tall or square, got {r}x{u}"
            )));
        }
        if u > 0 {
            let gram = mat.transpose() * &mat;
            let dev = (&gram - DMatrix::identity(u, u)).amax();
            if !dev.is_finite() || dev > SEMI_ORTHO_TOL {
                return Err(Error::InvalidBasis(format!(
                    "columns not orthonormal (max deviation {dev:.3e})"
                )));
            }
        }
        Ok(Self { mat })
    }

    /// First `u` columns of the identity, the canonical basis of a coordinate
    /// subspace.
    pub fn canonical(r: usize, u: usize) -> Self {
        let mut mat = DMatrix::zeros(r, u);
        for j in 0..u.min(r) {
            mat[(j, j)] = 1.0;
        }
        Self { mat }
    }

    /// The trivial `r x 0` basis.
    pub fn empty(r: usize) -> Self {
        Self {
            mat: DMatrix::zeros(r, 0),
        }
    }

    pub fn identity(r: usize) -> Self {
        Self {
            mat: DMatrix::identity(r, r),
        }
    }

    /// Orthonormalizes the columns of an arbitrary full-column-rank matrix.
    pub fn orthonormalize(mat: &DMatrix<f64>) -> Result<Self> {
        let (r, u) = mat.shape();
        if u == 0 {
            return Ok(Self::empty(r));
        }
        let q = thin_q(mat);
        if q.ncols() < u {
            return Err(Error::InvalidBasis(format!(
                "matrix is rank deficient: rank {} < {u}",
                q.ncols()
            )));
        }
        Self::new(q)
    }

    pub fn nrows(&self) -> usize {
        self.mat.nrows()
    }

    /// Subspace dimension `u`.
    pub fn ncols(&self) -> usize {
        self.mat.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.mat
    }

    /// Projection onto the span, `G G'`.
    pub fn projector(&self) -> DMatrix<f64> {
        &self.mat * self.mat.transpose()
    }

    /// Projection onto the orthogonal complement, `I - G G'`.
    pub fn complement_projector(&self) -> DMatrix<f64> {
        DMatrix::identity(self.nrows(), self.nrows()) - self.projector()
    }

    /// An orthonormal basis `G0` of the orthogonal complement, so `[G | G0]`
    /// is square orthogonal. Defined only up to rotation.
    pub fn complete(&self) -> SemiOrthoBasis {
        complete_basis(self)
    }
}

/// Symmetric positive definite matrix.
///
/// Construction checks symmetry within [`SYMMETRY_RTOL`] (relative to the
/// largest entry) and positive definiteness via a Cholesky factorization.
#[derive(Debug, Clone, PartialEq)]
pub struct PdMatrix {
    mat: DMatrix<f64>,
}

impl PdMatrix {
    pub fn new(mat: DMatrix<f64>) -> Result<Self> {
        let (r, c) = mat.shape();
        if r != c {
            return Err(Error::DimensionMismatch {
                context: "PdMatrix::new",
                expected: "square matrix".into(),
                found: format!("{r}x{c}"),
            });
        }
        let scale = mat.amax();
        let max_asym = (&mat - mat.transpose()).amax();
        if scale <= 0.0 || !scale.is_finite() || max_asym > SYMMETRY_RTOL * scale {
            return Err(Error::NotSymmetric { max_asym });
        }
        if Cholesky::new(mat.clone()).is_none() {
            return Err(Error::NotPositiveDefinite {
                context: "PdMatrix::new",
            });
        }
        Ok(Self { mat })
    }

    /// Symmetrizes `(M + M')/2` first; for matrices assembled from sums of
    /// products where roundoff breaks exact symmetry.
    pub fn new_symmetrized(mat: DMatrix<f64>) -> Result<Self> {
        let sym = symmetrize(&mat);
        if Cholesky::new(sym.clone()).is_none() {
            return Err(Error::NotPositiveDefinite {
                context: "PdMatrix::new_symmetrized",
            });
        }
        Ok(Self { mat: sym })
    }

    pub fn identity(k: usize) -> Self {
        Self {
            mat: DMatrix::identity(k, k),
        }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.mat
    }

    pub fn cholesky(&self) -> Cholesky<f64, Dyn> {
        // construction guarantees success
        Cholesky::new(self.mat.clone()).expect("validated positive definite")
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.cholesky().inverse()
    }

    pub fn logdet(&self) -> f64 {
        logdet_pd(self)
    }
}

/// Kronecker product `A (x) B`: block matrix with `(i,j)` block `A_ij * B`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Commutation matrix `K_pq` of size `pq x pq` with `K_pq vec(M) = vec(M')`
/// for every `p x q` matrix `M`.
pub fn commutation(p: usize, q: usize) -> Result<DMatrix<f64>> {
    if p == 0 || q == 0 {
        return Err(Error::NonPositiveDimension(if p == 0 { 0 } else { q as i64 }));
    }
    let n = p * q;
    let mut k = DMatrix::zeros(n, n);
    for i in 0..p {
        for j in 0..q {
            // vec(M) puts M[i,j] at j*p + i; vec(M') puts it at i*q + j
            k[(i * q + j, j * p + i)] = 1.0;
        }
    }
    Ok(k)
}

/// Projection onto the column span of `B`: `P_B = B (B'B)^+ B'`.
///
/// Rank-deficient `B` is handled through the pseudoinverse, with singular
/// values below `PINV_RTOL` times the largest treated as zero.
pub fn project(b: &DMatrix<f64>) -> DMatrix<f64> {
    if b.ncols() == 0 {
        return DMatrix::zeros(b.nrows(), b.nrows());
    }
    let gram = symmetrize(&(b.transpose() * b));
    let pinv = sym_pinv(&gram, PINV_RTOL);
    symmetrize(&(b * pinv * b.transpose()))
}

/// Complement projection `Q_B = I - P_B`.
pub fn project_complement(b: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::identity(b.nrows(), b.nrows()) - project(b)
}

/// Orthonormal completion of a semi-orthogonal basis: returns `L0` such that
/// `[L | L0]` is square orthogonal. The result is defined only up to rotation.
pub fn complete_basis(l: &SemiOrthoBasis) -> SemiOrthoBasis {
    let r = l.nrows();
    let u = l.ncols();
    if u == r {
        return SemiOrthoBasis::empty(r);
    }
    if u == 0 {
        return SemiOrthoBasis::identity(r);
    }
    // Eigenvectors of Q_L = I - L L' with unit eigenvalue span the complement.
    let q = symmetrize(&l.complement_projector());
    let eig = SymmetricEigen::new(q);
    let mut cols: Vec<usize> = (0..r).filter(|&i| eig.eigenvalues[i] > 0.5).collect();
    cols.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("finite eigenvalues")
    });
    cols.truncate(r - u);
    let mut l0 = DMatrix::zeros(r, r - u);
    for (t, &i) in cols.iter().enumerate() {
        l0.set_column(t, &eig.eigenvectors.column(i));
    }
    // Re-orthonormalize to wash out eigen roundoff.
    SemiOrthoBasis::orthonormalize(&l0).expect("complement basis has full rank")
}

/// Log-determinant of a positive definite matrix via its Cholesky factor.
pub fn logdet_pd(s: &PdMatrix) -> f64 {
    2.0 * s.cholesky().l().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Log-determinant of a symmetric matrix expected to be positive definite.
pub fn try_logdet(m: &DMatrix<f64>) -> Result<f64> {
    let chol = Cholesky::new(symmetrize(m)).ok_or(Error::NotPositiveDefinite {
        context: "try_logdet",
    })?;
    Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Column-major stacking of a matrix into a vector.
pub fn vec_mat(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_mat`]: reshape a length `r*c` vector into `r x c`.
pub fn unvec(v: &DVector<f64>, r: usize, c: usize) -> DMatrix<f64> {
    assert_eq!(v.len(), r * c, "unvec length mismatch");
    DMatrix::from_column_slice(r, c, v.as_slice())
}

/// Half-vectorization: lower-triangular entries of a symmetric `k x k` matrix,
/// column-major, length `k(k+1)/2`.
pub fn vech(s: &DMatrix<f64>) -> Result<DVector<f64>> {
    let k = s.nrows();
    if s.ncols() != k {
        return Err(Error::DimensionMismatch {
            context: "vech",
            expected: "square matrix".into(),
            found: format!("{}x{}", s.nrows(), s.ncols()),
        });
    }
    let scale = s.amax().max(1.0);
    let max_asym = (s - s.transpose()).amax();
    if max_asym > 1e-8 * scale {
        return Err(Error::NotSymmetric { max_asym });
    }
    let mut out = DVector::zeros(k * (k + 1) / 2);
    let mut t = 0;
    for j in 0..k {
        for i in j..k {
            out[t] = s[(i, j)];
            t += 1;
        }
    }
    Ok(out)
}

/// Inverse of [`vech`]: rebuild the symmetric `k x k` matrix.
pub fn unvech(v: &DVector<f64>, k: usize) -> DMatrix<f64> {
    assert_eq!(v.len(), k * (k + 1) / 2, "unvech length mismatch");
    let mut s = DMatrix::zeros(k, k);
    let mut t = 0;
    for j in 0..k {
        for i in j..k {
            s[(i, j)] = v[t];
            s[(j, i)] = v[t];
            t += 1;
        }
    }
    s
}

/// Duplication matrix `D_k` with `vec(S) = D_k vech(S)` for symmetric `S`.
pub fn duplication(k: usize) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(k * k, k * (k + 1) / 2);
    let mut t = 0;
    for j in 0..k {
        for i in j..k {
            d[(j * k + i, t)] = 1.0;
            d[(i * k + j, t)] = 1.0;
            t += 1;
        }
    }
    d
}

/// `(M + M')/2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Pseudoinverse of a symmetric matrix via eigendecomposition; eigenvalues
/// with magnitude below `rtol` times the largest are treated as zero.
pub fn sym_pinv(s: &DMatrix<f64>, rtol: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(s));
    let max_ev = eig.eigenvalues.iter().fold(0.0f64, |a, &e| a.max(e.abs()));
    let cutoff = rtol * max_ev;
    let mut inv_vals = eig.eigenvalues.clone();
    for v in inv_vals.iter_mut() {
        *v = if v.abs() > cutoff { 1.0 / *v } else { 0.0 };
    }
    let vecs = &eig.eigenvectors;
    symmetrize(&(vecs * DMatrix::from_diagonal(&inv_vals) * vecs.transpose()))
}

/// Thin Q factor of a QR decomposition.
fn thin_q(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().qr().q()
}
