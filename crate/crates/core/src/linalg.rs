//! Small dense linear-algebra helpers shared by the solvers.
//!
//! Vectorization is column-major throughout: `vec(A)` stacks the columns of
//! `A`, which matches nalgebra's storage order and the identity
//! `vec(ABC) = (Cᵀ ⊗ A) vec(B)`.

use faer::{Mat, MatRef};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Condition number above which a matrix is treated as singular.
pub const COND_LIMIT: f64 = 1e12;

/// Eigenvalues below `-PSD_CLIP` are rejected when factoring covariances.
pub const PSD_CLIP: f64 = 1e-10;

pub fn vec_of(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

pub fn unvec(v: &[f64], rows: usize, cols: usize) -> DMatrix<f64> {
    assert_eq!(v.len(), rows * cols, "unvec length");
    DMatrix::from_column_slice(rows, cols, v)
}

/// Spectral condition number. Returns `inf` for singular or empty matrices.
pub fn cond(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return f64::INFINITY;
    }
    let sv = singular_values(m);
    let max = sv.max();
    let min = sv.min();
    if !max.is_finite() || !min.is_finite() {
        return f64::INFINITY;
    }
    if min <= 0.0 {
        return f64::INFINITY;
    }
    max / min
}

/// Largest absolute entry of `m - mᵀ`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).amax()
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetric square root of a PSD matrix; tiny negative eigenvalues are
/// clipped to zero. Returns the offending eigenvalue on failure.
pub fn psd_sqrt(m: &DMatrix<f64>) -> std::result::Result<DMatrix<f64>, f64> {
    let n = m.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut d = eig.eigenvalues.clone();
    for v in d.iter_mut() {
        if *v < -PSD_CLIP {
            return Err(*v);
        }
        *v = v.max(0.0).sqrt();
    }
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&d) * q.transpose())
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(m)).eigenvalues.min()
}

/// Thin SVD `a = U diag(s) Vᵀ`, singular values in nonincreasing order.
///
/// Computed with faer: nalgebra's bidiagonal SVD returns wrong singular
/// vectors for a small fraction of well-conditioned inputs.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

fn to_faer(a: &DMatrix<f64>) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

fn from_faer(m: MatRef<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

impl Svd {
    /// Panics if the iteration fails to converge, which only happens for
    /// non-finite input.
    pub fn new(a: &DMatrix<f64>) -> Self {
        let (m, n) = a.shape();
        if m.min(n) == 0 {
            return Svd {
                u: DMatrix::zeros(m, 0),
                s: DVector::zeros(0),
                v: DMatrix::zeros(n, 0),
            };
        }
        let svd = to_faer(a)
            .thin_svd()
            .expect("SVD of a finite matrix converges");
        let s = svd.S().column_vector();
        Svd {
            u: from_faer(svd.U()),
            s: DVector::from_fn(s.nrows(), |k, _| s[k]),
            v: from_faer(svd.V()),
        }
    }

    pub fn max(&self) -> f64 {
        self.s.iter().copied().fold(0.0, f64::max)
    }

    /// Number of singular values above `cutoff`.
    pub fn rank(&self, cutoff: f64) -> usize {
        self.s.iter().filter(|&&v| v > cutoff).count()
    }

    /// Minimum-norm least-squares solution of `A X ≈ B`, ignoring singular
    /// values at or below `cutoff`.
    pub fn solve(&self, b: &DMatrix<f64>, cutoff: f64) -> DMatrix<f64> {
        let r = self.rank(cutoff);
        let mut coef = self.u.columns(0, r).transpose() * b;
        for k in 0..r {
            coef.row_mut(k).scale_mut(1.0 / self.s[k]);
        }
        self.v.columns(0, r) * coef
    }

    /// The usual `max(m, n) · eps · σ_max` rank cutoff.
    pub fn default_cutoff(&self) -> f64 {
        self.max() * (self.u.nrows().max(self.v.nrows()) as f64) * f64::EPSILON
    }
}

/// Minimum-norm least-squares solution of `a x ≈ b` through an SVD with the
/// default rank cutoff.
pub fn lstsq_min_norm(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let (m, n) = a.shape();
    if n == 0 {
        return DVector::zeros(0);
    }
    if m == 0 {
        return DVector::zeros(n);
    }
    let svd = Svd::new(a);
    let x = svd.solve(
        &DMatrix::from_column_slice(m, 1, b.as_slice()),
        svd.default_cutoff(),
    );
    x.column(0).into_owned()
}

/// Orthonormal basis of the null space of `a` (columns), using the same
/// rank cutoff as [`lstsq_min_norm`].
pub fn null_space(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, n) = a.shape();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    if m == 0 {
        return DMatrix::identity(n, n);
    }
    let svd = to_faer(a).svd().expect("SVD of a finite matrix converges");
    let s = svd.S().column_vector();
    let smax = (0..s.nrows()).map(|k| s[k]).fold(0.0, f64::max);
    let cutoff = smax * (m.max(n) as f64) * f64::EPSILON;
    let rank = (0..s.nrows()).filter(|&k| s[k] > cutoff).count();
    let v = from_faer(svd.V());
    v.columns(rank, n - rank).into_owned()
}

/// Singular values, nonincreasing.
pub fn singular_values(a: &DMatrix<f64>) -> DVector<f64> {
    Svd::new(a).s
}

/// Shortest round-trip decimal representation, used for all CSV output.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}
