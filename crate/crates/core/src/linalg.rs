//! Dense symmetric linear algebra shared by the rest of the crate.
//!
//! Eigenvalues are always reported in descending order. Each eigenvector is
//! sign-normalised so that its largest-magnitude entry is positive (ties go to
//! the lowest index), which makes embeddings reproducible.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{ProbDrError, Result};
use crate::types::{ensure_finite, ensure_square, DataMatrix};

/// Asymmetry tolerated before a matrix is treated as non-symmetric input.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Descending eigenvalues with matching orthonormal eigenvector columns.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// U f(Λ) Uᵀ.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let n = self.dim();
        let mut scaled = self.eigenvectors.clone();
        for k in 0..n {
            let s = f(self.eigenvalues[k]);
            scaled.column_mut(k).scale_mut(s);
        }
        symmetrize(&(scaled * self.eigenvectors.transpose()))
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.reconstruct_with(|l| l)
    }
}

/// Largest |m_ij - m_ji|.
pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// (m + mᵀ) / 2.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetric eigendecomposition with descending eigenvalues.
///
/// Small asymmetries are averaged away silently.
pub fn sym_eigen(m: &DMatrix<f64>) -> Result<EigenDecomposition> {
    ensure_square(m, "matrix for eigendecomposition")?;
    ensure_finite(m, "matrix for eigendecomposition")?;
    let n = m.nrows();
    if n == 0 {
        return Ok(EigenDecomposition {
            eigenvalues: DVector::zeros(0),
            eigenvectors: DMatrix::zeros(0, 0),
        });
    }
    let eig = SymmetricEigen::new(symmetrize(m));

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("finite eigenvalues")
            .then(a.cmp(&b))
    });

    let mut eigenvalues = DVector::zeros(n);
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvalues[dst] = eig.eigenvalues[src];
        let mut col = eig.eigenvectors.column(src).into_owned();
        fix_sign(&mut col);
        eigenvectors.set_column(dst, &col);
    }
    Ok(EigenDecomposition { eigenvalues, eigenvectors })
}

fn fix_sign(v: &mut DVector<f64>) {
    let max_abs = v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    if max_abs == 0.0 {
        return;
    }
    let pivot = v
        .iter()
        .position(|x| x.abs() >= max_abs * (1.0 - 1e-9))
        .expect("max exists");
    if v[pivot] < 0.0 {
        v.neg_mut();
    }
}

/// H K H with H = I - 11ᵀ/n.
pub fn double_center(k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    ensure_square(k, "matrix to center")?;
    ensure_finite(k, "matrix to center")?;
    let n = k.nrows();
    if n == 0 {
        return Ok(k.clone());
    }
    let nf = n as f64;
    let row_means: Vec<f64> = (0..n).map(|i| k.row(i).sum() / nf).collect();
    let col_means: Vec<f64> = (0..n).map(|j| k.column(j).sum() / nf).collect();
    let grand = row_means.iter().sum::<f64>() / nf;
    Ok(DMatrix::from_fn(n, n, |i, j| k[(i, j)] - row_means[i] - col_means[j] + grand))
}

/// Clamps negative eigenvalues to zero. PSD input is returned unchanged.
pub fn psd_project(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = sym_eigen(m)?;
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return Ok(symmetrize(m));
    }
    Ok(eig.reconstruct_with(|l| l.max(0.0)))
}

/// Squared Euclidean distances between the rows of `y`.
pub fn pairwise_sq_dists(y: &DataMatrix) -> DMatrix<f64> {
    sq_dists_rows(y.values())
}

/// Squared Euclidean distances between the rows of any matrix.
pub fn sq_dists_rows(y: &DMatrix<f64>) -> DMatrix<f64> {
    let n = y.nrows();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let mut acc = 0.0;
            for c in 0..y.ncols() {
                let diff = y[(i, c)] - y[(j, c)];
                acc += diff * diff;
            }
            out[(i, j)] = acc;
            out[(j, i)] = acc;
        }
    }
    out
}

/// U exp(scale Λ) Uᵀ for symmetric `m`. For a heat kernel pass `scale = -t`.
pub fn expm_sym(m: &DMatrix<f64>, scale: f64) -> Result<DMatrix<f64>> {
    let eig = sym_eigen(m)?;
    Ok(eig.reconstruct_with(|l| (scale * l).exp()))
}

/// Cholesky factorisation with a readable error on failure.
pub fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    ensure_square(m, what)?;
    ensure_finite(m, what)?;
    nalgebra::Cholesky::new(symmetrize(m))
        .ok_or_else(|| ProbDrError::Singular(format!("{what} is not positive definite")))
}

/// log |m| for a positive-definite matrix.
pub fn log_det_pd(m: &DMatrix<f64>, what: &str) -> Result<f64> {
    let chol = cholesky(m, what)?;
    Ok(chol_log_det(&chol))
}

pub(crate) fn chol_log_det(chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Inverse of a positive-definite matrix.
pub fn inverse_pd(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    Ok(symmetrize(&cholesky(m, what)?.inverse()))
}

/// Frobenius norm of a - b relative to b.
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let denom = b.norm();
    let diff = (a - b).norm();
    if denom == 0.0 {
        diff
    } else {
        diff / denom
    }
}

/// Symmetric square root of a PSD matrix (negative eigenvalues clamped).
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = sym_eigen(m)?;
    Ok(eig.reconstruct_with(|l| l.max(0.0).sqrt()))
}

/// A factor F with F Fᵀ = m for PSD `m`; works for singular matrices.
pub fn psd_factor(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = sym_eigen(m)?;
    let mut f = eig.eigenvectors.clone();
    for k in 0..eig.dim() {
        let s = eig.eigenvalues[k].max(0.0).sqrt();
        f.column_mut(k).scale_mut(s);
    }
    Ok(f)
}
