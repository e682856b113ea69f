//! Dense symmetric-matrix utilities.
//!
//! Everything here goes through a symmetric eigendecomposition, so rank
//! handling and clamping are explicit thresholds on the spectrum.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default relative cut below which eigenvalues count as zero in [`pseudo_inverse`].
pub const DEFAULT_PINV_TOL: f64 = 1e-10;
/// Default relative floor for negative eigenvalues tolerated by [`psd_sqrt`].
pub const DEFAULT_CLAMP_TOL: f64 = 1e-8;

/// A dense real symmetric matrix.
///
/// Construction symmetrizes the input as `(A + Aᵀ)/2`, so `get(i, j) == get(j, i)`
/// holds bitwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::invalid(format!(
                "matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.nrows() == 0 {
            return Err(Error::invalid("matrix dimension must be at least 1"));
        }
        let mut s = (&m + m.transpose()) * 0.5;
        // (a+b)/2 and (b+a)/2 agree in IEEE arithmetic, but copy to be exact.
        let n = s.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                s[(j, i)] = s[(i, j)];
            }
        }
        Ok(SymMatrix(s))
    }

    pub fn from_row_slice(dim: usize, data: &[f64]) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::invalid(format!(
                "expected {} entries for a {dim}x{dim} matrix, got {}",
                dim * dim,
                data.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(dim, dim, data))
    }

    pub fn identity(dim: usize) -> Self {
        assert!(dim >= 1, "dimension must be at least 1");
        SymMatrix(DMatrix::identity(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        assert!(!diag.is_empty(), "dimension must be at least 1");
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "dimension must be at least 1");
        SymMatrix(DMatrix::zeros(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// Leading `k×k` principal block.
    pub fn leading_block(&self, k: usize) -> Result<SymMatrix> {
        if k == 0 || k > self.dim() {
            return Err(Error::invalid(format!(
                "block size {k} out of range for dimension {}",
                self.dim()
            )));
        }
        Ok(SymMatrix(self.0.view((0, 0), (k, k)).into_owned()))
    }

    /// Embeds `self` as the leading block of a `dim×dim` zero matrix.
    pub fn zero_padded(&self, dim: usize) -> Result<SymMatrix> {
        if dim < self.dim() {
            return Err(Error::invalid(format!(
                "cannot pad a {}-dimensional matrix to {dim}",
                self.dim()
            )));
        }
        let mut out = DMatrix::zeros(dim, dim);
        out.view_mut((0, 0), (self.dim(), self.dim()))
            .copy_from(&self.0);
        Ok(SymMatrix(out))
    }

    pub fn scaled(&self, factor: f64) -> SymMatrix {
        SymMatrix(&self.0 * factor)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    fn check_finite(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::invalid("matrix has non-finite entries"))
        }
    }

    // nalgebra's symmetric QR iteration can lose several digits on ordinary
    // inputs, so the decomposition goes through faer.
    fn eigen(&self) -> Result<Eigen> {
        let n = self.dim();
        let m = faer::Mat::<f64>::from_fn(n, n, |i, j| self.0[(i, j)]);
        let evd = m
            .self_adjoint_eigen(faer::Side::Lower)
            .map_err(|e| Error::invalid(format!("eigendecomposition failed: {e:?}")))?;
        let (u, s) = (evd.U(), evd.S().column_vector());
        Ok(Eigen {
            eigenvalues: DVector::from_fn(n, |i, _| s[i]),
            eigenvectors: DMatrix::from_fn(n, n, |i, j| u[(i, j)]),
        })
    }
}

struct Eigen {
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
}

/// Rebuilds `V·diag(f(λ))·Vᵀ` from a decomposition.
fn spectral_map(eig: &Eigen, f: impl Fn(f64) -> f64) -> SymMatrix {
    let v = &eig.eigenvectors;
    let mut scaled = v.clone();
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        let s = f(lambda);
        scaled.column_mut(j).scale_mut(s);
    }
    let out = scaled * v.transpose();
    SymMatrix::new(out).expect("square by construction")
}

/// Moore–Penrose pseudoinverse; eigenvalues with `|λ| ≤ rel_tol·max|λ|` are dropped.
pub fn pseudo_inverse(a: &SymMatrix, rel_tol: f64) -> Result<SymMatrix> {
    a.check_finite()?;
    if !(0.0..1.0).contains(&rel_tol) {
        return Err(Error::invalid(format!(
            "rel_tol must lie in [0,1), got {rel_tol}"
        )));
    }
    let eig = a.eigen()?;
    let max_abs = eig.eigenvalues.iter().fold(0.0f64, |m, l| m.max(l.abs()));
    let cut = rel_tol * max_abs;
    Ok(spectral_map(&eig, |l| {
        if l.abs() <= cut || l == 0.0 {
            0.0
        } else {
            1.0 / l
        }
    }))
}

/// Symmetric PSD square root. Negative eigenvalues down to `-clamp_tol·max λ` are
/// treated as zero; anything more negative is an error.
pub fn psd_sqrt(a: &SymMatrix, clamp_tol: f64) -> Result<SymMatrix> {
    a.check_finite()?;
    let eig = a.eigen()?;
    let max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let min = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let floor = -clamp_tol * max;
    if min < floor {
        return Err(Error::NotPsd {
            min_eigenvalue: min,
            floor,
        });
    }
    Ok(spectral_map(&eig, |l| l.max(0.0).sqrt()))
}

pub fn min_eigenvalue(a: &SymMatrix) -> Result<f64> {
    a.check_finite()?;
    Ok(a.eigen()?.eigenvalues.min())
}

pub fn max_eigenvalue(a: &SymMatrix) -> Result<f64> {
    a.check_finite()?;
    Ok(a.eigen()?.eigenvalues.max())
}

/// Spectral norm of a general (not necessarily symmetric) matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// Inverse of a symmetric positive definite matrix via Cholesky, `None` if not PD.
pub fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    m.clone().cholesky().map(|c| c.inverse())
}
