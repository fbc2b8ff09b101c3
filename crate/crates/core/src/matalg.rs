//! Dense Kronecker/block algebra and definiteness tests.
//!
//! Kronecker products use the row-major block convention: block `(i, j)`
//! of `A ⊗ B` is `A[(i, j)] · B`.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Real symmetric matrix; symmetric by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix(Matrix);

impl SymMatrix {
    /// Symmetrizes `(A + Aᵀ) / 2`.
    pub fn new(a: Matrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Shape(format!(
                "symmetric matrix must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        Ok(Self::symmetrize(a))
    }

    fn symmetrize(a: Matrix) -> Self {
        let t = a.transpose();
        Self((a + t) * 0.5)
    }

    pub fn identity(n: usize) -> Self {
        Self(Matrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        Self(Matrix::zeros(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        Self(Matrix::from_diagonal(&Vector::from_column_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_inner(self) -> Matrix {
        self.0
    }

    /// Ascending eigenvalues.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.0.clone()).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().first().copied().unwrap_or(f64::INFINITY)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues().last().copied().unwrap_or(f64::NEG_INFINITY)
    }

    pub fn inverse(&self) -> Result<SymMatrix> {
        let inv = self
            .0
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::NotPositiveDefinite("singular matrix".into()))?;
        Ok(Self::symmetrize(inv))
    }

    /// Inverse of a positive definite matrix via Cholesky.
    pub fn pd_inverse(&self) -> Result<SymMatrix> {
        let chol = self
            .0
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("Cholesky factorization failed".into()))?;
        Ok(Self::symmetrize(chol.inverse()))
    }

    /// `A^{-1/2}` through the eigendecomposition.
    pub fn inv_sqrt(&self) -> Result<SymMatrix> {
        let eig = SymmetricEigen::new(self.0.clone());
        if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
            return Err(Error::NotPositiveDefinite("inverse square root needs PD input".into()));
        }
        let d = Matrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
        Ok(Self::symmetrize(&eig.eigenvectors * d * eig.eigenvectors.transpose()))
    }

    /// `Tᵀ A T`.
    pub fn congruence(&self, t: &Matrix) -> SymMatrix {
        Self::symmetrize(t.transpose() * &self.0 * t)
    }
}

impl Deref for SymMatrix {
    type Target = Matrix;
    fn deref(&self) -> &Matrix {
        &self.0
    }
}

pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    a.kronecker(b)
}

/// `A + Aᵀ`.
pub fn sy(a: &Matrix) -> Result<SymMatrix> {
    if !a.is_square() {
        return Err(Error::Shape(format!(
            "Sy needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(SymMatrix(a + a.transpose()))
}

/// Block-diagonal direct sum `A ⊕ B ⊕ …`.
pub fn direct_sum(blocks: &[&Matrix]) -> Matrix {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Assemble a 2×2 block matrix `[[a, b], [c, d]]`.
pub fn block2(a: &Matrix, b: &Matrix, c: &Matrix, d: &Matrix) -> Result<Matrix> {
    if a.nrows() != b.nrows() || c.nrows() != d.nrows() || a.ncols() != c.ncols() || b.ncols() != d.ncols() {
        return Err(Error::Shape("incompatible 2x2 block shapes".into()));
    }
    let mut out = Matrix::zeros(a.nrows() + c.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((0, a.ncols()), b.shape()).copy_from(b);
    out.view_mut((a.nrows(), 0), c.shape()).copy_from(c);
    out.view_mut((a.nrows(), a.ncols()), d.shape()).copy_from(d);
    Ok(out)
}

/// Lower bound `MᵀB + BᵀM − MᵀCM ⪯ BᵀC⁻¹B`, tight at `M = C⁻¹B`.
pub fn lemma2_bound(b: &Matrix, c: &SymMatrix, m: &Matrix) -> Result<SymMatrix> {
    if c.dim() != b.nrows() || m.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "need B, M of shape {}x{} matching C of dim {}",
            b.nrows(),
            b.ncols(),
            c.dim()
        )));
    }
    if c.as_matrix().clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite("C must be positive definite".into()));
    }
    let mtb = m.transpose() * b;
    let val = &mtb + mtb.transpose() - m.transpose() * c.as_matrix() * m;
    SymMatrix::new(val)
}

/// Repartition `X = [X_1 … X_d]` (each block `n × k`) into `X̂ = Col(X_1, …, X_d)`.
pub fn stack_rows_to_cols(x: &Matrix, d: usize) -> Result<Matrix> {
    if d == 0 || !x.ncols().is_multiple_of(d) {
        return Err(Error::Shape(format!(
            "{} columns are not divisible into {d} blocks",
            x.ncols()
        )));
    }
    let n = x.nrows();
    let k = x.ncols() / d;
    let mut out = Matrix::zeros(d * n, k);
    for i in 0..d {
        out.view_mut((i * n, 0), (n, k)).copy_from(&x.view((0, i * k), (n, k)));
    }
    Ok(out)
}

/// Inverse of [`stack_rows_to_cols`]: `Col(X_1, …, X_d)` with blocks of `n` rows back to `Row(X_i)`.
pub fn stack_cols_to_rows(x_hat: &Matrix, n: usize) -> Result<Matrix> {
    if n == 0 || !x_hat.nrows().is_multiple_of(n) {
        return Err(Error::Shape(format!(
            "{} rows are not divisible into blocks of {n}",
            x_hat.nrows()
        )));
    }
    let d = x_hat.nrows() / n;
    let k = x_hat.ncols();
    let mut out = Matrix::zeros(n, d * k);
    for i in 0..d {
        out.view_mut((0, i * k), (n, k)).copy_from(&x_hat.view((i * n, 0), (n, k)));
    }
    Ok(out)
}

/// Smallest eigenvalue strictly above `margin`.
pub fn is_pd(a: &SymMatrix, margin: f64) -> bool {
    a.min_eigenvalue() > margin
}

/// Smallest eigenvalue at least `-margin`.
pub fn is_psd(a: &SymMatrix, margin: f64) -> bool {
    a.min_eigenvalue() >= -margin
}

/// Both routes for `[[U, −X], [−Xᵀ, Y]] ⪰ 0`: the full block matrix and the
/// Schur complement `Y − XᵀU⁻¹X`.
#[derive(Clone, Copy, Debug)]
pub struct SchurVerdict {
    pub block_min_eig: f64,
    pub complement_min_eig: f64,
    pub block_psd: bool,
    pub complement_psd: bool,
}

pub fn schur_routes(u: &SymMatrix, x: &Matrix, y: &SymMatrix, margin: f64) -> Result<SchurVerdict> {
    if x.nrows() != u.dim() || x.ncols() != y.dim() {
        return Err(Error::Shape(format!(
            "X must be {}x{}, got {}x{}",
            u.dim(),
            y.dim(),
            x.nrows(),
            x.ncols()
        )));
    }
    let u_inv = u.pd_inverse()?;
    let neg_x = -x;
    let full = SymMatrix::new(block2(u, &neg_x, &neg_x.transpose(), y)?)?;
    let comp = SymMatrix::new(y.as_matrix() - x.transpose() * u_inv.as_matrix() * x)?;
    let block_min_eig = full.min_eigenvalue();
    let complement_min_eig = comp.min_eigenvalue();
    // the block route's eigenvalue scale differs from the complement's; scale its margin by ‖U‖
    let block_margin = margin * (1.0 + u.max_eigenvalue());
    Ok(SchurVerdict {
        block_min_eig,
        complement_min_eig,
        block_psd: block_min_eig >= -block_margin,
        complement_psd: complement_min_eig >= -margin,
    })
}

/// `[[U, −X], [−Xᵀ, Y]] ⪰ 0` via the Schur complement `Y − XᵀU⁻¹X ⪰ 0`.
pub fn schur_psd(u: &SymMatrix, x: &Matrix, y: &SymMatrix) -> Result<bool> {
    let v = schur_routes(u, x, y, 1e-10 * (1.0 + y.as_matrix().amax()))?;
    Ok(v.complement_psd)
}
