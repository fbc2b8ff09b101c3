//! Lower bounds for `∫ϖ xᵀUx`: the Gram-matrix bound, the free-matrix
//! bound with its slack certificate, the projected free-matrix bound, and
//! the optimal completion that makes all three coincide.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSet, Interval, WeightFn};
use crate::error::{Error, Result};
use crate::gram::{GramData, MomentVector};
use crate::matalg::{kron, schur_routes, stack_cols_to_rows, stack_rows_to_cols, sy, Matrix, SymMatrix, Vector};
use crate::quadrature::{integrate_scalar, integrate_symmetric, QuadratureConfig};

pub mod suite;

/// Default relative slack for the dominance checks.
pub const DEFAULT_TOL: f64 = 1e-9;

/// A vector signal `x : K → R^n`.
#[derive(Clone)]
pub struct TestSignal {
    pub n: usize,
    eval: Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>,
}

impl TestSignal {
    pub fn new(n: usize, f: impl Fn(f64) -> DVector<f64> + Send + Sync + 'static) -> Self {
        Self { n, eval: Arc::new(f) }
    }

    pub fn eval(&self, tau: f64) -> DVector<f64> {
        (self.eval)(tau)
    }

    /// Sampled boundedness on the working interval.
    pub fn is_bounded_on(&self, domain: &Interval, samples: usize) -> bool {
        domain
            .samples(samples.max(2))
            .into_iter()
            .all(|t| self.eval(t).iter().all(|v| v.is_finite()))
    }

    /// `x(τ) = (f(τ)ᵀ ⊗ I_n) ω`, the signal for which the Gram bound is tight.
    pub fn from_coefficients(basis: &BasisSet, omega: &Vector, n: usize) -> Result<Self> {
        if omega.len() != basis.d() * n {
            return Err(Error::Shape(format!(
                "coefficient vector has length {}, expected {}",
                omega.len(),
                basis.d() * n
            )));
        }
        let basis = basis.clone();
        let omega = omega.clone();
        Ok(Self::new(n, move |t| project_coefficients(&basis.eval_unchecked(t), &omega, n)))
    }
}

impl fmt::Debug for TestSignal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TestSignal(n = {})", self.n)
    }
}

/// `(fᵀ ⊗ I_n) ω = Σ f_i ω_i`.
fn project_coefficients(f: &DVector<f64>, omega: &Vector, n: usize) -> DVector<f64> {
    let mut out = DVector::zeros(n);
    for (i, fi) in f.iter().enumerate() {
        out += omega.rows(i * n, n) * *fi;
    }
    out
}

fn check_u(u: &SymMatrix, n: usize) -> Result<()> {
    if u.dim() != n {
        return Err(Error::Shape(format!("U must be {n}x{n}, got {0}x{0}", u.dim())));
    }
    Ok(())
}

/// `∫ϖ xᵀUx`.
pub fn lhs_energy(x: &TestSignal, u: &SymMatrix, w: &WeightFn, domain: &Interval, cfg: &QuadratureConfig) -> Result<f64> {
    check_u(u, x.n)?;
    integrate_scalar(
        |t| {
            let v = x.eval(t);
            v.dot(&(u.as_matrix() * &v))
        },
        w,
        domain,
        cfg,
    )
}

/// `ϑᵀ (F ⊗ U) ϑ` with `F` the inverse Gram matrix.
pub fn gram_bound(theta: &MomentVector, g: &GramData, u: &SymMatrix) -> Result<f64> {
    check_moment(theta, g)?;
    check_u(u, theta.n)?;
    // tr(ΘᵀFΘU) with F = L⁻ᵀL⁻¹: a triangular solve loses less than the explicit inverse
    let (d, n) = (g.d(), theta.n);
    let big = Matrix::from_fn(d, n, |i, k| theta.theta[i * n + k]);
    let w = match g.gram.as_matrix().clone().cholesky() {
        Some(ch) => ch.l().solve_lower_triangular(&big).ok_or_else(|| Error::NotPositiveDefinite("singular Cholesky factor".into()))?,
        None => return Err(Error::NotPositiveDefinite("Gram matrix".into())),
    };
    Ok((&w * u.as_matrix()).component_mul(&w).sum())
}

fn check_moment(theta: &MomentVector, g: &GramData) -> Result<()> {
    if theta.theta.len() != g.d() * theta.n {
        return Err(Error::Shape(format!(
            "moment has length {}, expected d·n = {}",
            theta.theta.len(),
            g.d() * theta.n
        )));
    }
    Ok(())
}

/// Least-squares coefficients `ω* = (F ⊗ I_n) ϑ`.
pub fn least_squares_coeff(theta: &MomentVector, g: &GramData) -> Result<Vector> {
    check_moment(theta, g)?;
    let n = theta.n;
    Ok(kron(g.gram_inv.as_matrix(), &Matrix::identity(n, n)) * &theta.theta)
}

/// `∫ϖ (x − Fᵀω)ᵀ U (x − Fᵀω)`; with `U = I` this is the least-squares residual.
pub fn residual_energy(
    x: &TestSignal,
    omega: &Vector,
    u: &SymMatrix,
    g: &GramData,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    check_u(u, x.n)?;
    if omega.len() != g.d() * x.n {
        return Err(Error::Shape("coefficient length must be d·n".into()));
    }
    integrate_scalar(
        |t| {
            let e = x.eval(t) - project_coefficients(&g.basis.eval_unchecked(t), omega, x.n);
            e.dot(&(u.as_matrix() * &e))
        },
        &g.weight,
        &g.domain,
        cfg,
    )
}

/// Slack data `(X, X̂, Y, Υ, z)` for the free-matrix bound with integer `ρ`.
#[derive(Clone, Debug)]
pub struct FreeMatrixCert {
    pub rho: usize,
    /// `n × ρdn`
    pub x: Matrix,
    /// `dn × ρn`, the column restacking of `x`
    pub x_hat: Matrix,
    /// `ρdn × ρdn`
    pub y: SymMatrix,
    /// `dn × ρn`; when set, `Υz = ϑ` is expected for the signal under test
    pub upsilon: Option<Matrix>,
    /// `ρn`
    pub z: Vector,
}

impl FreeMatrixCert {
    pub fn new(rho: usize, d: usize, x: Matrix, y: SymMatrix, z: Vector, upsilon: Option<Matrix>) -> Result<Self> {
        let n = x.nrows();
        if rho == 0 || x.ncols() != rho * d * n {
            return Err(Error::Shape(format!(
                "X must be {n}x{}, got {}x{}",
                rho * d * n,
                x.nrows(),
                x.ncols()
            )));
        }
        if y.dim() != rho * d * n || z.len() != rho * n {
            return Err(Error::Shape("Y must be ρdn square and z of length ρn".into()));
        }
        if let Some(ups) = &upsilon {
            if ups.shape() != (d * n, rho * n) {
                return Err(Error::Shape(format!("Υ must be {}x{}", d * n, rho * n)));
            }
        }
        let x_hat = stack_rows_to_cols(&x, d)?;
        Ok(Self { rho, x, x_hat, y, upsilon, z })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    /// `[[U, −X], [−Xᵀ, Y]] ⪰ 0`, checked through the Schur complement.
    pub fn is_admissible(&self, u: &SymMatrix, margin: f64) -> Result<bool> {
        check_u(u, self.n())?;
        Ok(schur_routes(u, &self.x, &self.y, margin)?.complement_psd)
    }
}

/// `W = ∫ϖ (fᵀ ⊗ I_{ρn}) Y (f ⊗ I_{ρn})`.
#[allow(clippy::too_many_arguments)]
pub fn w_matrix(
    y: &SymMatrix,
    b: &BasisSet,
    w: &WeightFn,
    domain: &Interval,
    rho: usize,
    n: usize,
    cfg: &QuadratureConfig,
) -> Result<SymMatrix> {
    let k = rho * n;
    if y.dim() != b.d() * k {
        return Err(Error::Shape(format!(
            "Y must be {0}x{0} for d = {1}, ρn = {k}",
            b.d() * k,
            b.d()
        )));
    }
    let ident = Matrix::identity(k, k);
    let m = integrate_symmetric(
        |t| {
            let fk = b.eval_unchecked(t).kronecker(&ident);
            fk.transpose() * y.as_matrix() * fk
        },
        w,
        domain,
        cfg,
    )?;
    SymMatrix::new(m)
}

/// Admissibility margin used before accepting a certificate: relative to `‖Y‖`.
fn admissibility_margin(cert: &FreeMatrixCert) -> f64 {
    1e-9 * (1.0 + cert.y.as_matrix().amax())
}

/// `2ϑᵀX̂z − zᵀWz`. Rejects certificates violating the block condition on `U`.
pub fn free_matrix_bound(theta: &MomentVector, cert: &FreeMatrixCert, w: &SymMatrix, u: &SymMatrix) -> Result<f64> {
    if theta.theta.len() != cert.x_hat.nrows() || w.dim() != cert.z.len() {
        return Err(Error::Shape("moment, X̂, W and z dimensions disagree".into()));
    }
    if !cert.is_admissible(u, admissibility_margin(cert))? {
        return Err(Error::Contract(
            "[[U, -X], [-Xᵀ, Y]] is not positive semidefinite".into(),
        ));
    }
    let xz = &cert.x_hat * &cert.z;
    Ok(2.0 * theta.theta.dot(&xz) - cert.z.dot(&(w.as_matrix() * &cert.z)))
}

/// `zᵀ[Sy(ΥᵀX̂) − W]z`; equal to [`free_matrix_bound`] whenever `Υz = ϑ`.
pub fn free_matrix_bound_projected(cert: &FreeMatrixCert, w: &SymMatrix) -> Result<f64> {
    let ups = cert
        .upsilon
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("certificate carries no Υ".into()))?;
    let core = sy(&(ups.transpose() * &cert.x_hat))?.into_inner() - w.as_matrix();
    Ok(cert.z.dot(&(core * &cert.z)))
}

fn check_projection(theta: &MomentVector, upsilon: &Matrix, z: &Vector) -> Result<()> {
    if upsilon.nrows() != theta.theta.len() || upsilon.ncols() != z.len() {
        return Err(Error::Shape("Υ must be dn × ρn matching ϑ and z".into()));
    }
    let diff = (upsilon * z - &theta.theta).amax();
    let scale = theta.theta.amax().max(1.0);
    if diff > 1e-8 * scale {
        return Err(Error::Contract(format!("Υz differs from ϑ by {diff:e}")));
    }
    Ok(())
}

/// `zᵀ[Sy(ΥᵀX̂) − X̂ᵀ(gram ⊗ U⁻¹)X̂]z`, requiring `Υz = ϑ`.
pub fn corollary2_bound(
    theta: &MomentVector,
    upsilon: &Matrix,
    z: &Vector,
    x_hat: &Matrix,
    g: &GramData,
    u: &SymMatrix,
) -> Result<f64> {
    check_moment(theta, g)?;
    check_u(u, theta.n)?;
    check_projection(theta, upsilon, z)?;
    if x_hat.shape() != upsilon.shape() {
        return Err(Error::Shape("X̂ and Υ must share a shape".into()));
    }
    let u_inv = u.pd_inverse()?;
    let quad = x_hat.transpose() * kron(g.gram.as_matrix(), u_inv.as_matrix()) * x_hat;
    let core = sy(&(upsilon.transpose() * x_hat))?.into_inner() - quad;
    Ok(z.dot(&(core * z)))
}

/// Slack choice that closes every bound onto the Gram bound.
#[derive(Clone, Debug)]
pub struct Completion {
    pub x: Matrix,
    pub x_hat: Matrix,
    pub y: SymMatrix,
}

/// `X̂ = (F ⊗ U)Υ`, `X` its row restacking, `Y = XᵀU⁻¹X`.
pub fn optimal_completion(g: &GramData, u: &SymMatrix, upsilon: &Matrix) -> Result<Completion> {
    let n = u.dim();
    if upsilon.nrows() != g.d() * n {
        return Err(Error::Shape(format!("Υ must have d·n = {} rows", g.d() * n)));
    }
    let u_inv = u.pd_inverse()?;
    let x_hat = kron(g.gram_inv.as_matrix(), u.as_matrix()) * upsilon;
    let x = stack_cols_to_rows(&x_hat, n)?;
    let y = SymMatrix::new(x.transpose() * u_inv.as_matrix() * &x)?;
    Ok(Completion { x, x_hat, y })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    Gram,
    FreeMatrix,
    Corollary2,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct InequalityReport {
    pub lhs: f64,
    pub bound: f64,
    pub gap: f64,
    pub pass: bool,
}

impl InequalityReport {
    pub fn new(lhs: f64, bound: f64, tol: f64) -> Self {
        let gap = lhs - bound;
        Self {
            lhs,
            bound,
            gap,
            pass: gap >= -tol * lhs.abs().max(1.0),
        }
    }
}

/// Evaluate `lhs` and the requested bound for one signal. Failures of the
/// inequality are reported, not raised.
pub fn verify_inequality(
    x: &TestSignal,
    u: &SymMatrix,
    g: &GramData,
    kind: BoundKind,
    cert: Option<&FreeMatrixCert>,
    cfg: &QuadratureConfig,
    tol: f64,
) -> Result<InequalityReport> {
    let lhs = lhs_energy(x, u, &g.weight, &g.domain, cfg)?;
    let theta = crate::gram::moment(&g.basis, &g.weight, &g.domain, x.n, |t| x.eval(t), cfg)?;
    let need_cert = || cert.ok_or_else(|| Error::InvalidArgument(format!("{kind:?} bound needs a certificate")));
    let bound = match kind {
        BoundKind::Gram => gram_bound(&theta, g, u)?,
        BoundKind::FreeMatrix => {
            let c = need_cert()?;
            let w = w_matrix(&c.y, &g.basis, &g.weight, &g.domain, c.rho, x.n, cfg)?;
            free_matrix_bound(&theta, c, &w, u)?
        }
        BoundKind::Corollary2 => {
            let c = need_cert()?;
            let ups = c
                .upsilon
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("projected bound needs Υ".into()))?;
            corollary2_bound(&theta, ups, &c.z, &c.x_hat, g, u)?
        }
    };
    Ok(InequalityReport::new(lhs, bound, tol))
}
