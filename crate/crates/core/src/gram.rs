//! Weighted Gram matrix `∫ϖ f fᵀ`, its inverse, moment vectors and the
//! orthonormalizing transform.

use nalgebra::DVector;

use crate::basis::{BasisSet, Interval, WeightFn};
use crate::error::{Error, Result};
use crate::matalg::{Matrix, SymMatrix, Vector};
use crate::quadrature::{integrate_symmetric, integrate_vector, QuadratureConfig};

/// Relative threshold on the smallest Gram eigenvalue, against the largest.
pub const PD_REL_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct GramData {
    pub basis: BasisSet,
    pub weight: WeightFn,
    pub domain: Interval,
    /// `∫ϖ f fᵀ`
    pub gram: SymMatrix,
    /// inverse of `gram`
    pub gram_inv: SymMatrix,
    pub cond: f64,
}

impl GramData {
    pub fn d(&self) -> usize {
        self.basis.d()
    }
}

/// Moment vector `ϑ = ∫ϖ (f ⊗ I_n) x`, stacked kernel-major: block `i` is `∫ϖ f_i x`.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentVector {
    pub theta: Vector,
    pub n: usize,
}

impl MomentVector {
    pub fn new(theta: Vector, n: usize) -> Result<Self> {
        if n == 0 || !theta.len().is_multiple_of(n) {
            return Err(Error::Shape(format!(
                "moment of length {} is not a multiple of n = {n}",
                theta.len()
            )));
        }
        Ok(Self { theta, n })
    }

    pub fn d(&self) -> usize {
        self.theta.len() / self.n
    }
}

pub fn gram_matrix(b: &BasisSet, w: &WeightFn, domain: &Interval, cfg: &QuadratureConfig) -> Result<GramData> {
    let bd = b.domain();
    if !(bd.contains(domain.a) && bd.contains(domain.b)) {
        return Err(Error::InvalidArgument(format!(
            "integration domain [{}, {}] is not inside the basis domain [{}, {}]",
            domain.a, domain.b, bd.a, bd.b
        )));
    }
    let raw = integrate_symmetric(
        |t| {
            let f = b.eval_unchecked(t);
            &f * f.transpose()
        },
        w,
        domain,
        cfg,
    )?;
    let gram = SymMatrix::new(raw)?;
    let ev = gram.eigenvalues();
    let (lo, hi) = (ev[0], ev[ev.len() - 1]);
    let tol = PD_REL_TOL * hi.abs();
    if lo <= tol {
        return Err(Error::LinearDependence { min_eig: lo, tol });
    }
    let gram_inv = gram.pd_inverse()?;
    Ok(GramData {
        basis: b.clone(),
        weight: w.clone(),
        domain: *domain,
        gram,
        gram_inv,
        cond: hi / lo,
    })
}

pub fn moment<X>(
    b: &BasisSet,
    w: &WeightFn,
    domain: &Interval,
    n: usize,
    x: X,
    cfg: &QuadratureConfig,
) -> Result<MomentVector>
where
    X: Fn(f64) -> DVector<f64>,
{
    let d = b.d();
    let theta = integrate_vector(
        |t| {
            let f = b.eval_unchecked(t);
            let xv = x(t);
            let mut out = DVector::zeros(d * n);
            for i in 0..d {
                out.rows_mut(i * n, n).axpy(f[i], &xv, 0.0);
            }
            out
        },
        w,
        domain,
        cfg,
    )?;
    MomentVector::new(theta, n)
}

/// Symmetric `G = gram^{-1/2}`, so that `G f` is orthonormal under `ϖ`.
pub fn orthonormalizer(g: &GramData) -> Result<Matrix> {
    Ok(g.gram.inv_sqrt()?.into_inner())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{make_legendre, make_monomial, make_trig_block};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> QuadratureConfig {
        QuadratureConfig::default()
    }

    /// Analytic `∫_{-r}^0` of the trig-block outer product.
    fn trig_gram_oracle(w: f64, a: f64, b: f64) -> Matrix {
        let s = |t: f64| (w * t).sin();
        let c = |t: f64| (w * t).cos();
        let i_sin = (-c(b) + c(a)) / w;
        let i_cos = (s(b) - s(a)) / w;
        let i_sin2 = (b - a) / 2.0 - ((2.0 * w * b).sin() - (2.0 * w * a).sin()) / (4.0 * w);
        let i_cos2 = (b - a) / 2.0 + ((2.0 * w * b).sin() - (2.0 * w * a).sin()) / (4.0 * w);
        let i_sc = (s(b).powi(2) - s(a).powi(2)) / (2.0 * w);
        Matrix::from_row_slice(3, 3, &[b - a, i_sin, i_cos, i_sin, i_sin2, i_sc, i_cos, i_sc, i_cos2])
    }

    #[test]
    fn unit_kernel() {
        let dom = Interval::new(-1.0, 0.0).unwrap();
        let b = make_legendre(1, dom).unwrap();
        let g = gram_matrix(&b, &WeightFn::One, &dom, &cfg()).unwrap();
        assert!((g.gram[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((g.gram_inv[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn legendre_gram_is_diagonal() {
        let dom = Interval::new(0.0, 1.0).unwrap();
        let b = make_legendre(3, dom).unwrap();
        let g = gram_matrix(&b, &WeightFn::One, &dom, &cfg()).unwrap();
        let expected = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 1.0 / 3.0, 1.0 / 5.0]));
        assert!((g.gram.as_matrix() - expected).amax() < 1e-14);
    }

    #[test]
    fn trig_gram_matches_antiderivatives() {
        let dom = Interval::delay_window(0.1).unwrap();
        let b = make_trig_block(12.0, dom).unwrap();
        let g = gram_matrix(&b, &WeightFn::One, &dom, &cfg()).unwrap();
        let oracle = trig_gram_oracle(12.0, -0.1, 0.0);
        assert!((g.gram.as_matrix() - oracle).amax() < 1e-14);
        let prod = g.gram.as_matrix() * g.gram_inv.as_matrix();
        assert!((prod - Matrix::identity(3, 3)).amax() < 1e-10 * g.cond);
    }

    #[test]
    fn dependent_kernels_rejected() {
        let dom = Interval::delay_window(0.1).unwrap();
        let b = BasisSet::custom(
            3,
            dom,
            |t| DVector::from_vec(vec![1.0, 1.0, (12.0 * t).cos()]),
            None,
        )
        .unwrap();
        let err = gram_matrix(&b, &WeightFn::One, &dom, &cfg()).unwrap_err();
        assert!(matches!(err, Error::LinearDependence { .. }));
    }

    #[test]
    fn moments() {
        let dom = Interval::new(0.0, 1.0).unwrap();
        let b = make_legendre(1, dom).unwrap();
        let z = moment(&b, &WeightFn::One, &dom, 2, |_| DVector::zeros(2), &cfg()).unwrap();
        assert_eq!(z.theta, DVector::zeros(2));
        let m = moment(&b, &WeightFn::One, &dom, 1, |t| DVector::from_element(1, t), &cfg()).unwrap();
        assert!((m.theta[0] - 0.5).abs() < 1e-15);

        let dom = Interval::new(-1.0, 0.0).unwrap();
        let b = make_legendre(2, dom).unwrap();
        let m = moment(&b, &WeightFn::One, &dom, 2, |_| DVector::from_vec(vec![1.0, 0.0]), &cfg()).unwrap();
        let expected = [1.0, 0.0, 0.0, 0.0];
        for (a, e) in m.theta.iter().zip(expected) {
            assert!((a - e).abs() < 1e-15);
        }
    }

    #[test]
    fn orthonormalizer_cases() {
        let dom = Interval::new(0.0, 1.0).unwrap();
        let g = gram_matrix(&make_legendre(3, dom).unwrap(), &WeightFn::One, &dom, &cfg()).unwrap();
        let t = orthonormalizer(&g).unwrap();
        let expected = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 3f64.sqrt(), 5f64.sqrt()]));
        assert!((&t - expected).amax() < 1e-12);

        let dom = Interval::delay_window(0.1).unwrap();
        let b = make_trig_block(12.0, dom).unwrap();
        let g = gram_matrix(&b, &WeightFn::One, &dom, &cfg()).unwrap();
        let t = orthonormalizer(&g).unwrap();
        let g2 = gram_matrix(&b.transformed(&t).unwrap(), &WeightFn::One, &dom, &cfg()).unwrap();
        assert!((g2.gram.as_matrix() - Matrix::identity(3, 3)).amax() < 1e-10);
    }

    #[test]
    fn change_of_basis_congruence() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dom = Interval::new(-0.7, 0.4).unwrap();
        let bases = [
            make_monomial(4, dom).unwrap(),
            make_legendre(3, dom).unwrap(),
            make_trig_block(3.0, dom).unwrap(),
        ];
        for b in bases {
            for w in [WeightFn::One, WeightFn::PowerLeft(2), WeightFn::PowerRight(1)] {
                let d = b.d();
                let t = Matrix::from_fn(d, d, |i, j| {
                    rng.random_range(-1.0..1.0) + if i == j { 2.0 } else { 0.0 }
                });
                let g = gram_matrix(&b, &w, &dom, &cfg()).unwrap();
                let gt = gram_matrix(&b.transformed(&t).unwrap(), &w, &dom, &cfg()).unwrap();
                let expected = &t * g.gram.as_matrix() * t.transpose();
                let rel = (gt.gram.as_matrix() - &expected).amax() / expected.amax();
                assert!(rel < 1e-11, "{rel}");
            }
        }
    }

    #[test]
    fn moment_is_linear() {
        let dom = Interval::new(-1.0, 0.5).unwrap();
        let b = make_legendre(4, dom).unwrap();
        let w = WeightFn::PowerRight(2);
        let x1 = |t: f64| DVector::from_vec(vec![t.sin(), t * t]);
        let x2 = |t: f64| DVector::from_vec(vec![1.0 - t, (2.0 * t).cos()]);
        let (al, be) = (0.7, -1.3);
        let m1 = moment(&b, &w, &dom, 2, x1, &cfg()).unwrap();
        let m2 = moment(&b, &w, &dom, 2, x2, &cfg()).unwrap();
        let mc = moment(&b, &w, &dom, 2, |t| x1(t) * al + x2(t) * be, &cfg()).unwrap();
        assert!((mc.theta - (m1.theta * al + m2.theta * be)).amax() < 1e-12);
    }
}
