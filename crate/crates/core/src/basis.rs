//! Weight functions and kernel vectors `f(τ)` on a finite interval.
//!
//! Built-in families carry a companion matrix `M` with `f'(τ) = M f(τ)`,
//! which the stability conditions need for differentiating the
//! distributed-delay state.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A finite interval `[a, b]` with `a < b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub a: f64,
    pub b: f64,
}

impl Interval {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "interval endpoints must be finite, got [{a}, {b}]"
            )));
        }
        if a >= b {
            return Err(Error::InvalidArgument(format!(
                "interval requires a < b, got [{a}, {b}]"
            )));
        }
        Ok(Self { a, b })
    }

    /// The delay window `[-r, 0]`.
    pub fn delay_window(r: f64) -> Result<Self> {
        Self::new(-r, 0.0)
    }

    pub fn length(&self) -> f64 {
        self.b - self.a
    }

    /// Membership with a relative slack of a few ulps of the interval length.
    pub fn contains(&self, tau: f64) -> bool {
        let slack = 1e-12 * self.length().max(self.a.abs()).max(self.b.abs());
        tau >= self.a - slack && tau <= self.b + slack
    }

    /// `count` evenly spaced points covering both endpoints.
    pub fn samples(&self, count: usize) -> Vec<f64> {
        match count {
            0 => Vec::new(),
            1 => vec![0.5 * (self.a + self.b)],
            _ => (0..count)
                .map(|i| self.a + self.length() * i as f64 / (count - 1) as f64)
                .collect(),
        }
    }
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type VectorFn = Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>;

/// Nonnegative weight `ϖ(τ)` on the integration domain.
#[derive(Clone)]
pub enum WeightFn {
    One,
    /// `(τ - a)^p`
    PowerLeft(u32),
    /// `(b - τ)^p`
    PowerRight(u32),
    Custom(ScalarFn),
}

impl WeightFn {
    pub fn custom(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        WeightFn::Custom(Arc::new(f))
    }

    pub fn eval(&self, tau: f64, domain: &Interval) -> f64 {
        match self {
            WeightFn::One => 1.0,
            WeightFn::PowerLeft(p) => (tau - domain.a).max(0.0).powi(*p as i32),
            WeightFn::PowerRight(p) => (domain.b - tau).max(0.0).powi(*p as i32),
            WeightFn::Custom(f) => f(tau),
        }
    }

    pub fn is_unit(&self) -> bool {
        matches!(self, WeightFn::One | WeightFn::PowerLeft(0) | WeightFn::PowerRight(0))
    }

    /// Sampled nonnegativity; custom weights are not validated further.
    pub fn is_nonnegative_on(&self, domain: &Interval, samples: usize) -> bool {
        domain
            .samples(samples.max(2))
            .into_iter()
            .all(|t| self.eval(t, domain) >= 0.0)
    }
}

impl fmt::Debug for WeightFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightFn::One => write!(f, "One"),
            WeightFn::PowerLeft(p) => write!(f, "PowerLeft({p})"),
            WeightFn::PowerRight(p) => write!(f, "PowerRight({p})"),
            WeightFn::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Family {
    Monomial,
    Legendre,
    TrigBlock { omega: f64 },
    Custom,
    /// `T f(τ)` for an invertible `T` applied to another basis.
    Transformed,
}

#[derive(Clone)]
enum Kernel {
    Monomial,
    Legendre,
    Trig(f64),
    Custom(VectorFn),
    Linear { t: DMatrix<f64>, inner: Box<BasisSet> },
}

/// Kernel vector `f(τ) ∈ R^d` on a domain, with an optional companion matrix.
#[derive(Clone)]
pub struct BasisSet {
    d: usize,
    family: Family,
    domain: Interval,
    companion: Option<DMatrix<f64>>,
    kernel: Kernel,
}

impl fmt::Debug for BasisSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BasisSet")
            .field("d", &self.d)
            .field("family", &self.family)
            .field("domain", &self.domain)
            .field("companion", &self.companion)
            .finish()
    }
}

/// `[1, sin(ωτ), cos(ωτ)]`.
pub fn make_trig_block(omega: f64, domain: Interval) -> Result<BasisSet> {
    if omega == 0.0 || !omega.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "trig block needs a finite nonzero frequency, got {omega}"
        )));
    }
    let mut m = DMatrix::zeros(3, 3);
    m[(1, 2)] = omega;
    m[(2, 1)] = -omega;
    Ok(BasisSet {
        d: 3,
        family: Family::TrigBlock { omega },
        domain,
        companion: Some(m),
        kernel: Kernel::Trig(omega),
    })
}

/// Shifted Legendre polynomials of degree `0..d` on the domain.
pub fn make_legendre(d: usize, domain: Interval) -> Result<BasisSet> {
    if d == 0 {
        return Err(Error::InvalidArgument("legendre basis needs d >= 1".into()));
    }
    // dP_k/ds = sum over j < k with k - j odd of (2j + 1) P_j, and ds/dτ = 2 / (b - a).
    let scale = 2.0 / domain.length();
    let m = DMatrix::from_fn(d, d, |k, j| {
        if j < k && (k - j) % 2 == 1 {
            scale * (2 * j + 1) as f64
        } else {
            0.0
        }
    });
    Ok(BasisSet {
        d,
        family: Family::Legendre,
        domain,
        companion: Some(m),
        kernel: Kernel::Legendre,
    })
}

/// Normalized monomials `((τ - a) / (b - a))^i`, `i = 0..d`.
pub fn make_monomial(d: usize, domain: Interval) -> Result<BasisSet> {
    if d == 0 {
        return Err(Error::InvalidArgument("monomial basis needs d >= 1".into()));
    }
    let len = domain.length();
    let m = DMatrix::from_fn(d, d, |i, j| if j + 1 == i { i as f64 / len } else { 0.0 });
    Ok(BasisSet {
        d,
        family: Family::Monomial,
        domain,
        companion: Some(m),
        kernel: Kernel::Monomial,
    })
}

fn legendre_values(s: f64, d: usize) -> DVector<f64> {
    let mut v = DVector::zeros(d);
    v[0] = 1.0;
    if d > 1 {
        v[1] = s;
    }
    for k in 1..d.saturating_sub(1) {
        let kf = k as f64;
        v[k + 1] = ((2.0 * kf + 1.0) * s * v[k] - kf * v[k - 1]) / (kf + 1.0);
    }
    v
}

impl BasisSet {
    /// A caller-supplied kernel vector. Companion-dependent features stay
    /// unavailable unless `companion` is given.
    pub fn custom(
        d: usize,
        domain: Interval,
        f: impl Fn(f64) -> DVector<f64> + Send + Sync + 'static,
        companion: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("basis needs d >= 1".into()));
        }
        if let Some(m) = &companion {
            if m.shape() != (d, d) {
                return Err(Error::Shape(format!(
                    "companion must be {d}x{d}, got {}x{}",
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
        Ok(Self {
            d,
            family: Family::Custom,
            domain,
            companion,
            kernel: Kernel::Custom(Arc::new(f)),
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn domain(&self) -> Interval {
        self.domain
    }

    pub fn companion(&self) -> Option<&DMatrix<f64>> {
        self.companion.as_ref()
    }

    /// The basis `T f(τ)`; its companion is `T M T⁻¹`.
    pub fn transformed(&self, t: &DMatrix<f64>) -> Result<Self> {
        if t.shape() != (self.d, self.d) {
            return Err(Error::Shape(format!(
                "transform must be {0}x{0}, got {1}x{2}",
                self.d,
                t.nrows(),
                t.ncols()
            )));
        }
        let t_inv = t
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidArgument("transform is singular".into()))?;
        let companion = self.companion.as_ref().map(|m| t * m * &t_inv);
        Ok(Self {
            d: self.d,
            family: Family::Transformed,
            domain: self.domain,
            companion,
            kernel: Kernel::Linear {
                t: t.clone(),
                inner: Box::new(self.clone()),
            },
        })
    }

    /// Rebuild the same family on another domain. Built-in polynomial
    /// families are re-normalized to the new endpoints.
    pub fn with_domain(&self, domain: Interval) -> Result<Self> {
        match &self.kernel {
            Kernel::Monomial => make_monomial(self.d, domain),
            Kernel::Legendre => make_legendre(self.d, domain),
            Kernel::Trig(omega) => make_trig_block(*omega, domain),
            Kernel::Custom(_) => {
                let mut out = self.clone();
                out.domain = domain;
                Ok(out)
            }
            Kernel::Linear { t, inner } => inner.with_domain(domain)?.transformed(t),
        }
    }

    /// `f(τ)`, rejecting points outside the domain.
    pub fn eval(&self, tau: f64) -> Result<DVector<f64>> {
        if !self.domain.contains(tau) {
            return Err(Error::Domain {
                tau,
                a: self.domain.a,
                b: self.domain.b,
            });
        }
        Ok(self.eval_unchecked(tau))
    }

    /// `f(τ)` without the domain check; all built-in kernels extend to R.
    pub fn eval_unchecked(&self, tau: f64) -> DVector<f64> {
        let Interval { a, b } = self.domain;
        match &self.kernel {
            Kernel::Trig(w) => DVector::from_vec(vec![1.0, (w * tau).sin(), (w * tau).cos()]),
            Kernel::Legendre => legendre_values(2.0 * (tau - a) / (b - a) - 1.0, self.d),
            Kernel::Monomial => {
                let s = (tau - a) / (b - a);
                let mut v = DVector::zeros(self.d);
                let mut p = 1.0;
                for i in 0..self.d {
                    v[i] = p;
                    p *= s;
                }
                v
            }
            Kernel::Custom(f) => f(tau),
            Kernel::Linear { t, inner } => t * inner.eval_unchecked(tau),
        }
    }

    /// Largest scaled residual `‖f'(τ) - M f(τ)‖∞ / max(1, ‖M‖∞‖f(τ)‖∞)`
    /// over `samples` points, with `f'` from central differences.
    /// `None` when the basis declares no companion.
    pub fn companion_residual(&self, samples: usize) -> Option<f64> {
        let m = self.companion.as_ref()?;
        let m_norm = m.row_iter().map(|r| r.abs().sum()).fold(0.0, f64::max);
        let h = 1e-4 / m_norm.max(1.0 / self.domain.length());
        let worst = self
            .domain
            .samples(samples)
            .into_iter()
            .map(|t| {
                let fd = (self.eval_unchecked(t + h) - self.eval_unchecked(t - h)) / (2.0 * h);
                let f = self.eval_unchecked(t);
                let scale = (m_norm * f.amax()).max(1.0);
                (fd - m * f).amax() / scale
            })
            .fold(0.0, f64::max);
        Some(worst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn central_diff(b: &BasisSet, t: f64, h: f64) -> DVector<f64> {
        (b.eval_unchecked(t + h) - b.eval_unchecked(t - h)) / (2.0 * h)
    }

    #[test]
    fn trig_block_matches_reported_companion() {
        let b = make_trig_block(12.0, Interval::delay_window(0.1).unwrap()).unwrap();
        let m = b.companion().unwrap();
        let expected = DMatrix::from_row_slice(3, 3, &[0., 0., 0., 0., 0., 12., 0., -12., 0.]);
        assert_eq!(m, &expected);
        assert_eq!(b.d(), 3);
    }

    #[test]
    fn trig_block_rejects_zero_frequency() {
        let dom = Interval::new(-1.0, 0.0).unwrap();
        assert!(make_trig_block(0.0, dom).is_err());
    }

    #[test]
    fn trig_block_values() {
        let b1 = make_trig_block(1.0, Interval::new(-1.0, 1.0).unwrap()).unwrap();
        assert_eq!(b1.eval(0.0).unwrap().as_slice(), &[1.0, 0.0, 1.0]);

        let b = make_trig_block(12.0, Interval::delay_window(0.2).unwrap()).unwrap();
        // 12·(−π/48) = −π/4
        let v = b.eval(-PI / 48.0).unwrap();
        let h = 0.5 * 2f64.sqrt();
        assert!((v[0] - 1.0).abs() < 1e-15);
        assert!((v[1] + h).abs() < 1e-15);
        assert!((v[2] - h).abs() < 1e-15);
        let v = b.eval(-PI / 24.0).unwrap();
        assert!((v[1] + 1.0).abs() < 1e-15 && v[2].abs() < 1e-15);
    }

    #[test]
    fn trig_block_finite_difference() {
        let b = make_trig_block(12.0, Interval::delay_window(0.1).unwrap()).unwrap();
        let m = b.companion().unwrap();
        for t in [-0.05, -0.02] {
            let fd = central_diff(&b, t, 1e-6);
            let res = (fd - m * b.eval(t).unwrap()).amax();
            assert!(res < 1e-6, "residual {res}");
        }
    }

    #[test]
    fn legendre_low_orders() {
        let b = make_legendre(1, Interval::new(-3.0, 5.0).unwrap()).unwrap();
        assert_eq!(b.eval(1.0).unwrap().as_slice(), &[1.0]);
        assert_eq!(b.companion().unwrap()[(0, 0)], 0.0);

        let b = make_legendre(2, Interval::new(-1.0, 0.0).unwrap()).unwrap();
        for t in [-1.0, -0.7, -0.25, 0.0] {
            let v = b.eval(t).unwrap();
            assert!((v[1] - (2.0 * t + 1.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn monomial_values() {
        let b = make_monomial(1, Interval::new(0.0, 1.0).unwrap()).unwrap();
        assert_eq!(b.eval(0.3).unwrap().as_slice(), &[1.0]);
        let b = make_monomial(2, Interval::new(0.0, 1.0).unwrap()).unwrap();
        assert_eq!(b.eval(0.5).unwrap().as_slice(), &[1.0, 0.5]);
        let b = make_monomial(3, Interval::new(0.0, 2.0).unwrap()).unwrap();
        assert_eq!(b.eval(1.0).unwrap().as_slice(), &[1.0, 0.5, 0.25]);
    }

    #[test]
    fn eval_outside_domain_is_rejected() {
        let b = make_legendre(3, Interval::new(0.0, 1.0).unwrap()).unwrap();
        assert!(matches!(b.eval(1.5), Err(Error::Domain { .. })));
        assert!(b.eval(1.0).is_ok());
    }

    #[test]
    fn builtin_companions_hold_on_samples() {
        let doms = [
            Interval::new(-0.1, 0.0).unwrap(),
            Interval::new(0.0, 1.0).unwrap(),
            Interval::new(-2.5, 0.0).unwrap(),
        ];
        for dom in doms {
            let sets = [
                make_trig_block(12.0, dom).unwrap(),
                make_legendre(5, dom).unwrap(),
                make_monomial(5, dom).unwrap(),
            ];
            for b in sets {
                let res = b.companion_residual(64).unwrap();
                assert!(res < 1e-6, "{:?} on {:?}: {res}", b.family(), dom);
            }
        }
    }

    #[test]
    fn transformed_basis_companion() {
        let b = make_trig_block(12.0, Interval::delay_window(0.3).unwrap()).unwrap();
        let g = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.2, 0.0, 2.0, -1.0, 0.0, 0.0, 2.0]);
        let gb = b.transformed(&g).unwrap();
        assert!(gb.companion_residual(64).unwrap() < 1e-6);
        let v = gb.eval(-0.1).unwrap();
        assert!((v - &g * b.eval(-0.1).unwrap()).amax() < 1e-15);
        assert!(b.transformed(&DMatrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn custom_without_companion_has_no_residual() {
        let dom = Interval::new(0.0, 1.0).unwrap();
        let b = BasisSet::custom(2, dom, |t| DVector::from_vec(vec![1.0, t.exp()]), None).unwrap();
        assert!(b.companion_residual(8).is_none());
    }

    #[test]
    fn power_weights_are_nonnegative() {
        let dom = Interval::new(-2.0, 3.0).unwrap();
        for w in [WeightFn::One, WeightFn::PowerLeft(3), WeightFn::PowerRight(2)] {
            assert!(w.is_nonnegative_on(&dom, 101));
        }
        assert_eq!(WeightFn::PowerLeft(1).eval(0.0, &dom), 2.0);
        assert_eq!(WeightFn::PowerRight(2).eval(0.0, &dom), 9.0);
    }
}
