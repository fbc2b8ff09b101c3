//! Composite Gauss–Legendre quadrature for weighted integrals of scalar,
//! vector and matrix valued integrands.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{Interval, WeightFn};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureConfig {
    /// Gauss nodes per panel.
    pub order: usize,
    /// Initial panel count.
    pub panels: usize,
    /// Panel cap for refinement by doubling.
    pub max_panels: usize,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            order: 16,
            panels: 4,
            max_panels: 512,
            rel_tol: 1e-12,
            abs_tol: 1e-14,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.order < 2 {
            return Err(Error::InvalidArgument(format!(
                "quadrature order must be >= 2, got {}",
                self.order
            )));
        }
        if self.panels == 0 || self.max_panels < self.panels {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= panels <= max_panels, got {} and {}",
                self.panels, self.max_panels
            )));
        }
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(Error::InvalidArgument("tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(order: usize) -> Self {
        let n = order;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            // Chebyshev-like initial guess, then Newton on P_n.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

fn composite<F>(g: &F, w: &WeightFn, domain: &Interval, rule: &GaussLegendre, panels: usize) -> DMatrix<f64>
where
    F: Fn(f64) -> DMatrix<f64>,
{
    let h = domain.length() / panels as f64;
    let mut acc: Option<DMatrix<f64>> = None;
    for k in 0..panels {
        let lo = domain.a + h * k as f64;
        let mid = lo + 0.5 * h;
        for (x, wt) in rule.nodes.iter().zip(&rule.weights) {
            let tau = mid + 0.5 * h * x;
            let weight = w.eval(tau, domain);
            if weight == 0.0 {
                continue;
            }
            let val = g(tau) * (0.5 * h * wt * weight);
            match acc.as_mut() {
                Some(a) => *a += val,
                None => acc = Some(val),
            }
        }
    }
    acc.unwrap_or_else(|| {
        let probe = g(domain.a);
        DMatrix::zeros(probe.nrows(), probe.ncols())
    })
}

/// `∫_domain ϖ(τ) g(τ) dτ` entrywise, refining by panel doubling until two
/// successive estimates agree to `max(rel_tol·‖result‖, abs_tol)`.
pub fn integrate_matrix<F>(g: F, w: &WeightFn, domain: &Interval, cfg: &QuadratureConfig) -> Result<DMatrix<f64>>
where
    F: Fn(f64) -> DMatrix<f64>,
{
    cfg.validate()?;
    let rule = GaussLegendre::new(cfg.order);
    let mut panels = cfg.panels;
    let mut prev = composite(&g, w, domain, &rule, panels);
    loop {
        panels *= 2;
        let next = composite(&g, w, domain, &rule, panels);
        let diff = (&next - &prev).amax();
        let scale = next.amax();
        if diff <= (cfg.rel_tol * scale).max(cfg.abs_tol) {
            return Ok(next);
        }
        if panels >= cfg.max_panels {
            return Err(Error::Accuracy {
                panels,
                last: scale,
                previous: prev.amax(),
            });
        }
        prev = next;
    }
}

/// Like [`integrate_matrix`] for integrands known to be symmetric; the
/// result is symmetrized as `(A + Aᵀ) / 2`.
pub fn integrate_symmetric<F>(g: F, w: &WeightFn, domain: &Interval, cfg: &QuadratureConfig) -> Result<DMatrix<f64>>
where
    F: Fn(f64) -> DMatrix<f64>,
{
    let m = integrate_matrix(g, w, domain, cfg)?;
    if !m.is_square() {
        return Err(Error::Shape("symmetric integrand must be square".into()));
    }
    Ok((&m + m.transpose()) * 0.5)
}

pub fn integrate_vector<F>(g: F, w: &WeightFn, domain: &Interval, cfg: &QuadratureConfig) -> Result<DVector<f64>>
where
    F: Fn(f64) -> DVector<f64>,
{
    let m = integrate_matrix(|t| DMatrix::from_column_slice(g(t).len(), 1, g(t).as_slice()), w, domain, cfg)?;
    Ok(m.column(0).into_owned())
}

pub fn integrate_scalar<F>(g: F, w: &WeightFn, domain: &Interval, cfg: &QuadratureConfig) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let m = integrate_matrix(|t| DMatrix::from_element(1, 1, g(t)), w, domain, cfg)?;
    Ok(m[(0, 0)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::make_trig_block;

    fn cfg() -> QuadratureConfig {
        QuadratureConfig::default()
    }

    #[test]
    fn rule_weights_sum_to_two() {
        for n in [2, 3, 7, 16, 33] {
            let r = GaussLegendre::new(n);
            let s: f64 = r.weights.iter().sum();
            assert!((s - 2.0).abs() < 1e-14, "order {n}: {s}");
            assert!(r.nodes.windows(2).all(|p| p[0] < p[1]));
        }
    }

    #[test]
    fn interval_length() {
        let r = 0.37;
        let dom = Interval::delay_window(r).unwrap();
        let v = integrate_scalar(|_| 1.0, &WeightFn::One, &dom, &cfg()).unwrap();
        assert!((v - r).abs() < 1e-15);
    }

    #[test]
    fn power_weight_folded_into_integrand() {
        let dom = Interval::new(0.0, 1.0).unwrap();
        let v = integrate_scalar(|t| t, &WeightFn::PowerLeft(1), &dom, &cfg()).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn trig_outer_product_entries() {
        let dom = Interval::delay_window(0.1).unwrap();
        let b = make_trig_block(12.0, dom).unwrap();
        let m = integrate_symmetric(
            |t| {
                let f = b.eval_unchecked(t);
                &f * f.transpose()
            },
            &WeightFn::One,
            &dom,
            &cfg(),
        )
        .unwrap();
        assert!((m[(0, 0)] - 0.1).abs() < 1e-15);
        let expected = ((1.2f64).cos() - 1.0) / 12.0;
        assert!((m[(0, 1)] - expected).abs() < 1e-15);
        assert_eq!(m[(0, 1)], m[(1, 0)]);
    }

    #[test]
    fn polynomial_exactness() {
        // degree <= 2·order - 1 is exact for a single panel rule
        let order = 6;
        let c = QuadratureConfig { order, ..cfg() };
        let dom = Interval::new(-0.3, 1.7).unwrap();
        for k in 0..(2 * order) {
            let v = integrate_scalar(|t| t.powi(k as i32), &WeightFn::One, &dom, &c).unwrap();
            let exact = (dom.b.powi(k as i32 + 1) - dom.a.powi(k as i32 + 1)) / (k as f64 + 1.0);
            assert!((v - exact).abs() <= 1e-13 * exact.abs().max(1.0), "k={k}");
        }
    }

    #[test]
    fn additivity() {
        let g = |t: f64| (3.0 * t).sin() * t.exp();
        let w = WeightFn::One;
        let whole = integrate_scalar(g, &w, &Interval::new(-1.0, 2.0).unwrap(), &cfg()).unwrap();
        let left = integrate_scalar(g, &w, &Interval::new(-1.0, 0.4).unwrap(), &cfg()).unwrap();
        let right = integrate_scalar(g, &w, &Interval::new(0.4, 2.0).unwrap(), &cfg()).unwrap();
        assert!((whole - left - right).abs() < 1e-13);
    }

    #[test]
    fn nonconvergence_reports_estimates() {
        let c = QuadratureConfig {
            order: 2,
            panels: 1,
            max_panels: 4,
            ..cfg()
        };
        let dom = Interval::new(0.0, 1.0).unwrap();
        let err = integrate_scalar(|t| (200.0 * t).sin(), &WeightFn::One, &dom, &c).unwrap_err();
        assert!(matches!(err, Error::Accuracy { .. }));
    }

    #[test]
    fn bad_config_rejected() {
        let c = QuadratureConfig { order: 1, ..cfg() };
        let dom = Interval::new(0.0, 1.0).unwrap();
        assert!(integrate_scalar(|t| t, &WeightFn::One, &dom, &c).is_err());
    }
}
