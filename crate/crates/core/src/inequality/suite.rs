//! Randomized instances for falsification runs of the lower bounds.
//!
//! Every instance is a pure function of its seed, so a failing record can
//! be replayed exactly.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    corollary2_bound, free_matrix_bound, free_matrix_bound_projected, gram_bound, least_squares_coeff, lhs_energy,
    optimal_completion, residual_energy, w_matrix, FreeMatrixCert, InequalityReport, TestSignal,
};
use crate::basis::{make_legendre, make_monomial, make_trig_block, BasisSet, Interval, WeightFn};
use crate::error::Result;
use crate::gram::{gram_matrix, moment, GramData, MomentVector};
use crate::matalg::{stack_cols_to_rows, Matrix, SymMatrix, Vector};
use crate::quadrature::QuadratureConfig;

/// One randomized configuration: basis, weight, signal and `U`.
#[derive(Clone, Debug)]
pub struct Instance {
    pub seed: u64,
    pub n: usize,
    pub signal: TestSignal,
    pub u: SymMatrix,
    pub gram: GramData,
    pub theta: MomentVector,
    pub lhs: f64,
}

fn uniform_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
}

/// `AᵀA + 1e-3·I`.
pub fn random_pd(rng: &mut ChaCha8Rng, n: usize) -> SymMatrix {
    let a = uniform_matrix(rng, n, n, 1.0);
    SymMatrix::new(a.transpose() * &a + Matrix::identity(n, n) * 1e-3).expect("square")
}

/// One of the built-in families with `d ≤ 5`.
pub fn random_basis(rng: &mut ChaCha8Rng, domain: Interval) -> Result<BasisSet> {
    match rng.random_range(0..3) {
        0 => make_monomial(rng.random_range(1..=5), domain),
        1 => make_legendre(rng.random_range(1..=5), domain),
        _ => {
            // keep ω·L away from zero so the three kernels stay well separated
            let omega = rng.random_range(2.0..10.0) / domain.length();
            make_trig_block(if rng.random_bool(0.5) { omega } else { -omega }, domain)
        }
    }
}

pub fn random_weight(rng: &mut ChaCha8Rng) -> WeightFn {
    let p = rng.random_range(0..=2u32);
    match (p, rng.random_bool(0.5)) {
        (0, _) => WeightFn::One,
        (p, true) => WeightFn::PowerLeft(p),
        (p, false) => WeightFn::PowerRight(p),
    }
}

/// Degree ≤ 6 polynomials in the normalized coordinate plus a two-term
/// trigonometric mixture, coefficients in `[-2, 2]`.
pub fn random_signal(rng: &mut ChaCha8Rng, n: usize, domain: Interval) -> TestSignal {
    struct Component {
        poly: Vec<f64>,
        trig: [(f64, f64, f64); 2],
    }
    let comps: Vec<Component> = (0..n)
        .map(|_| {
            let deg = rng.random_range(0..=6);
            Component {
                poly: (0..=deg).map(|_| rng.random_range(-2.0..2.0)).collect(),
                trig: [(); 2].map(|_| {
                    (
                        rng.random_range(-2.0..2.0),
                        rng.random_range(0.5..8.0),
                        rng.random_range(0.0..std::f64::consts::TAU),
                    )
                }),
            }
        })
        .collect();
    TestSignal::new(n, move |t| {
        let s = 2.0 * (t - domain.a) / domain.length() - 1.0;
        DVector::from_iterator(
            comps.len(),
            comps.iter().map(|c| {
                let p = c.poly.iter().rev().fold(0.0, |acc, k| acc * s + k);
                p + c.trig.iter().map(|(a, f, ph)| a * (f * t + ph).sin()).sum::<f64>()
            }),
        )
    })
}

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0x5EED)
}

fn random_domain(rng: &mut ChaCha8Rng) -> Interval {
    let a = rng.random_range(-2.0..0.0);
    let len = rng.random_range(0.5..2.0);
    Interval::new(a, a + len).expect("positive length")
}

fn build(seed: u64, rng: &mut ChaCha8Rng, basis: BasisSet, weight: WeightFn, signal: TestSignal, cfg: &QuadratureConfig) -> Result<Instance> {
    let domain = basis.domain();
    let n = signal.n;
    let u = random_pd(rng, n);
    let gram = gram_matrix(&basis, &weight, &domain, cfg)?;
    let theta = moment(&basis, &weight, &domain, n, |t| signal.eval(t), cfg)?;
    let lhs = lhs_energy(&signal, &u, &weight, &domain, cfg)?;
    Ok(Instance { seed, n, signal, u, gram, theta, lhs })
}

/// A generic instance with a random signal.
pub fn random_instance(seed: u64, cfg: &QuadratureConfig) -> Result<Instance> {
    let mut rng = rng_for(seed);
    let domain = random_domain(&mut rng);
    let basis = random_basis(&mut rng, domain)?;
    let weight = random_weight(&mut rng);
    let n = rng.random_range(1..=3);
    let signal = random_signal(&mut rng, n, domain);
    build(seed, &mut rng, basis, weight, signal, cfg)
}

/// An instance whose signal lies in the kernel span, `x = (fᵀ ⊗ I)ω`.
pub fn random_span_instance(seed: u64, cfg: &QuadratureConfig) -> Result<(Instance, Vector)> {
    let mut rng = rng_for(seed);
    let domain = random_domain(&mut rng);
    let basis = random_basis(&mut rng, domain)?;
    let weight = random_weight(&mut rng);
    let n = rng.random_range(1..=3);
    let omega = Vector::from_fn(basis.d() * n, |_, _| rng.random_range(-2.0..2.0));
    let signal = TestSignal::from_coefficients(&basis, &omega, n)?;
    Ok((build(seed, &mut rng, basis, weight, signal, cfg)?, omega))
}

/// `Υ` with `Υz = ϑ`: the rank-one map `ϑzᵀ/‖z‖²` plus a random part that
/// vanishes on `z`.
pub fn projection_for(rng: &mut ChaCha8Rng, theta: &Vector, z: &Vector) -> Matrix {
    let zz = z.dot(z);
    let k = z.len();
    let r = uniform_matrix(rng, theta.len(), k, 1.0);
    let proj = Matrix::identity(k, k) - z * z.transpose() / zz;
    theta * z.transpose() / zz + r * proj
}

/// Admissible certificate `Y = XᵀU⁻¹X + QᵀQ` for the instance, with `Υz = ϑ`.
pub fn random_cert(inst: &Instance, rho: usize, rng: &mut ChaCha8Rng) -> Result<FreeMatrixCert> {
    let (n, d) = (inst.n, inst.gram.d());
    let scale = rng.random_range(0.1..3.0);
    let x = uniform_matrix(rng, n, rho * d * n, scale);
    let q = uniform_matrix(rng, rho * d * n, rho * d * n, 0.3);
    let u_inv = inst.u.pd_inverse()?;
    let y = SymMatrix::new(x.transpose() * u_inv.as_matrix() * &x + q.transpose() * q)?;
    let z = Vector::from_fn(rho * n, |_, _| rng.random_range(-2.0..2.0));
    let ups = projection_for(rng, &inst.theta.theta, &z);
    FreeMatrixCert::new(rho, d, x, y, z, Some(ups))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuiteKind {
    /// `lhs ≥ ϑᵀ(F⊗U)ϑ` on random signals.
    Gram,
    /// free-matrix bound with random admissible certificates
    FreeMatrix,
    /// projected free-matrix bound with random `X̂`
    Corollary2,
    /// signals in the kernel span: the Gram bound is an equality
    Equality,
    /// optimal completion reproduces the Gram bound
    Completion,
    /// free-matrix ≤ projected (same `X̂`, `Y = XᵀU⁻¹X`) ≤ Gram bound
    Ordering,
    /// `ω* = (F⊗I)ϑ` beats random perturbations; the Gram gap is its residual
    LeastSquares,
}

impl SuiteKind {
    pub const ALL: [SuiteKind; 7] = [
        SuiteKind::Gram,
        SuiteKind::FreeMatrix,
        SuiteKind::Corollary2,
        SuiteKind::Equality,
        SuiteKind::Completion,
        SuiteKind::Ordering,
        SuiteKind::LeastSquares,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SuiteKind::Gram => "gram",
            SuiteKind::FreeMatrix => "free_matrix",
            SuiteKind::Corollary2 => "corollary2",
            SuiteKind::Equality => "equality",
            SuiteKind::Completion => "completion",
            SuiteKind::Ordering => "ordering",
            SuiteKind::LeastSquares => "least_squares",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SuiteRecord {
    pub suite: SuiteKind,
    pub seed: u64,
    pub lhs: f64,
    pub bound: f64,
    pub gap: f64,
    pub pass: bool,
}

/// One record of the given suite; `tol` is relative to `max(1, |lhs|)`
/// for the dominance suites and to `|lhs|` for the equality suites.
pub fn run_one(kind: SuiteKind, seed: u64, rho: usize, tol: f64, cfg: &QuadratureConfig) -> Result<SuiteRecord> {
    let record = |lhs: f64, bound: f64, pass: bool| SuiteRecord {
        suite: kind,
        seed,
        lhs,
        bound,
        gap: lhs - bound,
        pass,
    };
    match kind {
        SuiteKind::Gram => {
            let inst = random_instance(seed, cfg)?;
            let bound = gram_bound(&inst.theta, &inst.gram, &inst.u)?;
            let rep = InequalityReport::new(inst.lhs, bound, tol);
            Ok(record(rep.lhs, rep.bound, rep.pass))
        }
        SuiteKind::FreeMatrix => {
            let inst = random_instance(seed, cfg)?;
            let mut rng = rng_for(seed ^ 0xC0FFEE);
            let cert = random_cert(&inst, rho, &mut rng)?;
            let g = &inst.gram;
            let w = w_matrix(&cert.y, &g.basis, &g.weight, &g.domain, rho, inst.n, cfg)?;
            let bound = free_matrix_bound(&inst.theta, &cert, &w, &inst.u)?;
            let projected = free_matrix_bound_projected(&cert, &w)?;
            let consistent = (bound - projected).abs() <= tol * bound.abs().max(1.0);
            let rep = InequalityReport::new(inst.lhs, bound, tol);
            Ok(record(rep.lhs, rep.bound, rep.pass && consistent))
        }
        SuiteKind::Corollary2 => {
            let inst = random_instance(seed, cfg)?;
            let mut rng = rng_for(seed ^ 0xBEEF);
            let (n, d) = (inst.n, inst.gram.d());
            let z = Vector::from_fn(rho * n, |_, _| rng.random_range(-2.0..2.0));
            let ups = projection_for(&mut rng, &inst.theta.theta, &z);
            let scale = rng.random_range(0.1..3.0);
            let x_hat = uniform_matrix(&mut rng, d * n, rho * n, scale);
            let bound = corollary2_bound(&inst.theta, &ups, &z, &x_hat, &inst.gram, &inst.u)?;
            let rep = InequalityReport::new(inst.lhs, bound, tol);
            Ok(record(rep.lhs, rep.bound, rep.pass))
        }
        SuiteKind::Equality => {
            let (inst, _) = random_span_instance(seed, cfg)?;
            let bound = gram_bound(&inst.theta, &inst.gram, &inst.u)?;
            let gap = inst.lhs - bound;
            Ok(record(inst.lhs, bound, gap.abs() <= tol * inst.lhs.abs()))
        }
        SuiteKind::Completion => {
            let inst = random_instance(seed, cfg)?;
            let mut rng = rng_for(seed ^ 0xFACE);
            let n = inst.n;
            let z = Vector::from_fn(rho * n, |_, _| rng.random_range(-2.0..2.0));
            // rank-one Υ: a random complement only inflates X̂ and Y, whose
            // contributions cancel exactly but not in floating point
            let ups = &inst.theta.theta * z.transpose() / z.dot(&z);
            let comp = optimal_completion(&inst.gram, &inst.u, &ups)?;
            let gb = gram_bound(&inst.theta, &inst.gram, &inst.u)?;
            let g = &inst.gram;
            let cert = FreeMatrixCert::new(rho, g.d(), stack_cols_to_rows(&comp.x_hat, n)?, comp.y, z.clone(), Some(ups.clone()))?;
            let w = w_matrix(&cert.y, &g.basis, &g.weight, &g.domain, rho, n, cfg)?;
            let fb = free_matrix_bound(&inst.theta, &cert, &w, &inst.u)?;
            let c2 = corollary2_bound(&inst.theta, &ups, &z, &comp.x_hat, g, &inst.u)?;
            let scale = gb.abs().max(1.0);
            let pass = (fb - gb).abs() <= tol * scale && (c2 - gb).abs() <= tol * scale;
            Ok(record(inst.lhs, fb.min(c2), pass))
        }
        SuiteKind::Ordering => {
            let inst = random_instance(seed, cfg)?;
            let mut rng = rng_for(seed ^ 0x0DE5);
            let cert = random_cert(&inst, rho, &mut rng)?;
            let g = &inst.gram;
            let w = w_matrix(&cert.y, &g.basis, &g.weight, &g.domain, rho, inst.n, cfg)?;
            let fb = free_matrix_bound(&inst.theta, &cert, &w, &inst.u)?;
            let ups = cert.upsilon.as_ref().expect("random_cert sets Υ");
            let c2 = corollary2_bound(&inst.theta, ups, &cert.z, &cert.x_hat, g, &inst.u)?;
            let gb = gram_bound(&inst.theta, g, &inst.u)?;
            let slack = tol * gb.abs().max(1.0);
            Ok(record(gb, fb, fb <= c2 + slack && c2 <= gb + slack))
        }
        SuiteKind::LeastSquares => {
            let inst = random_instance(seed, cfg)?;
            let mut rng = rng_for(seed ^ 0x1EA5);
            let g = &inst.gram;
            let omega = least_squares_coeff(&inst.theta, g)?;
            let res = residual_energy(&inst.signal, &omega, &inst.u, g, cfg)?;
            let gb = gram_bound(&inst.theta, g, &inst.u)?;
            let mut pass = ((inst.lhs - gb) - res).abs() <= tol * inst.lhs.abs();
            for k in 0..20 {
                let size = 10f64.powf(-3.0 + 2.0 * k as f64 / 19.0);
                let dir = Vector::from_fn(omega.len(), |_, _| rng.random_range(-1.0..1.0));
                let delta = dir.normalize() * size;
                let perturbed = residual_energy(&inst.signal, &(&omega + delta), &inst.u, g, cfg)?;
                // rounding allowance only; the true excess is δᵀ(F⁻¹⊗U)δ > 0
                pass &= res <= perturbed + 1e-13 * res.abs().max(1e-300);
            }
            Ok(record(inst.lhs, gb, pass))
        }
    }
}

/// Run `count` consecutive seeds starting at `base_seed` in parallel.
/// The output is ordered by seed.
pub fn run_suite(kind: SuiteKind, count: usize, base_seed: u64, rho: usize, tol: f64, cfg: &QuadratureConfig) -> Result<Vec<SuiteRecord>> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| run_one(kind, base_seed + i, rho, tol, cfg))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instances_are_reproducible() {
        let cfg = QuadratureConfig::default();
        let a = random_instance(42, &cfg).unwrap();
        let b = random_instance(42, &cfg).unwrap();
        assert_eq!(a.lhs, b.lhs);
        assert_eq!(a.theta, b.theta);
    }

    #[test]
    fn random_certs_are_admissible_and_projecting() {
        let cfg = QuadratureConfig::default();
        for seed in 0..20 {
            let inst = random_instance(seed, &cfg).unwrap();
            let mut rng = rng_for(seed);
            let cert = random_cert(&inst, 2, &mut rng).unwrap();
            assert!(cert.is_admissible(&inst.u, 1e-9).unwrap());
            let ups = cert.upsilon.as_ref().unwrap();
            assert!((ups * &cert.z - &inst.theta.theta).amax() < 1e-12 * inst.theta.theta.amax().max(1.0));
        }
    }

    #[test]
    fn short_suites_pass() {
        let cfg = QuadratureConfig::default();
        for kind in SuiteKind::ALL {
            let tol = if kind == SuiteKind::Equality { 1e-10 } else { 1e-9 };
            let recs = run_suite(kind, 25, 1000, 1, tol, &cfg).unwrap();
            assert!(recs.iter().all(|r| r.pass), "{kind:?}: {:?}", recs.iter().find(|r| !r.pass));
        }
    }
}
