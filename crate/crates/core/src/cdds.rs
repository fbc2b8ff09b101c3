//! Linear coupled differential-difference system with distributed delay:
//!
//! ```text
//! ẋ(t) = A₁x(t) + A₂y(t−r) + ∫₋ᵣ⁰ A₃(f(τ)⊗I_ν) y(t+τ) dτ
//! y(t) = A₄x(t) + A₅y(t−r)
//! ```
//!
//! plus a method-of-steps simulator used to cross-check LMI verdicts.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::basis::{BasisSet, Interval, WeightFn};
use crate::error::{Error, Result};
use crate::gram::gram_matrix;
use crate::matalg::{kron, Matrix, Vector};
use crate::quadrature::{integrate_vector, QuadratureConfig};

/// Relative companion residual accepted by [`validate_model`].
pub const COMPANION_TOL: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct CddsModel {
    pub n: usize,
    pub nu: usize,
    pub r: f64,
    pub a1: Matrix,
    pub a2: Matrix,
    /// `n × νd`; the kernel is `A₃(f(τ) ⊗ I_ν)`
    pub a3: Matrix,
    pub a4: Matrix,
    pub a5: Matrix,
    /// Basis on `[-r, 0]`.
    pub basis: BasisSet,
}

fn expect_shape(name: &str, m: &Matrix, rows: usize, cols: usize) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::Shape(format!(
            "{name} must be {rows}x{cols}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

impl CddsModel {
    /// Checks shapes and re-targets the basis onto `[-r, 0]`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(r: f64, a1: Matrix, a2: Matrix, a3: Matrix, a4: Matrix, a5: Matrix, basis: &BasisSet) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::InvalidArgument(format!("delay must be positive, got {r}")));
        }
        let n = a1.nrows();
        let nu = a5.nrows();
        let d = basis.d();
        expect_shape("A1", &a1, n, n)?;
        expect_shape("A2", &a2, n, nu)?;
        expect_shape("A3", &a3, n, nu * d)?;
        expect_shape("A4", &a4, nu, n)?;
        expect_shape("A5", &a5, nu, nu)?;
        let basis = basis.with_domain(Interval::delay_window(r)?)?;
        Ok(Self { n, nu, r, a1, a2, a3, a4, a5, basis })
    }

    pub fn d(&self) -> usize {
        self.basis.d()
    }

    /// Same matrices at another delay.
    pub fn with_delay(&self, r: f64) -> Result<Self> {
        Self::new(r, self.a1.clone(), self.a2.clone(), self.a3.clone(), self.a4.clone(), self.a5.clone(), &self.basis)
    }

    /// `F(τ) = f(τ) ⊗ I_ν`.
    pub fn kernel_block(&self, tau: f64) -> Matrix {
        let f = self.basis.eval_unchecked(tau);
        kron(&Matrix::from_column_slice(f.len(), 1, f.as_slice()), &Matrix::identity(self.nu, self.nu))
    }

    /// `Ã₃(τ) = A₃ F(τ)`.
    pub fn a3_tilde(&self, tau: f64) -> Matrix {
        &self.a3 * self.kernel_block(tau)
    }

    pub fn spectral_radius_a5(&self) -> f64 {
        self.a5
            .clone()
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    SpectralRadius(f64),
    GramSingular(String),
    CompanionMissing,
    CompanionResidual(f64),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::SpectralRadius(v) => write!(f, "spectral radius >= 1 (rho(A5) = {v})"),
            Violation::GramSingular(msg) => write!(f, "Gram singular: {msg}"),
            Violation::CompanionMissing => write!(f, "basis declares no companion matrix"),
            Violation::CompanionResidual(v) => write!(f, "companion residual {v:e} exceeds {COMPANION_TOL:e}"),
        }
    }
}

/// Empty iff `ρ(A₅) < 1`, the unweighted Gram on `[-r, 0]` is positive
/// definite, and the basis has a companion matrix that fits.
pub fn validate_model(m: &CddsModel) -> Vec<Violation> {
    let mut out = Vec::new();
    let rho = m.spectral_radius_a5();
    if rho >= 1.0 {
        out.push(Violation::SpectralRadius(rho));
    }
    let dom = Interval { a: -m.r, b: 0.0 };
    if let Err(e) = gram_matrix(&m.basis, &WeightFn::One, &dom, &QuadratureConfig::default()) {
        out.push(Violation::GramSingular(e.to_string()));
    }
    match m.basis.companion_residual(64) {
        None => out.push(Violation::CompanionMissing),
        Some(res) if res >= COMPANION_TOL => out.push(Violation::CompanionResidual(res)),
        Some(_) => {}
    }
    out
}

/// `x(t₀) = ξ`, `y(t₀ + θ) = φ(θ)` on `[-r, 0]`.
#[derive(Clone)]
pub struct InitialCondition {
    pub xi: Vector,
    phi: Arc<dyn Fn(f64) -> Vector + Send + Sync>,
}

impl fmt::Debug for InitialCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InitialCondition").field("xi", &self.xi).finish_non_exhaustive()
    }
}

impl InitialCondition {
    pub fn new(xi: Vector, phi: impl Fn(f64) -> Vector + Send + Sync + 'static) -> Self {
        Self { xi, phi: Arc::new(phi) }
    }

    pub fn zero(n: usize, nu: usize) -> Self {
        Self::new(Vector::zeros(n), move |_| Vector::zeros(nu))
    }

    pub fn constant(xi: Vector, value: Vector) -> Self {
        Self::new(xi, move |_| value.clone())
    }

    /// Random `ξ` and a smooth random history (constant plus one harmonic per channel).
    pub fn random(seed: u64, n: usize, nu: usize, r: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xi = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let coef: Vec<(f64, f64, f64)> = (0..nu)
            .map(|_| {
                (
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-0.5..0.5),
                    rng.random_range(0.0..std::f64::consts::TAU),
                )
            })
            .collect();
        let w = std::f64::consts::TAU / r;
        Self::new(xi, move |th| {
            Vector::from_iterator(coef.len(), coef.iter().map(|(c, a, p)| c + a * (w * th + p).sin()))
        })
    }

    pub fn phi(&self, theta: f64) -> Vector {
        (self.phi)(theta)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum SimStatus {
    Completed,
    Diverged { time: f64 },
}

/// What a finite simulation window says; never a stability verdict.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowVerdict {
    DecayedInWindow,
    DivergedInWindow,
    Undetermined,
}

#[derive(Clone, Debug)]
pub struct SimTrace {
    pub times: Vec<f64>,
    pub x: Vec<Vector>,
    pub y: Vec<Vector>,
    pub step: f64,
    pub status: SimStatus,
}

impl SimTrace {
    pub fn state_norm(&self, k: usize) -> f64 {
        self.x[k].norm() + self.y[k].norm()
    }

    /// Final `‖x‖ + ‖y‖` over the initial one.
    pub fn decay_ratio(&self) -> f64 {
        let first = self.state_norm(0);
        let last = self.state_norm(self.times.len() - 1);
        if first == 0.0 {
            if last == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            last / first
        }
    }

    /// Decayed if the ratio falls below `decay_ratio`.
    pub fn verdict(&self, decay_ratio: f64) -> WindowVerdict {
        match self.status {
            SimStatus::Diverged { .. } => WindowVerdict::DivergedInWindow,
            SimStatus::Completed if self.decay_ratio() < decay_ratio => WindowVerdict::DecayedInWindow,
            SimStatus::Completed => WindowVerdict::Undetermined,
        }
    }

    /// CSV with header `t,x1..xn,y1..yν`.
    pub fn to_csv(&self) -> String {
        let n = self.x.first().map_or(0, |v| v.len());
        let nu = self.y.first().map_or(0, |v| v.len());
        let mut out = String::from("t");
        for i in 1..=n {
            out.push_str(&format!(",x{i}"));
        }
        for i in 1..=nu {
            out.push_str(&format!(",y{i}"));
        }
        out.push('\n');
        for k in 0..self.times.len() {
            out.push_str(&format!("{:.12e}", self.times[k]));
            for v in self.x[k].iter().chain(self.y[k].iter()) {
                out.push_str(&format!(",{v:.12e}"));
            }
            out.push('\n');
        }
        out
    }
}

pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

/// Ring-free history indexed by grid position `k ≥ -K`.
struct History {
    offset: usize,
    node: Vec<Vector>,
    plus: Vec<Vector>,
    mid: Vec<Vector>,
}

impl History {
    fn idx(&self, k: i64) -> usize {
        (k + self.offset as i64) as usize
    }
}

/// Method of steps with classical RK4 on the grid `t_k = k·step`, where
/// `step` divides `r`. The distributed term is carried as the extra state
/// `z(t) = ∫₋ᵣ⁰ F(τ) y(t+τ) dτ`, which obeys
/// `ż = F(0)y(t) − F(−r)y(t−r) − (M⊗I_ν)z` for a basis with companion `M`.
/// Delayed values at half steps come from a cubic Hermite reconstruction
/// of `x` between grid nodes.
pub fn simulate(m: &CddsModel, ic: &InitialCondition, t_end: f64, step: f64) -> Result<SimTrace> {
    if !(t_end > 0.0) {
        return Err(Error::InvalidArgument(format!("t_end must be positive, got {t_end}")));
    }
    let ratio = m.r / step;
    let k_delay = ratio.round();
    if !(step > 0.0) || k_delay < 1.0 || (ratio - k_delay).abs() > 1e-9 * ratio {
        return Err(Error::InvalidArgument(format!(
            "step {step} does not divide the delay {} into a whole number of steps",
            m.r
        )));
    }
    if ic.xi.len() != m.n {
        return Err(Error::Shape(format!("xi must have length {}", m.n)));
    }
    let companion = m
        .basis
        .companion()
        .ok_or_else(|| Error::InvalidArgument("simulation needs a basis with companion matrix".into()))?;
    let kd = k_delay as usize;
    let h = m.r / kd as f64;
    let steps = (t_end / h).round().max(1.0) as usize;
    let nu = m.nu;

    let m_hat = kron(companion, &Matrix::identity(nu, nu));
    let f0 = m.kernel_block(0.0);
    let fr = m.kernel_block(-m.r);

    let dom = Interval::delay_window(m.r)?;
    let cfg = QuadratureConfig {
        panels: kd,
        max_panels: 64 * kd,
        ..QuadratureConfig::default()
    };
    let z0 = integrate_vector(|t| m.kernel_block(t) * ic.phi(t), &WeightFn::One, &dom, &cfg)?;

    let mut hist = History {
        offset: kd,
        node: Vec::with_capacity(kd + steps + 1),
        plus: Vec::with_capacity(kd + steps + 1),
        mid: Vec::with_capacity(kd + steps),
    };
    for j in 0..kd {
        let th = -m.r + j as f64 * h;
        let v = ic.phi(th);
        if v.len() != nu {
            return Err(Error::Shape(format!("phi must return vectors of length {nu}")));
        }
        hist.node.push(v.clone());
        hist.plus.push(v);
        hist.mid.push(ic.phi(th + 0.5 * h));
    }
    hist.node.push(ic.phi(0.0));
    let y0_plus = &m.a4 * &ic.xi + &m.a5 * &hist.plus[hist.idx(-(kd as i64))];
    hist.plus.push(y0_plus);

    // (ẋ, ż) at (x, z) with delayed input u = y(t − r)
    let rhs = |x: &Vector, z: &Vector, u: &Vector| -> (Vector, Vector) {
        let y = &m.a4 * x + &m.a5 * u;
        let dx = &m.a1 * x + &m.a2 * u + &m.a3 * z;
        let dz = &f0 * y - &fr * u - &m_hat * z;
        (dx, dz)
    };

    let mut times = vec![0.0];
    let mut xs = vec![ic.xi.clone()];
    let mut ys = vec![hist.node[hist.idx(0)].clone()];
    let mut x = ic.xi.clone();
    let mut z = z0;
    let mut status = SimStatus::Completed;

    for k in 0..steps as i64 {
        let u0 = hist.plus[hist.idx(k - kd as i64)].clone();
        let um = hist.mid[hist.idx(k - kd as i64)].clone();
        let u1 = hist.node[hist.idx(k + 1 - kd as i64)].clone();

        let (k1x, k1z) = rhs(&x, &z, &u0);
        let (k2x, k2z) = rhs(&(&x + &k1x * (0.5 * h)), &(&z + &k1z * (0.5 * h)), &um);
        let (k3x, k3z) = rhs(&(&x + &k2x * (0.5 * h)), &(&z + &k2z * (0.5 * h)), &um);
        let (k4x, k4z) = rhs(&(&x + &k3x * h), &(&z + &k3z * h), &u1);
        let x_next = &x + (&k1x + &k2x * 2.0 + &k3x * 2.0 + &k4x) * (h / 6.0);
        let z_next = &z + (&k1z + &k2z * 2.0 + &k3z * 2.0 + &k4z) * (h / 6.0);

        let (dx_end, _) = rhs(&x_next, &z_next, &u1);
        let x_mid = (&x + &x_next) * 0.5 + (&k1x - &dx_end) * (h / 8.0);
        let y_mid = &m.a4 * &x_mid + &m.a5 * &um;
        let y_node = &m.a4 * &x_next + &m.a5 * &u1;
        let u1_plus = &hist.plus[hist.idx(k + 1 - kd as i64)];
        let y_plus = &m.a4 * &x_next + &m.a5 * u1_plus;
        hist.mid.push(y_mid);
        hist.node.push(y_node.clone());
        hist.plus.push(y_plus);

        x = x_next;
        z = z_next;
        let t = (k + 1) as f64 * h;
        times.push(t);
        xs.push(x.clone());
        ys.push(y_node);
        if !x.iter().all(|v| v.is_finite()) || x.norm() > DIVERGENCE_THRESHOLD {
            status = SimStatus::Diverged { time: t };
            break;
        }
    }

    Ok(SimTrace {
        times,
        x: xs,
        y: ys,
        step: h,
        status,
    })
}

/// Convenience for a single vector from a slice.
pub fn vector(v: &[f64]) -> Vector {
    DVector::from_column_slice(v)
}
