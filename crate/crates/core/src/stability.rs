//! Delay-dependent stability conditions for [`CddsModel`] as semidefinite
//! feasibility problems.
//!
//! The Lyapunov-Krasovskii functional is parameterized by a symmetric
//! `P̂ ∈ S^{n+dν}` and `S, U ∈ S^ν`, and uses the transformed kernels
//! `Gf(τ)` for an invertible `G`. Condition (a) bounds the integral terms
//! with the inverse Gram directly; condition (b) replaces the inverse Gram
//! blocks by free matrices `X₁, X₂ ∈ S^{dν}` through Schur complements.

pub mod problem;
pub mod solver;

use serde::{Deserialize, Serialize};

use crate::basis::{Interval, WeightFn};
use crate::cdds::{validate_model, CddsModel};
use crate::error::{Error, Result};
use crate::gram::{gram_matrix, GramData};
use crate::matalg::{direct_sum, kron, Matrix, SymMatrix};
use crate::quadrature::QuadratureConfig;

pub use problem::{Assignment, Constraint, LmiBuilder, LmiProblem, Sense, VarBlock, EPS_REL};
pub use solver::{solve_feasibility, solve_with, BarrierBackend, FeasibilityBackend, FeasibilityResult, Status};

/// Invertible `G ∈ R^{d×d}` applied to the basis, `g(τ) = Gf(τ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformChoice {
    g: Matrix,
    g_inv: Matrix,
}

impl TransformChoice {
    /// Requires `|det G| > 1e-12·‖G‖₂^d`.
    pub fn new(g: Matrix) -> Result<Self> {
        if !g.is_square() || g.nrows() == 0 {
            return Err(Error::Shape("G must be a non-empty square matrix".into()));
        }
        let d = g.nrows() as i32;
        let norm = g.clone().singular_values().max();
        let det = g.determinant();
        if !(det.abs() > 1e-12 * norm.powi(d)) {
            return Err(Error::InvalidArgument(format!("G is singular (det = {det:e})")));
        }
        let g_inv = g
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidArgument("G is singular".into()))?;
        Ok(Self { g, g_inv })
    }

    pub fn identity(d: usize) -> Self {
        Self {
            g: Matrix::identity(d, d),
            g_inv: Matrix::identity(d, d),
        }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.g
    }

    pub fn inverse(&self) -> &Matrix {
        &self.g_inv
    }

    pub fn d(&self) -> usize {
        self.g.nrows()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// Inverse-Gram blocks in the functional and derivative conditions.
    A,
    /// Free matrices `X₁, X₂` in place of the inverse-Gram blocks.
    B,
}

impl std::str::FromStr for Condition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a" | "A" => Ok(Condition::A),
            "b" | "B" => Ok(Condition::B),
            other => Err(Error::InvalidArgument(format!("unknown condition {other:?}, expected a or b"))),
        }
    }
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Condition::A => "a",
            Condition::B => "b",
        })
    }
}

/// Constant blocks shared by both conditions.
#[derive(Clone, Debug)]
pub struct Structure {
    pub n: usize,
    pub nu: usize,
    pub d: usize,
    pub r: f64,
    /// `(n+ν+dν) × (n+dν)` embedding that skips the `y(t−r)` slot.
    pub h: Matrix,
    /// `[A₄ A₅ 0]`
    pub gamma: Matrix,
    /// `[A₁ A₂ A₃(G⁻¹⊗I_ν)]`
    pub a_bold: Matrix,
    /// `[Ĝ(0)A₄, Ĝ(0)A₅ − Ĝ(−r), −M̂]`
    pub g_bold: Matrix,
    /// `GMG⁻¹ ⊗ I_ν`
    pub m_hat: Matrix,
    /// `Gf(0) ⊗ I_ν`
    pub g0: Matrix,
    /// `Gf(−r) ⊗ I_ν`
    pub gr: Matrix,
    /// `G⁻ᵀ (∫f fᵀ)⁻¹ G⁻¹`, the inverse Gram of `Gf`.
    pub fginv: SymMatrix,
}

impl Structure {
    /// `[𝐀; 𝐆]`, the `(n+dν) × (n+ν+dν)` state map.
    pub fn state_map(&self) -> Matrix {
        let mut out = Matrix::zeros(self.n + self.d * self.nu, self.n + self.nu + self.d * self.nu);
        out.rows_mut(0, self.n).copy_from(&self.a_bold);
        out.rows_mut(self.n, self.d * self.nu).copy_from(&self.g_bold);
        out
    }

    fn dnu(&self) -> usize {
        self.d * self.nu
    }

    /// `P̂ + (O_n ⊕ (FGinv ⊗ S))`
    pub fn positivity(&self, p: &Matrix, s: &Matrix) -> Matrix {
        p + direct_sum(&[&Matrix::zeros(self.n, self.n), &kron(&self.fginv, s)])
    }

    /// `Sy(H P̂ [𝐀;𝐆]) + Γᵀ(S + rU)Γ − (O_n ⊕ S ⊕ last)`
    fn derivative_with(&self, p: &Matrix, s: &Matrix, u: &Matrix, last: &Matrix) -> Matrix {
        let hp = &self.h * p * self.state_map();
        let su = s + u * self.r;
        &hp + hp.transpose() + self.gamma.transpose() * su * &self.gamma
            - direct_sum(&[&Matrix::zeros(self.n, self.n), s, last])
    }

    /// Derivative condition of (a), with `FGinv ⊗ U` as the last block.
    pub fn derivative(&self, p: &Matrix, s: &Matrix, u: &Matrix) -> Matrix {
        self.derivative_with(p, s, u, &kron(&self.fginv, u))
    }

    /// `[[P̂ + (O_n ⊕ 2X₁), [O X₁]ᵀ], [·, FGinv ⊗ S]]`
    pub fn positivity_free(&self, p: &Matrix, s: &Matrix, x1: &Matrix) -> Matrix {
        let (n, dnu) = (self.n, self.dnu());
        let top = p + direct_sum(&[&Matrix::zeros(n, n), &(x1 * 2.0)]);
        let mut off = Matrix::zeros(dnu, n + dnu);
        off.columns_mut(n, dnu).copy_from(x1);
        block_sym(&top, &off, &kron(&self.fginv, s))
    }

    /// `[[Φ₂, [O X₂]ᵀ], [·, −FGinv ⊗ U]]` with `Φ₂` using `2X₂` as the last block.
    pub fn derivative_free(&self, p: &Matrix, s: &Matrix, u: &Matrix, x2: &Matrix) -> Matrix {
        let (n, nu, dnu) = (self.n, self.nu, self.dnu());
        let phi2 = self.derivative_with(p, s, u, &(x2 * 2.0));
        let mut off = Matrix::zeros(dnu, n + nu + dnu);
        off.columns_mut(n + nu, dnu).copy_from(x2);
        block_sym(&phi2, &off, &(kron(&self.fginv, u) * -1.0))
    }
}

/// `[[a, bᵀ], [b, c]]`
fn block_sym(a: &Matrix, b: &Matrix, c: &Matrix) -> Matrix {
    let (p, q) = (a.nrows(), c.nrows());
    let mut out = Matrix::zeros(p + q, p + q);
    out.view_mut((0, 0), (p, p)).copy_from(a);
    out.view_mut((p, 0), (q, p)).copy_from(b);
    out.view_mut((0, p), (p, q)).copy_from(&b.transpose());
    out.view_mut((p, p), (q, q)).copy_from(c);
    out
}

fn column(v: &nalgebra::DVector<f64>) -> Matrix {
    Matrix::from_column_slice(v.len(), 1, v.as_slice())
}

/// Unweighted Gram of the model's basis on `[−r, 0]`.
pub fn delay_gram(m: &CddsModel, cfg: &QuadratureConfig) -> Result<GramData> {
    gram_matrix(&m.basis, &WeightFn::One, &Interval::delay_window(m.r)?, cfg)
}

pub fn build_structure(m: &CddsModel, g: &TransformChoice, gram: &GramData) -> Result<Structure> {
    let (n, nu, d) = (m.n, m.nu, m.d());
    if g.d() != d || gram.d() != d {
        return Err(Error::Shape(format!(
            "basis has d = {d}, G is {}x{0}, Gram is {}x{1}",
            g.d(),
            gram.d()
        )));
    }
    let window = Interval::delay_window(m.r)?;
    if !gram.weight.is_unit() || (gram.domain.a - window.a).abs() > 1e-12 || gram.domain.b != window.b {
        return Err(Error::InvalidArgument("Gram must be unweighted on [-r, 0]".into()));
    }
    let companion = m
        .basis
        .companion()
        .ok_or_else(|| Error::InvalidArgument("basis has no companion matrix".into()))?;
    let i_nu = Matrix::identity(nu, nu);
    let (gm, gi) = (g.matrix(), g.inverse());
    let dnu = d * nu;

    let mut h = Matrix::zeros(n + nu + dnu, n + dnu);
    h.view_mut((0, 0), (n, n)).fill_with_identity();
    h.view_mut((n + nu, n), (dnu, dnu)).fill_with_identity();

    let mut gamma = Matrix::zeros(nu, n + nu + dnu);
    gamma.columns_mut(0, n).copy_from(&m.a4);
    gamma.columns_mut(n, nu).copy_from(&m.a5);

    let mut a_bold = Matrix::zeros(n, n + nu + dnu);
    a_bold.columns_mut(0, n).copy_from(&m.a1);
    a_bold.columns_mut(n, nu).copy_from(&m.a2);
    a_bold.columns_mut(n + nu, dnu).copy_from(&(&m.a3 * kron(gi, &i_nu)));

    let g0 = kron(&column(&(gm * m.basis.eval_unchecked(0.0))), &i_nu);
    let gr = kron(&column(&(gm * m.basis.eval_unchecked(-m.r))), &i_nu);
    let m_hat = kron(&(gm * companion * gi), &i_nu);

    let mut g_bold = Matrix::zeros(dnu, n + nu + dnu);
    g_bold.columns_mut(0, n).copy_from(&(&g0 * &m.a4));
    g_bold.columns_mut(n, nu).copy_from(&(&g0 * &m.a5 - &gr));
    g_bold.columns_mut(n + nu, dnu).copy_from(&(-&m_hat));

    let fginv = SymMatrix::new(gi.transpose() * gram.gram_inv.as_matrix() * gi)?;
    Ok(Structure {
        n,
        nu,
        d,
        r: m.r,
        h,
        gamma,
        a_bold,
        g_bold,
        m_hat,
        g0,
        gr,
        fginv,
    })
}

/// Variables `P̂, S, U`; constraints: positivity `⪰ εI`, `S ⪰ εI`,
/// `U ⪰ εI`, derivative `⪯ −εI`.
pub fn build_condition_a(st: &Structure) -> Result<LmiProblem> {
    let mut b = LmiBuilder::new();
    let p = b.var("P", st.n + st.d * st.nu);
    let s = b.var("S", st.nu);
    let u = b.var("U", st.nu);
    let s1 = st.clone();
    b.constrain("positivity", Sense::Psd, move |a| s1.positivity(a.get(p), a.get(s)));
    b.constrain("S", Sense::Psd, move |a| a.get(s).clone());
    b.constrain("U", Sense::Psd, move |a| a.get(u).clone());
    let s2 = st.clone();
    b.constrain("derivative", Sense::Nsd, move |a| s2.derivative(a.get(p), a.get(s), a.get(u)));
    b.build()
}

/// Condition (a) with free `X₁, X₂ ∈ S^{dν}` replacing the inverse-Gram blocks.
pub fn build_condition_b(st: &Structure) -> Result<LmiProblem> {
    let mut b = LmiBuilder::new();
    let dnu = st.d * st.nu;
    let p = b.var("P", st.n + dnu);
    let s = b.var("S", st.nu);
    let u = b.var("U", st.nu);
    let x1 = b.var("X1", dnu);
    let x2 = b.var("X2", dnu);
    let s1 = st.clone();
    b.constrain("positivity", Sense::Psd, move |a| s1.positivity_free(a.get(p), a.get(s), a.get(x1)));
    b.constrain("S", Sense::Psd, move |a| a.get(s).clone());
    b.constrain("U", Sense::Psd, move |a| a.get(u).clone());
    let s2 = st.clone();
    b.constrain("derivative", Sense::Nsd, move |a| {
        s2.derivative_free(a.get(p), a.get(s), a.get(u), a.get(x2))
    });
    b.build()
}

pub fn build_condition(st: &Structure, c: Condition) -> Result<LmiProblem> {
    match c {
        Condition::A => build_condition_a(st),
        Condition::B => build_condition_b(st),
    }
}

/// Free scalars of the condition `(n+dν)(n+dν+1)/2 + ν(ν+1)`, plus
/// `dν(dν+1)` for condition (b).
pub fn variable_count(n: usize, nu: usize, d: usize, c: Condition) -> usize {
    let tri = |k: usize| k * (k + 1) / 2;
    let base = tri(n + d * nu) + 2 * tri(nu);
    match c {
        Condition::A => base,
        Condition::B => base + 2 * tri(d * nu),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct StabilityOutcome {
    pub r: f64,
    pub condition: Condition,
    pub variable_count: usize,
    pub result: FeasibilityResult,
}

/// Validates the model, builds the Gram on `[−r, 0]` and solves one condition.
pub fn analyze(
    m: &CddsModel,
    c: Condition,
    g: &TransformChoice,
    cfg: &QuadratureConfig,
    eps_rel: f64,
    backend: &dyn FeasibilityBackend,
) -> Result<StabilityOutcome> {
    let violations = validate_model(m);
    if let Some(v) = violations.first() {
        return Err(Error::InvalidArgument(format!("model invalid at r = {}: {v}", m.r)));
    }
    let gram = delay_gram(m, cfg)?;
    analyze_with_gram(m, c, g, &gram, eps_rel, backend)
}

pub fn analyze_with_gram(
    m: &CddsModel,
    c: Condition,
    g: &TransformChoice,
    gram: &GramData,
    eps_rel: f64,
    backend: &dyn FeasibilityBackend,
) -> Result<StabilityOutcome> {
    let st = build_structure(m, g, gram)?;
    let p = build_condition(&st, c)?.with_eps_rel(eps_rel);
    let result = solve_with(backend, &p)?;
    Ok(StabilityOutcome {
        r: m.r,
        condition: c,
        variable_count: p.variable_count(),
        result,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Inertia {
    pub positive: usize,
    pub negative: usize,
    pub zero: usize,
}

impl Inertia {
    /// Eigenvalues within `1e-9·max|λ|` of zero count as zero.
    pub fn of(eigs: &[f64]) -> Self {
        let scale = eigs.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let tol = 1e-9 * scale;
        Self {
            positive: eigs.iter().filter(|&&v| v > tol).count(),
            negative: eigs.iter().filter(|&&v| v < -tol).count(),
            zero: eigs.iter().filter(|&&v| v.abs() <= tol).count(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectrumPair {
    pub original: Vec<f64>,
    pub transformed: Vec<f64>,
    pub inertia_original: Inertia,
    pub inertia_transformed: Inertia,
    /// `‖Tᵀ·original·T − transformed‖ / (1 + ‖transformed‖)`, entrywise max.
    pub residual: f64,
}

impl SpectrumPair {
    pub fn agree(&self) -> bool {
        self.inertia_original == self.inertia_transformed
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CongruenceReport {
    pub positivity: SpectrumPair,
    pub derivative: SpectrumPair,
}

impl CongruenceReport {
    pub fn agree(&self) -> bool {
        self.positivity.agree() && self.derivative.agree()
    }
}

/// Compares the transformed-basis conditions at `(P̂, S, U)` with the
/// same conditions written for `f` itself with `P = TᵀP̂T`,
/// `T = I_n ⊕ (G⊗I_ν)`. The untransformed side is assembled from the
/// model directly, not from [`Structure`].
pub fn congruence_check(
    m: &CddsModel,
    g: &TransformChoice,
    gram: &GramData,
    p_hat: &Matrix,
    s: &Matrix,
    u: &Matrix,
) -> Result<CongruenceReport> {
    let st = build_structure(m, g, gram)?;
    let (n, nu, d) = (st.n, st.nu, st.d);
    let dnu = d * nu;
    if p_hat.shape() != (n + dnu, n + dnu) || s.shape() != (nu, nu) || u.shape() != (nu, nu) {
        return Err(Error::Shape("assignment does not match the model dimensions".into()));
    }
    let i_nu = Matrix::identity(nu, nu);
    let gk = kron(g.matrix(), &i_nu);
    let t = direct_sum(&[&Matrix::identity(n, n), &gk]);
    let t2 = direct_sum(&[&Matrix::identity(n + nu, n + nu), &gk]);
    let p = t.transpose() * p_hat * &t;
    let f = gram.gram_inv.as_matrix();

    let pos_orig = st.positivity(p_hat, s);
    let pos_tr = &p + direct_sum(&[&Matrix::zeros(n, n), &kron(f, s)]);

    let fk = |tau: f64| kron(&column(&m.basis.eval_unchecked(tau)), &i_nu);
    let (f0, fr) = (fk(0.0), fk(-m.r));
    let companion = m.basis.companion().expect("checked by build_structure");
    let mut psi = Matrix::zeros(n + dnu, n + nu + dnu);
    psi.view_mut((0, 0), (n, n)).copy_from(&m.a1);
    psi.view_mut((0, n), (n, nu)).copy_from(&m.a2);
    psi.view_mut((0, n + nu), (n, dnu)).copy_from(&m.a3);
    psi.view_mut((n, 0), (dnu, n)).copy_from(&(&f0 * &m.a4));
    psi.view_mut((n, n), (dnu, nu)).copy_from(&(&f0 * &m.a5 - &fr));
    psi.view_mut((n, n + nu), (dnu, dnu)).copy_from(&(-kron(companion, &i_nu)));
    let hp = &st.h * &p * &psi;
    let theta = &hp + hp.transpose() + st.gamma.transpose() * (s + u * m.r) * &st.gamma
        - direct_sum(&[&Matrix::zeros(n, n), s, &kron(f, u)]);
    let der_orig = st.derivative(p_hat, s, u);

    let pair = |orig: Matrix, tr: Matrix, tt: &Matrix| -> Result<SpectrumPair> {
        let residual = (tt.transpose() * &orig * tt - &tr).amax() / (1.0 + tr.amax());
        let eo = SymMatrix::new(orig)?.eigenvalues();
        let et = SymMatrix::new(tr)?.eigenvalues();
        Ok(SpectrumPair {
            inertia_original: Inertia::of(&eo),
            inertia_transformed: Inertia::of(&et),
            original: eo,
            transformed: et,
            residual,
        })
    };
    Ok(CongruenceReport {
        positivity: pair(pos_orig, pos_tr, &t)?,
        derivative: pair(der_orig, theta, &t2)?,
    })
}
