//! Feasibility backends for [`LmiProblem`].
//!
//! The built-in backend maximizes a common margin `t` subject to
//! `D_k(σ_k F_k(x))D_k ⪰ tI` inside a ball, with `D_k` diagonal
//! equilibration, by a log-det barrier path-following method.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::Serialize;

use super::problem::LmiProblem;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Feasible,
    Infeasible,
    Inconclusive,
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Status::Feasible => "feasible",
            Status::Infeasible => "infeasible",
            Status::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FeasibilityResult {
    pub status: Status,
    /// Packed variable vector, present when feasible.
    pub witness: Option<Vec<f64>>,
    /// Smallest eigenvalue of each oriented constraint `σF(x)` at the
    /// returned point (witness, or last iterate otherwise).
    pub margins: Vec<f64>,
    /// Best equilibrated common margin reached.
    pub t: f64,
    pub iterations: usize,
    pub note: String,
}

impl FeasibilityResult {
    pub fn min_margin(&self) -> f64 {
        self.margins.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

pub trait FeasibilityBackend: Send + Sync {
    fn name(&self) -> &str;
    fn solve(&self, p: &LmiProblem) -> Result<FeasibilityResult>;
}

/// Log-det barrier with damped Newton steps; deterministic.
#[derive(Clone, Debug)]
pub struct BarrierBackend {
    pub max_newton: usize,
    /// Geometric reduction of the barrier weight per outer step.
    pub mu_factor: f64,
    /// Equilibrated margin that counts as strictly feasible.
    pub feas_tol: f64,
    /// Ball radius for problems with constant terms, in scaled coordinates.
    pub radius: f64,
}

impl Default for BarrierBackend {
    fn default() -> Self {
        Self {
            max_newton: 800,
            mu_factor: 0.2,
            feas_tol: 1e-9,
            radius: 1e4,
        }
    }
}

struct Scaled {
    /// per block: constant and coefficient list (only the nonzero ones)
    blocks: Vec<ScaledBlock>,
    col: Vec<f64>,
    m: usize,
    theta: f64,
    radius: f64,
}

struct ScaledBlock {
    c: DMatrix<f64>,
    a: Vec<(usize, DMatrix<f64>)>,
}

impl ScaledBlock {
    fn eval(&self, x: &[f64], t: f64) -> DMatrix<f64> {
        let mut z = self.c.clone();
        for (j, a) in &self.a {
            z += a * x[*j];
        }
        for i in 0..z.nrows() {
            z[(i, i)] -= t;
        }
        z
    }
}

fn row_max(m: &DMatrix<f64>, i: usize) -> f64 {
    m.row(i).iter().fold(0.0, |a, v| a.max(v.abs()))
}

/// Alternating row (per block, symmetric) and column equilibration.
fn equilibrate(p: &LmiProblem, shift_eps: bool, radius: f64) -> Scaled {
    let m = p.variable_count();
    let mut blocks: Vec<ScaledBlock> = p
        .constraints
        .iter()
        .map(|c| {
            let s = c.sense.sign();
            let mut cst = &c.constant * s;
            if shift_eps {
                for i in 0..cst.nrows() {
                    cst[(i, i)] -= c.eps;
                }
            }
            let a = c
                .coeffs
                .iter()
                .enumerate()
                .filter(|(_, a)| a.amax() > 0.0)
                .map(|(j, a)| (j, a * s))
                .collect();
            ScaledBlock { c: cst, a }
        })
        .collect();
    let mut col = vec![1.0; m];
    for _ in 0..12 {
        for b in &mut blocks {
            let s = b.c.nrows();
            let d: Vec<f64> = (0..s)
                .map(|i| {
                    let r = b.a.iter().map(|(_, a)| row_max(a, i)).fold(row_max(&b.c, i), f64::max);
                    if r > 0.0 {
                        1.0 / r.sqrt()
                    } else {
                        1.0
                    }
                })
                .collect();
            let scale = |mat: &mut DMatrix<f64>| {
                for i in 0..s {
                    for j in 0..s {
                        mat[(i, j)] *= d[i] * d[j];
                    }
                }
            };
            scale(&mut b.c);
            for (_, a) in &mut b.a {
                scale(a);
            }
        }
        let mut gamma = vec![0.0f64; m];
        for b in &blocks {
            for (j, a) in &b.a {
                gamma[*j] = gamma[*j].max(a.amax());
            }
        }
        for b in &mut blocks {
            for (j, a) in &mut b.a {
                *a /= gamma[*j].sqrt();
            }
        }
        for j in 0..m {
            if gamma[j] > 0.0 {
                col[j] /= gamma[j].sqrt();
            }
        }
    }
    let theta = blocks.iter().map(|b| b.c.nrows() as f64).sum::<f64>() + 1.0;
    Scaled {
        blocks,
        col,
        m,
        theta,
        radius,
    }
}

struct Eval {
    phi: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

impl Scaled {
    /// Inverse factors of every block, or `None` outside the domain.
    fn inverses(&self, x: &[f64], t: f64) -> Option<(Vec<DMatrix<f64>>, f64)> {
        let q = self.radius * self.radius - x.iter().map(|v| v * v).sum::<f64>();
        if q <= 0.0 {
            return None;
        }
        let mut logdet = 0.0;
        let mut invs = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let ch = Cholesky::new(b.eval(x, t))?;
            logdet += 2.0 * ch.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            invs.push(ch.inverse());
        }
        Some((invs, -logdet - q.ln()))
    }

    fn barrier(&self, x: &[f64], t: f64, mu: f64) -> Option<f64> {
        self.inverses(x, t).map(|(_, b)| b - t / mu)
    }

    fn evaluate(&self, x: &[f64], t: f64, mu: f64) -> Option<Eval> {
        let (invs, bar) = self.inverses(x, t)?;
        let m = self.m;
        let mut grad = DVector::zeros(m + 1);
        let mut hess = DMatrix::zeros(m + 1, m + 1);
        for (b, zi) in self.blocks.iter().zip(&invs) {
            let w: Vec<(usize, DMatrix<f64>)> = b.a.iter().map(|(j, a)| (*j, zi * a)).collect();
            let tr_prod = |p: &DMatrix<f64>, q: &DMatrix<f64>| -> f64 {
                let s = p.nrows();
                let mut acc = 0.0;
                for i in 0..s {
                    for k in 0..s {
                        acc += p[(i, k)] * q[(k, i)];
                    }
                }
                acc
            };
            for (ii, (i, wi)) in w.iter().enumerate() {
                grad[*i] -= wi.trace();
                for (j, wj) in w.iter().skip(ii) {
                    let h = tr_prod(wi, wj);
                    hess[(*i, *j)] += h;
                    if i != j {
                        hess[(*j, *i)] += h;
                    }
                }
                let h = -tr_prod(wi, zi);
                hess[(*i, m)] += h;
                hess[(m, *i)] += h;
            }
            grad[m] += zi.trace();
            hess[(m, m)] += tr_prod(zi, zi);
        }
        let q = self.radius * self.radius - x.iter().map(|v| v * v).sum::<f64>();
        for i in 0..m {
            grad[i] += 2.0 * x[i] / q;
            hess[(i, i)] += 2.0 / q;
            for j in 0..m {
                hess[(i, j)] += 4.0 * x[i] * x[j] / (q * q);
            }
        }
        grad[m] -= 1.0 / mu;
        Some(Eval {
            phi: bar - t / mu,
            grad,
            hess,
        })
    }
}

fn newton_direction(e: &Eval) -> Option<DVector<f64>> {
    let neg = -&e.grad;
    if let Some(ch) = Cholesky::new(e.hess.clone()) {
        return Some(ch.solve(&neg));
    }
    let reg = 1e-12 * e.hess.diagonal().amax().max(1.0);
    let mut h = e.hess.clone();
    for i in 0..h.nrows() {
        h[(i, i)] += reg;
    }
    Cholesky::new(h).map(|ch| ch.solve(&neg))
}

impl BarrierBackend {
    fn run(&self, p: &LmiProblem) -> Result<FeasibilityResult> {
        p.validate()?;
        let homogeneous = p.is_homogeneous();
        let radius = if homogeneous { 1.0 } else { self.radius };
        let sc = equilibrate(p, !homogeneous, radius);
        let m = sc.m;
        let mut x = vec![0.0; m];
        let mut t = sc
            .blocks
            .iter()
            .map(|b| crate::matalg::SymMatrix::new(b.c.clone()).map_or(0.0, |s| s.min_eigenvalue()))
            .fold(f64::INFINITY, f64::min)
            - 1.0;
        let mut mu = 1.0;
        let mut iterations = 0;
        let unscale = |x: &[f64]| -> Vec<f64> { x.iter().zip(&sc.col).map(|(v, c)| v * c).collect() };

        let finish = |status: Status, x: &[f64], t: f64, iterations: usize, note: &str| {
            let orig = unscale(x);
            FeasibilityResult {
                status,
                margins: p.margins(&orig),
                witness: None,
                t,
                iterations,
                note: note.to_string(),
            }
        };

        loop {
            // squared Newton decrement at the last evaluated point
            let mut lam2 = f64::INFINITY;
            for _ in 0..60 {
                if iterations >= self.max_newton {
                    return Ok(finish(Status::Inconclusive, &x, t, iterations, "iteration limit"));
                }
                iterations += 1;
                let e = sc
                    .evaluate(&x, t, mu)
                    .ok_or_else(|| Error::Contract("barrier iterate left the domain".into()))?;
                let Some(dir) = newton_direction(&e) else {
                    return Ok(finish(Status::Inconclusive, &x, t, iterations, "singular Newton system"));
                };
                let slope = e.grad.dot(&dir);
                lam2 = -slope;
                if lam2 < 1e-9 {
                    break;
                }
                let mut s = 1.0;
                let accepted = loop {
                    let xn: Vec<f64> = x.iter().zip(dir.iter()).map(|(a, d)| a + s * d).collect();
                    let tn = t + s * dir[m];
                    if let Some(phi) = sc.barrier(&xn, tn, mu) {
                        if phi <= e.phi + 0.25 * s * slope {
                            break Some((xn, tn));
                        }
                    }
                    s *= 0.5;
                    if s < 1e-14 {
                        break None;
                    }
                };
                let Some((xn, tn)) = accepted else {
                    break;
                };
                x = xn;
                t = tn;
                if t >= self.feas_tol {
                    return Ok(self.feasible_point(p, &unscale(&x), homogeneous, t, iterations));
                }
            }
            // near the central path the optimal margin is at most
            // t + μ(θ + 2√θ) whenever the decrement is below 1/2
            let gap = mu * (sc.theta + 2.0 * sc.theta.sqrt());
            if lam2 < 0.25 && t + gap < self.feas_tol {
                return Ok(finish(Status::Infeasible, &x, t, iterations, ""));
            }
            if gap < 1e-14 {
                return Ok(finish(Status::Inconclusive, &x, t, iterations, "margin indistinguishable from zero"));
            }
            mu *= self.mu_factor;
        }
    }

    /// Turns a strictly feasible point into a witness meeting the `ε` margins.
    fn feasible_point(&self, p: &LmiProblem, x: &[f64], homogeneous: bool, t: f64, iterations: usize) -> FeasibilityResult {
        let mut w = x.to_vec();
        if homogeneous {
            // a cone: report the unit-norm representative
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            w.iter_mut().for_each(|v| *v /= norm);
        }
        let mut margins = p.margins(&w);
        if homogeneous {
            let need = p
                .constraints
                .iter()
                .zip(&margins)
                .map(|(c, &mg)| if mg > 0.0 { c.eps / mg } else { f64::INFINITY })
                .fold(1.0, f64::max);
            if need.is_finite() && need > 1.0 {
                w.iter_mut().for_each(|v| *v *= need * (1.0 + 1e-6));
                margins = p.margins(&w);
            }
        }
        FeasibilityResult {
            status: Status::Feasible,
            witness: Some(w),
            margins,
            t,
            iterations,
            note: String::new(),
        }
    }
}

impl FeasibilityBackend for BarrierBackend {
    fn name(&self) -> &str {
        "barrier"
    }

    fn solve(&self, p: &LmiProblem) -> Result<FeasibilityResult> {
        self.run(p)
    }
}

/// Solves with `backend` and re-verifies any witness by fresh eigensolves:
/// every margin must reach half its `ε`, otherwise the verdict is downgraded.
pub fn solve_with(backend: &dyn FeasibilityBackend, p: &LmiProblem) -> Result<FeasibilityResult> {
    p.validate()?;
    let mut res = backend.solve(p)?;
    if res.status == Status::Feasible {
        let Some(w) = res.witness.as_ref() else {
            res.status = Status::Inconclusive;
            res.note = "feasible verdict without witness".into();
            return Ok(res);
        };
        let margins = p.margins(w);
        let ok = p.constraints.iter().zip(&margins).all(|(c, &mg)| mg >= 0.5 * c.eps);
        res.margins = margins;
        if !ok {
            res.status = Status::Inconclusive;
            res.witness = None;
            res.note = "witness failed re-verification".into();
        }
    }
    Ok(res)
}

pub fn solve_feasibility(p: &LmiProblem) -> Result<FeasibilityResult> {
    solve_with(&BarrierBackend::default(), p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matalg::Matrix;
    use crate::stability::problem::{LmiBuilder, Sense};

    #[test]
    fn single_positive_scalar() {
        let mut b = LmiBuilder::new();
        let s = b.var("S", 1);
        b.constrain("S", Sense::Psd, move |a| a.get(s).clone());
        let p = b.build().unwrap();
        let r = solve_feasibility(&p).unwrap();
        assert_eq!(r.status, Status::Feasible);
        assert!((r.witness.unwrap()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn contradictory_pair() {
        let mut b = LmiBuilder::new();
        let v = b.var("v", 1);
        b.constrain("pos", Sense::Psd, move |a| a.get(v).clone());
        b.constrain("neg", Sense::Nsd, move |a| a.get(v).clone());
        let r = solve_feasibility(&b.build().unwrap()).unwrap();
        assert_eq!(r.status, Status::Infeasible);
        assert!(r.witness.is_none());
    }

    #[test]
    fn lyapunov_stable_and_unstable() {
        // AᵀP + PA ≺ 0, P ≻ 0
        for (a, expect) in [
            (Matrix::from_row_slice(2, 2, &[-1.0, 2.0, 0.0, -3.0]), Status::Feasible),
            (Matrix::from_row_slice(2, 2, &[0.1, 2.0, 0.0, -3.0]), Status::Infeasible),
        ] {
            let mut b = LmiBuilder::new();
            let p = b.var("P", 2);
            let a2 = a.clone();
            b.constrain("P", Sense::Psd, move |x| x.get(p).clone());
            b.constrain("lyap", Sense::Nsd, move |x| a2.transpose() * x.get(p) + x.get(p) * &a2);
            let r = solve_feasibility(&b.build().unwrap()).unwrap();
            assert_eq!(r.status, expect, "{a}");
            if expect == Status::Feasible {
                assert!(r.margins.iter().zip([1.0, 1.0]).all(|(m, _)| *m > 0.0));
            }
        }
    }

    #[test]
    fn affine_with_constant() {
        // x ⪰ 5 and x ⪯ 7 (as 7 − x ⪰ 0), then x ⪰ 5 and x ⪯ 4
        for (hi, expect) in [(7.0, Status::Feasible), (4.0, Status::Infeasible)] {
            let mut b = LmiBuilder::new();
            let v = b.var("x", 1);
            b.constrain("lo", Sense::Psd, move |a| a.get(v).add_scalar(-5.0));
            b.constrain("hi", Sense::Psd, move |a| a.get(v).scale(-1.0).add_scalar(hi));
            let r = solve_feasibility(&b.build().unwrap()).unwrap();
            assert_eq!(r.status, expect);
            if let Some(w) = r.witness {
                assert!(w[0] > 5.0 && w[0] < 7.0);
            }
        }
    }

    #[test]
    fn failing_backend_is_downgraded() {
        struct Liar;
        impl FeasibilityBackend for Liar {
            fn name(&self) -> &str {
                "liar"
            }
            fn solve(&self, p: &LmiProblem) -> Result<FeasibilityResult> {
                Ok(FeasibilityResult {
                    status: Status::Feasible,
                    witness: Some(vec![-1.0; p.variable_count()]),
                    margins: vec![],
                    t: 1.0,
                    iterations: 0,
                    note: String::new(),
                })
            }
        }
        let mut b = LmiBuilder::new();
        let s = b.var("S", 1);
        b.constrain("S", Sense::Psd, move |a| a.get(s).clone());
        let r = solve_with(&Liar, &b.build().unwrap()).unwrap();
        assert_eq!(r.status, Status::Inconclusive);
    }
}
