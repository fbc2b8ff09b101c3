//! Affine semidefinite feasibility problems over packed symmetric variables.
//!
//! A symmetric `s × s` block is packed as its lower triangle, column by
//! column, with off-diagonal entries scaled by `√2` so that the packing is
//! an isometry for the Frobenius inner product.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matalg::{Matrix, SymMatrix};

/// Relative margin for strict inequalities: `ε = EPS_REL · (1 + ‖C‖∞)`.
pub const EPS_REL: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VarBlock {
    pub name: String,
    pub dim: usize,
}

impl VarBlock {
    pub fn packed_len(&self) -> usize {
        self.dim * (self.dim + 1) / 2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    /// `F(x) ⪰ εI`
    Psd,
    /// `F(x) ⪯ −εI`
    Nsd,
}

impl Sense {
    pub fn sign(self) -> f64 {
        match self {
            Sense::Psd => 1.0,
            Sense::Nsd => -1.0,
        }
    }
}

/// `F(x) = C + Σⱼ xⱼ Aⱼ` with `x` the packed variable vector.
#[derive(Clone, Debug)]
pub struct Constraint {
    pub name: String,
    pub sense: Sense,
    pub constant: Matrix,
    pub coeffs: Vec<Matrix>,
    pub eps: f64,
}

impl Constraint {
    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }

    pub fn eval(&self, x: &[f64]) -> Matrix {
        let mut out = self.constant.clone();
        for (a, &v) in self.coeffs.iter().zip(x) {
            if v != 0.0 {
                out += a * v;
            }
        }
        out
    }

    /// Smallest eigenvalue of `σ F(x)`, positive when satisfied.
    pub fn margin(&self, x: &[f64]) -> f64 {
        let f = self.eval(x) * self.sense.sign();
        SymMatrix::new(f).map_or(f64::NEG_INFINITY, |s| s.min_eigenvalue())
    }
}

/// Value of every variable block, in declaration order.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub blocks: Vec<Matrix>,
}

impl Assignment {
    pub fn get(&self, i: usize) -> &Matrix {
        &self.blocks[i]
    }
}

type MapFn = Arc<dyn Fn(&Assignment) -> Matrix + Send + Sync>;

/// Collects variable blocks and constraint closures, then compiles them.
pub struct LmiBuilder {
    vars: Vec<VarBlock>,
    maps: Vec<(String, Sense, MapFn)>,
}

impl Default for LmiBuilder {
    fn default() -> Self {
        Self::new()
    }
}

impl LmiBuilder {
    pub fn new() -> Self {
        Self {
            vars: Vec::new(),
            maps: Vec::new(),
        }
    }

    /// Declares a symmetric variable and returns its index.
    pub fn var(&mut self, name: &str, dim: usize) -> usize {
        self.vars.push(VarBlock {
            name: name.to_string(),
            dim,
        });
        self.vars.len() - 1
    }

    pub fn constrain(
        &mut self,
        name: &str,
        sense: Sense,
        map: impl Fn(&Assignment) -> Matrix + Send + Sync + 'static,
    ) {
        self.maps.push((name.to_string(), sense, Arc::new(map)));
    }

    /// Compiles by probing `C = map(0)`, `Aⱼ = map(Eⱼ) − C`.
    pub fn build(self) -> Result<LmiProblem> {
        if self.vars.iter().any(|v| v.dim == 0) {
            return Err(Error::InvalidArgument("variable block of size 0".into()));
        }
        let n_packed: usize = self.vars.iter().map(VarBlock::packed_len).sum();
        let mut constraints = Vec::with_capacity(self.maps.len());
        for (name, sense, map) in &self.maps {
            let zero = unpack(&self.vars, &vec![0.0; n_packed])?;
            let constant = map(&zero);
            if !constant.is_square() {
                return Err(Error::Shape(format!("constraint {name} is not square")));
            }
            let mut coeffs = Vec::with_capacity(n_packed);
            let mut e = vec![0.0; n_packed];
            for j in 0..n_packed {
                e[j] = 1.0;
                let a = map(&unpack(&self.vars, &e)?) - &constant;
                e[j] = 0.0;
                if a.shape() != constant.shape() {
                    return Err(Error::Shape(format!("constraint {name} changes shape")));
                }
                coeffs.push(symmetrize(a));
            }
            let constant = symmetrize(constant);
            let eps = EPS_REL * (1.0 + inf_norm(&constant));
            constraints.push(Constraint {
                name: name.clone(),
                sense: *sense,
                constant,
                coeffs,
                eps,
            });
        }
        Ok(LmiProblem {
            variables: self.vars,
            constraints,
            maps: Some(self.maps.into_iter().map(|(_, _, m)| m).collect()),
        })
    }
}

fn symmetrize(a: Matrix) -> Matrix {
    (&a + a.transpose()) * 0.5
}

fn inf_norm(a: &Matrix) -> f64 {
    a.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Packed vector to symmetric blocks.
pub fn unpack(vars: &[VarBlock], x: &[f64]) -> Result<Assignment> {
    let total: usize = vars.iter().map(VarBlock::packed_len).sum();
    if x.len() != total {
        return Err(Error::Shape(format!("packed vector has length {}, expected {total}", x.len())));
    }
    let mut blocks = Vec::with_capacity(vars.len());
    let mut k = 0;
    for v in vars {
        let mut m = Matrix::zeros(v.dim, v.dim);
        for j in 0..v.dim {
            for i in j..v.dim {
                let val = if i == j { x[k] } else { x[k] / std::f64::consts::SQRT_2 };
                m[(i, j)] = val;
                m[(j, i)] = val;
                k += 1;
            }
        }
        blocks.push(m);
    }
    Ok(Assignment { blocks })
}

/// Symmetric blocks to packed vector (inverse of [`unpack`] on symmetric input).
pub fn pack(vars: &[VarBlock], a: &Assignment) -> Result<Vec<f64>> {
    if a.blocks.len() != vars.len() {
        return Err(Error::Shape("assignment has the wrong number of blocks".into()));
    }
    let mut x = Vec::new();
    for (v, m) in vars.iter().zip(&a.blocks) {
        if m.shape() != (v.dim, v.dim) {
            return Err(Error::Shape(format!("block {} must be {}x{}", v.name, v.dim, v.dim)));
        }
        for j in 0..v.dim {
            for i in j..v.dim {
                let s = 0.5 * (m[(i, j)] + m[(j, i)]);
                x.push(if i == j { s } else { s * std::f64::consts::SQRT_2 });
            }
        }
    }
    Ok(x)
}

#[derive(Clone)]
pub struct LmiProblem {
    pub variables: Vec<VarBlock>,
    pub constraints: Vec<Constraint>,
    maps: Option<Vec<MapFn>>,
}

impl fmt::Debug for LmiProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LmiProblem")
            .field("variables", &self.variables)
            .field("constraints", &self.constraints)
            .finish_non_exhaustive()
    }
}

impl LmiProblem {
    /// Scalar decision variables.
    pub fn variable_count(&self) -> usize {
        self.variables.iter().map(VarBlock::packed_len).sum()
    }

    pub fn unpack(&self, x: &[f64]) -> Result<Assignment> {
        unpack(&self.variables, x)
    }

    pub fn pack(&self, a: &Assignment) -> Result<Vec<f64>> {
        pack(&self.variables, a)
    }

    pub fn margins(&self, x: &[f64]) -> Vec<f64> {
        self.constraints.iter().map(|c| c.margin(x)).collect()
    }

    /// Recomputes every `ε` as `rel · (1 + ‖C‖∞)`.
    pub fn with_eps_rel(mut self, rel: f64) -> Self {
        for c in &mut self.constraints {
            c.eps = rel * (1.0 + inf_norm(&c.constant));
        }
        self
    }

    /// True when every constant term vanishes, so the feasible set is a cone.
    pub fn is_homogeneous(&self) -> bool {
        self.constraints.iter().all(|c| c.constant.amax() == 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.variable_count();
        if self.constraints.is_empty() {
            return Err(Error::InvalidArgument("problem has no constraints".into()));
        }
        for c in &self.constraints {
            let s = c.dim();
            if !c.constant.is_square() || c.coeffs.len() != m || c.coeffs.iter().any(|a| a.shape() != (s, s)) {
                return Err(Error::Shape(format!("constraint {} is malformed", c.name)));
            }
            if !(c.eps >= 0.0 && c.eps.is_finite()) {
                return Err(Error::InvalidArgument(format!("constraint {} has a bad eps", c.name)));
            }
            let finite = c.constant.iter().chain(c.coeffs.iter().flat_map(|a| a.iter())).all(|v| v.is_finite());
            if !finite {
                return Err(Error::InvalidArgument(format!("constraint {} has non-finite data", c.name)));
            }
        }
        Ok(())
    }

    /// Largest relative deviation from
    /// `map(αv₁+βv₂) = α·map(v₁) + β·map(v₂) − (α+β−1)·map(0)`
    /// over `trials` random draws, using the original closures when the
    /// problem was built in-process.
    pub fn affinity_probe(&self, seed: u64, trials: usize) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = self.variable_count();
        let mut worst: f64 = 0.0;
        for _ in 0..trials {
            let v1: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v2: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
            let al: f64 = rng.random_range(-2.0..2.0);
            let be: f64 = rng.random_range(-2.0..2.0);
            let mix: Vec<f64> = v1.iter().zip(&v2).map(|(a, b)| al * a + be * b).collect();
            for (k, c) in self.constraints.iter().enumerate() {
                let eval = |x: &[f64]| -> Result<Matrix> {
                    match &self.maps {
                        Some(maps) => Ok(maps[k](&self.unpack(x)?)),
                        None => Ok(c.eval(x)),
                    }
                };
                let lhs = eval(&mix)?;
                let rhs = eval(&v1)? * al + eval(&v2)? * be - eval(&vec![0.0; m])? * (al + be - 1.0);
                let scale = 1.0 + lhs.amax().max(rhs.amax());
                worst = worst.max((lhs - rhs).amax() / scale);
            }
        }
        Ok(worst)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ProblemFile {
            format: FORMAT_TAG.to_string(),
            variables: self.variables.clone(),
            constraints: self
                .constraints
                .iter()
                .map(|c| ConstraintFile {
                    name: c.name.clone(),
                    sense: c.sense,
                    dim: c.dim(),
                    eps: c.eps,
                    constant: rows(&c.constant),
                    coefficients: c.coeffs.iter().map(rows).collect(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ProblemFile = serde_json::from_str(text)?;
        if file.format != FORMAT_TAG {
            return Err(Error::InvalidArgument(format!("unknown problem format {:?}", file.format)));
        }
        let constraints = file
            .constraints
            .into_iter()
            .map(|c| {
                Ok(Constraint {
                    constant: from_rows(&c.constant, c.dim)?,
                    coeffs: c.coefficients.iter().map(|a| from_rows(a, c.dim)).collect::<Result<_>>()?,
                    name: c.name,
                    sense: c.sense,
                    eps: c.eps,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let p = LmiProblem {
            variables: file.variables,
            constraints,
            maps: None,
        };
        p.validate()?;
        Ok(p)
    }
}

const FORMAT_TAG: &str = "kernel-lmi/sdp-1";

#[derive(Serialize, Deserialize)]
struct ProblemFile {
    format: String,
    variables: Vec<VarBlock>,
    constraints: Vec<ConstraintFile>,
}

#[derive(Serialize, Deserialize)]
struct ConstraintFile {
    name: String,
    sense: Sense,
    dim: usize,
    eps: f64,
    constant: Vec<Vec<f64>>,
    coefficients: Vec<Vec<Vec<f64>>>,
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(r: &[Vec<f64>], dim: usize) -> Result<Matrix> {
    if r.len() != dim || r.iter().any(|row| row.len() != dim) {
        return Err(Error::Shape(format!("expected a {dim}x{dim} matrix")));
    }
    Ok(Matrix::from_fn(dim, dim, |i, j| r[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_block_problem() -> LmiProblem {
        let mut b = LmiBuilder::new();
        let p = b.var("P", 3);
        let s = b.var("S", 1);
        b.constrain("lin", Sense::Psd, move |a| {
            let mut m = a.get(p).clone();
            m[(0, 0)] += 2.0 * a.get(s)[(0, 0)] - 1.0;
            m
        });
        b.constrain("neg", Sense::Nsd, move |a| a.get(s) * -1.0);
        b.build().unwrap()
    }

    #[test]
    fn pack_roundtrip_and_isometry() {
        let vars = vec![VarBlock { name: "A".into(), dim: 3 }, VarBlock { name: "B".into(), dim: 2 }];
        let x: Vec<f64> = (0..9).map(|i| i as f64 * 0.3 - 1.0).collect();
        let a = unpack(&vars, &x).unwrap();
        let back = pack(&vars, &a).unwrap();
        for (u, v) in x.iter().zip(&back) {
            assert!((u - v).abs() < 1e-15);
        }
        let fro: f64 = a.blocks.iter().map(|m| m.norm_squared()).sum();
        let vec: f64 = x.iter().map(|v| v * v).sum();
        assert!((fro - vec).abs() < 1e-12);
    }

    #[test]
    fn compile_by_probing() {
        let p = two_block_problem();
        assert_eq!(p.variable_count(), 7);
        assert_eq!(p.constraints[0].constant[(0, 0)], -1.0);
        assert_eq!(p.constraints[0].eps, EPS_REL * 2.0);
        assert!(p.affinity_probe(1, 5).unwrap() < 1e-14);
        assert!(!p.is_homogeneous());
    }

    #[test]
    fn probe_catches_nonlinear_map() {
        let mut b = LmiBuilder::new();
        let s = b.var("S", 1);
        b.constrain("square", Sense::Psd, move |a| a.get(s) * a.get(s));
        let p = b.build().unwrap();
        assert!(p.affinity_probe(2, 3).unwrap() > 1e-3);
    }

    #[test]
    fn json_roundtrip() {
        let p = two_block_problem();
        let q = LmiProblem::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(p.variables, q.variables);
        for (a, b) in p.constraints.iter().zip(&q.constraints) {
            assert_eq!(a.sense, b.sense);
            assert_eq!(a.constant, b.constant);
            assert_eq!(a.coeffs, b.coeffs);
        }
        assert!(q.affinity_probe(3, 2).unwrap() < 1e-14);
    }

    #[test]
    fn malformed_json_rejected() {
        assert!(LmiProblem::from_json("{}").is_err());
        let p = two_block_problem();
        let bad = p.to_json().unwrap().replace("\"dim\": 3", "\"dim\": 4");
        assert!(LmiProblem::from_json(&bad).is_err());
    }
}
