//! TOML run configuration shared by the command-line front end.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::basis::{make_legendre, make_monomial, make_trig_block, BasisSet, Interval, WeightFn};
use crate::cdds::CddsModel;
use crate::error::{Error, Result};
use crate::inequality::TestSignal;
use crate::matalg::{Matrix, SymMatrix, Vector};
use crate::quadrature::QuadratureConfig;
use crate::stability::{Condition, TransformChoice, EPS_REL};

/// Bundled configuration of the scalar example with the trigonometric kernel.
pub const PAPER51: &str = include_str!("../configs/paper51.cfg");

pub type Rows = Vec<Vec<f64>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub basis: BasisConfig,
    #[serde(default)]
    pub weight: WeightConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<TransformConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signal: Option<SignalConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateConfig>,
}

/// Matrices are row-major lists of rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub a1: Rows,
    pub a2: Rows,
    pub a3: Rows,
    pub a4: Rows,
    pub a5: Rows,
    /// Default delay for commands that need one.
    pub r: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyName {
    TrigBlock,
    Legendre,
    Monomial,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    pub family: FamilyName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    /// `[a, b]` for `gram` and `bound`; stability always uses `[-r, 0]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<[f64; 2]>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    #[default]
    One,
    PowerLeft,
    PowerRight,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct WeightConfig {
    #[serde(default)]
    pub kind: WeightKind,
    #[serde(default)]
    pub p: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Relative margin of the strict inequalities.
    pub eps_rel: f64,
    pub backend: String,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eps_rel: EPS_REL,
            backend: "barrier".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformConfig {
    pub g: Rows,
}

/// `x_i(τ) = Σ_k poly[i][k] τ^k + Σ amp·sin(freq·τ + phase)` over the
/// `sines` entries `[i, amp, freq, phase]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalConfig {
    pub poly: Rows,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sines: Rows,
    /// Positive definite weight `U`; identity if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<Rows>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<Condition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps_per_delay: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn matrix(name: &str, rows: &Rows) -> Result<Matrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Config(format!("{name} must be a non-empty rectangular list of rows")));
    }
    Ok(Matrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn rows_of(m: &Matrix) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// 1-based line of `key = ...` inside `[section]`, if found.
fn line_of(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if let Some(name) = t.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            current = name.trim().to_string();
            if key.is_empty() && current == section {
                return Some(i + 1);
            }
            continue;
        }
        if current == section {
            if let Some((k, _)) = t.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn paper51() -> Self {
        Self::parse(PAPER51).expect("bundled configuration is valid")
    }

    /// Parses and validates; messages carry the offending line.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start].lines().count().max(1));
            let msg = e.message().to_string();
            Error::Config(match line {
                Some(l) => format!("line {l}: {msg}"),
                None => msg,
            })
        })?;
        cfg.validate().map_err(|(section, key, msg)| {
            Error::Config(match line_of(text, section, key) {
                Some(l) => format!("line {l}: [{section}] {key}: {msg}"),
                None => format!("[{section}] {key}: {msg}"),
            })
        })?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    fn validate(&self) -> std::result::Result<(), (&'static str, &'static str, String)> {
        let s = &self.system;
        let mats = [("a1", &s.a1), ("a2", &s.a2), ("a3", &s.a3), ("a4", &s.a4), ("a5", &s.a5)];
        for (k, m) in mats {
            matrix(k, m).map_err(|e| ("system", k, e.to_string()))?;
        }
        if !(s.r > 0.0 && s.r.is_finite()) {
            return Err(("system", "r", "delay must be positive".into()));
        }
        let d = self.basis_dim().map_err(|(k, m)| ("basis", k, m))?;
        let n = s.a1.len();
        let nu = s.a5.len();
        let shape = |rows: &Rows| (rows.len(), rows[0].len());
        let expect = [
            ("a1", shape(&s.a1), (n, n)),
            ("a2", shape(&s.a2), (n, nu)),
            ("a3", shape(&s.a3), (n, nu * d)),
            ("a4", shape(&s.a4), (nu, n)),
            ("a5", shape(&s.a5), (nu, nu)),
        ];
        for (k, got, want) in expect {
            if got != want {
                return Err((
                    "system",
                    k,
                    format!("is {}x{}, expected {}x{} (n = {n}, nu = {nu}, d = {d})", got.0, got.1, want.0, want.1),
                ));
            }
        }
        if let Some(dom) = self.basis.domain {
            Interval::new(dom[0], dom[1]).map_err(|e| ("basis", "domain", e.to_string()))?;
        }
        self.quadrature.validate().map_err(|e| ("quadrature", "", e.to_string()))?;
        if !(self.solver.eps_rel > 0.0 && self.solver.eps_rel < 1e-2) {
            return Err(("solver", "eps_rel", "must lie in (0, 1e-2)".into()));
        }
        if self.solver.backend != "barrier" {
            return Err(("solver", "backend", format!("unknown backend {:?}", self.solver.backend)));
        }
        if let Some(t) = &self.transform {
            let g = matrix("g", &t.g).map_err(|e| ("transform", "g", e.to_string()))?;
            if g.shape() != (d, d) {
                return Err(("transform", "g", format!("must be {d}x{d}")));
            }
            TransformChoice::new(g).map_err(|e| ("transform", "g", e.to_string()))?;
        }
        if let Some(sig) = &self.signal {
            let poly = matrix("poly", &sig.poly).map_err(|e| ("signal", "poly", e.to_string()))?;
            let dim = poly.nrows();
            for row in &sig.sines {
                if row.len() != 4 || row[0] < 0.0 || row[0] as usize >= dim || row[0].fract() != 0.0 {
                    return Err(("signal", "sines", format!("entries are [component < {dim}, amp, freq, phase]")));
                }
            }
            if let Some(u) = &sig.u {
                let u = matrix("u", u).map_err(|e| ("signal", "u", e.to_string()))?;
                if u.shape() != (dim, dim) || SymMatrix::new(u).map(|u| u.min_eigenvalue() <= 0.0).unwrap_or(true) {
                    return Err(("signal", "u", format!("must be a {dim}x{dim} positive definite matrix")));
                }
            }
        }
        if let Some(sw) = &self.sweep {
            if let Some(g) = &sw.grid {
                crate::sweep::parse_grid(g).map_err(|e| ("sweep", "grid", e.to_string()))?;
            }
            if sw.jobs == Some(0) {
                return Err(("sweep", "jobs", "must be positive".into()));
            }
        }
        if let Some(sim) = &self.simulate {
            if sim.t_end.is_some_and(|t| !(t > 0.0)) {
                return Err(("simulate", "t_end", "must be positive".into()));
            }
            if sim.steps_per_delay == Some(0) {
                return Err(("simulate", "steps_per_delay", "must be positive".into()));
            }
        }
        Ok(())
    }

    fn basis_dim(&self) -> std::result::Result<usize, (&'static str, String)> {
        match self.basis.family {
            FamilyName::TrigBlock => {
                match self.basis.omega {
                    Some(w) if w != 0.0 && w.is_finite() => {}
                    _ => return Err(("omega", "trig_block needs a nonzero omega".into())),
                }
                if self.basis.d.is_some_and(|d| d != 3) {
                    return Err(("d", "trig_block has d = 3".into()));
                }
                Ok(3)
            }
            FamilyName::Legendre | FamilyName::Monomial => match self.basis.d {
                Some(d) if d > 0 => Ok(d),
                _ => Err(("d", "legendre and monomial need d >= 1".into())),
            },
        }
    }

    pub fn basis_on(&self, domain: Interval) -> Result<BasisSet> {
        match self.basis.family {
            FamilyName::TrigBlock => make_trig_block(self.basis.omega.unwrap_or_default(), domain),
            FamilyName::Legendre => make_legendre(self.basis.d.unwrap_or_default(), domain),
            FamilyName::Monomial => make_monomial(self.basis.d.unwrap_or_default(), domain),
        }
    }

    /// Configured domain, or `[-r, 0]` with the system delay.
    pub fn domain(&self) -> Result<Interval> {
        match self.basis.domain {
            Some([a, b]) => Interval::new(a, b),
            None => Interval::delay_window(self.system.r),
        }
    }

    pub fn weight(&self) -> WeightFn {
        match self.weight.kind {
            WeightKind::One => WeightFn::One,
            WeightKind::PowerLeft => WeightFn::PowerLeft(self.weight.p),
            WeightKind::PowerRight => WeightFn::PowerRight(self.weight.p),
        }
    }

    pub fn model(&self, r: f64) -> Result<CddsModel> {
        let s = &self.system;
        let basis = self.basis_on(Interval::delay_window(r)?)?;
        CddsModel::new(
            r,
            matrix("a1", &s.a1)?,
            matrix("a2", &s.a2)?,
            matrix("a3", &s.a3)?,
            matrix("a4", &s.a4)?,
            matrix("a5", &s.a5)?,
            &basis,
        )
    }

    /// `[transform] g`, or the identity.
    pub fn transform(&self) -> Result<TransformChoice> {
        match &self.transform {
            Some(t) => TransformChoice::new(matrix("g", &t.g)?),
            None => Ok(TransformChoice::identity(self.basis_dim().map_err(|(_, m)| Error::Config(m))?)),
        }
    }

    pub fn signal(&self) -> Result<Option<(TestSignal, SymMatrix)>> {
        let Some(sig) = &self.signal else { return Ok(None) };
        let poly = matrix("poly", &sig.poly)?;
        let n = poly.nrows();
        let sines = sig.sines.clone();
        let u = match &sig.u {
            Some(u) => SymMatrix::new(matrix("u", u)?)?,
            None => SymMatrix::identity(n),
        };
        let signal = TestSignal::new(n, move |t| {
            let mut v = Vector::from_fn(n, |i, _| poly.row(i).iter().rev().fold(0.0, |acc, c| acc * t + c));
            for s in &sines {
                v[s[0] as usize] += s[1] * (s[2] * t + s[3]).sin();
            }
            v
        });
        Ok(Some((signal, u)))
    }

    pub fn set_transform(&mut self, g: &TransformChoice) {
        self.transform = Some(TransformConfig { g: rows_of(g.matrix()) });
    }
}
