//! Delay sweeps: one feasibility verdict per grid value of `r`, and the
//! maximal feasible runs of the grid.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::cdds::{validate_model, CddsModel};
use crate::error::{Error, Result};
use crate::gram::GramData;
use crate::quadrature::QuadratureConfig;
use crate::stability::{
    analyze_with_gram, delay_gram, variable_count, Condition, FeasibilityBackend, Status, TransformChoice,
};

#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub r_values: Vec<f64>,
    pub condition: Condition,
    pub g: TransformChoice,
    pub jobs: usize,
    /// Relative margin of the strict inequalities.
    pub eps_rel: f64,
    /// Bisect every interval endpoint to `REFINE_TOL` (off the grid).
    pub refine: bool,
}

pub const REFINE_TOL: f64 = 1e-4;

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.r_values.is_empty() {
            return Err(Error::InvalidArgument("empty r grid".into()));
        }
        if self.jobs == 0 {
            return Err(Error::InvalidArgument("jobs must be positive".into()));
        }
        if self.r_values[0] <= 0.0 || !self.r_values.iter().all(|r| r.is_finite()) {
            return Err(Error::InvalidArgument("r values must be positive and finite".into()));
        }
        if self.r_values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("r values must be strictly increasing".into()));
        }
        Ok(())
    }
}

/// Parses `start:step:stop`, inclusive of `stop`; values are rounded to
/// 12 decimals so that e.g. `0.001:0.001:2.5` hits `0.3` exactly.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || Error::InvalidArgument(format!("grid {s:?} is not start:step:stop"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let v: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    let (start, step, stop) = (v[0], v[1], v[2]);
    if !(step > 0.0) || stop < start {
        return Err(bad());
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count)
        .map(|k| ((start + k as f64 * step) * 1e12).round() / 1e12)
        .collect())
}

type CachedGram = std::result::Result<Arc<GramData>, String>;

/// Unweighted delay-window Grams keyed by the bit pattern of `r`.
#[derive(Clone, Default)]
pub struct GramCache {
    inner: Arc<Mutex<HashMap<u64, CachedGram>>>,
}

impl GramCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, m: &CddsModel, cfg: &QuadratureConfig) -> std::result::Result<Arc<GramData>, String> {
        let key = m.r.to_bits();
        if let Some(v) = self.inner.lock().expect("cache poisoned").get(&key) {
            return v.clone();
        }
        let v = delay_gram(m, cfg).map(Arc::new).map_err(|e| e.to_string());
        self.inner.lock().expect("cache poisoned").insert(key, v.clone());
        v
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepPoint {
    pub r: f64,
    pub status: Status,
    pub min_margin: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepReport {
    pub condition: Condition,
    pub points: Vec<SweepPoint>,
    pub intervals: Vec<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refined_intervals: Option<Vec<[f64; 2]>>,
    pub inconclusive: Vec<f64>,
    pub variable_count: usize,
    pub wall_time: f64,
}

impl SweepReport {
    pub fn statuses(&self) -> Vec<Status> {
        self.points.iter().map(|p| p.status).collect()
    }

    pub fn count(&self, s: Status) -> usize {
        self.points.iter().filter(|p| p.status == s).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("r,verdict,min_margin\n");
        for p in &self.points {
            let mg = p.min_margin.map_or(String::new(), |v| format!("{v:.12e}"));
            out.push_str(&format!("{},{},{mg}\n", fmt12(p.r), p.status));
        }
        out
    }

    pub fn summary_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Summary<'a> {
            condition: Condition,
            intervals: &'a [[f64; 2]],
            #[serde(skip_serializing_if = "Option::is_none")]
            refined_intervals: Option<&'a Vec<[f64; 2]>>,
            grid_points: usize,
            feasible: usize,
            infeasible: usize,
            inconclusive: usize,
            inconclusive_r: &'a [f64],
            variable_count: usize,
            wall_time: f64,
        }
        Ok(serde_json::to_string_pretty(&Summary {
            condition: self.condition,
            intervals: &self.intervals,
            refined_intervals: self.refined_intervals.as_ref(),
            grid_points: self.points.len(),
            feasible: self.count(Status::Feasible),
            infeasible: self.count(Status::Infeasible),
            inconclusive: self.count(Status::Inconclusive),
            inconclusive_r: &self.inconclusive,
            variable_count: self.variable_count,
            wall_time: self.wall_time,
        })?)
    }
}

/// 12 significant digits, trailing zeros trimmed.
pub fn fmt12(v: f64) -> String {
    let s = format!("{:.11e}", v);
    let parsed: f64 = s.parse().unwrap_or(v);
    let a = parsed.abs();
    if a != 0.0 && !(1e-4..1e12).contains(&a) {
        s
    } else {
        format!("{parsed}")
    }
}

/// Maximal runs of consecutive feasible points, as `[first r, last r]`.
pub fn feasible_runs(r: &[f64], status: &[Status]) -> Vec<[f64; 2]> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, s) in status.iter().enumerate() {
        match (s, start) {
            (Status::Feasible, None) => start = Some(i),
            (Status::Feasible, Some(_)) => {}
            (_, Some(k)) => {
                out.push([r[k], r[i - 1]]);
                start = None;
            }
            (_, None) => {}
        }
    }
    if let Some(k) = start {
        out.push([r[k], r[status.len() - 1]]);
    }
    out
}

fn evaluate_point(
    template: &CddsModel,
    r: f64,
    spec: &SweepSpec,
    cfg: &QuadratureConfig,
    cache: &GramCache,
    backend: &dyn FeasibilityBackend,
) -> SweepPoint {
    let inconclusive = |reason: String| SweepPoint {
        r,
        status: Status::Inconclusive,
        min_margin: None,
        reason: Some(reason),
    };
    let m = match template.with_delay(r) {
        Ok(m) => m,
        Err(e) => return inconclusive(e.to_string()),
    };
    if let Some(v) = validate_model(&m).first() {
        return inconclusive(v.to_string());
    }
    let gram = match cache.get(&m, cfg) {
        Ok(g) => g,
        Err(e) => return inconclusive(e),
    };
    match analyze_with_gram(&m, spec.condition, &spec.g, &gram, spec.eps_rel, backend) {
        Ok(out) => SweepPoint {
            r,
            status: out.result.status,
            min_margin: Some(out.result.min_margin()),
            reason: (!out.result.note.is_empty()).then(|| out.result.note.clone()),
        },
        Err(e) => inconclusive(e.to_string()),
    }
}

pub fn run_sweep(
    template: &CddsModel,
    spec: &SweepSpec,
    cfg: &QuadratureConfig,
    backend: &dyn FeasibilityBackend,
) -> Result<SweepReport> {
    run_sweep_cached(template, spec, cfg, backend, &GramCache::new())
}

/// As [`run_sweep`], sharing Grams with other sweeps through `cache`.
pub fn run_sweep_cached(
    template: &CddsModel,
    spec: &SweepSpec,
    cfg: &QuadratureConfig,
    backend: &dyn FeasibilityBackend,
    cache: &GramCache,
) -> Result<SweepReport> {
    spec.validate()?;
    if spec.g.d() != template.d() {
        return Err(Error::Shape(format!("G is {0}x{0} but the basis has d = {1}", spec.g.d(), template.d())));
    }
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let points: Vec<SweepPoint> = pool.install(|| {
        spec.r_values
            .par_iter()
            .map(|&r| evaluate_point(template, r, spec, cfg, cache, backend))
            .collect()
    });
    let statuses: Vec<Status> = points.iter().map(|p| p.status).collect();
    let intervals = feasible_runs(&spec.r_values, &statuses);
    let refined_intervals = if spec.refine {
        Some(pool.install(|| refine_intervals(template, spec, cfg, cache, backend, &statuses)))
    } else {
        None
    };
    Ok(SweepReport {
        condition: spec.condition,
        inconclusive: points.iter().filter(|p| p.status == Status::Inconclusive).map(|p| p.r).collect(),
        points,
        intervals,
        refined_intervals,
        variable_count: variable_count(template.n, template.nu, template.d(), spec.condition),
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Bisects each run endpoint against its infeasible grid neighbour.
fn refine_intervals(
    template: &CddsModel,
    spec: &SweepSpec,
    cfg: &QuadratureConfig,
    cache: &GramCache,
    backend: &dyn FeasibilityBackend,
    statuses: &[Status],
) -> Vec<[f64; 2]> {
    let r = &spec.r_values;
    let bisect = |mut good: f64, mut bad: f64| -> f64 {
        while (good - bad).abs() > REFINE_TOL {
            let mid = 0.5 * (good + bad);
            if evaluate_point(template, mid, spec, cfg, cache, backend).status == Status::Feasible {
                good = mid;
            } else {
                bad = mid;
            }
        }
        good
    };
    let mut runs = Vec::new();
    let mut i = 0;
    while i < statuses.len() {
        if statuses[i] != Status::Feasible {
            i += 1;
            continue;
        }
        let lo = i;
        while i + 1 < statuses.len() && statuses[i + 1] == Status::Feasible {
            i += 1;
        }
        runs.push((lo, i));
        i += 1;
    }
    runs.par_iter()
        .map(|&(lo, hi)| {
            let left = if lo > 0 && statuses[lo - 1] == Status::Infeasible { bisect(r[lo], r[lo - 1]) } else { r[lo] };
            let right =
                if hi + 1 < r.len() && statuses[hi + 1] == Status::Infeasible { bisect(r[hi], r[hi + 1]) } else { r[hi] };
            [left, right]
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerdictDiff {
    pub r: f64,
    pub a: Status,
    pub b: Status,
}

/// Grid points whose verdicts differ; errors if the grids differ.
pub fn compare_reports(a: &SweepReport, b: &SweepReport) -> Result<Vec<VerdictDiff>> {
    if a.points.len() != b.points.len() || a.points.iter().zip(&b.points).any(|(p, q)| p.r != q.r) {
        return Err(Error::InvalidArgument("reports were computed on different grids".into()));
    }
    Ok(a.points
        .iter()
        .zip(&b.points)
        .filter(|(p, q)| p.status != q.status)
        .map(|(p, q)| VerdictDiff {
            r: p.r,
            a: p.status,
            b: q.status,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{make_trig_block, Interval};
    use crate::matalg::Matrix;
    use crate::stability::BarrierBackend;
    use Status::{Feasible as F, Inconclusive as N, Infeasible as I};

    fn example_model() -> CddsModel {
        let b = make_trig_block(12.0, Interval::delay_window(0.1).unwrap()).unwrap();
        CddsModel::new(
            0.1,
            Matrix::from_element(1, 1, 0.35),
            Matrix::from_element(1, 1, 0.035),
            Matrix::from_row_slice(1, 3, &[0.0, 0.0, -5.0]),
            Matrix::from_element(1, 1, 1.0),
            Matrix::from_element(1, 1, 0.1),
            &b,
        )
        .unwrap()
    }

    fn spec(r: Vec<f64>) -> SweepSpec {
        SweepSpec {
            r_values: r,
            condition: Condition::A,
            g: TransformChoice::identity(3),
            jobs: 2,
            eps_rel: crate::stability::EPS_REL,
            refine: false,
        }
    }

    #[test]
    fn run_length_cases() {
        let r: Vec<f64> = (1..=8).map(|k| k as f64).collect();
        assert_eq!(feasible_runs(&r, &[I, F, F, I, F, N, F, F]), vec![[2.0, 3.0], [5.0, 5.0], [7.0, 8.0]]);
        assert_eq!(feasible_runs(&r, &[F; 8]), vec![[1.0, 8.0]]);
        assert!(feasible_runs(&r, &[I, N, I, I, N, N, I, I]).is_empty());
        assert_eq!(feasible_runs(&r[..1], &[F]), vec![[1.0, 1.0]]);
    }

    #[test]
    fn grid_parsing() {
        let g = parse_grid("0.001:0.001:2.5").unwrap();
        assert_eq!(g.len(), 2500);
        assert_eq!(g[299], 0.3);
        assert_eq!(g[2499], 2.5);
        assert_eq!(parse_grid("0.1:0.1:0.1").unwrap(), vec![0.1]);
        assert!(parse_grid("1:0:2").is_err());
        assert!(parse_grid("1:2").is_err());
        assert!(parse_grid("2:0.1:1").is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(spec(vec![0.2, 0.1]).validate().is_err());
        assert!(spec(vec![0.0, 0.1]).validate().is_err());
        assert!(spec(vec![]).validate().is_err());
        let mut s = spec(vec![0.1]);
        s.jobs = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn single_feasible_point() {
        let rep = run_sweep(&example_model(), &spec(vec![0.13]), &QuadratureConfig::default(), &BarrierBackend::default())
            .unwrap();
        assert_eq!(rep.intervals, vec![[0.13, 0.13]]);
        assert_eq!(rep.variable_count, 12);
    }

    #[test]
    fn small_sweep_and_compare() {
        let grid = vec![0.05, 0.1, 0.13, 0.15, 0.2, 0.4, 0.65];
        let cache = GramCache::new();
        let cfg = QuadratureConfig::default();
        let be = BarrierBackend::default();
        let a = run_sweep_cached(&example_model(), &spec(grid.clone()), &cfg, &be, &cache).unwrap();
        assert_eq!(a.statuses(), vec![I, F, F, F, I, I, F]);
        assert_eq!(a.intervals, vec![[0.1, 0.15], [0.65, 0.65]]);
        assert_eq!(cache.len(), grid.len());
        let mut sb = spec(grid);
        sb.condition = Condition::B;
        let b = run_sweep_cached(&example_model(), &sb, &cfg, &be, &cache).unwrap();
        assert_eq!(b.variable_count, 24);
        assert!(compare_reports(&a, &a).unwrap().is_empty());
        assert!(compare_reports(&a, &b).unwrap().is_empty());
        let c = run_sweep(&example_model(), &spec(vec![0.1]), &cfg, &be).unwrap();
        assert!(compare_reports(&a, &c).is_err());
        let csv = a.to_csv();
        assert!(csv.starts_with("r,verdict,min_margin\n0.05,infeasible,"));
        assert!(a.summary_json().unwrap().contains("\"variable_count\": 12"));
    }

    #[test]
    fn invalid_delay_is_inconclusive() {
        // duplicated kernel: Gram singular at every r
        let dom = Interval::delay_window(0.1).unwrap();
        let b = crate::basis::BasisSet::custom(
            3,
            dom,
            |t| nalgebra::DVector::from_vec(vec![1.0, 1.0, (12.0 * t).cos()]),
            Some(Matrix::zeros(3, 3)),
        )
        .unwrap();
        let mut m = example_model();
        m.basis = b;
        let rep = run_sweep(&m, &spec(vec![0.1, 0.2]), &QuadratureConfig::default(), &BarrierBackend::default()).unwrap();
        assert_eq!(rep.statuses(), vec![N, N]);
        assert!(rep.points[0].reason.as_ref().unwrap().contains("Gram"));
        assert_eq!(rep.inconclusive, vec![0.1, 0.2]);
    }

    #[test]
    fn refinement_narrows_boundary() {
        let mut s = spec(vec![0.17, 0.18, 0.19]);
        s.refine = true;
        let rep = run_sweep(&example_model(), &s, &QuadratureConfig::default(), &BarrierBackend::default()).unwrap();
        let refined = rep.refined_intervals.unwrap();
        assert_eq!(rep.intervals, vec![[0.17, 0.17]]);
        assert!(refined[0][1] > 0.17 && refined[0][1] < 0.18);
    }
}
