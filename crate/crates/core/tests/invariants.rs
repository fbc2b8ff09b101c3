use proptest::prelude::*;

use kernel_lmi::basis::{make_legendre, Interval, WeightFn};
use kernel_lmi::gram::gram_matrix;
use kernel_lmi::matalg::{Matrix, SymMatrix};
use kernel_lmi::quadrature::QuadratureConfig;
use kernel_lmi::stability::{LmiBuilder, Sense, Status};
use kernel_lmi::sweep::{feasible_runs, parse_grid};

fn status() -> impl Strategy<Value = Status> {
    prop_oneof![Just(Status::Feasible), Just(Status::Infeasible), Just(Status::Inconclusive)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pack_unpack_roundtrip(dims in prop::collection::vec(1usize..5, 1..4), seed in any::<u64>()) {
        let mut b = LmiBuilder::new();
        let idx: Vec<usize> = dims.iter().enumerate().map(|(i, &d)| b.var(&format!("V{i}"), d)).collect();
        let first = idx[0];
        b.constrain("c", Sense::Psd, move |a| a.get(first).clone());
        let p = b.build().unwrap();
        let n = p.variable_count();
        let x: Vec<f64> = (0..n).map(|i| ((seed.wrapping_add(i as u64) % 1000) as f64) / 250.0 - 2.0).collect();
        let back = p.pack(&p.unpack(&x).unwrap()).unwrap();
        for (a, b) in x.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn runs_cover_exactly_the_feasible_points(statuses in prop::collection::vec(status(), 0..60)) {
        let r: Vec<f64> = (0..statuses.len()).map(|i| 0.01 * (i + 1) as f64).collect();
        let runs = feasible_runs(&r, &statuses);
        let covered: usize = runs
            .iter()
            .map(|[a, b]| r.iter().filter(|&&x| x >= *a && x <= *b).count())
            .sum();
        prop_assert_eq!(covered, statuses.iter().filter(|s| **s == Status::Feasible).count());
        for w in runs.windows(2) {
            prop_assert!(w[0][1] < w[1][0]);
        }
    }

    #[test]
    fn grid_endpoints(start in 1u32..100, step in 1u32..50, len in 0u32..200) {
        let (a, h) = (start as f64 * 1e-3, step as f64 * 1e-3);
        let stop = a + h * len as f64;
        let g = parse_grid(&format!("{a}:{h}:{stop}")).unwrap();
        prop_assert_eq!(g.len(), len as usize + 1);
        prop_assert!((g[g.len() - 1] - stop).abs() < 1e-9);
    }

    #[test]
    fn congruence_scales_gram(entries in prop::collection::vec(-1.0f64..1.0, 9), lo in -2.0f64..0.0, len in 0.1f64..3.0) {
        let dom = Interval::new(lo, lo + len).unwrap();
        let basis = make_legendre(3, dom).unwrap();
        let t = Matrix::from_fn(3, 3, |i, j| entries[3 * i + j] + if i == j { 3.0 } else { 0.0 });
        let cfg = QuadratureConfig::default();
        let g = gram_matrix(&basis, &WeightFn::One, &dom, &cfg).unwrap();
        let gt = gram_matrix(&basis.transformed(&t).unwrap(), &WeightFn::One, &dom, &cfg).unwrap();
        let want = &t * g.gram.as_matrix() * t.transpose();
        prop_assert!((gt.gram.as_matrix() - &want).amax() <= 1e-11 * want.amax());
    }

    #[test]
    fn pd_inverse_is_inverse(entries in prop::collection::vec(-1.0f64..1.0, 16)) {
        let a = Matrix::from_row_slice(4, 4, &entries);
        let s = SymMatrix::new(&a * a.transpose() + Matrix::identity(4, 4)).unwrap();
        let inv = s.pd_inverse().unwrap();
        prop_assert!((s.as_matrix() * inv.as_matrix() - Matrix::identity(4, 4)).amax() < 1e-12);
    }
}
