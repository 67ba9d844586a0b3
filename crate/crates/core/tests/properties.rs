use nalgebra::Matrix4;
use proptest::prelude::*;

use mofusion::bayes::{ci_weights, covariance_intersection};
use mofusion::dataprep::{devectorize_upper_triangle, marginal_existence, vectorize_upper_triangle, Normalizer};
use mofusion::linalg::{Cov4, State};
use mofusion::mb::{BernoulliComponent, FusionOutput};
use mofusion::metrics::{gospa, nll, GospaConfig, PppFloor};

fn state() -> impl Strategy<Value = State> {
    (-5.0..5.0f64, -5.0..5.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(|(a, b, c, d)| State::new(a, b, c, d))
}

fn states(max: usize) -> impl Strategy<Value = Vec<State>> {
    prop::collection::vec(state(), 0..=max)
}

fn spd() -> impl Strategy<Value = Cov4> {
    (prop::array::uniform16(-1.0..1.0f64), 0.05..3.0f64).prop_map(|(v, s)| {
        let a = Matrix4::from_row_slice(&v);
        (a * a.transpose() + Cov4::identity() * 0.1) * s
    })
}

fn component() -> impl Strategy<Value = BernoulliComponent> {
    (0.01..0.99f64, state(), spd()).prop_map(|(existence, mean, cov)| BernoulliComponent { existence, mean, cov })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn gospa_is_a_bounded_symmetric_metric(x in states(6), y in states(6)) {
        let cfg = GospaConfig::default();
        let xy = gospa(&x, &y, &cfg).unwrap();
        let yx = gospa(&y, &x, &cfg).unwrap();
        prop_assert!((xy.total - yx.total).abs() < 1e-12);
        prop_assert!(xy.total >= 0.0);
        prop_assert!((xy.parts_sum() - xy.total).abs() < 1e-9);
        let bound = cfg.cutoff.powf(cfg.order) / cfg.alpha * (x.len() + y.len()) as f64;
        prop_assert!(xy.total <= bound + 1e-12);
        prop_assert_eq!(gospa(&x, &x, &cfg).unwrap().total, 0.0);
    }

    #[test]
    fn gospa_counts_cardinality_errors(x in states(6)) {
        let cfg = GospaConfig::default();
        let r = gospa(&x, &[], &cfg).unwrap();
        prop_assert!((r.total - x.len() as f64).abs() < 1e-12);
        prop_assert_eq!(r.false_detection, r.total);
        let r = gospa(&[], &x, &cfg).unwrap();
        prop_assert_eq!(r.missed, r.total);
    }

    #[test]
    fn nll_parts_sum_and_permutation_invariance(
        comps in prop::collection::vec(component(), 0..6),
        truth in states(4),
        intensity in 1e-4..0.1f64,
    ) {
        let floor = PppFloor { intensity, area: 400.0 };
        let a = nll(&FusionOutput { components: comps.clone() }, &floor, &truth).unwrap();
        prop_assert!(a.exact);
        prop_assert!((a.report.parts_sum() - a.report.total).abs() < 1e-8);
        let mut rev = comps.clone();
        rev.reverse();
        let mut truth_rev = truth.clone();
        truth_rev.reverse();
        let b = nll(&FusionOutput { components: rev }, &floor, &truth_rev).unwrap();
        prop_assert!((a.report.total - b.report.total).abs() < 1e-8 * a.report.total.abs().max(1.0));
    }

    #[test]
    fn covariance_vector_round_trip(c in spd()) {
        let c = 0.5 * (c + c.transpose());
        let v = vectorize_upper_triangle(&c).unwrap();
        prop_assert_eq!(devectorize_upper_triangle(&v), c);
        prop_assert_eq!(v[0], c[(0, 0)]);
        prop_assert_eq!(v[9], c[(3, 3)]);
    }

    #[test]
    fn marginal_existence_sums_to_existence(r in 0.0..1.0f64, w in prop::collection::vec(0.01..1.0f64, 1..8)) {
        let total: f64 = w.iter().sum();
        let w: Vec<f64> = w.iter().map(|v| v / total).collect();
        let m = marginal_existence(r, &w);
        prop_assert!((m.iter().sum::<f64>() - r).abs() < 1e-12);
    }

    #[test]
    fn normalizer_round_trips(
        x0 in -50.0..0.0f64, y0 in -50.0..0.0f64, w in 1.0..80.0f64, h in 1.0..80.0f64,
        s in state(), c in spd(),
    ) {
        let n = Normalizer::from_bounds([x0, y0, x0 + w, y0 + h]).unwrap();
        let back = n.state_to_world(&n.state_to_unit(&s));
        prop_assert!((back - s).abs().max() < 1e-9);
        let cb = n.cov_to_world(&n.cov_to_unit(&c));
        prop_assert!((cb - c).abs().max() < 1e-9 * c.abs().max());
    }

    #[test]
    fn covariance_intersection_is_conservative(covs in prop::collection::vec(spd(), 2..4), means in prop::collection::vec(state(), 4)) {
        let w = ci_weights(&covs, 50).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(w.iter().all(|v| *v >= 0.0));
        let (_, fused) = covariance_intersection(&means[..covs.len()], &covs, &w).unwrap();
        let info: Cov4 = covs.iter().map(|c| c.try_inverse().unwrap()).sum();
        let gap = fused - info.try_inverse().unwrap();
        let min_eig = (0.5 * (gap + gap.transpose())).symmetric_eigenvalues().min();
        prop_assert!(min_eig >= -1e-9 * fused.norm());
        if covs.len() == 2 {
            let trace_min = covs[0].trace().min(covs[1].trace());
            prop_assert!(fused.trace() <= trace_min * (1.0 + 1e-6));
        }
    }
}
