//! Property-based invariants over randomized inputs.

use hypercil::backbone::{self, BackboneConfig};
use hypercil::ball::BallConfig;
use hypercil::data::Standardizer;
use hypercil::diff::Value;
use hypercil::incremental::{self, IncrementalLossConfig};
use hypercil::optim::SgdConfig;
use hypercil::rpl;
use proptest::prelude::*;

fn in_ball_point(c: f64, dim: usize) -> impl Strategy<Value = Vec<f64>> {
    let max_norm = (1.0 - 2e-5) / c.sqrt();
    prop::collection::vec(-1.0..1.0f64, dim).prop_map(move |v| {
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return v;
        }
        // scale into a random radius within the admitted region
        let target = max_norm * (norm / (dim as f64).sqrt()).min(1.0) * 0.999;
        v.into_iter().map(|x| x * target / norm).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mobius_left_cancellation(x in in_ball_point(0.5, 3), y in in_ball_point(0.5, 3)) {
        let ball = BallConfig::new(0.5, 1e-5).unwrap();
        let sum = ball.mobius_add(&x, &y).unwrap();
        let neg_x: Vec<f64> = x.iter().map(|v| -v).collect();
        let back = ball.mobius_add(&neg_x, &sum).unwrap();
        for (a, e) in back.iter().zip(&y) {
            prop_assert!((a - e).abs() <= 1e-9, "{a} vs {e}");
        }
    }

    #[test]
    fn distance_symmetry_and_identity(x in in_ball_point(1.0, 3), y in in_ball_point(1.0, 3)) {
        let ball = BallConfig::with_curvature(1.0).unwrap();
        let dxy = ball.distance(&x, &y).unwrap();
        let dyx = ball.distance(&y, &x).unwrap();
        prop_assert!(dxy >= 0.0);
        prop_assert!((dxy - dyx).abs() <= 1e-9);
        prop_assert!(ball.distance(&x, &x).unwrap().abs() <= 1e-10);
    }

    #[test]
    fn every_operation_stays_in_ball(x in in_ball_point(0.5, 4), y in in_ball_point(0.5, 4),
                                     v in prop::collection::vec(-10.0..10.0f64, 4)) {
        let ball = BallConfig::new(0.5, 1e-5).unwrap();
        prop_assert!(ball.is_in_ball(&ball.mobius_add(&x, &y).unwrap()));
        prop_assert!(ball.is_in_ball(&ball.exp_map_origin(&v).unwrap()));
        prop_assert!(ball.is_in_ball(&ball.project_to_ball(&v)));
    }

    #[test]
    fn exp_log_round_trip(v in prop::collection::vec(-3.0..3.0f64, 3)) {
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assume!(norm <= 3.0);
        let ball = BallConfig::with_curvature(1.0).unwrap();
        let x = ball.exp_map_origin(&v).unwrap();
        let back = ball.log_map_origin(&x).unwrap();
        for (a, e) in back.iter().zip(&v) {
            prop_assert!((a - e).abs() <= 1e-9);
        }
    }

    #[test]
    fn probabilities_sum_to_one_and_shift_invariant(
        scores in prop::collection::vec(-50.0..50.0f64, 1..8),
        shift in -100.0..100.0f64,
    ) {
        let p = rpl::softmax(&scores);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        let q = rpl::softmax(&shifted);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn herding_is_deterministic_and_within_budget(
        emb in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 2), 1..8),
        budget in 1usize..6,
    ) {
        let mean = vec![0.0, 0.0];
        let a = incremental::herding_select(&emb, &mean, budget);
        let b = incremental::herding_select(&emb, &mean, budget);
        prop_assert_eq!(&a, &b);
        prop_assert!(a.len() <= budget);
        prop_assert!(a.len() <= emb.len());
        // no duplicates
        let set: std::collections::BTreeSet<_> = a.iter().collect();
        prop_assert_eq!(set.len(), a.len());
    }

    #[test]
    fn metric_loss_is_nonnegative(
        d01 in 0.0..5.0f64, d02 in 0.0..5.0f64, d03 in 0.0..5.0f64,
        d12 in 0.0..5.0f64, d13 in 0.0..5.0f64, d23 in 0.0..5.0f64,
        tau in 0.2..2.0f64,
    ) {
        let m = [
            [0.0, d01, d02, d03],
            [d01, 0.0, d12, d13],
            [d02, d12, 0.0, d23],
            [d03, d13, d23, 0.0],
        ];
        let rows: Vec<Vec<Value<f64>>> = m
            .iter()
            .map(|r| r.iter().map(|&v| Value::constant(v)).collect())
            .collect();
        let cfg_loss = incremental::metric_loss_from_distance_matrix(&rows, tau).unwrap();
        prop_assert!(cfg_loss.value() >= 0.0, "loss {}", cfg_loss.value());
    }

    #[test]
    fn embed_is_finite_for_finite_inputs(
        x in prop::collection::vec(-100.0..100.0f64, 5),
        seed in 0u64..50,
    ) {
        let cfg = BackboneConfig::new(5, vec![6], 3, 0).unwrap();
        let store = backbone::init_params(&cfg, SgdConfig::new(0.1, 0.0, 0.0, vec![]).unwrap(), seed);
        let out = backbone::embed_graph(&x, &store, &cfg).unwrap();
        prop_assert!(out.iter().all(|v| v.value().is_finite()));
        let head = backbone::HyperbolicHead { ball: BallConfig::with_curvature(0.5).unwrap() };
        let mapped = backbone::to_hyperbolic_graph(&out, &head, &store);
        let vals: Vec<f64> = mapped.iter().map(|v| v.value()).collect();
        prop_assert!(head.ball.is_in_ball(&vals));
    }

    #[test]
    fn standardizer_produces_unit_scale(rows in prop::collection::vec(prop::collection::vec(-10.0..10.0f64, 3), 4..30)) {
        let st = Standardizer::fit(rows.iter().map(|r| r.as_slice())).unwrap();
        let transformed: Vec<Vec<f64>> = rows.iter().map(|r| st.apply(r)).collect();
        for j in 0..3 {
            let mean: f64 = transformed.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64;
            prop_assert!(mean.abs() < 1e-6, "mean {mean}");
        }
    }

    #[test]
    fn loss_terms_are_nonnegative(
        f in prop::collection::vec(-2.0..2.0f64, 2),
        p in prop::collection::vec(-2.0..2.0f64, 2),
        logit_gap in -5.0..5.0f64,
    ) {
        let fl: Vec<Value<f64>> = f.iter().map(|&v| Value::leaf(v)).collect();
        let pl: Vec<Value<f64>> = p.iter().map(|&v| Value::leaf(v)).collect();
        let de = rpl::euclidean_rp_distance(&fl, &[&pl]).unwrap();
        prop_assert!(de.value() >= 0.0);

        let logits = vec![Value::constant(0.0), Value::constant(logit_gap)];
        let ce = incremental::cross_entropy_loss(&logits, 0).unwrap();
        prop_assert!(ce.value() >= 0.0);

        let cfg = IncrementalLossConfig::new(1.0, 1.0, 1.0, 2).unwrap();
        let _ = cfg;
    }
}
