use bms_core::data::{gen_fork, ForkSpec};
use bms_core::metrics::{
    forecast_metrics, kmeans, ncll, ncll_from_logliks, oracle_topk_error, sample_statistics,
};
use bms_core::models::{Model, ModelConfig, TrajectoryConfig};
use bms_core::RngStream;
use proptest::prelude::*;

fn vecs(d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-5.0f64..5.0, d), 10..40)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn ncll_ignores_sample_order(mut l in prop::collection::vec(-100.0f64..10.0, 1..30), seed in any::<u64>()) {
        let a = ncll_from_logliks(&l).unwrap();
        RngStream::new(seed, 0).shuffle(&mut l);
        prop_assert!((a - ncll_from_logliks(&l).unwrap()).abs() <= 1e-9);
    }

    /// With a single future step the ranking distance is the reported
    /// error, and a larger kept fraction averages over a superset of the best
    /// samples.
    #[test]
    fn oracle_error_grows_with_the_kept_fraction(samples in vecs(2), y in prop::collection::vec(-5.0f64..5.0, 2)) {
        let mut prev = 0.0;
        for frac in [0.1, 0.25, 0.5, 1.0] {
            let e = oracle_topk_error(&samples, &y, frac, &[1]).unwrap()[0];
            prop_assert!(e >= prev - 1e-12);
            prev = e;
        }
        let best = samples
            .iter()
            .map(|s| ((s[0] - y[0]).powi(2) + (s[1] - y[1]).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min);
        let k1 = oracle_topk_error(&samples, &y, 1.0 / samples.len() as f64, &[1]).unwrap()[0];
        prop_assert!((k1 - best).abs() <= 1e-12);
    }

    #[test]
    fn kmeans_inertia_never_increases(points in vecs(3), k in 1usize..6, seed in any::<u64>()) {
        let km = kmeans(&points, k, 50, seed).unwrap();
        for w in km.inertia.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9);
        }
        prop_assert_eq!(km.labels.len(), points.len());
        prop_assert!(km.labels.iter().all(|&l| l < k));
    }

    #[test]
    fn forecast_scores_are_bounded(
        pred in prop::collection::vec(0.0f64..1.0, 1..200),
        seed in any::<u64>(),
        thr in 0.05f64..0.95,
    ) {
        let mut rng = RngStream::new(seed, 0);
        let truth: Vec<f64> = pred.iter().map(|_| rng.uniform()).collect();
        let m = forecast_metrics(&pred, &truth, thr).unwrap();
        for v in [m.csi, m.far, m.pod].into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        if let (Some(c), Some(p)) = (m.csi, m.pod) {
            prop_assert!(c <= p + 1e-12);
        }
        if let Some(r) = m.correlation {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
        }
    }

    #[test]
    fn sample_variance_is_non_negative(samples in vecs(4)) {
        let s = sample_statistics(&samples, &samples[0]).unwrap();
        prop_assert!(s.variance.iter().all(|&v| v >= 0.0));
        prop_assert_eq!(s.best_index, 0);
    }
}

/// The log-mean-exp estimate is biased upwards in T, so the NCLL of a fixed
/// model falls on average as the number of samples grows.
#[test]
fn ncll_decreases_with_more_samples() {
    let model = Model::new(ModelConfig::Trajectory(TrajectoryConfig::desk()), 3).unwrap();
    let batch = gen_fork(&ForkSpec::default(), 100, 1)
        .unwrap()
        .all()
        .unwrap();
    let avg = |t: usize| {
        let v = ncll(&model, &batch, t, 1.0, &RngStream::new(0, 0x30)).unwrap();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let (a, b, c) = (avg(1), avg(10), avg(100));
    assert!(a > b && b > c, "{a} {b} {c}");
}
