use bms_core::latent::{kl_standard_normal, kl_values, GaussianLatent};
use bms_core::models::{Model, ModelConfig, SequenceBatch, TrajectoryConfig};
use bms_core::nn::Graph;
use bms_core::objectives::{
    argmax, decoder_loglik, objective, value_bms, value_cvae, value_mc, value_ms, value_ms_direct,
    LikelihoodConfig, ObjectiveConfig, ObjectiveKind,
};
use bms_core::{RngStream, Tensor};
use proptest::prelude::*;

fn logliks() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-200.0f64..50.0, 1..20)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn multi_sample_bounds(l in logliks(), kl in 0.0f64..50.0) {
        let ms = value_ms(&l, kl).unwrap();
        let bms = value_bms(&l, kl).unwrap();
        prop_assert!(value_cvae(&l, kl).unwrap() <= ms + 1e-9);
        prop_assert!(bms <= ms + 1e-9);
        prop_assert!(ms - bms >= -1e-9);
        prop_assert!(ms - bms <= (l.len() as f64).ln() + 1e-9);
    }

    #[test]
    fn equal_logliks_give_exact_log_t_gap(v in -500.0f64..50.0, t in 1usize..64, kl in 0.0f64..10.0) {
        let l = vec![v; t];
        let gap = value_ms(&l, kl).unwrap() - value_bms(&l, kl).unwrap();
        prop_assert!((gap - (t as f64).ln()).abs() <= 1e-9);
    }

    #[test]
    fn log_mean_paths_agree(l in prop::collection::vec(-300.0f64..30.0, 1..20), kl in 0.0f64..5.0) {
        let a = value_ms(&l, kl).unwrap();
        let b = value_ms_direct(&l, kl).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn kl_is_non_negative(mu in prop::collection::vec(-5.0f64..5.0, 1..8), seed in any::<u64>()) {
        let mut rng = RngStream::new(seed, 0);
        let lv: Vec<f64> = mu.iter().map(|_| rng.uniform_range(-4.0, 4.0)).collect();
        prop_assert!(kl_values(&mu, &lv) >= 0.0);
    }
}

#[test]
fn very_negative_logliks_stay_finite() {
    let l = [-900.0, -850.0, -1200.0];
    let v = value_ms(&l, 0.3).unwrap();
    assert!(v.is_finite());
    assert!((v - (-850.0 - 3f64.ln() - 0.3)).abs() < 1e-9);
    assert!(value_ms_direct(&l, 0.3).unwrap().is_infinite());
}

#[test]
fn kl_of_unit_mean_unit_variance_is_half() {
    let mut g = Graph::frozen(&Default::default());
    let mu = g.tape.constant(Tensor::new(vec![1, 1], vec![1.0]).unwrap());
    let lv = g.tape.constant(Tensor::new(vec![1, 1], vec![0.0]).unwrap());
    let kl = kl_standard_normal(&mut g, GaussianLatent { mu, log_var: lv }).unwrap();
    assert!((g.value(kl).item() - 0.5).abs() <= 1e-12);
    assert_eq!(kl_values(&[0.0; 4], &[0.0; 4]), 0.0);
}

/// Monte-Carlo estimate of `E_q[log q(z) - log p(z)]` against the closed form.
#[test]
fn kl_matches_monte_carlo() {
    let mut rng = RngStream::new(7, 1);
    let n = 100_000;
    for case in 0..20 {
        let d = 1 + case % 4;
        let mu: Vec<f64> = (0..d).map(|_| rng.uniform_range(-2.0, 2.0)).collect();
        let lv: Vec<f64> = (0..d).map(|_| rng.uniform_range(-2.0, 1.5)).collect();
        let exact = kl_values(&mu, &lv);
        let mut draws = RngStream::new(100 + case as u64, 2);
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let mut term = 0.0;
            for j in 0..d {
                let e = draws.normal();
                let z = mu[j] + (0.5 * lv[j]).exp() * e;
                // log q - log p; the 2 pi terms cancel.
                term += -0.5 * e * e - 0.5 * lv[j] + 0.5 * z * z;
            }
            s += term;
            s2 += term * term;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!(
            (mean - exact).abs() <= 3.0 * se,
            "case {case}: mc {mean} exact {exact} se {se}"
        );
    }
}

fn tiny_model(latent: usize, seed: u64) -> Model {
    let cfg = TrajectoryConfig {
        channels: 2,
        embed: 4,
        enc_hidden: 5,
        dec_embed: 4,
        dec_hidden: 5,
        latent,
        rec_embed: 4,
        rec_hidden: 4,
        visual: None,
        teacher_forcing: false,
    };
    Model::new(ModelConfig::Trajectory(cfg), seed).unwrap()
}

fn tiny_batch(seed: u64, b: usize) -> SequenceBatch {
    let mut rng = RngStream::new(seed, 3);
    SequenceBatch::new(
        rng.normal_tensor(vec![b, 3, 2]),
        Some(rng.normal_tensor(vec![b, 3, 2])),
        None,
    )
    .unwrap()
}

/// The batch value is the mean of per-example values, each of which
/// recomputes from its stored terms, and the loss is its negation.
#[test]
fn reports_recompute_for_every_objective() {
    let batch = tiny_batch(1, 3);
    for kind in ObjectiveKind::ALL {
        let model = tiny_model(
            if kind == ObjectiveKind::Regression {
                0
            } else {
                3
            },
            2,
        );
        let cfg = ObjectiveConfig::new(
            kind,
            if kind == ObjectiveKind::Regression {
                1
            } else {
                4
            },
        );
        let mut g = Graph::new(&model.params);
        let (loss, report) =
            objective(&model, &mut g, &batch, &cfg, &RngStream::new(5, 6), 0).unwrap();
        let mean: f64 = report.examples.iter().map(|e| e.value).sum::<f64>() / 3.0;
        assert!((report.value - mean).abs() < 1e-12, "{kind:?}");
        assert!(
            (g.value(loss).item() + report.value).abs() < 1e-12,
            "{kind:?}"
        );
        for e in &report.examples {
            assert!((e.recompute().unwrap() - e.value).abs() < 1e-9, "{kind:?}");
            assert_eq!(e.kl.is_some(), kind.uses_recognition(), "{kind:?}");
        }
    }
}

#[test]
fn regression_and_latent_models_do_not_mix() {
    let batch = tiny_batch(1, 2);
    let latent = tiny_model(3, 0);
    let plain = tiny_model(0, 0);
    let mut g = Graph::new(&latent.params);
    let rng = RngStream::new(0, 0);
    assert!(objective(
        &latent,
        &mut g,
        &batch,
        &ObjectiveConfig::new(ObjectiveKind::Regression, 1),
        &rng,
        0
    )
    .is_err());
    let mut g = Graph::new(&plain.params);
    assert!(objective(
        &plain,
        &mut g,
        &batch,
        &ObjectiveConfig::new(ObjectiveKind::Bms, 4),
        &rng,
        0
    )
    .is_err());
}

/// The BMS gradient equals the gradient of `log p(y | x, z_best) - KL` with
/// the best sample's latent held at the same draw.
#[test]
fn bms_gradient_is_the_best_sample_gradient() {
    let model = tiny_model(3, 9);
    let batch = tiny_batch(4, 1);
    let t = 6;
    let cfg = ObjectiveConfig::new(ObjectiveKind::Bms, t);
    let rng = RngStream::new(11, 12);
    let mut g = Graph::new(&model.params);
    let (loss, report) = objective(&model, &mut g, &batch, &cfg, &rng, 0).unwrap();
    let full = g.backward(loss).unwrap();
    let best = report.examples[0].best_index.unwrap();
    assert_eq!(Some(best), argmax(&report.examples[0].per_sample_loglik));

    // Rebuild only the best sample: recognition noise for example 0, sample `best`.
    let mut g = Graph::new(&model.params);
    let ctx = model.encode(&mut g, &batch).unwrap();
    let lat = model.recognize(&mut g, &batch).unwrap();
    let eps = bms_core::latent::row_noise(&rng.substream(0).substream(0), t, &[3]).rows(best, 1);
    let z = bms_core::latent::reparameterize(&mut g, lat, eps).unwrap();
    let out = model.decode(&mut g, &ctx, Some(z), 1, 3, None).unwrap();
    let y = g.tape.constant(batch.y().unwrap().flatten_rows());
    let l = decoder_loglik(&mut g, out, y, &LikelihoodConfig::default()).unwrap();
    let kl = kl_standard_normal(&mut g, lat).unwrap();
    let v = g.tape.sub(l, kl).unwrap();
    let v = g.tape.sum(v).unwrap();
    let neg = g.tape.scale(v, -1.0).unwrap();
    let single = g.backward(neg).unwrap();
    assert!((g.value(v).item() - report.examples[0].value - (t as f64).ln()).abs() < 1e-9);
    for (a, b) in full.iter().zip(&single) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 1e-10 * (1.0 + y.abs()), "{x} vs {y}");
        }
    }
}

#[test]
fn mc_value_is_log_mean_exp() {
    let l = [-1.0, -2.0, -3.0];
    let direct = ((-1f64).exp() + (-2f64).exp() + (-3f64).exp()).ln() - 3f64.ln();
    assert!((value_mc(&l).unwrap() - direct).abs() < 1e-12);
}
