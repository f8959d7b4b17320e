use bms_core::data::{
    fork_analytic_ncll, fork_conditional_ncll, gen_blobs, gen_fork, gen_fork_with_map, gen_star,
    read_jsonl, split_indices, write_jsonl, BlobSpec, ForkSpec,
};
use bms_core::Error;
use proptest::prelude::*;

/// Nearest mode mean of an example's future.
fn nearest_mode(spec: &ForkSpec, fut: &[f64]) -> usize {
    (0..spec.n_modes)
        .min_by(|&a, &b| {
            let d = |m: usize| {
                spec.mode_mean(m)
                    .iter()
                    .zip(fut)
                    .map(|(x, y)| (x - y).powi(2))
                    .sum::<f64>()
            };
            d(a).total_cmp(&d(b))
        })
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generators_are_pure(seed in any::<u64>(), n in 1usize..40) {
        let spec = ForkSpec::default();
        prop_assert_eq!(gen_fork(&spec, n, seed).unwrap(), gen_fork(&spec, n, seed).unwrap());
        let star = ForkSpec::star(4);
        prop_assert_eq!(gen_star(&star, n, seed).unwrap(), gen_star(&star, n, seed).unwrap());
        let blobs = BlobSpec { grid: 8, t_fut: 3, ..BlobSpec::default() };
        prop_assert_eq!(gen_blobs(&blobs, n.min(5), seed).unwrap(), gen_blobs(&blobs, n.min(5), seed).unwrap());
    }

    #[test]
    fn split_partitions_indices(n in 2usize..500, frac in 0.05f64..0.95, seed in any::<u64>()) {
        let (a, b) = split_indices(n, frac, seed).unwrap();
        prop_assert_eq!(a.len(), (frac * n as f64).round() as usize);
        let mut all: Vec<usize> = a.into_iter().chain(b).collect();
        all.sort();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn analytic_floor_is_bracketed_by_conditional_floors(seed in any::<u64>()) {
        let spec = ForkSpec::star(3);
        for ex in &gen_star(&spec, 10, seed).unwrap().examples {
            let mix = fork_analytic_ncll(&spec, ex);
            let m = ex.meta.mode.unwrap();
            let cond = fork_conditional_ncll(&spec, ex, m);
            prop_assert!(mix <= cond - spec.mode_probs[m].ln() + 1e-9);
            let best = (0..3).map(|k| fork_conditional_ncll(&spec, ex, k)).fold(f64::INFINITY, f64::min);
            prop_assert!(mix >= best - 1e-9);
        }
    }
}

#[test]
fn every_example_recovers_its_mode() {
    for spec in [ForkSpec::default(), ForkSpec::star(4), ForkSpec::star(6)] {
        let ds = gen_star(&spec, 2000, 1).unwrap();
        for ex in &ds.examples {
            assert_eq!(Some(nearest_mode(&spec, &ex.fut_flat())), ex.meta.mode);
        }
    }
}

#[test]
fn mode_frequencies_follow_the_probabilities() {
    let spec = ForkSpec {
        mode_probs: vec![0.8, 0.2],
        ..ForkSpec::default()
    };
    let ds = gen_fork(&spec, 5000, 3).unwrap();
    let left = ds
        .examples
        .iter()
        .filter(|e| e.meta.mode == Some(0))
        .count() as f64
        / 5000.0;
    assert!((left - 0.8).abs() < 0.03, "{left}");
}

#[test]
fn jsonl_round_trips_including_scenes() {
    let ds = gen_fork_with_map(&ForkSpec::default(), 5, 2).unwrap();
    let mut buf = Vec::new();
    write_jsonl(&ds, &mut buf).unwrap();
    assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 5);
    assert_eq!(read_jsonl(buf.as_slice()).unwrap(), ds);
    let plain = gen_fork(&ForkSpec::default(), 7, 2).unwrap();
    let mut buf = Vec::new();
    write_jsonl(&plain, &mut buf).unwrap();
    assert_eq!(read_jsonl(buf.as_slice()).unwrap(), plain);
}

#[test]
fn jsonl_errors_name_the_line() {
    let good = r#"{"obs": [[1, 0]], "fut": [[0.5, 0.5]]}"#;
    let text = format!("{good}\n\n{good}\n{{\"obs\": [[1, 0]]}}\n");
    match read_jsonl(text.as_bytes()) {
        Err(Error::Schema { line, missing }) => {
            assert_eq!(line, 4);
            assert_eq!(missing, vec!["fut".to_string()]);
        }
        other => panic!("{other:?}"),
    }
    let text = format!("{good}\nnot json\n");
    assert!(matches!(
        read_jsonl(text.as_bytes()),
        Err(Error::Parse { line: 2, .. })
    ));
    let text = r#"{"obs": [], "fut": [[0, 0]]}"#;
    assert!(matches!(
        read_jsonl(text.as_bytes()),
        Err(Error::Parse { line: 1, .. })
    ));
    let text = r#"{"obs": [[0, 0]], "fut": [[0, 0]], "meta": {"mode": 1, "tag": "x"}}"#;
    let ds = read_jsonl(text.as_bytes()).unwrap();
    assert_eq!(ds.examples[0].meta.mode, Some(1));
    assert_eq!(ds.examples[0].meta.extra["tag"], "x");
}

#[test]
fn invalid_specs_are_rejected() {
    let bad = ForkSpec {
        mode_probs: vec![0.7, 0.7],
        ..ForkSpec::default()
    };
    assert!(gen_fork(&bad, 10, 0).is_err());
    assert!(gen_fork(&ForkSpec::star(3), 10, 0).is_err());
    assert!(gen_fork(
        &ForkSpec {
            noise_std: 0.0,
            ..ForkSpec::default()
        },
        10,
        0
    )
    .is_err());
    assert!(gen_blobs(
        &BlobSpec {
            grid: 10,
            ..BlobSpec::default()
        },
        1,
        0
    )
    .is_err());
    assert!(split_indices(10, 1.0, 0).is_err());
}

#[test]
fn blobs_follow_their_centres() {
    let spec = BlobSpec::default();
    let ds = gen_blobs(&spec, 3, 9).unwrap();
    let t = spec.t_obs + spec.t_fut;
    let g = spec.grid;
    for (e, path) in ds.centers.iter().enumerate() {
        assert_eq!(path.len(), t);
        for (k, c) in path.iter().enumerate() {
            let off = (e * t + k) * g * g;
            let frame = &ds.frames.data()[off..off + g * g];
            let peak = frame
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            let (r, col) = ((peak / g) as f64, (peak % g) as f64);
            assert!((col - c[0]).abs() <= 0.5 + 1e-9 && (r - c[1]).abs() <= 0.5 + 1e-9);
        }
        let v = spec.direction(ds.fut_direction[e]);
        let (a, b) = (path[spec.t_obs], path[t - 1]);
        let steps = (spec.t_fut - 1) as f64 * spec.speed;
        assert!(
            (b[0] - a[0] - v[0] * steps).abs() < 1e-9 && (b[1] - a[1] - v[1] * steps).abs() < 1e-9
        );
    }
}
