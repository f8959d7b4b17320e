use bms_cli::commands::{self, SampleDump};
use bms_cli::container::{blobs_from_container, blobs_to_container};
use bms_cli::{Checkpoint, CliError, Container, Dataset, RunConfig, Task};
use bms_core::data::{gen_blobs, BlobSpec};
use bms_core::objectives::ObjectiveKind;
use std::path::Path;

fn small(task: Task, objective: ObjectiveKind) -> RunConfig {
    let mut c = RunConfig::for_task(task);
    c.objective = objective;
    c.steps = 12;
    c.batch = Some(8);
    c.t_train = Some(3);
    c.data.n_train = 48;
    c.data.n_test = 12;
    c.eval_every = 6;
    c.eval_examples = 6;
    c.checkpoint_every = 6;
    c.eval.t_samples_cll = 10;
    c.eval.t_samples_oracle = 10;
    c.seed = 5;
    c
}

fn small_blobs() -> RunConfig {
    let mut c = small(Task::Blobs, ObjectiveKind::Bms);
    c.data.blobs = BlobSpec {
        grid: 8,
        t_fut: 3,
        ..BlobSpec::default()
    };
    c.data.n_train = 6;
    c.data.n_test = 2;
    c.batch = Some(2);
    c.steps = 2;
    c.eval_every = 0;
    c.eval.horizons = vec![1, 3];
    c
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn training_is_bitwise_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(Task::Fork, ObjectiveKind::Bms);
    let a = commands::train(&cfg, &dir.path().join("a")).unwrap();
    let b = commands::train(&cfg, &dir.path().join("b")).unwrap();
    for f in [
        "metrics.csv",
        "eval.csv",
        "final.bms",
        "ckpt_000006.bms",
        "config.json",
    ] {
        assert_eq!(
            read(&dir.path().join("a").join(f)),
            read(&dir.path().join("b").join(f)),
            "{f}"
        );
    }
    assert_eq!(a.log, b.log);
    let text = std::fs::read_to_string(dir.path().join("a/metrics.csv")).unwrap();
    assert_eq!(
        text.lines().next(),
        Some("step,value,kl,loglik_mean,loglik_max,lr")
    );
    assert_eq!(text.lines().count(), 13);
    let c = commands::train(&RunConfig { seed: 6, ..cfg }, &dir.path().join("c")).unwrap();
    assert_ne!(a.log, c.log);
}

#[test]
fn checkpoints_round_trip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(Task::Fork, ObjectiveKind::Cvae);
    let run = commands::train(&cfg, dir.path()).unwrap();
    let path = dir.path().join("final.bms");
    let bytes = read(&path);
    let ck = Checkpoint::load(&path).unwrap();
    let again = dir.path().join("again.bms");
    ck.save(&again).unwrap();
    assert_eq!(bytes, read(&again));
    assert_eq!(ck.step, 12);
    assert_eq!(ck.run_config.as_ref(), Some(&cfg));
    let before = commands::quick_ncll(&run.model, &run.test, &cfg).unwrap();
    let after = commands::quick_ncll(&ck.model, &run.test, &cfg).unwrap();
    assert_eq!(before.to_bits(), after.to_bits());
}

#[test]
fn damaged_containers_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    commands::train(&small(Task::Fork, ObjectiveKind::Mc), dir.path()).unwrap();
    let bytes = read(&dir.path().join("final.bms"));
    let short = &bytes[..bytes.len() - 8];
    assert!(matches!(
        Container::from_bytes(short),
        Err(CliError::CorruptPayload(_))
    ));
    let mut long = bytes.clone();
    long.push(0);
    assert!(matches!(
        Container::from_bytes(&long),
        Err(CliError::CorruptPayload(_))
    ));
    let mut magic = bytes.clone();
    magic[3] = b'2';
    assert!(matches!(
        Container::from_bytes(&magic),
        Err(CliError::VersionMismatch(_))
    ));
    let text =
        String::from_utf8_lossy(&bytes).replace("\"format_version\":1", "\"format_version\":9");
    assert!(matches!(
        Container::from_bytes(text.as_bytes()),
        Err(CliError::VersionMismatch(_))
    ));
    assert!(Container::from_bytes(&bytes[..6]).is_err());
}

#[test]
fn blob_datasets_round_trip() {
    let ds = gen_blobs(
        &BlobSpec {
            grid: 8,
            t_fut: 3,
            ..BlobSpec::default()
        },
        3,
        1,
    )
    .unwrap();
    let c = blobs_to_container(&ds).unwrap();
    let back =
        blobs_from_container(&Container::from_bytes(&c.to_bytes().unwrap()).unwrap()).unwrap();
    assert_eq!(back, ds);
}

#[test]
fn gen_data_is_reproducible_and_validates_first() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(Task::Star, ObjectiveKind::Bms);
    let m = commands::gen_data(&cfg, &dir.path().join("a")).unwrap();
    commands::gen_data(&cfg, &dir.path().join("b")).unwrap();
    assert_eq!(m.count, 60);
    for f in ["dataset.jsonl", "manifest.json"] {
        assert_eq!(
            read(&dir.path().join("a").join(f)),
            read(&dir.path().join("b").join(f))
        );
    }
    let loaded = Dataset::load(&dir.path().join("a/dataset.jsonl")).unwrap();
    assert_eq!(loaded.len(), 60);

    let mut bad = cfg.clone();
    bad.data.fork.mode_probs = vec![0.5, 0.2, 0.2, 0.2];
    let out = dir.path().join("bad");
    assert!(commands::gen_data(&bad, &out).is_err());
    assert!(!out.exists());
}

#[test]
fn mismatched_model_and_data_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    commands::train(
        &small(Task::Fork, ObjectiveKind::Bms),
        &dir.path().join("run"),
    )
    .unwrap();
    let blobs = small_blobs();
    commands::gen_data(&blobs, &dir.path().join("data")).unwrap();
    let err = commands::eval(
        &dir.path().join("run/final.bms"),
        None,
        Some(&dir.path().join("data/dataset.bms")),
        &dir.path().join("eval"),
    )
    .unwrap_err();
    assert!(matches!(err, CliError::KindMismatch { .. }), "{err}");
}

#[test]
fn sampling_writes_plots_and_checks_ranges() {
    let dir = tempfile::tempdir().unwrap();
    commands::train(&small(Task::Fork, ObjectiveKind::Bms), dir.path()).unwrap();
    let ck = dir.path().join("final.bms");
    let out = dir.path().join("s");
    match commands::sample(&ck, None, None, 0, 12, 1, &out).unwrap() {
        SampleDump::Trajectory(t) => {
            assert_eq!(t.samples.len(), 12);
            assert!(t.labels.iter().all(|&l| l == 0));
            assert_eq!(t.centroids.len(), 1);
        }
        SampleDump::Image(_) => panic!("expected trajectories"),
    }
    let svg = std::fs::read_to_string(out.join("samples.svg")).unwrap();
    assert!(svg.trim_end().ends_with("</svg>"));
    assert!(matches!(
        commands::sample(&ck, None, None, 999, 12, 2, &out),
        Err(CliError::IndexOutOfRange { index: 999, .. })
    ));
    assert!(commands::sample(&ck, None, None, 0, 3, 4, &out).is_err());
}

#[test]
fn image_runs_cover_the_whole_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_blobs();
    commands::train(&cfg, &dir.path().join("run")).unwrap();
    let ck = dir.path().join("run/final.bms");
    let report = commands::eval(&ck, None, None, &dir.path().join("eval")).unwrap();
    let f = report.forecast.unwrap();
    assert!(f.csi.is_none_or(|c| (0.0..=1.0).contains(&c)));
    match commands::sample(&ck, None, None, 1, 4, 2, &dir.path().join("s")).unwrap() {
        SampleDump::Image(s) => {
            assert_eq!(s.truth.len(), 3);
            assert_eq!(s.variance[0].len(), 64);
        }
        SampleDump::Trajectory(_) => panic!("expected images"),
    }
}

#[test]
fn compare_overlays_kl_only_for_recognition_objectives() {
    let dir = tempfile::tempdir().unwrap();
    let base = small(Task::Fork, ObjectiveKind::Bms);
    let configs: Vec<RunConfig> = [
        ObjectiveKind::Regression,
        ObjectiveKind::Mc,
        ObjectiveKind::Cvae,
        ObjectiveKind::Bms,
    ]
    .into_iter()
    .map(|objective| RunConfig {
        objective,
        ..base.clone()
    })
    .collect();
    let runs = commands::compare(&configs, dir.path()).unwrap();
    let with_kl: Vec<&str> = runs
        .iter()
        .filter(|r| r.final_kl.is_some())
        .map(|r| r.name.as_str())
        .collect();
    assert_eq!(with_kl, ["cvae", "bms"]);
    let svg = std::fs::read_to_string(dir.path().join("kl.svg")).unwrap();
    assert!(svg.contains(">cvae<") && svg.contains(">bms<"));
    assert!(!svg.contains(">mc<") && !svg.contains(">regression<"));
    let csv = std::fs::read_to_string(dir.path().join("comparison.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);

    let mut other = configs.clone();
    other[1].steps = 3;
    assert!(matches!(
        commands::compare(&other, &dir.path().join("x")),
        Err(CliError::Config(_))
    ));
}

#[test]
fn divergence_keeps_the_last_good_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(Task::Fork, ObjectiveKind::Bms);
    cfg.optimizer.lr = 1e300;
    cfg.steps = 50;
    match commands::train(&cfg, dir.path()) {
        Err(CliError::Numerical {
            step,
            checkpoint: Some(path),
        }) => {
            let ck = Checkpoint::load(&path).unwrap();
            assert_eq!(ck.step, step);
            assert!(ck.model.params.all_finite());
            let rows = std::fs::read_to_string(dir.path().join("metrics.csv"))
                .unwrap()
                .lines()
                .count();
            assert_eq!(rows, step + 1);
        }
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("training with lr 1e300 should diverge"),
    }
}

#[test]
fn gradient_suite_reports_injected_faults() {
    let ok = commands::gradcheck(bms_cli::Profile::Desk, None, 0, None).unwrap();
    assert!(ok.passed());
    let bad = commands::gradcheck(bms_cli::Profile::Desk, Some("exp"), 0, None).unwrap();
    assert!(!bad.passed());
    assert!(bad.failures().any(|e| e.component == "exp"));
}
