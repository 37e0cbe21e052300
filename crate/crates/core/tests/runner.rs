use std::path::Path;

use ivaegan::config::ExperimentConfig;
use ivaegan::container::Container;
use ivaegan::runner::{Command, Runner, SweepKind, DATASET_FILE, EVAL_FILE};
use ivaegan::Error;

fn quick(out: &Path) -> ExperimentConfig {
    let text = format!(
        "synth.samples_per_class = 40\nn_pre = 2\nn_r = 2\nn_g = 2\nn_syn = 30\nclf_epochs = 5\n\
         anchor_samples = 20\nape.fit_samples = 200\nape.mc_samples = 500\nseed = 9\nout = {}\n",
        out.display()
    );
    ExperimentConfig::from_text(&text).unwrap()
}

fn run(cfg: &ExperimentConfig, cmd: Command) -> ivaegan::Result<Vec<std::path::PathBuf>> {
    Runner::new(cfg.clone())?.run(cmd)
}

#[test]
fn all_is_deterministic_and_matches_stagewise_runs() {
    let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    run(&quick(dirs[0].path()), Command::All).unwrap();
    run(&quick(dirs[1].path()), Command::All).unwrap();
    let staged = quick(dirs[2].path());
    for cmd in [
        Command::SynthData,
        Command::Pretrain,
        Command::TrainRegressor,
        Command::TrainGenerator,
        Command::Evaluate,
    ] {
        run(&staged, cmd).unwrap();
    }
    let read = |d: &tempfile::TempDir, f: &str| std::fs::read(d.path().join(f)).unwrap();
    for f in [EVAL_FILE, "confusion.csv", "generator.ivgn", "classifier.ivgn", DATASET_FILE] {
        assert_eq!(read(&dirs[0], f), read(&dirs[1], f), "{f}");
        assert_eq!(read(&dirs[0], f), read(&dirs[2], f), "{f}");
    }
    let eval: serde_json::Value = serde_json::from_slice(&read(&dirs[0], EVAL_FILE)).unwrap();
    assert!(eval["t1"].as_f64().unwrap() >= 0.0);
}

#[test]
fn every_artifact_carries_fingerprint_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick(dir.path());
    let fp = cfg.fingerprint();
    let mut files = run(&cfg, Command::All).unwrap();
    files.extend(run(&cfg, Command::Ape).unwrap());
    files.extend(run(&cfg, Command::Sweep(SweepKind::LambdaU2)).unwrap());
    assert!(files.len() >= 15);
    for f in files {
        if f.extension().is_some_and(|e| e == "ivgn") {
            let c = Container::read(&f).unwrap();
            assert_eq!(c.meta.get("fingerprint"), Some(&fp), "{}", f.display());
            assert_eq!(c.meta.get("seed").map(String::as_str), Some("9"));
        } else {
            let text = std::fs::read_to_string(&f).unwrap();
            assert!(text.contains(&fp), "{}", f.display());
            assert!(text.contains("seed=9") || text.contains("\"seed\": 9"), "{}", f.display());
        }
    }
}

#[test]
fn missing_upstream_checkpoint_is_a_dependency_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick(dir.path());
    for cmd in [Command::Pretrain, Command::Evaluate, Command::Chain, Command::Ape] {
        let err = run(&cfg, cmd).unwrap_err();
        assert!(matches!(err, Error::Dependency(_)), "{cmd}: {err}");
    }
    run(&cfg, Command::SynthData).unwrap();
    run(&cfg, Command::Pretrain).unwrap();
    let err = run(&cfg, Command::TrainGenerator).unwrap_err();
    assert!(err.to_string().contains("regressor.ivgn"), "{err}");
}

#[test]
fn chain_and_prior_sweep_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick(dir.path());
    cfg.chain_priors = vec![ivaegan::priors::PriorKind::Uniform, ivaegan::priors::PriorKind::GroundTruth];
    cfg.sweep_priors = cfg.chain_priors.clone();
    for cmd in [Command::SynthData, Command::Pretrain, Command::TrainRegressor, Command::Chain, Command::Sweep(SweepKind::Prior)] {
        run(&cfg, cmd).unwrap();
    }
    let chain = std::fs::read_to_string(dir.path().join("chain.csv")).unwrap();
    assert_eq!(chain.lines().filter(|l| !l.starts_with('#')).count(), 5);
    let sweep = std::fs::read_to_string(dir.path().join("sweep_prior.csv")).unwrap();
    let gt = sweep.lines().find(|l| l.starts_with("gt,")).unwrap();
    assert_eq!(gt.split(',').nth(1), Some("0.000000"));
}

#[test]
fn tgzsl_reports_harmonic_mean() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick(dir.path());
    cfg.mode = ivaegan::zsl_eval::EvalMode::Tgzsl;
    run(&cfg, Command::All).unwrap();
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join(EVAL_FILE)).unwrap()).unwrap();
    let (u, s, h) = (v["u"].as_f64().unwrap(), v["s"].as_f64().unwrap(), v["h"].as_f64().unwrap());
    assert!((h - ivaegan::zsl_eval::harmonic_mean(u, s)).abs() < 1e-12);
}

#[test]
fn ape_needs_a_synthetic_source() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick(dir.path());
    run(&cfg, Command::SynthData).unwrap();
    let copy = dir.path().join("copy.ivgn");
    std::fs::copy(dir.path().join(DATASET_FILE), &copy).unwrap();
    cfg.set("source", "container").unwrap();
    cfg.set("dataset_path", copy.to_str().unwrap()).unwrap();
    let err = run(&cfg, Command::Ape).unwrap_err();
    assert!(matches!(err, Error::EvaluationUnavailable(_)), "{err}");
}
