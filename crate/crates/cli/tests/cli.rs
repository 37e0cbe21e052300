use std::path::Path;
use std::process::{Command, Output};

const QUICK: &str = "synth.samples_per_class = 40\nn_pre = 2\nn_r = 2\nn_g = 2\nn_syn = 30\nclf_epochs = 5\n\
                     anchor_samples = 20\nape.fit_samples = 200\nape.mc_samples = 500\n";

fn ivaegan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ivaegan"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn quick_config(dir: &Path) -> String {
    let p = dir.join("quick.cfg");
    std::fs::write(&p, QUICK).unwrap();
    p.to_string_lossy().into_owned()
}

fn error_line(o: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&o.stderr);
    let line = stderr.lines().last().unwrap();
    serde_json::from_str(line).unwrap()
}

#[test]
fn all_writes_eval_json_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let mut evals = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let o = ivaegan(&["all", "--config", &cfg, "--seed", "5", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stdout).contains("eval.json"));
        evals.push(std::fs::read(out.join("eval.json")).unwrap());
    }
    assert_eq!(evals[0], evals[1]);
    let v: serde_json::Value = serde_json::from_slice(&evals[0]).unwrap();
    assert!(v["t1"].is_number());
    assert_eq!(v["seed"], 5);
}

#[test]
fn unknown_config_key_fails_with_machine_readable_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.cfg");
    std::fs::write(&p, "n_g = 3\nlambda_u3 = 0.1\n").unwrap();
    let out = dir.path().join("out");
    let o = ivaegan(&["all", "--config", p.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    let e = error_line(&o);
    assert_eq!(e["error"], "config");
    assert!(e["message"].as_str().unwrap().contains("line 2"));
    assert!(!out.exists(), "nothing may run before the schema check");
}

#[test]
fn stage_without_upstream_reports_dependency() {
    let dir = tempfile::tempdir().unwrap();
    let o = ivaegan(&["train-regressor", "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert_eq!(error_line(&o)["error"], "dependency");
}

#[test]
fn lambda_sweep_emits_curve() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let out = dir.path().join("o");
    let o = out.to_str().unwrap();
    for stage in ["synth-data", "pretrain", "train-regressor"] {
        assert!(ivaegan(&[stage, "--config", &cfg, "--out", o]).status.success());
    }
    let r = ivaegan(&["sweep", "--kind", "lambda-u2", "--values", "0,0.09,0.3", "--config", &cfg, "--out", o]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let csv = std::fs::read_to_string(out.join("sweep_lambda_u2.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "lambda_u2,t1,ape");
    assert_eq!(rows.len(), 4);
    assert!(rows[2].starts_with("0.09,"));
}

#[test]
fn set_overrides_and_rejects_bad_values() {
    let dir = tempfile::tempdir().unwrap();
    let o = ivaegan(&["synth-data", "--set", "lambda_r=-1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(error_line(&o)["error"], "config");
}
