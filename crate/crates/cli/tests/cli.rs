use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn jeirt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jeirt")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {}", String::from_utf8_lossy(&out.stdout)))
}

fn read_json(p: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn synth(dir: &Path, name: &str, args: &[&str]) -> PathBuf {
    let w = dir.join(name);
    let mut full = vec!["synth", "--out", s(&w)];
    full.extend_from_slice(args);
    let out = jeirt(&full);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    w
}

#[test]
fn check_props_example_exits_zero_and_reports() {
    let out = jeirt(&["check-props", "--trials", "100000", "--seed", "1"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = stdout_json(&out);
    assert_eq!(report["holds"], true);
    assert_eq!(report["probability_stability"]["violations"], 0);
    assert_eq!(report["ability_shift"]["violations"], 0);

    let dir = tempfile::tempdir().unwrap();
    let out = jeirt(&["check-props", "--trials", "2000", "--seed", "4", "--out", s(dir.path())]);
    assert_eq!(code(&out), 0);
    assert_eq!(read_json(dir.path().join("props.json"))["holds"], true);
    assert_eq!(read_json(dir.path().join("resolved-config.json"))["trials"], 2000);
}

#[test]
fn missing_feature_file_is_a_data_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let w = synth(dir.path(), "w", &["--m", "5", "--n", "20", "--d", "2", "--seed", "1"]);
    let missing = dir.path().join("absent");
    let out = jeirt(&[
        "fit", "--responses", s(&w.join("responses.jsonl")), "--features", s(&missing), "--seed", "1", "--out", s(&dir.path().join("f")),
    ]);
    assert_eq!(code(&out), 3);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains(s(&missing)), "{stderr}");
    assert!(stderr.lines().last().unwrap().contains("\"stage\":\"error\""), "{stderr}");
}

#[test]
fn configuration_problems_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let w = synth(dir.path(), "w", &["--m", "5", "--n", "20", "--d", "2", "--seed", "1"]);
    let responses = w.join("responses.jsonl");
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"seed": 1, "shuffle": true}"#).unwrap();

    let unknown_key = jeirt(&["split", "--responses", s(&responses), "--config", s(&bad), "--out", s(&dir.path().join("a"))]);
    assert_eq!(code(&unknown_key), 2);
    assert!(String::from_utf8_lossy(&unknown_key.stderr).contains("shuffle"));

    let no_seed = jeirt(&["split", "--responses", s(&responses), "--out", s(&dir.path().join("b"))]);
    assert_eq!(code(&no_seed), 2);

    let no_out = jeirt(&["split", "--responses", s(&responses), "--seed", "1"]);
    assert_eq!(code(&no_out), 2);

    assert_eq!(code(&jeirt(&["frobnicate"])), 2);
    assert_eq!(code(&jeirt(&["synth", "--m", "many"])), 2);
}

#[test]
fn flags_override_the_config_document() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("synth.json");
    fs::write(&cfg, r#"{"m": 10, "n": 30, "d": 3, "seed": 5, "direction": {"kind": "uniform_sphere"}}"#).unwrap();
    let w = synth(dir.path(), "w", &["--config", s(&cfg), "--m", "12"]);
    let resolved = read_json(w.join("resolved-config.json"));
    assert_eq!(resolved["m"], 12);
    assert_eq!(resolved["n"], 30);
    assert_eq!(read_json(w.join("planted.json"))["model_ids"].as_array().unwrap().len(), 12);
}

#[test]
fn outputs_never_overwrite_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let w = synth(dir.path(), "w", &["--m", "4", "--n", "12", "--d", "2", "--seed", "2"]);
    let shadow = dir.path().join("inclusion.json");
    fs::copy(w.join("responses.jsonl"), &shadow).unwrap();
    let before = fs::read(&shadow).unwrap();
    let out = jeirt(&["inclusion", "--responses", s(&shadow), "--out", s(dir.path())]);
    assert_eq!(code(&out), 2);
    assert_eq!(fs::read(&shadow).unwrap(), before);
}

#[test]
fn planted_pipeline_recovers_oracle_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let w = synth(dir.path(), "w", &["--m", "50", "--n", "2000", "--d", "8", "--seed", "1"]);
    let (responses, features) = (w.join("responses.jsonl"), w.join("features"));
    let f = dir.path().join("fit");
    let out = jeirt(&["fit", "--responses", s(&responses), "--features", s(&features), "--seed", "1", "--dim", "8", "--out", s(&f)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let history = read_json(f.join("history.json"));
    assert!(!history.as_array().unwrap().is_empty());

    let eval = |ckpt: &Path| {
        let out = jeirt(&[
            "eval", "--checkpoint", s(ckpt), "--responses", s(&responses), "--features", s(&features), "--split", s(&f.join("split.json")),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        stdout_json(&out)["accuracy"].as_f64().unwrap()
    };
    let (fitted, oracle) = (eval(&f.join("checkpoint")), eval(&w.join("oracle")));
    assert!(oracle - fitted <= 0.02, "fitted {fitted} vs planted {oracle}");
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["--m", "20", "--n", "300", "--d", "4", "--seed", "9"];
    let w = synth(dir.path(), "w", &args);
    let first: Vec<Vec<u8>> = ["responses.jsonl", "features.f32", "oracle.f32", "planted.json"]
        .iter()
        .map(|n| fs::read(w.join(n)).unwrap())
        .collect();
    synth(dir.path(), "w", &args);
    for (n, bytes) in ["responses.jsonl", "features.f32", "oracle.f32", "planted.json"].iter().zip(&first) {
        assert_eq!(&fs::read(w.join(n)).unwrap(), bytes, "{n} changed");
    }

    let f = dir.path().join("fit");
    let fit = || {
        let out = jeirt(&[
            "fit", "--responses", s(&w.join("responses.jsonl")), "--features", s(&w.join("features")), "--seed", "3", "--dim", "4",
            "--max-epochs", "15", "--out", s(&f),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        ["checkpoint.f32", "checkpoint.manifest.json", "history.json", "split.json"].map(|n| fs::read(f.join(n)).unwrap())
    };
    assert_eq!(fit(), fit());
}

#[test]
fn onboarding_extends_a_frozen_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let w = synth(dir.path(), "w", &["--m", "30", "--n", "600", "--d", "4", "--seed", "4"]);
    let text = fs::read_to_string(w.join("responses.jsonl")).unwrap();
    let (new, rest): (Vec<&str>, Vec<&str>) = text.lines().partition(|l| l.contains("\"model_id\":\"m0029\""));
    assert_eq!(new.len(), 600);
    let (new_path, rest_path) = (dir.path().join("new.jsonl"), dir.path().join("rest.jsonl"));
    fs::write(&new_path, new.join("\n") + "\n").unwrap();
    fs::write(&rest_path, rest.join("\n") + "\n").unwrap();

    let features = w.join("features");
    let f = dir.path().join("fit");
    let out = jeirt(&["fit", "--responses", s(&rest_path), "--features", s(&features), "--seed", "1", "--dim", "4", "--out", s(&f)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let o = dir.path().join("onboard");
    let out = jeirt(&[
        "onboard", "--checkpoint", s(&f.join("checkpoint")), "--responses", s(&new_path), "--features", s(&features), "--seed", "2",
        "--fractions", "0.1,0.5,1.0", "--out", s(&o),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let curve = read_json(o.join("curve.json"));
    assert_eq!(curve["rows"].as_array().unwrap().len(), 3);
    let summary = stdout_json(&out);
    assert_eq!(summary["model_id"], "m0029");

    // the onboarded table answers for the new model and leaves the frozen rows alone
    let eval = jeirt(&[
        "eval", "--checkpoint", s(&o.join("checkpoint")), "--responses", s(&new_path), "--features", s(&features), "--part", "all",
    ]);
    assert_eq!(code(&eval), 0, "{}", String::from_utf8_lossy(&eval.stderr));
    assert!(stdout_json(&eval)["accuracy"].as_f64().unwrap() > 0.6);
    let before = read_json(f.join("checkpoint.manifest.json"));
    let after = read_json(o.join("checkpoint.manifest.json"));
    assert_eq!(before["model_ids"].as_array().map(|v| v.len() + 1), after["model_ids"].as_array().map(Vec::len));
}

#[test]
fn diagnostics_and_clustering_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let w = synth(dir.path(), "w", &["--m", "20", "--n", "200", "--d", "4", "--seed", "6"]);
    let (responses, features) = (w.join("responses.jsonl"), w.join("features"));
    let ckpt = w.join("oracle");
    let d = dir.path().join("diag");
    let common = ["--checkpoint", s(&ckpt), "--features", s(&features), "--responses", s(&responses), "--out", s(&d)];
    for kind in ["norms", "roc", "alignment", "cosine-stats", "pca", "rank", "kpca"] {
        let mut args = vec!["diagnose", kind];
        args.extend_from_slice(&common);
        let out = jeirt(&args);
        assert_eq!(code(&out), 0, "{kind}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(d.join(format!("{kind}.json")).exists(), "{kind}");
    }
    let roc = read_json(d.join("roc.json"));
    let auc = roc["auc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auc));

    let mut opposed = vec!["diagnose", "opposed"];
    opposed.extend_from_slice(&common);
    assert_eq!(code(&jeirt(&opposed)), 2, "opposed needs a seed");
    opposed.extend_from_slice(&["--seed", "1"]);
    let out = jeirt(&opposed);
    assert_eq!(code(&out), 0);
    assert!(stdout_json(&out)["cosine"].as_f64().unwrap() < 0.0);

    let mut cluster = vec!["cluster", "--k", "3", "--seed", "1", "--labels", "benchmark"];
    cluster.extend_from_slice(&common);
    let out = jeirt(&cluster);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read_json(d.join("clusters.json"))["clusters"].as_array().map(Vec::len), Some(200));
}

#[test]
fn baseline_and_inclusion_reports() {
    let dir = tempfile::tempdir().unwrap();
    let w = synth(dir.path(), "w", &["--m", "15", "--n", "120", "--d", "3", "--seed", "8"]);
    let responses = w.join("responses.jsonl");
    let o = dir.path().join("o");
    let out = jeirt(&["fit-2pl", "--responses", s(&responses), "--seed", "1", "--epochs", "300", "--out", s(&o)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read_json(o.join("irt2pl.json"))["a"].as_array().map(Vec::len), Some(120));
    assert!(o.join("saturation.json").exists());

    let out = jeirt(&["inclusion", "--responses", s(&responses), "--out", s(&o)]);
    assert_eq!(code(&out), 0);
    assert_eq!(read_json(o.join("inclusion.json"))["model_ids"].as_array().map(Vec::len), Some(15));
}
