mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::fixture;

fn qroute(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qroute"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn qroute")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn f(name: &str) -> String {
    fixture(name).to_str().unwrap().to_owned()
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&qroute(&["--help"])), 0);
    assert_eq!(code(&qroute(&["--version"])), 0);
    for sub in ["ingest", "tag", "train", "eval", "ablate", "route", "synth", "serve"] {
        let out = qroute(&[sub, "--help"]);
        assert_eq!(code(&out), 0, "{sub} --help");
        assert!(stdout(&out).contains("Usage"), "{sub}");
    }
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&qroute(&[])), 1);
    assert_eq!(code(&qroute(&["frobnicate"])), 1);
    assert_eq!(code(&qroute(&["train", "--data", "x"])), 1);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.ckpt");
    let beta = qroute(&[
        "train", "--data", &f("sample.jsonl"), "--registry", &f("registry.toml"), "--beta", "1.5", "--out", p(&out),
    ]);
    assert_eq!(code(&beta), 1);
    assert!(!out.exists());
    assert_eq!(code(&qroute(&["ablate", "--spec", &f("ablation.toml"), "--betas", "0,2"])), 1);
    assert_eq!(code(&qroute(&["train", "--data", "x", "--registry", "y", "--out", "z", "--lr", "-1"])), 1);
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = qroute(&[
        "train", "--data", "/nonexistent.jsonl", "--registry", &f("registry.toml"), "--out", p(&dir.path().join("a")),
    ]);
    assert_eq!(code(&missing), 2);

    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"id\":\"x\",\"query\":\"q\",\"rewards\":{\"alpha\":1,\"beta\":0,\"delta\":0}}\n").unwrap();
    let unknown = qroute(&["ingest", "--data", p(&bad), "--registry", &f("registry.toml"), "--out", p(&dir.path().join("o"))]);
    assert_eq!(code(&unknown), 2);
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("delta"));

    let corrupt = dir.path().join("corrupt.ckpt");
    std::fs::write(&corrupt, b"QRTCKPT\0garbage").unwrap();
    assert_eq!(code(&qroute(&["route", "--checkpoint", p(&corrupt), "--query", "hi"])), 2);
}

#[test]
fn divergent_training_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = qroute(&[
        "train", "--data", &f("sample.jsonl"), "--registry", &f("registry.toml"), "--out",
        p(&dir.path().join("r.ckpt")), "--lr", "1e308", "--epochs", "3",
    ]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn ingest_drops_planted_benchmark_overlaps() {
    let dir = tempfile::tempdir().unwrap();
    let clean = dir.path().join("clean.jsonl");
    let report = dir.path().join("report.jsonl");
    let out = qroute(&[
        "ingest", "--data", &f("sample.jsonl"), "--registry", &f("registry.toml"), "--benchmarks",
        &f("benchmarks.txt"), "--out", p(&clean), "--report", p(&report),
    ]);
    assert_eq!(code(&out), 0);
    let kept = std::fs::read_to_string(&clean).unwrap();
    assert_eq!(kept.lines().count(), 58);
    assert!(!kept.contains("\"math-002\""));
    assert!(!kept.contains("\"poetry-000\""));
    let removed = std::fs::read_to_string(&report).unwrap();
    assert_eq!(removed.lines().count(), 2);
    assert!(removed.contains("prove that there are infinitely many"));

    let none = dir.path().join("copy.jsonl");
    assert_eq!(code(&qroute(&["ingest", "--data", &f("sample.jsonl"), "--registry", &f("registry.toml"), "--out", p(&none)])), 0);
    assert_eq!(std::fs::read_to_string(&none).unwrap().lines().count(), 60);
}

#[test]
fn tag_unions_keyword_tags() {
    let dir = tempfile::tempdir().unwrap();
    let tagged = dir.path().join("tagged.jsonl");
    let out = qroute(&["tag", "--data", &f("sample.jsonl"), "--rules", &f("rules.json"), "--out", p(&tagged)]);
    assert_eq!(code(&out), 0);
    let text = std::fs::read_to_string(&tagged).unwrap();
    let line = text.lines().find(|l| l.contains("\"code-011\"")).unwrap();
    let rec: serde_json::Value = serde_json::from_str(line).unwrap();
    assert_eq!(rec["tags"], serde_json::json!(["code"]));
    let untagged_before = std::fs::read_to_string(fixture("sample.jsonl"))
        .unwrap()
        .lines()
        .filter(|l| l.contains("\"tags\": []"))
        .count();
    assert!(untagged_before > 0);
    let untagged_after = text.lines().filter(|l| l.contains("\"tags\":[]")).count();
    assert!(untagged_after < untagged_before);
}

#[test]
fn train_route_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("r.ckpt");
    let report = dir.path().join("report.json");
    let out = qroute(&[
        "train", "--data", &f("sample.jsonl"), "--registry", &f("registry.toml"), "--out", p(&ckpt),
        "--report", p(&report), "--epochs", "60", "--lr", "1.0", "--batch-size", "8",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert_eq!(text.lines().filter(|l| l.starts_with("epoch")).count(), 60);
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(rep["epoch_losses"].as_array().unwrap().len(), 60);

    let route = qroute(&["route", "--checkpoint", p(&ckpt), "--query", "Why does the borrow checker reject my closure", "--format", "records"]);
    assert_eq!(code(&route), 0);
    let r: serde_json::Value = serde_json::from_str(stdout(&route).trim()).unwrap();
    assert_eq!(r["model_id"], "beta");
    let probs: f64 = r["distribution"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
    assert!((probs - 1.0).abs() < 1e-9);

    let tsv = dir.path().join("eval.tsv");
    let eval = qroute(&[
        "eval", "--data", &f("sample.jsonl"), "--registry", &f("registry.toml"), "--oracle",
        &f("sample_oracle.jsonl"), "--checkpoint", p(&ckpt), "--tsv", p(&tsv),
    ]);
    assert_eq!(code(&eval), 0, "{}", String::from_utf8_lossy(&eval.stderr));
    let table = stdout(&eval);
    assert!(table.contains("MTR"));
    assert!(table.contains("routing accuracy"));
    let oracle_line = table.lines().find(|l| l.starts_with("oracle")).unwrap();
    assert!(oracle_line.contains("1.00"));
    assert!(std::fs::read_to_string(&tsv).unwrap().starts_with("subset\tsystem\tscore\trank\n"));
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let run = |tag: &str| {
        let ckpt = dir.path().join(format!("{tag}.ckpt"));
        let data = dir.path().join(format!("{tag}.jsonl"));
        let oracle = dir.path().join(format!("{tag}.oracle.jsonl"));
        let synth = qroute(&["synth", "--spec", &f("synth6.toml"), "--out", p(&data), "--oracle-out", p(&oracle), "--seed", "5"]);
        assert_eq!(code(&synth), 0);
        let train = qroute(&["train", "--data", &f("sample.jsonl"), "--registry", &f("registry.toml"), "--out", p(&ckpt), "--epochs", "3"]);
        assert_eq!(code(&train), 0);
        (
            std::fs::read(&ckpt).unwrap(),
            std::fs::read(&data).unwrap(),
            std::fs::read(&oracle).unwrap(),
            stdout(&train).replace(p(&ckpt), "<ckpt>"),
        )
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn synth_writes_registry_and_respects_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("s.jsonl");
    let reg = dir.path().join("reg.toml");
    let out = qroute(&["synth", "--spec", &f("synth6.toml"), "--out", p(&data), "--registry-out", p(&reg), "--sigma", "0"]);
    assert_eq!(code(&out), 0);
    let registry = qroute::ModelRegistry::load(&reg).unwrap();
    assert_eq!(registry.len(), 6);
    let ds = qroute::dataset::load_dataset(&data, &registry).unwrap();
    assert_eq!(ds.len(), 1200);
    assert!(ds.rows().iter().all(|r| r.rewards.as_slice().iter().all(|&v| v == 0.0 || v == 1.0)));
}

#[test]
fn ablate_prints_one_row_per_beta() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("tiny.toml");
    let mut text = std::fs::read_to_string(fixture("ablation.toml")).unwrap();
    text = text.replace("queries_per_cluster = 60", "queries_per_cluster = 10");
    std::fs::write(&spec, text).unwrap();
    let tsv = dir.path().join("ablate.tsv");
    let out = qroute(&["ablate", "--spec", p(&spec), "--epochs", "2", "--dimension", "4096", "--out", p(&tsv)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let tsv_text = std::fs::read_to_string(&tsv).unwrap();
    assert_eq!(tsv_text.lines().count(), 8, "{tsv_text}");
    let records = qroute(&["ablate", "--spec", p(&spec), "--epochs", "2", "--dimension", "4096", "--betas", "0,1", "--format", "records"]);
    assert_eq!(code(&records), 0);
    assert_eq!(stdout(&records).lines().count(), 2);
}
