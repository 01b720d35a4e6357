use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_noma-beam"));
    c.env_remove("RUST_LOG");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn noma-beam")
}

fn summary(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stdout);
    serde_json::from_str(text.trim()).unwrap_or_else(|e| panic!("summary `{text}`: {e}"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, name: &str, count: usize, seed: u64, gamma_db: &str) -> PathBuf {
    let out = dir.join(name);
    let o = run(&[
        "gen-data", "--n", "4", "--k", "3", "--sigma2", "0.1", "--gamma-db", gamma_db,
        "--count", &count.to_string(), "--seed", &seed.to_string(), "--out", s(&out),
    ]);
    assert!(o.status.success(), "gen-data failed: {}", String::from_utf8_lossy(&o.stderr));
    out
}

fn train(dir: &Path, data: &Path, encoding: &str, name: &str) -> PathBuf {
    let out = dir.join(name);
    let o = run(&[
        "train", "--data", s(data), "--encoding", encoding, "--epochs", "2", "--batch", "16", "--lr", "0.001",
        "--seed", "1", "--out", s(&out),
    ]);
    assert!(o.status.success(), "train failed: {}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn gen_data_writes_count_lines_deterministically() {
    let dir = TempDir::new().unwrap();
    let a = gen(dir.path(), "a.jsonl", 100, 7, "5");
    let b = gen(dir.path(), "b.jsonl", 100, 7, "5");
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 100);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let o = run(&["gen-data", "--count", "20", "--seed", "7", "--out", s(&dir.path().join("c.jsonl"))]);
    let v = summary(&o);
    assert_eq!(v["count"], 20);
    assert!(v["feasibility_rate"].as_f64().unwrap() > 0.9);
    assert!(v["mean_label_power"].as_f64().unwrap() > 0.0);
}

#[test]
fn worker_count_does_not_change_output() {
    let dir = TempDir::new().unwrap();
    let one = dir.path().join("one.jsonl");
    let two = dir.path().join("two.jsonl");
    for (w, p) in [("1", &one), ("2", &two)] {
        let o = run(&["--workers", w, "gen-data", "--count", "40", "--seed", "3", "--out", s(p)]);
        assert!(o.status.success());
    }
    assert_eq!(fs::read(&one).unwrap(), fs::read(&two).unwrap());
}

#[test]
fn usage_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("x.jsonl");
    assert_eq!(run(&["gen-data", "--count", "0", "--seed", "1", "--out", s(&out)]).status.code(), Some(2));
    assert_eq!(run(&["gen-data", "--count", "5", "--out", s(&out)]).status.code(), Some(2));
    assert!(!out.exists());

    let o = run(&["train", "--encoding", "fcnn", "--seed", "1", "--out", s(&dir.path().join("m"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));

    let missing = dir.path().join("nope.jsonl");
    let o = run(&["train", "--data", s(&missing), "--seed", "1", "--out", s(&dir.path().join("m"))]);
    assert_eq!(o.status.code(), Some(2));

    let o = run(&["gen-data", "--count", "5", "--seed", "1", "--out", "/definitely/not/here/x.jsonl"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_fills_unset_flags() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "count = 12\nseed = 9\n").unwrap();
    let out = dir.path().join("d.jsonl");
    let o = run(&["--config", s(&cfg), "gen-data", "--out", s(&out)]);
    assert!(o.status.success());
    assert_eq!(summary(&o)["count"], 12);
    let o = run(&["--config", s(&cfg), "gen-data", "--count", "4", "--out", s(&out)]);
    assert_eq!(summary(&o)["count"], 4);

    fs::write(&cfg, "bogus = 1\n").unwrap();
    assert_eq!(run(&["--config", s(&cfg), "gen-data", "--out", s(&out)]).status.code(), Some(2));
}

#[test]
fn train_eval_bench_predict_round_trip() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let data = gen(d, "train.jsonl", 60, 1, "5");
    let test = gen(d, "test.jsonl", 40, 2, "5");
    let fcnn = train(d, &data, "fcnn", "fcnn.model");
    let tcnn = train(d, &data, "tcnn", "tcnn.model");
    assert_ne!(fs::read(&fcnn).unwrap(), fs::read(&tcnn).unwrap());

    let curve = fs::read_to_string(d.join("fcnn.curve.csv")).unwrap();
    let lines: Vec<_> = curve.lines().collect();
    assert_eq!(lines[0], "epoch,encoding,train_rmse,val_rmse");
    assert_eq!(lines.len(), 3);

    // Same seed, same bytes.
    let again = train(d, &data, "fcnn", "fcnn2.model");
    assert_eq!(fs::read(&fcnn).unwrap(), fs::read(&again).unwrap());

    let models = format!("{},{}", s(&fcnn), s(&tcnn));
    let pc = d.join("pc.csv");
    let o = run(&["eval", "--test", s(&test), "--models", &models, "--gammas", "0,2.5,5,7.5,10", "--out", s(&pc)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(summary(&o)["rows"], 25);
    let text = fs::read_to_string(&pc).unwrap();
    assert_eq!(text.lines().count(), 26);
    assert!(text.starts_with("gamma_db,method,mean_total_power,feasibility_rate,sample_count"));

    let tm = d.join("timing.csv");
    let o = run(&["bench", "--test", s(&test), "--models", s(&fcnn), "--instances", "30", "--out", s(&tm)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&tm).unwrap();
    let rows: Vec<_> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("label,") && rows[1].starts_with("fcnn,"));

    let o = run(&["predict", "--model", s(&fcnn), "--channel", s(&test)]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(text.lines().count(), 40);
    let v: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    for key in ["u_re", "u_im", "p", "total_power", "achieved_sinr", "feasible", "user_order"] {
        assert!(v.get(key).is_some(), "missing {key} in {v}");
    }
    assert_eq!(v["u_re"].as_array().unwrap().len(), 4);
    assert_eq!(v["p"].as_array().unwrap().len(), 3);
}

#[test]
fn shape_mismatch_exits_4() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let data = gen(d, "train.jsonl", 40, 1, "5");
    let model = train(d, &data, "fcnn", "m.model");
    let wide = d.join("wide.jsonl");
    let o = run(&["gen-data", "--n", "5", "--k", "3", "--count", "3", "--seed", "4", "--out", s(&wide)]);
    assert!(o.status.success());

    let o = run(&["predict", "--model", s(&model), "--channel", s(&wide)]);
    assert_eq!(o.status.code(), Some(4));
    let o = run(&["eval", "--test", s(&wide), "--models", s(&model), "--methods", "fcnn", "--out", s(&d.join("e.csv"))]);
    assert_eq!(o.status.code(), Some(4));

    let corrupt = d.join("bad.model");
    fs::write(&corrupt, "{\"format\": \"something else\"}").unwrap();
    let o = run(&["predict", "--model", s(&corrupt), "--channel", s(&data)]);
    assert_eq!(o.status.code(), Some(4));

    let mixed = d.join("mixed.jsonl");
    let other = gen(d, "other.jsonl", 40, 2, "7.5");
    let mut text = fs::read_to_string(&data).unwrap();
    text.push_str(&fs::read_to_string(&other).unwrap());
    fs::write(&mixed, text).unwrap();
    let o = run(&["train", "--data", s(&mixed), "--seed", "1", "--epochs", "1", "--batch", "16", "--out", s(&d.join("x.model"))]);
    assert_eq!(o.status.code(), Some(4));
}
