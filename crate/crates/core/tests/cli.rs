use gcdm::data::{gen_complementary_store, store_read, store_write, LogitRecord, LogitsStore};
use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn gcdm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gcdm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

fn json(path: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr_line(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).to_string()
}

const SMALL: &[&str] = &["--per-class", "60", "--epochs", "3", "--width", "16", "--batch-size", "32"];

fn train_small(dir: &Path, seed: &str) -> String {
    let ckpt = p(dir, &format!("ckpt_{seed}.json"));
    let mut args = vec!["train", "--seed", seed, "--out", &ckpt];
    args.extend_from_slice(SMALL);
    let o = gcdm(&args);
    assert!(o.status.success(), "{}", stderr_line(&o));
    ckpt
}

fn three_exit_store(dir: &Path) -> String {
    let records = (0..40)
        .map(|i| LogitRecord {
            id: format!("s{i}"),
            label: i % 3,
            exit_logits: (0..3)
                .map(|c| (0..3).map(|k| if k == i % 3 { 1.0 + c as f64 } else { ((i * 7 + k * 3 + c) % 5) as f64 * 0.3 }).collect())
                .collect(),
        })
        .collect();
    let path = p(dir, "three.jsonl");
    store_write(&LogitsStore::new(records).unwrap(), &path).unwrap();
    path
}

#[test]
fn unknown_flag_exits_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path(), "c.json");
    let o = gcdm(&["train", "--out", &out, "--bogus-flag", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!Path::new(&out).exists());
    let err = stderr_line(&o);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with("gcdm: error kind=usage code=2"));
}

#[test]
fn training_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = train_small(dir.path(), "7");
    let first = std::fs::read(&a).unwrap();
    let b = train_small(dir.path(), "7");
    assert_eq!(first, std::fs::read(&b).unwrap());
    let c = train_small(dir.path(), "8");
    assert_ne!(first, std::fs::read(c).unwrap());
}

#[test]
fn cdm_fuses_complementary_store() {
    let dir = tempfile::tempdir().unwrap();
    let store = p(dir.path(), "s.jsonl");
    store_write(&gen_complementary_store(10, 1000, 4.0, 0).unwrap(), &store).unwrap();
    let report = p(dir.path(), "r.json");
    let o = gcdm(&["fuse", "--logits", &store, "--method", "cdm", "--report", &report]);
    assert!(o.status.success(), "{}", stderr_line(&o));
    let r = json(&report);
    assert!(r["result"]["fused_accuracy"][1].as_f64().unwrap() >= 0.95);
    assert!(r["result"]["plain_accuracy"][1].as_f64().unwrap() <= 0.55);
    assert_eq!(r["command"], "fuse");
    assert_eq!(r["config"]["method"], "cdm");
    for key in ["build_id", "seed", "format_versions"] {
        assert!(!r[key].is_null(), "missing {key}");
    }
}

#[test]
fn every_fusion_method_runs() {
    let dir = tempfile::tempdir().unwrap();
    let eval = p(dir.path(), "eval.jsonl");
    let fit = p(dir.path(), "fit.jsonl");
    store_write(&gen_complementary_store(4, 200, 4.0, 1).unwrap(), &eval).unwrap();
    store_write(&gen_complementary_store(4, 200, 4.0, 2).unwrap(), &fit).unwrap();
    for method in ["cdm", "cdm-nobalance", "avg", "wavg", "vote", "dempster", "nn"] {
        let report = p(dir.path(), &format!("{method}.json"));
        let csv = p(dir.path(), &format!("{method}.csv"));
        let o = gcdm(&["fuse", "--logits", &eval, "--fit-logits", &fit, "--method", method, "--report", &report, "--csv", &csv]);
        assert!(o.status.success(), "{method}: {}", stderr_line(&o));
        assert_eq!(json(&report)["result"]["method"], method);
        assert!(std::fs::read_to_string(&csv).unwrap().starts_with("exit,plain_accuracy,fused_accuracy,failures\n"));
    }
    let o = gcdm(&["fuse", "--logits", &eval, "--method", "nn"]);
    assert_eq!(o.status.code(), Some(2), "nn without a fit store");
}

#[test]
fn config_file_merges_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    let store = p(dir.path(), "s.jsonl");
    store_write(&gen_complementary_store(4, 100, 4.0, 0).unwrap(), &store).unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# fusion settings\nmethod = vote\nseed = 11\n").unwrap();
    let report = p(dir.path(), "r.json");
    let cfg_s = cfg.display().to_string();
    let o = gcdm(&["fuse", "--config", &cfg_s, "--logits", &store, "--report", &report]);
    assert!(o.status.success(), "{}", stderr_line(&o));
    let r = json(&report);
    assert_eq!(r["config"]["method"], "vote");
    assert_eq!(r["seed"], 11);
    let o = gcdm(&["fuse", "--config", &cfg_s, "--method", "avg", "--logits", &store, "--report", &report]);
    assert!(o.status.success());
    assert_eq!(json(&report)["config"]["method"], "avg");

    // Keys of other subcommands are allowed in a shared file but not echoed.
    std::fs::write(&cfg, "method = vote\nepochs = 3\n").unwrap();
    let shared = p(dir.path(), "shared.json");
    let o = gcdm(&["fuse", "--config", &cfg_s, "--logits", &store, "--report", &shared]);
    assert!(o.status.success(), "{}", stderr_line(&o));
    assert!(json(&shared)["config"].get("epochs").is_none());

    std::fs::write(&cfg, "method = vote\nepoch = 3\n").unwrap();
    let fresh = p(dir.path(), "fresh.json");
    let o = gcdm(&["fuse", "--config", &cfg_s, "--logits", &store, "--report", &fresh]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_line(&o).contains("unknown config key 'epoch'"));
    assert!(!Path::new(&fresh).exists());
}

#[test]
fn exit_codes_follow_error_classes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = p(dir.path(), "missing.jsonl");
    let out = p(dir.path(), "o.json");
    let o = gcdm(&["eval-anytime", "--logits", &missing, "--report", &out]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr_line(&o).starts_with("gcdm: error kind=io code=3"));

    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"id\":\"a\",\"label\":0,\"exit_logits\":[[1,2]]}\n{oops}\n").unwrap();
    let o = gcdm(&["eval-anytime", "--logits", &bad.display().to_string()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr_line(&o).contains("kind=parse"));

    let store = p(dir.path(), "s.jsonl");
    store_write(&gen_complementary_store(4, 50, 4.0, 0).unwrap(), &store).unwrap();
    let o = gcdm(&["calibrate", "--logits", &store, "--costs", "10,20", "--budget", "5", "--out", &out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_line(&o).contains("kind=infeasible-budget"));
    let o = gcdm(&["calibrate", "--logits", &store, "--costs", "10,20", "--out", &out]);
    assert_eq!(o.status.code(), Some(2), "missing budget");
    let o = gcdm(&["eval-anytime", "--logits", &store, "--exit", "3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!Path::new(&out).exists());
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let good = train_small(dir.path(), "1");
    let text = std::fs::read_to_string(&good).unwrap();
    let store = p(dir.path(), "s.jsonl");
    store_write(&gen_complementary_store(4, 50, 4.0, 0).unwrap(), &store).unwrap();
    let cases: Vec<(&str, String)> = vec![
        ("truncated", text[..text.len() / 2].to_string()),
        ("version", text.replacen("\"format_version\":1", "\"format_version\":99", 1)),
        ("not json", "garbage".to_string()),
    ];
    for (name, body) in cases {
        let path = p(dir.path(), &format!("{name}.json"));
        std::fs::write(&path, body).unwrap();
        let out = p(dir.path(), &format!("{name}.sched.json"));
        let o = gcdm(&["calibrate", "--logits", &store, "--checkpoint", &path, "--budget", "5000", "--out", &out]);
        assert_eq!(o.status.code(), Some(3), "{name}: {}", stderr_line(&o));
        assert!(!Path::new(&out).exists());
    }
}

#[test]
fn dump_then_evaluate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = train_small(dir.path(), "3");
    let val = p(dir.path(), "val.jsonl");
    let test = p(dir.path(), "test.jsonl");
    for (split, out) in [("validation", &val), ("test", &test)] {
        let mut args = vec!["dump-logits", "--seed", "3", "--checkpoint", &ckpt, "--split", split, "--out", out];
        args.extend_from_slice(&SMALL[..2]);
        let o = gcdm(&args);
        assert!(o.status.success(), "{}", stderr_line(&o));
    }
    let v = store_read(&val).unwrap();
    let t = store_read(&test).unwrap();
    assert_eq!(v.exit_count(), 4);
    assert!(v.records().iter().all(|r| t.records().iter().all(|s| s.id != r.id)), "splits are disjoint");

    let before = std::fs::read(&test).unwrap();
    let any_off = p(dir.path(), "any_off.json");
    let any_on = p(dir.path(), "any_on.json");
    assert!(gcdm(&["eval-anytime", "--logits", &test, "--fusion", "off", "--report", &any_off]).status.success());
    assert!(gcdm(&["eval-anytime", "--logits", &test, "--fusion", "on", "--report", &any_on]).status.success());
    let off = json(&any_off);
    let on = json(&any_on);
    assert_eq!(off["result"]["accuracy"][0], on["result"]["accuracy"][0]);
    assert_eq!(off["result"]["exits"].as_array().unwrap().len(), 4);

    let sched = p(dir.path(), "sched.json");
    let o = gcdm(&["calibrate", "--logits", &val, "--checkpoint", &ckpt, "--budget", "5000", "--fusion", "on", "--out", &sched]);
    assert!(o.status.success(), "{}", stderr_line(&o));
    let s = json(&sched);
    assert_eq!(s["format_version"], 1);
    assert_eq!(s["fusion"], true);
    let budget = p(dir.path(), "budget.json");
    let o = gcdm(&["eval-budget", "--logits", &test, "--schedule", &sched, "--report", &budget]);
    assert!(o.status.success(), "{}", stderr_line(&o));
    let b = json(&budget);
    assert_eq!(b["result"]["fusion"], true, "fusion follows the schedule by default");
    let counts: u64 = b["result"]["per_exit_counts"].as_array().unwrap().iter().map(|c| c.as_u64().unwrap()).sum();
    assert_eq!(counts as usize, t.len());

    let div = p(dir.path(), "div.json");
    let div_csv = p(dir.path(), "div.csv");
    assert!(gcdm(&["diversity", "--logits", &test, "--report", &div, "--csv", &div_csv]).status.success());
    assert_eq!(json(&div)["result"]["exit_count"], 4);
    assert!(std::fs::read_to_string(&div_csv).unwrap().starts_with("exit_i,exit_j,metric,value\n"));
    assert_eq!(before, std::fs::read(&test).unwrap(), "inputs are never modified");
}

#[test]
fn trace_fusion_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let store = three_exit_store(dir.path());
    let csv = p(dir.path(), "t.csv");
    let report = p(dir.path(), "t.json");
    let o = gcdm(&["trace-fusion", "--logits", &store, "--sample", "s4", "--out", &csv, "--report", &report]);
    assert!(o.status.success(), "{}", stderr_line(&o));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("step,class,belief,increment\n"));
    assert_eq!(text.lines().count(), 1 + 3 * 3);
    let r = json(&report);
    assert_eq!(r["result"]["sample"], "s4");
    assert_eq!(r["result"]["trace"]["steps"].as_array().unwrap().len(), 3);
    let o = gcdm(&["trace-fusion", "--logits", &store, "--sample", "nope", "--out", &csv]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn idx_and_csv_sources_train() {
    let dir = tempfile::tempdir().unwrap();
    let n = 60usize;
    let mut img = vec![0, 0, 8, 3];
    for v in [n as u32, 2, 2] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    let mut lab = vec![0, 0, 8, 1];
    lab.extend_from_slice(&(n as u32).to_be_bytes());
    for i in 0..n {
        let y = (i % 3) as u8;
        lab.push(y);
        img.extend((0..4).map(|j| if j == y as usize { 200 } else { (i * 13 % 50) as u8 }));
    }
    let images: PathBuf = dir.path().join("img.idx");
    let labels: PathBuf = dir.path().join("lab.idx");
    std::fs::write(&images, img).unwrap();
    std::fs::write(&labels, lab).unwrap();
    let ckpt = p(dir.path(), "idx.json");
    let (i, l) = (images.display().to_string(), labels.display().to_string());
    let o = gcdm(&["train", "--data", "idx", "--images", &i, "--labels", &l, "--epochs", "2", "--width", "8", "--out", &ckpt]);
    assert!(o.status.success(), "{}", stderr_line(&o));
    assert_eq!(json(&ckpt)["arch"]["input_dim"], 4);

    let csv = dir.path().join("d.csv");
    let mut body = String::from("label,f0,f1\n");
    for i in 0..60 {
        body.push_str(&format!("{},{},{}\n", i % 2, (i % 2) as f64 * 2.0 + 0.01 * i as f64, 0.5));
    }
    std::fs::write(&csv, body).unwrap();
    let c = csv.display().to_string();
    let ckpt = p(dir.path(), "csv.json");
    let o = gcdm(&["train", "--data", "csv", "--csv", &c, "--epochs", "2", "--width", "8", "--exits", "2", "--out", &ckpt]);
    assert!(o.status.success(), "{}", stderr_line(&o));
    let o = gcdm(&["train", "--data", "csv", "--out", &ckpt]);
    assert_eq!(o.status.code(), Some(2), "csv source without a path");
}
