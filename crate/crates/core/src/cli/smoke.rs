//! End-to-end pipeline run through the same subcommands a user would call.

use super::commands::{resolve_data, resolver};
use super::{report_bytes, SmokeArgs};
use crate::error::{Error, Result};
use crate::io::{read_string, write_atomic};
use crate::model;
use serde::Serialize;
use serde_json::Value;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

const DATA_KEYS: &[&str] = &[
    "data", "images", "labels", "csv", "classes", "dim", "per-class", "separation", "noise",
    "test-fraction", "validation-fraction",
];
const TRAIN_KEYS: &[&str] = &[
    "exits", "layers", "width", "epochs", "batch-size", "lr", "momentum", "lr-decay", "loss",
    "regularize", "tau1", "tau2", "edl-mean-mode", "ce-weight",
];

#[derive(Serialize)]
struct Check {
    name: String,
    passed: bool,
    detail: String,
}

#[derive(Serialize)]
struct BudgetPoint {
    budget: f64,
    accuracy: f64,
    mean_flops: f64,
}

#[derive(Serialize)]
struct SmokeResult {
    stages: Vec<String>,
    artifacts: Vec<String>,
    exit_costs: Vec<f64>,
    anytime_accuracy: Vec<f64>,
    fused_accuracy: Vec<f64>,
    budget_sweep: Vec<BudgetPoint>,
    checks: Vec<Check>,
}

struct Stage<'a> {
    dir: &'a Path,
    seed: u64,
    ran: Vec<String>,
    artifacts: Vec<String>,
}

impl Stage<'_> {
    fn path(&mut self, name: &str) -> String {
        if !self.artifacts.iter().any(|a| a == name) {
            self.artifacts.push(name.to_string());
        }
        self.dir.join(name).display().to_string()
    }

    /// Runs one subcommand; a failing stage aborts with that stage's code.
    fn run(&mut self, label: &str, args: Vec<String>) -> Result<()> {
        let mut argv = vec!["gcdm".to_string()];
        argv.extend(args);
        argv.extend(["--seed".to_string(), self.seed.to_string()]);
        let code = super::dispatch(&argv);
        self.ran.push(label.to_string());
        match code {
            0 => Ok(()),
            2 => Err(Error::config(format!("smoke stage {label} failed"))),
            3 => Err(Error::data(format!("smoke stage {label} failed"))),
            _ => Err(Error::numeric("smoke", format!("stage {label} failed"))),
        }
    }

    fn json(&self, name: &str) -> Result<Value> {
        let text = read_string(self.dir.join(name))?;
        crate::io::from_json_str(&text)
    }
}

fn forward(config: &BTreeMap<String, String>, keys: &[&str]) -> Vec<String> {
    keys.iter()
        .filter_map(|&k| config.get(k).filter(|v| !v.is_empty()).map(|v| [format!("--{k}"), v.clone()]))
        .flatten()
        .collect()
}

fn floats(v: &Value, key: &str) -> Result<Vec<f64>> {
    v["result"][key]
        .as_array()
        .and_then(|a| a.iter().map(Value::as_f64).collect())
        .ok_or_else(|| Error::data(format!("report lacks numeric array '{key}'")))
}

fn float(v: &Value, key: &str) -> Result<f64> {
    v["result"][key]
        .as_f64()
        .ok_or_else(|| Error::data(format!("report lacks number '{key}'")))
}

fn s(items: &[&str]) -> Vec<String> {
    items.iter().map(|x| x.to_string()).collect()
}

pub(super) fn smoke(a: SmokeArgs) -> Result<()> {
    let (mut r, seed) = resolver(&a.common)?;
    resolve_data(&mut r, &a.data)?;
    // Resolve model and optimizer keys for the record and for validation.
    let m = &a.model;
    r.get("exits", m.exits, 4usize)?;
    r.get("layers", m.layers, 1usize)?;
    r.get("width", m.width, 64usize)?;
    let o = &a.optim;
    let d = crate::training::TrainingConfig::default();
    r.get("epochs", o.epochs, d.epochs)?;
    r.get("batch-size", o.batch_size, d.batch_size)?;
    r.get("lr", o.lr, d.learning_rate)?;
    r.get("momentum", o.momentum, d.momentum)?;
    r.get("lr-decay", o.lr_decay, d.lr_decay)?;
    r.get("loss", o.loss, d.loss)?;
    r.get("regularize", o.regularize, super::Switch(d.regularize))?;
    r.get("tau1", o.tau1, d.tau1)?;
    r.get("tau2", o.tau2, d.tau2)?;
    r.get("edl-mean-mode", o.edl_mean_mode, d.edl_mean_mode)?;
    r.get("ce-weight", o.ce_weight, d.ce_weight)?;
    let out_dir: String = r.require("out-dir", a.out_dir)?;
    // Keep reports independent of where they were written.
    r.forget("out-dir");
    let config = r.finish()?;

    let dir = PathBuf::from(&out_dir);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut st = Stage { dir: &dir, seed, ran: Vec::new(), artifacts: Vec::new() };
    let data = forward(&config, DATA_KEYS);

    let ckpt = st.path("checkpoint.json");
    let mut args = s(&["train", "--out"]);
    args.push(ckpt.clone());
    args.extend(["--metrics".into(), st.path("metrics.csv"), "--report".into(), st.path("train.json")]);
    args.extend(data.clone());
    args.extend(forward(&config, TRAIN_KEYS));
    st.run("train", args)?;

    let val = st.path("validation.jsonl");
    let test = st.path("test.jsonl");
    for (split, path) in [("validation", &val), ("test", &test)] {
        let mut args = s(&["dump-logits", "--checkpoint"]);
        args.extend([ckpt.clone(), "--split".into(), split.into(), "--out".into(), path.clone()]);
        args.extend(data.clone());
        st.run(&format!("dump-logits:{split}"), args)?;
    }

    let mut args = s(&["fuse", "--method", "cdm", "--logits"]);
    args.extend([test.clone(), "--report".into(), st.path("fuse.json"), "--csv".into(), st.path("fuse.csv")]);
    st.run("fuse", args)?;

    let mut args = s(&["eval-anytime", "--fusion", "off", "--logits"]);
    args.extend([test.clone(), "--report".into(), st.path("anytime.json")]);
    st.run("eval-anytime", args)?;

    let costs = model::load(&ckpt)?.model.exit_costs();
    let (f1, fc) = (costs[0], costs[costs.len() - 1]);
    let mut budgets: Vec<f64> = (0..5).map(|i| f1 + (fc - f1) * i as f64 / 4.0).collect();
    budgets[4] = fc;
    let mut sweep = Vec::new();
    for (i, &b) in budgets.iter().enumerate() {
        let sched = st.path(&format!("schedule_{i}.json"));
        let mut args = s(&["calibrate", "--fusion", "off", "--logits"]);
        args.extend([val.clone(), "--checkpoint".into(), ckpt.clone(), "--budget".into(), b.to_string()]);
        args.extend(["--out".into(), sched.clone()]);
        st.run(&format!("calibrate:{i}"), args)?;
        let report = format!("budget_{i}.json");
        let mut args = s(&["eval-budget", "--logits"]);
        args.extend([test.clone(), "--schedule".into(), sched, "--report".into(), st.path(&report)]);
        st.run(&format!("eval-budget:{i}"), args)?;
        let v = st.json(&report)?;
        sweep.push(BudgetPoint { budget: b, accuracy: float(&v, "accuracy")?, mean_flops: float(&v, "mean_flops")? });
    }

    let anytime = floats(&st.json("anytime.json")?, "accuracy")?;
    let fuse = st.json("fuse.json")?;
    let plain = floats(&fuse, "plain_accuracy")?;
    let fused = floats(&fuse, "fused_accuracy")?;
    let last = sweep.len() - 1;
    let mut checks = vec![
        Check {
            name: "budget F_C equals anytime final exit".into(),
            passed: sweep[last].accuracy == anytime[anytime.len() - 1],
            detail: format!("{} vs {}", sweep[last].accuracy, anytime[anytime.len() - 1]),
        },
        Check {
            name: "budget F_1 equals anytime exit 1".into(),
            passed: sweep[0].accuracy == anytime[0],
            detail: format!("{} vs {}", sweep[0].accuracy, anytime[0]),
        },
        Check {
            name: "exit 1 unchanged by fusion".into(),
            passed: fused[0] == plain[0],
            detail: format!("{} vs {}", fused[0], plain[0]),
        },
        Check {
            name: "realized cost monotone over the sweep".into(),
            passed: sweep.windows(2).all(|w| w[1].mean_flops >= w[0].mean_flops),
            detail: sweep.iter().map(|p| p.mean_flops.to_string()).collect::<Vec<_>>().join(","),
        },
    ];
    checks.push(Check {
        name: "realized cost within 5% of budget".into(),
        passed: sweep.iter().all(|p| p.mean_flops <= 1.05 * p.budget),
        detail: sweep.iter().map(|p| format!("{}/{}", p.mean_flops, p.budget)).collect::<Vec<_>>().join(","),
    });

    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    let failure = (!failed.is_empty()).then(|| failed.join("; "));
    st.artifacts.push("smoke.json".into());
    let result = SmokeResult {
        stages: st.ran,
        artifacts: st.artifacts,
        exit_costs: costs,
        anytime_accuracy: anytime,
        fused_accuracy: fused,
        budget_sweep: sweep,
        checks,
    };
    write_atomic(dir.join("smoke.json"), &report_bytes("smoke", seed, &config, result)?)?;
    match failure {
        None => Ok(()),
        Some(f) => Err(Error::numeric("smoke", format!("invariant failed: {f}"))),
    }
}
