use super::{
    report_bytes, AnytimeArgs, BudgetArgs, CalibrateArgs, Common, DataArgs, DataSource, DiversityArgs, DumpArgs,
    FuseArgs, FuseMethod, FusionArgs, ModelArgs, OptimArgs, Resolver, Switch, TraceArgs, TrainArgs,
};
use crate::data::{
    derive_seed, gen_gaussian_mixture, load_csv, load_idx, store_read, store_write, Dataset, GaussianMixtureSpec,
    LogitRecord, LogitsStore, Split, SplitSpec,
};
use crate::diversity::{DiversityReport, OracleMatrix};
use crate::error::{Error, Result};
use crate::evidential::quantify;
use crate::fusion::{
    accuracy_weights, paired_increment_ratios, train_nn_fuser, trace_fusion as fusion_trace, BaselineMethod, FusionMode,
    FusionOptions, FusionReport, NnFuserConfig,
};
use crate::inference::{anytime_curve, calibrate as fit_schedule, eval_budgeted, BudgetSchedule};
use crate::io::{from_json_str, read_string, to_json_bytes, write_atomic};
use crate::model::{self, ArchSpec, MultiExitModel};
use crate::training::{fit, metrics_csv, TrainingConfig};
use serde::Serialize;
use std::collections::BTreeMap;

/// Named random streams derived from `--seed`.
pub(super) const STREAM_DATA: u64 = 1;
pub(super) const STREAM_SPLIT: u64 = 2;
pub(super) const STREAM_INIT: u64 = 3;
pub(super) const STREAM_SHUFFLE: u64 = 4;
pub(super) const STREAM_NN: u64 = 5;

pub(super) fn resolver(common: &Common) -> Result<(Resolver, u64)> {
    let file = match &common.config {
        Some(p) => super::load_config(p)?,
        None => BTreeMap::new(),
    };
    let mut r = Resolver::new(file);
    let seed = r.get("seed", common.seed, 0u64)?;
    Ok((r, seed))
}

pub(super) struct DataPlan {
    source: DataSource,
    images: Option<String>,
    labels: Option<String>,
    csv: Option<String>,
    spec: GaussianMixtureSpec,
    split: SplitSpec,
}

pub(super) fn resolve_data(r: &mut Resolver, a: &DataArgs) -> Result<DataPlan> {
    let d = GaussianMixtureSpec::default();
    let s = SplitSpec::default();
    let plan = DataPlan {
        source: r.get("data", a.data, DataSource::Synthetic)?,
        images: r.get_opt("images", a.images.clone())?,
        labels: r.get_opt("labels", a.labels.clone())?,
        csv: r.get_opt("csv", a.csv.clone())?,
        spec: GaussianMixtureSpec {
            classes: r.get("classes", a.classes, d.classes)?,
            dim: r.get("dim", a.dim, d.dim)?,
            per_class: r.get("per-class", a.per_class, d.per_class)?,
            separation: r.get("separation", a.separation, d.separation)?,
            noise: r.get("noise", a.noise, d.noise)?,
        },
        split: SplitSpec {
            test_fraction: r.get("test-fraction", a.test_fraction, s.test_fraction)?,
            validation_fraction: r.get("validation-fraction", a.validation_fraction, s.validation_fraction)?,
        },
    };
    plan.split.validate()?;
    match plan.source {
        DataSource::Idx if plan.images.is_none() || plan.labels.is_none() => {
            Err(Error::config("data=idx needs --images and --labels"))
        }
        DataSource::Csv if plan.csv.is_none() => Err(Error::config("data=csv needs --csv")),
        _ => Ok(plan),
    }
}

pub(super) fn load_data(p: &DataPlan, seed: u64) -> Result<Dataset> {
    let d = match p.source {
        DataSource::Synthetic => gen_gaussian_mixture(&p.spec, derive_seed(seed, STREAM_DATA))?,
        DataSource::Idx => load_idx(p.images.as_deref().unwrap_or_default(), p.labels.as_deref().unwrap_or_default())?,
        DataSource::Csv => load_csv(p.csv.as_deref().unwrap_or_default(), None)?,
    };
    d.with_splits(derive_seed(seed, STREAM_SPLIT), &p.split)
}

fn resolve_model(r: &mut Resolver, a: &ModelArgs) -> Result<(usize, usize, usize)> {
    Ok((
        r.get("exits", a.exits, 4)?,
        r.get("layers", a.layers, 1)?,
        r.get("width", a.width, 64)?,
    ))
}

fn resolve_optim(r: &mut Resolver, a: &OptimArgs, seed: u64) -> Result<TrainingConfig> {
    let d = TrainingConfig::default();
    let cfg = TrainingConfig {
        epochs: r.get("epochs", a.epochs, d.epochs)?,
        batch_size: r.get("batch-size", a.batch_size, d.batch_size)?,
        learning_rate: r.get("lr", a.lr, d.learning_rate)?,
        momentum: r.get("momentum", a.momentum, d.momentum)?,
        lr_decay: r.get("lr-decay", a.lr_decay, d.lr_decay)?,
        seed: derive_seed(seed, STREAM_SHUFFLE),
        loss: r.get("loss", a.loss, d.loss)?,
        regularize: r.get("regularize", a.regularize, Switch(d.regularize))?.0,
        tau1: r.get("tau1", a.tau1, d.tau1)?,
        tau2: r.get("tau2", a.tau2, d.tau2)?,
        edl_mean_mode: r.get("edl-mean-mode", a.edl_mean_mode, d.edl_mean_mode)?,
        ce_weight: r.get("ce-weight", a.ce_weight, d.ce_weight)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// `None` when fusion is off.
fn resolve_fusion(r: &mut Resolver, a: &FusionArgs, default_on: bool) -> Result<Option<FusionOptions>> {
    let on = r.get("fusion", a.fusion, Switch(default_on))?.0;
    let mode = r.get("fusion-mode", a.fusion_mode, FusionMode::Balanced)?;
    let renormalize = r.get("renormalize", a.renormalize, Switch(false))?.0;
    Ok(on.then_some(FusionOptions {
        mode,
        renormalize_each_step: renormalize,
    }))
}

fn load_store(path: &str) -> Result<LogitsStore> {
    let s = store_read(path)?;
    if s.is_empty() {
        return Err(Error::data(format!("logits store {path} is empty")));
    }
    Ok(s)
}

fn write_report<T: Serialize>(
    path: Option<&str>,
    command: &str,
    seed: u64,
    config: &BTreeMap<String, String>,
    result: T,
) -> Result<()> {
    match path {
        Some(p) => write_atomic(p, &report_bytes(command, seed, config, result)?),
        None => {
            let bytes = report_bytes(command, seed, config, result)?;
            print!("{}", String::from_utf8_lossy(&bytes));
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct TrainSummary {
    exit_costs: Vec<f64>,
    best_epoch: usize,
    best_validation_accuracy: f64,
    train_samples: usize,
    validation_samples: usize,
    test_samples: usize,
}

pub(super) fn train(a: TrainArgs) -> Result<()> {
    let (mut r, seed) = resolver(&a.common)?;
    let plan = resolve_data(&mut r, &a.data)?;
    let (exits, layers, width) = resolve_model(&mut r, &a.model)?;
    let cfg = resolve_optim(&mut r, &a.optim, seed)?;
    let out: String = r.require("out", a.out)?;
    let metrics_path = r.get_opt("metrics", a.metrics)?;
    let report = r.get_opt("report", a.report)?;
    let config = r.finish()?;

    let data = load_data(&plan, seed)?;
    let arch = ArchSpec::uniform(data.dim(), data.class_count(), exits, layers, width);
    let init = MultiExitModel::init(arch, derive_seed(seed, STREAM_INIT))?;
    let mut result = fit(init, &data, &cfg)?;
    result.checkpoint.meta.seed = seed;
    let ckpt = result.checkpoint.to_json()?;
    let metrics = metrics_csv(&result.metrics)?;
    let summary = TrainSummary {
        exit_costs: result.checkpoint.model.exit_costs(),
        best_epoch: result.checkpoint.meta.best_epoch,
        best_validation_accuracy: result.checkpoint.meta.best_validation_accuracy,
        train_samples: data.indices(Split::Train).len(),
        validation_samples: data.indices(Split::Validation).len(),
        test_samples: data.indices(Split::Test).len(),
    };
    write_atomic(&out, &ckpt)?;
    if let Some(p) = metrics_path {
        write_atomic(p, metrics.as_bytes())?;
    }
    if let Some(p) = report {
        write_report(Some(&p), "train", seed, &config, summary)?;
    }
    Ok(())
}

pub(super) fn dump_logits(a: DumpArgs) -> Result<()> {
    let (mut r, seed) = resolver(&a.common)?;
    let plan = resolve_data(&mut r, &a.data)?;
    let ckpt_path: String = r.require("checkpoint", a.checkpoint)?;
    let split = r.get("split", a.split, Split::Test)?;
    let out: String = r.require("out", a.out)?;
    r.finish()?;

    let ckpt = model::load(&ckpt_path)?;
    let data = load_data(&plan, seed)?;
    let (m, k) = (&ckpt.model, ckpt.model.class_count());
    if data.dim() != m.arch().input_dim || data.class_count() > k {
        return Err(Error::config(format!(
            "dataset is {}-dimensional with {} classes, checkpoint expects {} and {k}",
            data.dim(),
            data.class_count(),
            m.arch().input_dim
        )));
    }
    let idx = data.indices(split);
    if idx.is_empty() {
        return Err(Error::data(format!("split {split} is empty")));
    }
    let x = data.features().select_rows(&idx)?;
    let logits = m.logits_by_sample(&x)?;
    let records = idx
        .iter()
        .zip(logits)
        .map(|(&i, exit_logits)| LogitRecord {
            id: i.to_string(),
            label: data.labels()[i],
            exit_logits,
        })
        .collect();
    store_write(&LogitsStore::new(records)?, &out)
}

#[derive(Serialize)]
struct FuseResult {
    fit_samples: Option<usize>,
    #[serde(flatten)]
    report: FusionReport,
}

pub(super) fn fuse(a: FuseArgs) -> Result<()> {
    let (mut r, seed) = resolver(&a.common)?;
    let logits: String = r.require("logits", a.logits)?;
    let method = r.get("method", a.method, FuseMethod::Cdm)?;
    let fit_path = r.get_opt("fit-logits", a.fit_logits)?;
    let renormalize = r.get("renormalize", a.renormalize, Switch(false))?.0;
    let nd = NnFuserConfig::default();
    let nn_cfg = NnFuserConfig {
        hidden: r.get("nn-hidden", a.nn_hidden, nd.hidden)?,
        epochs: r.get("nn-epochs", a.nn_epochs, nd.epochs)?,
        learning_rate: r.get("nn-lr", a.nn_lr, nd.learning_rate)?,
        seed: derive_seed(seed, STREAM_NN),
        ..nd
    };
    let report_path = r.get_opt("report", a.report)?;
    let csv_path = r.get_opt("csv", a.csv)?;
    let config = r.finish()?;

    let store = load_store(&logits)?;
    let fit_store = match (&fit_path, method) {
        (Some(p), _) => Some(load_store(p)?),
        (None, FuseMethod::Wavg | FuseMethod::Nn) => {
            return Err(Error::config(format!("method {method} needs --fit-logits")))
        }
        (None, _) => None,
    };
    if let Some(f) = &fit_store {
        if f.exit_count() != store.exit_count() || f.class_count() != store.class_count() {
            return Err(Error::data("fit store and evaluation store disagree on exits or classes"));
        }
    }
    let name = method.to_string();
    let cdm = |mode| FusionReport::cdm(&name, &store, FusionOptions { mode, renormalize_each_step: renormalize });
    let report = match method {
        FuseMethod::Cdm => cdm(FusionMode::Balanced)?,
        FuseMethod::CdmNobalance => cdm(FusionMode::Attention)?,
        FuseMethod::Avg => FusionReport::baseline(&name, &store, BaselineMethod::Average, None)?,
        FuseMethod::Vote => FusionReport::baseline(&name, &store, BaselineMethod::Vote, None)?,
        FuseMethod::Dempster => FusionReport::baseline(&name, &store, BaselineMethod::Dempster, None)?,
        FuseMethod::Wavg => {
            let w = accuracy_weights(fit_store.as_ref().expect("checked above"))?;
            FusionReport::baseline(&name, &store, BaselineMethod::WeightedAverage, Some(&w))?
        }
        FuseMethod::Nn => {
            let f = fit_store.as_ref().expect("checked above");
            let fusers = (2..=store.exit_count())
                .map(|c| train_nn_fuser(f, c, &nn_cfg))
                .collect::<Result<Vec<_>>>()?;
            FusionReport::nn(&name, &store, &fusers)?
        }
    };
    let csv = report.summary_csv()?;
    let result = FuseResult {
        fit_samples: fit_store.as_ref().map(|s| s.len()),
        report,
    };
    let bytes = report_bytes("fuse", seed, &config, &result)?;
    if let Some(p) = csv_path {
        write_atomic(p, csv.as_bytes())?;
    }
    match report_path {
        Some(p) => write_atomic(p, &bytes),
        None => {
            print!("{}", String::from_utf8_lossy(&bytes));
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct AnytimeResult {
    fusion: bool,
    sample_count: usize,
    exits: Vec<usize>,
    accuracy: Vec<f64>,
}

pub(super) fn eval_anytime(a: AnytimeArgs) -> Result<()> {
    let (mut r, seed) = resolver(&a.common)?;
    let fusion = resolve_fusion(&mut r, &a.fusion, false)?;
    let logits: String = r.require("logits", a.logits)?;
    let exit = r.get_opt("exit", a.exit)?;
    let report = r.get_opt("report", a.report)?;
    let config = r.finish()?;

    let store = load_store(&logits)?;
    let curve = anytime_curve(&store, fusion)?;
    let exits: Vec<usize> = match exit {
        Some(e) if e == 0 || e > store.exit_count() => {
            return Err(Error::config(format!("exit {e} out of range 1..={}", store.exit_count())))
        }
        Some(e) => vec![e],
        None => (1..=store.exit_count()).collect(),
    };
    let result = AnytimeResult {
        fusion: fusion.is_some(),
        sample_count: store.len(),
        accuracy: exits.iter().map(|&e| curve[e - 1]).collect(),
        exits,
    };
    write_report(report.as_deref(), "eval-anytime", seed, &config, result)
}

fn parse_costs(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| Error::config(format!("bad cost '{t}': {e}")))
        })
        .collect()
}

pub(super) fn calibrate(a: CalibrateArgs) -> Result<()> {
    let (mut r, _seed) = resolver(&a.common)?;
    let fusion = resolve_fusion(&mut r, &a.fusion, false)?;
    let logits: String = r.require("logits", a.logits)?;
    let ckpt = r.get_opt("checkpoint", a.checkpoint)?;
    let costs = r.get_opt("costs", a.costs)?;
    let budget: f64 = r.require("budget", a.budget)?;
    let out: String = r.require("out", a.out)?;
    r.finish()?;

    let costs = match (ckpt, costs) {
        (Some(_), Some(_)) => return Err(Error::config("give either --checkpoint or --costs, not both")),
        (None, None) => return Err(Error::config("calibrate needs --checkpoint or --costs")),
        (Some(p), None) => model::load(&p)?.model.exit_costs(),
        (None, Some(s)) => parse_costs(&s)?,
    };
    let store = load_store(&logits)?;
    let schedule = fit_schedule(&store, &costs, budget, fusion)?;
    write_atomic(&out, &to_json_bytes(&schedule)?)
}

#[derive(Serialize)]
struct BudgetResult {
    budget: f64,
    fusion: bool,
    sample_count: usize,
    accuracy: f64,
    mean_flops: f64,
    per_exit_counts: Vec<usize>,
}

pub(super) fn eval_budget(a: BudgetArgs) -> Result<()> {
    let (mut r, seed) = resolver(&a.common)?;
    let logits: String = r.require("logits", a.logits)?;
    let schedule_path: String = r.require("schedule", a.schedule)?;
    let schedule: BudgetSchedule = from_json_str(&read_string(&schedule_path)?)?;
    if schedule.format_version != crate::inference::SCHEDULE_VERSION {
        return Err(Error::Version {
            found: schedule.format_version,
            expected: crate::inference::SCHEDULE_VERSION,
        });
    }
    let fusion = resolve_fusion(&mut r, &a.fusion, schedule.fusion)?;
    let report = r.get_opt("report", a.report)?;
    let config = r.finish()?;

    let store = load_store(&logits)?;
    let b = eval_budgeted(&store, &schedule, fusion)?;
    let result = BudgetResult {
        budget: schedule.budget,
        fusion: fusion.is_some(),
        sample_count: store.len(),
        accuracy: b.accuracy,
        mean_flops: b.mean_flops,
        per_exit_counts: b.per_exit_counts,
    };
    write_report(report.as_deref(), "eval-budget", seed, &config, result)
}

pub(super) fn diversity(a: DiversityArgs) -> Result<()> {
    let (mut r, seed) = resolver(&a.common)?;
    let logits: String = r.require("logits", a.logits)?;
    let report = r.get_opt("report", a.report)?;
    let csv_path = r.get_opt("csv", a.csv)?;
    let config = r.finish()?;

    let store = load_store(&logits)?;
    let d = DiversityReport::compute(&OracleMatrix::from_store(&store)?)?;
    if let Some(p) = csv_path {
        write_atomic(p, d.to_csv()?.as_bytes())?;
    }
    write_report(report.as_deref(), "diversity", seed, &config, d)
}

#[derive(Serialize)]
struct TraceResult {
    sample: String,
    label: usize,
    dominant_class: usize,
    /// Dominant-class increment at each step over the step-2 increment.
    increment_ratio_to_step2: Vec<Option<f64>>,
    /// Dominant-class increment over the same sample's attention-only increment.
    ratio_to_attention: Vec<Option<f64>>,
    trace: crate::fusion::FusionTrace,
}

pub(super) fn trace_fusion(a: TraceArgs) -> Result<()> {
    let (mut r, seed) = resolver(&a.common)?;
    let logits: String = r.require("logits", a.logits)?;
    let sample = r.get_opt("sample", a.sample)?;
    let mode = r.get("fusion-mode", a.fusion_mode, FusionMode::Balanced)?;
    let renormalize = r.get("renormalize", a.renormalize, Switch(false))?.0;
    let out: String = r.require("out", a.out)?;
    let report = r.get_opt("report", a.report)?;
    let config = r.finish()?;

    let store = load_store(&logits)?;
    let rec = match &sample {
        None => &store.records()[0],
        Some(id) => store
            .records()
            .iter()
            .find(|r| &r.id == id)
            .ok_or_else(|| Error::data(format!("no record with id '{id}'")))?,
    };
    let ops = rec.exit_logits.iter().map(|l| quantify(l)).collect::<Result<Vec<_>>>()?;
    let opts = FusionOptions { mode, renormalize_each_step: renormalize };
    let trace = fusion_trace(&ops, opts)?;
    let attention = fusion_trace(&ops, FusionOptions { mode: FusionMode::Attention, ..opts })?;
    let dom = trace.dominant_class();
    let ratios = (2..=trace.steps.len())
        .map(|t| trace.increment_ratio(dom, t, 2))
        .collect::<Result<Vec<_>>>()?;
    let result = TraceResult {
        sample: rec.id.clone(),
        label: rec.label,
        dominant_class: dom,
        increment_ratio_to_step2: ratios,
        ratio_to_attention: paired_increment_ratios(&trace, &attention, dom)?,
        trace,
    };
    let csv = result.trace.to_csv()?;
    let bytes = report_bytes("trace-fusion", seed, &config, &result)?;
    write_atomic(&out, csv.as_bytes())?;
    if let Some(p) = report {
        write_atomic(p, &bytes)?;
    }
    Ok(())
}
