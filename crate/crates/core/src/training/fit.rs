use super::{cross_entropy_graph, gcdm_loss_graph, LossMode, TrainingConfig};
use crate::data::{Dataset, Split};
use crate::diffcore::{Graph, Momentum, Tensor};
use crate::error::{Error, Result};
use crate::evidential::{argmax, edl_loss_graph, one_hot};
use crate::model::{Checkpoint, CheckpointMeta, MultiExitModel};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub epoch: usize,
    pub exit: usize,
    pub split: Split,
    pub accuracy: f64,
    /// Mean per-exit base loss (EDL or cross-entropy) without guidance.
    pub loss: f64,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    /// Weights of the epoch with the best mean validation accuracy over exits.
    pub checkpoint: Checkpoint,
    pub metrics: Vec<MetricRow>,
}

const EVAL_CHUNK: usize = 4096;

/// Per-exit accuracy and mean base loss of `model` on `(x, y)`.
fn evaluate(model: &MultiExitModel, x: &Tensor, y: &[usize], cfg: &TrainingConfig) -> Result<Vec<(f64, f64)>> {
    let c = model.exit_count();
    let k = model.class_count();
    let mut correct = vec![0usize; c];
    let mut loss = vec![0.0; c];
    let idx: Vec<usize> = (0..y.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let xb = x.select_rows(chunk)?;
        let yb: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
        let mut g = Graph::new();
        let bound = model.bind(&mut g, false);
        let xv = g.constant(xb);
        let outs = bound.forward(&mut g, xv)?;
        let t = g.constant(one_hot(&yb, k)?);
        for (j, &o) in outs.iter().enumerate() {
            for (row, &label) in g.value(o).row_iter().zip(&yb) {
                correct[j] += usize::from(argmax(row) == label);
            }
            let per = match cfg.loss {
                LossMode::Edl => edl_loss_graph(&mut g, o, t, cfg.edl_mean_mode)?,
                LossMode::CrossEntropy => cross_entropy_graph(&mut g, o, t)?,
            };
            let s = g.sum(per)?;
            loss[j] += g.value(s).item()?;
        }
    }
    let n = y.len() as f64;
    Ok((0..c).map(|j| (correct[j] as f64 / n, loss[j] / n)).collect())
}

/// Trains `model` on the train split with momentum SGD, tracking every exit
/// on train and validation after each epoch. Deterministic given `cfg.seed`.
pub fn fit(model: MultiExitModel, data: &Dataset, cfg: &TrainingConfig) -> Result<FitResult> {
    cfg.validate()?;
    if cfg.regularize && model.exit_count() < 2 {
        return Err(Error::config("regularized training needs at least 2 exits"));
    }
    if data.dim() != model.arch().input_dim || data.class_count() != model.class_count() {
        return Err(Error::config(format!(
            "dataset is {}-dimensional with {} classes, model expects {} and {}",
            data.dim(),
            data.class_count(),
            model.arch().input_dim,
            model.class_count()
        )));
    }
    let (xt, yt) = data.part(Split::Train)?;
    let (xv, yv) = data.part(Split::Validation)?;
    let mut model = model;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Momentum::new(cfg.learning_rate, cfg.momentum)?;
    let mut order: Vec<usize> = (0..yt.len()).collect();
    let mut metrics = Vec::new();

    let score = |m: &MultiExitModel| -> Result<(f64, Vec<(f64, f64)>)> {
        let ev = evaluate(m, &xv, &yv, cfg)?;
        let mean = ev.iter().map(|(a, _)| a).sum::<f64>() / ev.len() as f64;
        Ok((mean, ev))
    };
    let (mut best_score, _) = score(&model)?;
    let mut best = model.clone();
    let mut best_epoch = 0;

    for epoch in 0..cfg.epochs {
        opt.lr = cfg.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let xb = xt.select_rows(batch)?;
            let yb: Vec<usize> = batch.iter().map(|&i| yt[i]).collect();
            let mut g = Graph::new();
            let bound = model.bind(&mut g, true);
            let xvar = g.constant(xb);
            let outs = bound.forward(&mut g, xvar)?;
            let diverged = |e: Error| match e {
                Error::Numeric { op, reason } => {
                    Error::numeric(op, format!("{reason} at epoch {}, batch {}", epoch + 1, b + 1))
                }
                e => e,
            };
            let loss = gcdm_loss_graph(&mut g, &outs, &yb, cfg).map_err(diverged)?;
            if !g.value(loss).all_finite() {
                return Err(diverged(Error::numeric("loss", "non-finite loss")));
            }
            let grads = g.backward(loss).map_err(diverged)?;
            let gs: Vec<Tensor> = bound
                .vars()
                .into_iter()
                .zip(model.parameters())
                .map(|(v, p)| grads.get_or_zeros(v, p))
                .collect();
            opt.step(model.parameters_mut(), &gs)?;
        }
        let train = evaluate(&model, &xt, &yt, cfg)?;
        let (mean, val) = score(&model)?;
        for (split, ev) in [(Split::Train, &train), (Split::Validation, &val)] {
            for (j, &(accuracy, loss)) in ev.iter().enumerate() {
                if !loss.is_finite() {
                    return Err(Error::numeric("loss", format!("non-finite {split:?} loss after epoch {}", epoch + 1)));
                }
                metrics.push(MetricRow { epoch: epoch + 1, exit: j + 1, split, accuracy, loss });
            }
        }
        if mean > best_score {
            best_score = mean;
            best = model.clone();
            best_epoch = epoch + 1;
        }
    }

    let meta = CheckpointMeta {
        seed: cfg.seed,
        epochs: cfg.epochs,
        loss: cfg.loss.to_string(),
        regularize: cfg.regularize,
        tau1: cfg.tau1,
        tau2: cfg.tau2,
        edl_mean_mode: cfg.edl_mean_mode.to_string(),
        best_epoch,
        best_validation_accuracy: best_score,
    };
    Ok(FitResult {
        checkpoint: Checkpoint { model: best, meta },
        metrics,
    })
}

/// Metrics stream as CSV: `epoch,exit,split,accuracy,loss`.
pub fn metrics_csv(rows: &[MetricRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::data(format!("cannot write metrics csv: {e}"));
    w.write_record(["epoch", "exit", "split", "accuracy", "loss"]).map_err(err)?;
    for r in rows {
        w.write_record([r.epoch.to_string(), r.exit.to_string(), r.split.to_string(), r.accuracy.to_string(), r.loss.to_string()])
            .map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::data(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::data(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_gaussian_mixture, GaussianMixtureSpec, SplitSpec};
    use crate::model::ArchSpec;

    fn small() -> (MultiExitModel, Dataset) {
        let spec = GaussianMixtureSpec { classes: 3, dim: 4, per_class: 40, separation: 3.0, noise: 0.5 };
        let d = gen_gaussian_mixture(&spec, 2).unwrap().with_splits(2, &SplitSpec::default()).unwrap();
        let m = MultiExitModel::init(ArchSpec::uniform(4, 3, 2, 1, 8), 5).unwrap();
        (m, d)
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let (m, d) = small();
        let cfg = TrainingConfig { epochs: 2, learning_rate: 0.0, ..Default::default() };
        let r = fit(m.clone(), &d, &cfg).unwrap();
        assert_eq!(r.checkpoint.model, m);
        assert_eq!(r.metrics.len(), 2 * 2 * 2);
    }

    #[test]
    fn same_seed_same_stream() {
        let (m, d) = small();
        let cfg = TrainingConfig { epochs: 3, ..Default::default() };
        let a = fit(m.clone(), &d, &cfg).unwrap();
        let b = fit(m, &d, &cfg).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.checkpoint, b.checkpoint);
        assert!(metrics_csv(&a.metrics).unwrap().starts_with("epoch,exit,split,accuracy,loss\n1,1,train,"));
    }
}
