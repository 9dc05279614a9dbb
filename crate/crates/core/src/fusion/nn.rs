//! Trainable fusion head: a one-hidden-layer MLP over the concatenated logits
//! of the first `c` exits, fit with cross-entropy on held-out stored logits.

use crate::data::LogitsStore;
use crate::diffcore::{Graph, Momentum, Tensor};
use crate::error::{Error, Result};
use crate::evidential::{argmax, one_hot};
use crate::model::{Dense, DenseVars};
use crate::training::cross_entropy_graph;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NnFuserConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for NnFuserConfig {
    fn default() -> Self {
        NnFuserConfig {
            hidden: 32,
            epochs: 60,
            batch_size: 64,
            learning_rate: 0.05,
            momentum: 0.9,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NnFuser {
    exits: usize,
    class_count: usize,
    /// Per-feature standardization fitted on the training store.
    mean: Vec<f64>,
    scale: Vec<f64>,
    hidden: Dense,
    out: Dense,
}

/// Minimum samples of every class required to fit a fuser.
pub const MIN_PER_CLASS: usize = 10;

fn features(store: &LogitsStore, exits: usize) -> Vec<Vec<f64>> {
    store
        .records()
        .iter()
        .map(|r| r.exit_logits[..exits].concat())
        .collect()
}

/// Fits a fuser for exit `exits` (it sees exits `1..=exits`) on `store`.
pub fn train_nn_fuser(store: &LogitsStore, exits: usize, cfg: &NnFuserConfig) -> Result<NnFuser> {
    if exits < 2 || exits > store.exit_count() {
        return Err(Error::config(format!(
            "nn fuser exit must lie in 2..={}, got {exits}",
            store.exit_count()
        )));
    }
    if cfg.hidden == 0 || cfg.batch_size == 0 {
        return Err(Error::config("hidden width and batch size must be positive"));
    }
    let k = store.class_count();
    let mut per_class = vec![0usize; k];
    for r in store.records() {
        per_class[r.label] += 1;
    }
    if let Some((c, &n)) = per_class.iter().enumerate().find(|(_, &n)| n < MIN_PER_CLASS) {
        return Err(Error::data(format!(
            "class {c} has {n} samples; the nn fuser needs at least {MIN_PER_CLASS} per class"
        )));
    }
    let rows = features(store, exits);
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let scale: Vec<f64> = (0..d)
        .map(|j| {
            let var = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
            if var > 1e-24 { 1.0 / var.sqrt() } else { 1.0 }
        })
        .collect();
    let x: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().enumerate().map(|(j, v)| (v - mean[j]) * scale[j]).collect())
        .collect();
    let labels = store.labels();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut fuser = NnFuser {
        exits,
        class_count: k,
        mean,
        scale,
        hidden: Dense::xavier(d, cfg.hidden, &mut rng)?,
        out: Dense::xavier(cfg.hidden, k, &mut rng)?,
    };
    let mut opt = Momentum::new(cfg.learning_rate, cfg.momentum)?;
    let mut order: Vec<usize> = (0..x.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let xb = Tensor::from_rows(&batch.iter().map(|&i| x[i].clone()).collect::<Vec<_>>())?;
            let yb: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let mut g = Graph::new();
            let h = DenseVars::bind(&mut g, &fuser.hidden, true);
            let o = DenseVars::bind(&mut g, &fuser.out, true);
            let xv = g.constant(xb);
            let t = g.constant(one_hot(&yb, k)?);
            let z = h.apply(&mut g, xv)?;
            let a = g.relu(z)?;
            let logits = o.apply(&mut g, a)?;
            let per = cross_entropy_graph(&mut g, logits, t)?;
            let loss = g.mean(per)?;
            let grads = g.backward(loss).map_err(|e| match e {
                Error::Numeric { op, reason } => Error::numeric(
                    op,
                    format!("{reason} (nn fuser epoch {}, batch {})", epoch + 1, b + 1),
                ),
                e => e,
            })?;
            let gs: Vec<Tensor> = [(h.w, &fuser.hidden.w), (h.b, &fuser.hidden.b), (o.w, &fuser.out.w), (o.b, &fuser.out.b)]
                .into_iter()
                .map(|(v, like)| grads.get_or_zeros(v, like))
                .collect();
            opt.step(
                vec![&mut fuser.hidden.w, &mut fuser.hidden.b, &mut fuser.out.w, &mut fuser.out.b],
                &gs,
            )?;
        }
    }
    Ok(fuser)
}

impl NnFuser {
    pub fn exits(&self) -> usize {
        self.exits
    }

    fn logits(&self, x: &[f64]) -> Vec<f64> {
        let hd = self.hidden.output_dim();
        let mut h = self.hidden.b.data().to_vec();
        for (j, (&v, (&m, &s))) in x.iter().zip(self.mean.iter().zip(&self.scale)).enumerate() {
            let z = (v - m) * s;
            for (acc, &w) in h.iter_mut().zip(&self.hidden.w.data()[j * hd..(j + 1) * hd]) {
                *acc += z * w;
            }
        }
        let k = self.class_count;
        let mut out = self.out.b.data().to_vec();
        for (j, &a) in h.iter().enumerate() {
            let a = a.max(0.0);
            for (acc, &w) in out.iter_mut().zip(&self.out.w.data()[j * k..(j + 1) * k]) {
                *acc += a * w;
            }
        }
        out
    }

    /// Fused class of one sample from its per-exit logits.
    pub fn predict(&self, exit_logits: &[Vec<f64>]) -> Result<usize> {
        if exit_logits.len() < self.exits || exit_logits.iter().any(|l| l.len() != self.class_count) {
            return Err(Error::data("sample does not match the fuser's exits and classes"));
        }
        Ok(argmax(&self.logits(&exit_logits[..self.exits].concat())))
    }

    pub fn accuracy(&self, store: &LogitsStore) -> Result<f64> {
        if store.is_empty() {
            return Err(Error::data("cannot score an empty store"));
        }
        let mut correct = 0usize;
        for r in store.records() {
            if self.predict(&r.exit_logits)? == r.label {
                correct += 1;
            }
        }
        Ok(correct as f64 / store.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{LogitRecord, LogitsStore};

    #[test]
    fn too_few_samples_per_class() {
        let recs = (0..15)
            .map(|i| LogitRecord {
                id: i.to_string(),
                label: i % 2,
                exit_logits: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            })
            .collect();
        let s = LogitsStore::new(recs).unwrap();
        assert!(matches!(train_nn_fuser(&s, 2, &NnFuserConfig::default()), Err(Error::Data(_))));
    }

    #[test]
    fn learns_a_realizable_target() {
        let recs = (0..60)
            .map(|i| {
                let y = i % 3;
                let mut l = vec![0.0; 3];
                l[y] = 2.0;
                LogitRecord { id: i.to_string(), label: y, exit_logits: vec![l.clone(), l] }
            })
            .collect();
        let s = LogitsStore::new(recs).unwrap();
        let f = train_nn_fuser(&s, 2, &NnFuserConfig { epochs: 30, ..Default::default() }).unwrap();
        assert_eq!(f.accuracy(&s).unwrap(), 1.0);
    }
}
