//! Per-exit comparison of plain and fused predictions over a logits store.

use super::{baseline_fuse, fusion_chain, predict, BaselineMethod, FusionOptions, NnFuser};
use crate::data::LogitsStore;
use crate::error::{Error, Result};
use crate::evidential::{argmax, quantify};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplePredictions {
    pub id: String,
    pub label: usize,
    /// Argmax of each exit's own logits.
    pub plain: Vec<usize>,
    /// Fused prediction at each exit; `null` marks a per-sample fusion failure.
    pub fused: Vec<Option<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionReport {
    pub method: String,
    pub exit_count: usize,
    pub sample_count: usize,
    pub plain_accuracy: Vec<f64>,
    pub fused_accuracy: Vec<f64>,
    /// Samples whose fusion failed at each exit; failures count as errors.
    pub failures: Vec<usize>,
    pub predictions: Vec<SamplePredictions>,
}

impl FusionReport {
    /// Assembles a report; exit 1 always reuses the plain prediction.
    pub fn from_predictions(method: &str, store: &LogitsStore, fused: Vec<Vec<Option<usize>>>) -> Result<Self> {
        if store.is_empty() {
            return Err(Error::data("cannot report on an empty store"));
        }
        if fused.len() != store.len() {
            return Err(Error::contract("one fused prediction row per record is required"));
        }
        let c = store.exit_count();
        let n = store.len() as f64;
        let mut plain_ok = vec![0usize; c];
        let mut fused_ok = vec![0usize; c];
        let mut failures = vec![0usize; c];
        let mut predictions = Vec::with_capacity(store.len());
        for (r, mut f) in store.records().iter().zip(fused) {
            if f.len() != c {
                return Err(Error::contract("fused predictions must cover every exit"));
            }
            let plain: Vec<usize> = r.exit_logits.iter().map(|l| argmax(l)).collect();
            f[0] = Some(plain[0]);
            for j in 0..c {
                plain_ok[j] += usize::from(plain[j] == r.label);
                match f[j] {
                    Some(p) => fused_ok[j] += usize::from(p == r.label),
                    None => failures[j] += 1,
                }
            }
            predictions.push(SamplePredictions {
                id: r.id.clone(),
                label: r.label,
                plain,
                fused: f,
            });
        }
        Ok(FusionReport {
            method: method.to_string(),
            exit_count: c,
            sample_count: store.len(),
            plain_accuracy: plain_ok.iter().map(|&k| k as f64 / n).collect(),
            fused_accuracy: fused_ok.iter().map(|&k| k as f64 / n).collect(),
            failures,
            predictions,
        })
    }

    /// Sequential evidential fusion at every exit.
    pub fn cdm(method: &str, store: &LogitsStore, opts: FusionOptions) -> Result<Self> {
        let mut fused = Vec::with_capacity(store.len());
        for r in store.records() {
            let ops = r.exit_logits.iter().map(|l| quantify(l)).collect::<Result<Vec<_>>>()?;
            let chain = fusion_chain(&ops, opts)?;
            fused.push(
                chain
                    .iter()
                    .map(|f| predict(f, true).map(|p| Some(p.class)))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        Self::from_predictions(method, store, fused)
    }

    pub fn baseline(method: &str, store: &LogitsStore, m: BaselineMethod, weights: Option<&[f64]>) -> Result<Self> {
        let fused = store
            .records()
            .iter()
            .map(|r| baseline_fuse(&r.exit_logits, m, weights))
            .collect::<Result<Vec<_>>>()?;
        Self::from_predictions(method, store, fused)
    }

    /// `fusers[j]` serves exit `j + 2`.
    pub fn nn(method: &str, store: &LogitsStore, fusers: &[NnFuser]) -> Result<Self> {
        let c = store.exit_count();
        if fusers.len() != c.saturating_sub(1) || fusers.iter().enumerate().any(|(j, f)| f.exits() != j + 2) {
            return Err(Error::contract("need one nn fuser per exit 2..=C, in order"));
        }
        let mut fused = Vec::with_capacity(store.len());
        for r in store.records() {
            let mut row = vec![None];
            for f in fusers {
                row.push(Some(f.predict(&r.exit_logits)?));
            }
            fused.push(row);
        }
        Self::from_predictions(method, store, fused)
    }

    /// Summary CSV: `exit,plain_accuracy,fused_accuracy,failures`.
    pub fn summary_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::data(format!("cannot write report csv: {e}"));
        w.write_record(["exit", "plain_accuracy", "fused_accuracy", "failures"]).map_err(err)?;
        for j in 0..self.exit_count {
            w.write_record([
                (j + 1).to_string(),
                self.plain_accuracy[j].to_string(),
                self.fused_accuracy[j].to_string(),
                self.failures[j].to_string(),
            ])
            .map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::data(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::data(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_complementary_store;
    use crate::fusion::FusionMode;

    #[test]
    fn exit_one_is_never_fused() {
        let s = gen_complementary_store(10, 300, 4.0, 1).unwrap();
        for rep in [
            FusionReport::cdm("cdm", &s, FusionOptions::new(FusionMode::Balanced)).unwrap(),
            FusionReport::baseline("vote", &s, BaselineMethod::Vote, None).unwrap(),
            FusionReport::baseline("dempster", &s, BaselineMethod::Dempster, None).unwrap(),
        ] {
            assert_eq!(rep.plain_accuracy[0], rep.fused_accuracy[0]);
            assert_eq!(rep.summary_csv().unwrap().lines().count(), 3);
        }
    }
}
