//! Step-by-step record of a fusion chain, for saturation analysis.

use super::{fusion_chain, FusionOptions, OpinionLike};
use crate::error::{Error, Result};
use crate::evidential::argmax;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    /// 1-based depth of the fused state.
    pub step: usize,
    pub belief: Vec<f64>,
    pub uncertainty: f64,
    /// `belief(step) - belief(step - 1)`; zero at step 1.
    pub increment: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionTrace {
    pub options: FusionOptions,
    pub steps: Vec<TraceStep>,
}

/// Fuses `C ≥ 3` opinions and records every intermediate state.
pub fn trace_fusion<O: OpinionLike>(opinions: &[O], opts: FusionOptions) -> Result<FusionTrace> {
    if opinions.len() < 3 {
        return Err(Error::contract(format!(
            "a fusion trace needs at least 3 opinions, got {}",
            opinions.len()
        )));
    }
    let chain = fusion_chain(opinions, opts)?;
    let mut steps: Vec<TraceStep> = Vec::with_capacity(chain.len());
    for (i, f) in chain.into_iter().enumerate() {
        let increment = match steps.last() {
            None => vec![0.0; f.belief.len()],
            Some(prev) => f.belief.iter().zip(&prev.belief).map(|(b, p)| b - p).collect(),
        };
        steps.push(TraceStep {
            step: i + 1,
            belief: f.belief,
            uncertainty: f.uncertainty,
            increment,
        });
    }
    Ok(FusionTrace { options: opts, steps })
}

impl FusionTrace {
    /// Class with the largest step-1 belief.
    pub fn dominant_class(&self) -> usize {
        argmax(&self.steps[0].belief)
    }

    fn increment(&self, class: usize, step: usize) -> Result<f64> {
        self.steps
            .get(step.wrapping_sub(1))
            .and_then(|s| s.increment.get(class).copied())
            .ok_or_else(|| Error::contract(format!("no step {step} / class {class} in trace")))
    }

    /// `increment(step) / increment(base)` for one class; `None` when the base increment is 0.
    pub fn increment_ratio(&self, class: usize, step: usize, base: usize) -> Result<Option<f64>> {
        let num = self.increment(class, step)?;
        let den = self.increment(class, base)?;
        Ok(if den == 0.0 { None } else { Some(num / den) })
    }

    /// Long-form CSV: `step,class,belief,increment`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::data(format!("cannot write trace csv: {e}"));
        w.write_record(["step", "class", "belief", "increment"]).map_err(err)?;
        for s in &self.steps {
            for (k, (b, d)) in s.belief.iter().zip(&s.increment).enumerate() {
                w.write_record([s.step.to_string(), k.to_string(), b.to_string(), d.to_string()])
                    .map_err(err)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::data(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::data(e.to_string()))
    }
}

/// Per-step ratio of `a`'s increment to `b`'s for one class, steps `2..=C`.
pub fn paired_increment_ratios(a: &FusionTrace, b: &FusionTrace, class: usize) -> Result<Vec<Option<f64>>> {
    if a.steps.len() != b.steps.len() {
        return Err(Error::contract("paired traces must have the same length"));
    }
    (2..=a.steps.len())
        .map(|t| {
            let den = b.increment(class, t)?;
            let num = a.increment(class, t)?;
            Ok(if den == 0.0 { None } else { Some(num / den) })
        })
        .collect()
}
