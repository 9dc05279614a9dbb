//! Non-evidential-attention fusion baselines over stored per-exit logits.

use super::{FusedOpinion, OpinionLike};
use crate::data::LogitsStore;
use crate::diffcore::softmax_slice;
use crate::error::{Error, Result};
use crate::evidential::{argmax, quantify};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineMethod {
    /// Mean of per-exit softmax probabilities.
    Average,
    /// Softmax probabilities mixed with fixed per-exit weights.
    WeightedAverage,
    /// Majority vote of per-exit argmaxes.
    Vote,
    /// Reduced Dempster combination of evidential opinions.
    Dempster,
}

impl std::fmt::Display for BaselineMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BaselineMethod::Average => "average",
            BaselineMethod::WeightedAverage => "weighted-average",
            BaselineMethod::Vote => "vote",
            BaselineMethod::Dempster => "dempster",
        })
    }
}

/// Conflict threshold past which two opinions are treated as totally conflicting.
const TOTAL_CONFLICT: f64 = 1.0 - 1e-12;

/// Joint opinion of the reduced Dempster rule:
/// `b_k = (b¹_k b²_k + b¹_k u² + b²_k u¹) / (1 - Conf)`, `u = u¹u² / (1 - Conf)`,
/// with conflict `Conf = Σ_{i≠j} b¹_i b²_j`.
pub fn dempster_pair(a: &impl OpinionLike, b: &impl OpinionLike) -> Result<FusedOpinion> {
    let (ba, bb) = (a.belief(), b.belief());
    if ba.len() != bb.len() {
        return Err(Error::contract("dempster_pair: class counts differ"));
    }
    let (ua, ub) = (a.uncertainty(), b.uncertainty());
    let diag: f64 = ba.iter().zip(bb).map(|(x, y)| x * y).sum();
    let conflict = ba.iter().sum::<f64>() * bb.iter().sum::<f64>() - diag;
    if conflict > TOTAL_CONFLICT {
        return Err(Error::Degenerate(format!("total conflict {conflict} in dempster fusion")));
    }
    let scale = 1.0 - conflict;
    Ok(FusedOpinion {
        belief: ba
            .iter()
            .zip(bb)
            .map(|(x, y)| (x * y + x * ub + y * ua) / scale)
            .collect(),
        uncertainty: ua * ub / scale,
        depth: a.depth() + b.depth(),
    })
}

fn check_weights(weights: &[f64], exits: usize) -> Result<()> {
    if weights.len() != exits {
        return Err(Error::config(format!("{} weights for {exits} exits", weights.len())));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::config("weights must be finite and non-negative"));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("weights must sum to 1, got {total}")));
    }
    Ok(())
}

/// Predicted class of one sample at every exit prefix `1..=C`.
///
/// Prefix 1 is always the plain argmax of exit 1's logits. A `None` entry is
/// a per-sample failure: total conflict in Dempster fusion, which also
/// poisons every deeper prefix.
pub fn baseline_fuse(
    exit_logits: &[Vec<f64>],
    method: BaselineMethod,
    weights: Option<&[f64]>,
) -> Result<Vec<Option<usize>>> {
    let c = exit_logits.len();
    if c == 0 {
        return Err(Error::contract("baseline_fuse needs at least one exit"));
    }
    let k = exit_logits[0].len();
    if exit_logits.iter().any(|l| l.len() != k) {
        return Err(Error::data("exit logits disagree on class count"));
    }
    let weights = match method {
        BaselineMethod::WeightedAverage => {
            let w = weights.ok_or_else(|| Error::config("weighted-average needs weights"))?;
            check_weights(w, c)?;
            Some(w)
        }
        _ => None,
    };
    let mut out = Vec::with_capacity(c);
    out.push(Some(argmax(&exit_logits[0])));
    match method {
        BaselineMethod::Average | BaselineMethod::WeightedAverage => {
            let mut acc = vec![0.0; k];
            for (j, logits) in exit_logits.iter().enumerate() {
                let w = weights.map_or(1.0, |w| w[j]);
                for (a, p) in acc.iter_mut().zip(softmax_slice(logits)) {
                    *a += w * p;
                }
                if j > 0 {
                    out.push(Some(argmax(&acc)));
                }
            }
        }
        BaselineMethod::Vote => {
            let mut votes = vec![0usize; k];
            for (j, logits) in exit_logits.iter().enumerate() {
                votes[argmax(logits)] += 1;
                if j > 0 {
                    let best = votes.iter().copied().max().unwrap_or(0);
                    out.push(votes.iter().position(|&v| v == best));
                }
            }
        }
        BaselineMethod::Dempster => {
            let mut state = Some(FusedOpinion::from_opinion(&quantify(&exit_logits[0])?));
            for logits in &exit_logits[1..] {
                let next = quantify(logits)?;
                state = match state {
                    Some(s) => match dempster_pair(&s, &next) {
                        Ok(f) => Some(f),
                        Err(Error::Degenerate(_)) => None,
                        Err(e) => return Err(e),
                    },
                    None => None,
                };
                out.push(state.as_ref().map(|s| argmax(&s.belief)));
            }
        }
    }
    Ok(out)
}

/// Per-exit accuracies normalized to sum to 1 (uniform when every exit is always wrong).
pub fn accuracy_weights(store: &LogitsStore) -> Result<Vec<f64>> {
    if store.is_empty() {
        return Err(Error::data("cannot derive weights from an empty store"));
    }
    let c = store.exit_count();
    let mut correct = vec![0usize; c];
    for r in store.records() {
        for (j, l) in r.exit_logits.iter().enumerate() {
            if argmax(l) == r.label {
                correct[j] += 1;
            }
        }
    }
    let total: usize = correct.iter().sum();
    if total == 0 {
        return Ok(vec![1.0 / c as f64; c]);
    }
    Ok(correct.iter().map(|&n| n as f64 / total as f64).collect())
}
