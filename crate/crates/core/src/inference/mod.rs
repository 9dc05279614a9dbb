//! Anytime and budgeted prediction over stored per-exit logits.
//!
//! Budgeted prediction sends a sample out at the first exit whose confidence
//! reaches that exit's threshold. Thresholds come from a validation store:
//! exit fractions follow `p_c ∝ q(1-q)^(c-1)` with `q` chosen so the expected
//! cost `Σ p_c F_c` fits the budget, and each threshold is a quantile of the
//! confidences of the samples still alive at that exit.

mod schedule;

pub use schedule::{calibrate, eval_budgeted, BudgetReport, BudgetSchedule, SCHEDULE_VERSION};

use crate::data::{LogitRecord, LogitsStore};
use crate::diffcore::softmax_slice;
use crate::error::{Error, Result};
use crate::evidential::{argmax, quantify};
use crate::fusion::{fusion_chain, predict, FusionOptions, Prediction};

/// Prediction and confidence of one sample at every exit.
///
/// Without fusion the confidence is the top softmax probability of the exit's
/// logits. With fusion it is the fused-evidence ratio of the fused state. The
/// class at exit 1 is always the argmax of exit 1's logits.
pub fn sample_decisions(record: &LogitRecord, fusion: Option<FusionOptions>) -> Result<Vec<Prediction>> {
    match fusion {
        None => Ok(record
            .exit_logits
            .iter()
            .map(|l| {
                let p = softmax_slice(l);
                let class = argmax(l);
                Prediction { class, confidence: p[class] }
            })
            .collect()),
        Some(opts) => {
            let ops = record.exit_logits.iter().map(|l| quantify(l)).collect::<Result<Vec<_>>>()?;
            let chain = fusion_chain(&ops, opts)?;
            let mut out = chain
                .iter()
                .map(|f| predict(f, true))
                .collect::<Result<Vec<_>>>()?;
            out[0].class = argmax(&record.exit_logits[0]);
            Ok(out)
        }
    }
}

/// `out[i][c]`: decision for record `i` at exit `c` (0-based).
pub fn store_decisions(store: &LogitsStore, fusion: Option<FusionOptions>) -> Result<Vec<Vec<Prediction>>> {
    store.records().iter().map(|r| sample_decisions(r, fusion)).collect()
}

fn check_exit(store: &LogitsStore, exit: usize) -> Result<()> {
    if exit == 0 || exit > store.exit_count() {
        return Err(Error::config(format!(
            "exit {exit} out of range 1..={}",
            store.exit_count()
        )));
    }
    Ok(())
}

/// Accuracy when every sample is classified at 1-based `exit`.
pub fn eval_anytime(store: &LogitsStore, exit: usize, fusion: Option<FusionOptions>) -> Result<f64> {
    check_exit(store, exit)?;
    if store.is_empty() {
        return Err(Error::data("cannot evaluate an empty store"));
    }
    let mut correct = 0usize;
    for r in store.records() {
        let d = sample_decisions(r, fusion)?;
        correct += usize::from(d[exit - 1].class == r.label);
    }
    Ok(correct as f64 / store.len() as f64)
}

/// Anytime accuracy at every exit.
pub fn anytime_curve(store: &LogitsStore, fusion: Option<FusionOptions>) -> Result<Vec<f64>> {
    if store.is_empty() {
        return Err(Error::data("cannot evaluate an empty store"));
    }
    let mut correct = vec![0usize; store.exit_count()];
    for r in store.records() {
        for (c, d) in sample_decisions(r, fusion)?.iter().enumerate() {
            correct[c] += usize::from(d.class == r.label);
        }
    }
    Ok(correct.iter().map(|&k| k as f64 / store.len() as f64).collect())
}

/// Confidence of one sample at 1-based `exit`.
pub fn confidence(record: &LogitRecord, exit: usize, fusion: Option<FusionOptions>) -> Result<f64> {
    if exit == 0 || exit > record.exit_logits.len() {
        return Err(Error::config(format!(
            "exit {exit} out of range 1..={}",
            record.exit_logits.len()
        )));
    }
    Ok(sample_decisions(record, fusion)?[exit - 1].confidence)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_complementary_store;
    use crate::fusion::FusionMode;

    fn rec(logits: Vec<Vec<f64>>, label: usize) -> LogitRecord {
        LogitRecord { id: "x".into(), label, exit_logits: logits }
    }

    #[test]
    fn confidence_limits() {
        let r = rec(vec![vec![50.0, 0.0, 0.0], vec![1.0, 1.0, 1.0]], 0);
        assert!((confidence(&r, 1, None).unwrap() - 1.0).abs() < 1e-12);
        assert!((confidence(&r, 2, None).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(confidence(&r, 3, None).is_err());
    }

    #[test]
    fn exit_one_unaffected_by_fusion() {
        let s = gen_complementary_store(10, 200, 4.0, 5).unwrap();
        let on = Some(FusionOptions::new(FusionMode::Balanced));
        assert_eq!(eval_anytime(&s, 1, None).unwrap(), eval_anytime(&s, 1, on).unwrap());
        assert!(eval_anytime(&s, 2, on).unwrap() >= 0.95);
        assert!(eval_anytime(&s, 2, None).unwrap() <= 0.55);
        assert!(matches!(eval_anytime(&s, 3, None), Err(Error::Config(_))));
    }
}
