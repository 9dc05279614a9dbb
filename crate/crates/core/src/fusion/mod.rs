//! Sequential uncertainty-aware fusion of exit opinions, plus baselines.
//!
//! Fused beliefs and uncertainty are unnormalized scores: they are carried
//! from step to step as-is, so under the balance term `ũ` can exceed 1 and the
//! attention weight `1 - ũ` of the running state turns negative at deeper
//! steps. [`FusionOptions::renormalize_each_step`] rescales the state back onto
//! the simplex after every step and exists for ablations.

mod baseline;
mod nn;
mod report;
mod trace;

pub use baseline::{accuracy_weights, baseline_fuse, dempster_pair, BaselineMethod};
pub use nn::{train_nn_fuser, NnFuser, NnFuserConfig};
pub use report::{FusionReport, SamplePredictions};
pub use trace::{paired_increment_ratios, trace_fusion, FusionTrace, TraceStep};

use crate::error::{Error, Result};
use crate::evidential::{argmax, EvidentialOpinion};
use serde::{Deserialize, Serialize};

/// Anything carrying a belief vector and an uncertainty.
pub trait OpinionLike {
    fn belief(&self) -> &[f64];
    fn uncertainty(&self) -> f64;
    /// Number of exit opinions absorbed.
    fn depth(&self) -> usize {
        1
    }
}

impl OpinionLike for EvidentialOpinion {
    fn belief(&self) -> &[f64] {
        &self.belief
    }

    fn uncertainty(&self) -> f64 {
        self.uncertainty
    }
}

/// Running fused state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusedOpinion {
    pub belief: Vec<f64>,
    pub uncertainty: f64,
    pub depth: usize,
}

impl OpinionLike for FusedOpinion {
    fn belief(&self) -> &[f64] {
        &self.belief
    }

    fn uncertainty(&self) -> f64 {
        self.uncertainty
    }

    fn depth(&self) -> usize {
        self.depth
    }
}

impl FusedOpinion {
    /// Depth-1 state equal to a single exit's `(b, u)`.
    pub fn from_opinion(o: &impl OpinionLike) -> Self {
        FusedOpinion {
            belief: o.belief().to_vec(),
            uncertainty: o.uncertainty(),
            depth: o.depth(),
        }
    }

    pub fn class_count(&self) -> usize {
        self.belief.len()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// Attention weights only.
    Attention,
    /// Attention plus the balance term.
    #[default]
    Balanced,
}

impl std::str::FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attention" => Ok(FusionMode::Attention),
            "balanced" => Ok(FusionMode::Balanced),
            other => Err(Error::config(format!(
                "unknown fusion mode '{other}' (expected attention | balanced)"
            ))),
        }
    }
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FusionMode::Attention => "attention",
            FusionMode::Balanced => "balanced",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionOptions {
    pub mode: FusionMode,
    pub renormalize_each_step: bool,
}

impl FusionOptions {
    pub fn new(mode: FusionMode) -> Self {
        FusionOptions {
            mode,
            renormalize_each_step: false,
        }
    }
}

/// Fuses two opinions. Symmetric in its arguments, bit for bit.
pub fn fuse_pair(a: &impl OpinionLike, b: &impl OpinionLike, mode: FusionMode) -> Result<FusedOpinion> {
    let (ba, bb) = (a.belief(), b.belief());
    if ba.len() != bb.len() {
        return Err(Error::contract(format!(
            "cannot fuse opinions over {} and {} classes",
            ba.len(),
            bb.len()
        )));
    }
    let (ua, ub) = (a.uncertainty(), b.uncertainty());
    if !ua.is_finite() || !ub.is_finite() || ba.iter().chain(bb).any(|v| !v.is_finite()) {
        return Err(Error::numeric("fuse_pair", "non-finite input opinion"));
    }
    let (wa, wb) = (1.0 - ua, 1.0 - ub);
    let belief: Vec<f64> = ba
        .iter()
        .zip(bb)
        .map(|(&x, &y)| {
            // Both attention terms are summed first so that swapping the
            // arguments reproduces the same floating-point result.
            let attention = x * wa + y * wb;
            match mode {
                FusionMode::Attention => x * y + attention,
                FusionMode::Balanced => {
                    let gamma = (x + y) / 2.0;
                    (gamma + x * y) * 0.5 + attention
                }
            }
        })
        .collect();
    let uncertainty = match mode {
        FusionMode::Attention => ua * ub,
        FusionMode::Balanced => (ua + ub) + ua * ub,
    };
    let out = FusedOpinion {
        belief,
        uncertainty,
        depth: a.depth() + b.depth(),
    };
    if !out.uncertainty.is_finite() || out.belief.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("fuse_pair", "fused opinion overflowed"));
    }
    Ok(out)
}

/// Rescales `(b, u)` so that `u + Σb = 1`.
fn renormalize(f: &mut FusedOpinion) -> Result<()> {
    let total = f.uncertainty + f.belief.iter().sum::<f64>();
    if !(total > 0.0) {
        return Err(Error::numeric("renormalize", format!("total mass {total} is not positive")));
    }
    f.uncertainty /= total;
    for b in &mut f.belief {
        *b /= total;
    }
    Ok(())
}

/// Fused states at every depth `1..=C`; element 0 is exit 1's own opinion.
pub fn fusion_chain<O: OpinionLike>(opinions: &[O], opts: FusionOptions) -> Result<Vec<FusedOpinion>> {
    let first = opinions
        .first()
        .ok_or_else(|| Error::contract("fusion needs at least one opinion"))?;
    let mut state = FusedOpinion::from_opinion(first);
    let mut out = Vec::with_capacity(opinions.len());
    out.push(state.clone());
    for o in &opinions[1..] {
        state = fuse_pair(&state, o, opts.mode)?;
        if opts.renormalize_each_step {
            renormalize(&mut state)?;
        }
        out.push(state.clone());
    }
    Ok(out)
}

/// Left-to-right fold over `C ≥ 2` opinions; element `c - 2` is the fused
/// decision for exit `c`.
pub fn fuse_sequence<O: OpinionLike>(opinions: &[O], opts: FusionOptions) -> Result<Vec<FusedOpinion>> {
    if opinions.len() < 2 {
        return Err(Error::contract(format!(
            "fuse_sequence needs at least 2 opinions, got {}",
            opinions.len()
        )));
    }
    let mut chain = fusion_chain(opinions, opts)?;
    chain.remove(0);
    Ok(chain)
}

/// Strength `K / ũ` and evidence `S · b̃` of a fused state.
pub fn fused_evidence(f: &FusedOpinion) -> Result<(f64, Vec<f64>)> {
    if !(f.uncertainty > 0.0) {
        return Err(Error::numeric(
            "fused_evidence",
            format!("fused uncertainty {} is not positive", f.uncertainty),
        ));
    }
    let s = f.class_count() as f64 / f.uncertainty;
    Ok((s, f.belief.iter().map(|b| s * b).collect()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class: usize,
    pub confidence: f64,
}

/// Argmax of the fused belief, lowest index on ties, with confidence
/// `b̃_class / Σ b̃`.
///
/// Negative scores (possible deep in an unnormalized balanced chain) count
/// as zero in the confidence ratio. A state with no positive belief is
/// degenerate: with `fallback` it yields the argmax and confidence `1/K`,
/// which is class 0 for an all-zero belief.
pub fn predict(f: &impl OpinionLike, fallback: bool) -> Result<Prediction> {
    let b = f.belief();
    let class = argmax(b);
    let total: f64 = b.iter().map(|v| v.max(0.0)).sum();
    if total > 0.0 {
        return Ok(Prediction {
            class,
            confidence: b[class].max(0.0) / total,
        });
    }
    if fallback {
        Ok(Prediction {
            class,
            confidence: 1.0 / b.len() as f64,
        })
    } else {
        Err(Error::Degenerate("fused belief has no positive mass".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evidential::quantify;

    fn op(b: &[f64], u: f64) -> FusedOpinion {
        FusedOpinion { belief: b.to_vec(), uncertainty: u, depth: 1 }
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn vacuous_attention() {
        let v = op(&[0.0, 0.0, 0.0], 1.0);
        let f = fuse_pair(&v, &v, FusionMode::Attention).unwrap();
        assert_eq!(f.uncertainty, 1.0);
        assert_eq!(f.belief, vec![0.0; 3]);
        assert_eq!(f.depth, 2);
    }

    #[test]
    fn symmetric_conflict_ties() {
        let a = op(&[0.8, 0.1], 0.1);
        let b = op(&[0.1, 0.8], 0.1);
        let f = fuse_pair(&a, &b, FusionMode::Attention).unwrap();
        assert!(close(&f.belief, &[0.89, 0.89], 1e-12));
        assert!((f.uncertainty - 0.01).abs() < 1e-12);
    }

    #[test]
    fn balanced_agreement() {
        let a = op(&[0.8, 0.1], 0.1);
        let f = fuse_pair(&a, &a, FusionMode::Balanced).unwrap();
        assert!(close(&f.belief, &[2.16, 0.235], 1e-12));
        assert!((f.uncertainty - 0.21).abs() < 1e-12);
        let (s, e) = fused_evidence(&f).unwrap();
        assert!((s - 9.523810).abs() < 1e-6);
        assert!(close(&e, &[20.571429, 2.238095], 1e-6));
        let p = predict(&f, false).unwrap();
        assert_eq!(p.class, 0);
        assert!((p.confidence - 0.901879).abs() < 1e-6);
    }

    #[test]
    fn sequence_base_case_and_errors() {
        let a = quantify(&[1.0, -0.5, 0.2]).unwrap();
        let b = quantify(&[0.0, 2.0, 0.1]).unwrap();
        for mode in [FusionMode::Attention, FusionMode::Balanced] {
            let seq = fuse_sequence(&[a.clone(), b.clone()], FusionOptions::new(mode)).unwrap();
            assert_eq!(seq, vec![fuse_pair(&a, &b, mode).unwrap()]);
        }
        assert!(matches!(
            fuse_sequence(&[a.clone()], FusionOptions::default()),
            Err(Error::Contract(_))
        ));
        let k2 = quantify(&[1.0, 2.0]).unwrap();
        assert!(matches!(fuse_pair(&a, &k2, FusionMode::Balanced), Err(Error::Contract(_))));
    }

    #[test]
    fn vacuous_chain_stays_vacuous() {
        let v = quantify(&[-800.0; 4]).unwrap();
        let seq = fuse_sequence(&vec![v; 6], FusionOptions::new(FusionMode::Attention)).unwrap();
        for f in seq {
            assert_eq!(f.belief, vec![0.0; 4]);
            assert_eq!(f.uncertainty, 1.0);
        }
    }

    #[test]
    fn evidence_errors_and_vacuous() {
        assert!(matches!(fused_evidence(&op(&[0.1, 0.2], 0.0)), Err(Error::Numeric { .. })));
        let (s, e) = fused_evidence(&op(&[0.0, 0.0, 0.0], 1.0)).unwrap();
        assert_eq!(s, 3.0);
        assert_eq!(e, vec![0.0; 3]);
    }

    #[test]
    fn predict_edge_cases() {
        let u = predict(&op(&[0.2, 0.2, 0.2, 0.2], 0.2), false).unwrap();
        assert_eq!(u.class, 0);
        assert!((u.confidence - 0.25).abs() < 1e-15);
        let one = predict(&op(&[0.0, 0.7, 0.0], 0.3), false).unwrap();
        assert_eq!((one.class, one.confidence), (1, 1.0));
        let zero = op(&[0.0, 0.0], 1.0);
        assert!(matches!(predict(&zero, false), Err(Error::Degenerate(_))));
        let fb = predict(&zero, true).unwrap();
        assert_eq!((fb.class, fb.confidence), (0, 0.5));
    }

    #[test]
    fn renormalized_chain_sums_to_one() {
        let o = quantify(&[3.0, 0.0, -1.0]).unwrap();
        let opts = FusionOptions { mode: FusionMode::Balanced, renormalize_each_step: true };
        for f in fuse_sequence(&vec![o; 5], opts).unwrap() {
            let total = f.uncertainty + f.belief.iter().sum::<f64>();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
