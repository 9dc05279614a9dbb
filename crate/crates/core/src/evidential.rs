//! Evidential view of classifier logits.
//!
//! Evidence is `softplus(logit)`, the Dirichlet parameters are
//! `alpha = evidence + 1`, and the opinion splits unit mass into per-class
//! belief `e_k / S` and uncertainty `K / S` with `S = Σ alpha`.

use crate::diffcore::{softplus, Graph, Tensor, Var};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Which per-class point estimate enters the squared-error term of the EDL loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdlMeanMode {
    /// `b_k = e_k / S` (belief mass).
    #[default]
    Belief,
    /// `alpha_k / S` (Dirichlet mean).
    DirichletMean,
}

impl std::str::FromStr for EdlMeanMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "belief" => Ok(EdlMeanMode::Belief),
            "dirichlet-mean" => Ok(EdlMeanMode::DirichletMean),
            other => Err(Error::config(format!(
                "unknown edl_mean_mode '{other}' (expected belief | dirichlet-mean)"
            ))),
        }
    }
}

impl std::fmt::Display for EdlMeanMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EdlMeanMode::Belief => "belief",
            EdlMeanMode::DirichletMean => "dirichlet-mean",
        })
    }
}

/// Per-classifier subjective opinion derived from logits.
#[derive(Clone, Debug, PartialEq)]
pub struct EvidentialOpinion {
    pub evidence: Vec<f64>,
    pub alpha: Vec<f64>,
    pub strength: f64,
    pub belief: Vec<f64>,
    pub uncertainty: f64,
}

impl EvidentialOpinion {
    pub fn class_count(&self) -> usize {
        self.belief.len()
    }

    /// Argmax of belief, lowest index on ties.
    pub fn predicted_class(&self) -> usize {
        argmax(&self.belief)
    }
}

/// First index of the maximum value.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

pub fn quantify(logits: &[f64]) -> Result<EvidentialOpinion> {
    let k = logits.len();
    if k < 2 {
        return Err(Error::config(format!("need at least 2 classes, got {k}")));
    }
    if let Some(i) = logits.iter().position(|x| !x.is_finite()) {
        return Err(Error::data(format!("non-finite logit at class {i}")));
    }
    let evidence: Vec<f64> = logits.iter().map(|&p| softplus(p)).collect();
    let alpha: Vec<f64> = evidence.iter().map(|e| e + 1.0).collect();
    let strength: f64 = alpha.iter().sum();
    let belief = evidence.iter().map(|e| e / strength).collect();
    Ok(EvidentialOpinion {
        evidence,
        alpha,
        strength,
        belief,
        uncertainty: k as f64 / strength,
    })
}

fn check_label(label: usize, k: usize) -> Result<()> {
    if label >= k {
        return Err(Error::data(format!("label {label} out of range for {k} classes")));
    }
    Ok(())
}

/// `Σ_k (m_k - y_k)² + Σ_k alpha_k (S - alpha_k) / (S² (S + 1))`, `m` chosen by `mode`.
pub fn edl_loss(opinion: &EvidentialOpinion, label: usize, mode: EdlMeanMode) -> Result<f64> {
    let k = opinion.class_count();
    check_label(label, k)?;
    let s = opinion.strength;
    let mut loss = 0.0;
    for c in 0..k {
        let m = match mode {
            EdlMeanMode::Belief => opinion.belief[c],
            EdlMeanMode::DirichletMean => opinion.alpha[c] / s,
        };
        let y = if c == label { 1.0 } else { 0.0 };
        loss += (m - y) * (m - y);
    }
    for &a in &opinion.alpha {
        loss += a * (s - a) / (s * s * (s + 1.0));
    }
    Ok(loss)
}

/// Mean over the batch of the per-sample sum over exits.
///
/// `per_exit[c][n]` is the opinion of exit `c` on sample `n`.
pub fn batch_edl_loss(
    per_exit: &[Vec<EvidentialOpinion>],
    labels: &[usize],
    mode: EdlMeanMode,
) -> Result<f64> {
    if labels.is_empty() || per_exit.is_empty() {
        return Err(Error::data("empty batch"));
    }
    let k = per_exit[0]
        .first()
        .map(|o| o.class_count())
        .ok_or_else(|| Error::data("empty batch"))?;
    for (c, exit) in per_exit.iter().enumerate() {
        if exit.len() != labels.len() {
            return Err(Error::data(format!(
                "ragged batch: exit {} has {} opinions for {} labels",
                c + 1,
                exit.len(),
                labels.len()
            )));
        }
        if exit.iter().any(|o| o.class_count() != k) {
            return Err(Error::data(format!("exit {} disagrees on class count", c + 1)));
        }
    }
    let mut total = 0.0;
    for (n, &y) in labels.iter().enumerate() {
        let mut per_sample = 0.0;
        for exit in per_exit {
            per_sample += edl_loss(&exit[n], y, mode)?;
        }
        total += per_sample;
    }
    Ok(total / labels.len() as f64)
}

/// One-hot `[n, k]` target matrix.
pub fn one_hot(labels: &[usize], k: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * k];
    for (i, &y) in labels.iter().enumerate() {
        check_label(y, k)?;
        data[i * k + y] = 1.0;
    }
    Tensor::new(vec![labels.len(), k], data)
}

/// Differentiable per-sample EDL loss for a `[n, k]` logit matrix; returns `[n, 1]`.
pub fn edl_loss_graph(g: &mut Graph, logits: Var, targets: Var, mode: EdlMeanMode) -> Result<Var> {
    let k = g.value(logits).last_dim();
    let e = g.softplus(logits)?;
    let alpha = g.add_scalar(e, 1.0)?;
    let s = g.sum_last(alpha)?;
    let s_rep = g.repeat_cols(s, k)?;
    let m = match mode {
        EdlMeanMode::Belief => g.div(e, s_rep)?,
        EdlMeanMode::DirichletMean => g.div(alpha, s_rep)?,
    };
    let diff = g.sub(m, targets)?;
    let sq = g.square(diff)?;
    // alpha (S - alpha) / (S^2 (S + 1))
    let rest = g.sub(s_rep, alpha)?;
    let num = g.mul(alpha, rest)?;
    let s2 = g.square(s_rep)?;
    let s1 = g.add_scalar(s_rep, 1.0)?;
    let den = g.mul(s2, s1)?;
    let var = g.div(num, den)?;
    let terms = g.add(sq, var)?;
    g.sum_last(terms)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn vacuous_opinion_for_very_negative_logits() {
        let o = quantify(&[-1000.0, -1000.0, -1000.0]).unwrap();
        assert_eq!(o.uncertainty, 1.0);
        assert_eq!(o.belief, vec![0.0; 3]);
    }

    #[test]
    fn zero_logits() {
        let o = quantify(&[0.0, 0.0, 0.0]).unwrap();
        for &e in &o.evidence {
            assert!(close(e, 0.693147, 1e-6));
        }
        assert!(close(o.strength, 5.079442, 1e-6));
        assert!(close(o.uncertainty, 0.590616, 1e-6));
        for &b in &o.belief {
            assert!(close(b, 0.136461, 1e-6));
        }
    }

    #[test]
    fn graded_logits() {
        let o = quantify(&[2.0, 0.0, -2.0]).unwrap();
        let want_e = [2.126928, 0.693147, 0.126928];
        let want_b = [0.357647, 0.116554, 0.021343];
        for i in 0..3 {
            assert!(close(o.evidence[i], want_e[i], 1e-6));
            assert!(close(o.belief[i], want_b[i], 1e-6));
        }
        assert!(close(o.strength, 5.947004, 1e-6));
        assert!(close(o.uncertainty, 0.504455, 1e-6));
    }

    #[test]
    fn quantify_errors() {
        assert!(matches!(quantify(&[1.0]), Err(Error::Config(_))));
        assert!(matches!(quantify(&[1.0, f64::NAN]), Err(Error::Data(_))));
        assert!(matches!(quantify(&[1.0, f64::INFINITY]), Err(Error::Data(_))));
    }

    #[test]
    fn edl_loss_two_class_hand_value() {
        // e = (0, 0) exactly: a vacuous opinion.
        let o = EvidentialOpinion {
            evidence: vec![0.0, 0.0],
            alpha: vec![1.0, 1.0],
            strength: 2.0,
            belief: vec![0.0, 0.0],
            uncertainty: 1.0,
        };
        let l = edl_loss(&o, 0, EdlMeanMode::Belief).unwrap();
        assert!(close(l, 1.0 + 1.0 / 6.0, 1e-12));
        assert!(matches!(edl_loss(&o, 2, EdlMeanMode::Belief), Err(Error::Data(_))));
    }

    #[test]
    fn edl_loss_vanishes_with_overwhelming_evidence() {
        let mut last = f64::INFINITY;
        for big in [10.0, 100.0, 1e4, 1e7] {
            let o = quantify(&[big, -1e3, -1e3]).unwrap();
            let l = edl_loss(&o, 0, EdlMeanMode::Belief).unwrap();
            assert!(l < last);
            last = l;
        }
        assert!(last < 1e-6);
    }

    #[test]
    fn edl_loss_permutation_equivariant() {
        let logits = [0.3, -1.2, 2.2, 0.9];
        let perm = [2, 0, 3, 1];
        let permuted: Vec<f64> = perm.iter().map(|&i| logits[i]).collect();
        let o = quantify(&logits).unwrap();
        let op = quantify(&permuted).unwrap();
        // class 2 in the original sits at position 0 in the permuted vector
        for mode in [EdlMeanMode::Belief, EdlMeanMode::DirichletMean] {
            let a = edl_loss(&o, 2, mode).unwrap();
            let b = edl_loss(&op, 0, mode).unwrap();
            assert!(close(a, b, 1e-15));
        }
    }

    #[test]
    fn batch_loss_identities() {
        let o = quantify(&[0.5, -0.25, 1.0]).unwrap();
        let single = edl_loss(&o, 1, EdlMeanMode::Belief).unwrap();
        let one = batch_edl_loss(&[vec![o.clone()]], &[1], EdlMeanMode::Belief).unwrap();
        assert_eq!(one, single);
        let two = batch_edl_loss(&[vec![o.clone()], vec![o.clone()]], &[1], EdlMeanMode::Belief).unwrap();
        assert_eq!(two, 2.0 * single);
        let ragged = batch_edl_loss(&[vec![o.clone()], vec![]], &[1], EdlMeanMode::Belief);
        assert!(matches!(ragged, Err(Error::Data(_))));
    }

    #[test]
    fn graph_loss_matches_scalar_loss() {
        let rows = [vec![0.5, -0.25, 1.0], vec![-3.0, 4.0, 0.0]];
        let labels = [2, 0];
        for mode in [EdlMeanMode::Belief, EdlMeanMode::DirichletMean] {
            let mut g = Graph::new();
            let x = g.constant(Tensor::from_rows(&rows).unwrap());
            let y = g.constant(one_hot(&labels, 3).unwrap());
            let l = edl_loss_graph(&mut g, x, y, mode).unwrap();
            for (i, row) in rows.iter().enumerate() {
                let want = edl_loss(&quantify(row).unwrap(), labels[i], mode).unwrap();
                assert!(close(g.value(l).data()[i], want, 1e-14));
            }
        }
    }
}
