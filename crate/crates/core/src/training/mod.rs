//! Multi-exit training: per-exit EDL or cross-entropy, optionally with
//! last-exit guidance through a dual-temperature Jensen-Shannon term.
//!
//! The guidance distribution of an exit is `softmax(softplus(logits) / τ)`.
//! The last exit acts as a teacher and is detached, so the guidance term never
//! moves it.

mod fit;

pub use fit::{fit, metrics_csv, FitResult, MetricRow};

use crate::diffcore::{softmax_slice, softplus, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::evidential::{edl_loss_graph, one_hot, EdlMeanMode};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossMode {
    #[default]
    Edl,
    CrossEntropy,
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "edl" => Ok(LossMode::Edl),
            "cross-entropy" | "ce" => Ok(LossMode::CrossEntropy),
            other => Err(Error::config(format!("unknown loss '{other}' (expected edl | cross-entropy)"))),
        }
    }
}

impl std::fmt::Display for LossMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossMode::Edl => "edl",
            LossMode::CrossEntropy => "cross-entropy",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// The learning rate is multiplied by `lr_decay` at half and at three
    /// quarters of the epochs.
    pub lr_decay: f64,
    pub seed: u64,
    pub loss: LossMode,
    pub regularize: bool,
    pub tau1: f64,
    pub tau2: f64,
    pub edl_mean_mode: EdlMeanMode,
    /// Weight of the per-exit cross-entropy term in cross-entropy mode.
    pub ce_weight: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: 20,
            batch_size: 128,
            learning_rate: 0.1,
            momentum: 0.9,
            lr_decay: 0.1,
            seed: 0,
            loss: LossMode::Edl,
            regularize: true,
            tau1: 0.5,
            tau2: 1.0,
            edl_mean_mode: EdlMeanMode::Belief,
            ce_weight: 1.0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("tau1", self.tau1), ("tau2", self.tau2)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config(format!(
                "learning rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::config(format!("lr_decay must lie in (0, 1], got {}", self.lr_decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if !(self.ce_weight > 0.0) || !self.ce_weight.is_finite() {
            return Err(Error::config(format!("ce_weight must be > 0, got {}", self.ce_weight)));
        }
        Ok(())
    }

    /// Learning rate in effect during 0-based `epoch`.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let mut lr = self.learning_rate;
        if epoch >= self.epochs / 2 && self.epochs >= 2 {
            lr *= self.lr_decay;
        }
        if epoch >= self.epochs * 3 / 4 && self.epochs >= 4 {
            lr *= self.lr_decay;
        }
        lr
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::config(format!("temperature must be > 0, got {tau}")));
    }
    Ok(())
}

/// `softmax(softplus(logits) / τ)`.
pub fn temperature_distribution(logits: &[f64], tau: f64) -> Result<Vec<f64>> {
    check_tau(tau)?;
    let scaled: Vec<f64> = logits.iter().map(|&p| softplus(p) / tau).collect();
    Ok(softmax_slice(&scaled))
}

/// `KL(P‖M)` with `M = (P+Q)/2`, given `s = P + Q`. Working from `s` avoids
/// halving a subnormal sum down to zero.
fn kl_to_mid(p: &[f64], s: &[f64]) -> f64 {
    p.iter()
        .zip(s)
        .map(|(&a, &t)| if a == 0.0 { 0.0 } else { a * (2.0 * a / t).ln() })
        .sum::<f64>()
}

/// Jensen-Shannon divergence in nats, `½KL(P‖M) + ½KL(Q‖M)` with `M = (P+Q)/2`.
///
/// Swapping the arguments swaps two commutative summands, so the result is exactly symmetric.
pub fn js_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::data(format!("distributions of length {} and {}", p.len(), q.len())));
    }
    for (name, d) in [("P", p), ("Q", q)] {
        if d.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::data(format!("{name} has a negative or non-finite entry")));
        }
        let s: f64 = d.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::data(format!("{name} sums to {s}, not 1")));
        }
    }
    let s: Vec<f64> = p.iter().zip(q).map(|(a, b)| a + b).collect();
    Ok(0.5 * (kl_to_mid(p, &s) + kl_to_mid(q, &s)))
}

/// Graph form of [`temperature_distribution`] over a `[n, K]` logit matrix.
pub fn temperature_distribution_graph(g: &mut Graph, logits: Var, tau: f64) -> Result<Var> {
    check_tau(tau)?;
    let e = g.softplus(logits)?;
    let s = g.scale(e, 1.0 / tau)?;
    g.softmax(s)
}

/// Per-sample JS divergence `[n, 1]` between two `[n, K]` distributions.
///
/// Uses `ln M = ln(P + Q) - ln 2` with both rows summing to one, so
/// `JS = ½ Σ [p ln p + q ln q - (p + q) ln(p + q)] + ln 2`.
pub fn js_graph(g: &mut Graph, p: Var, q: Var) -> Result<Var> {
    let s = g.add(p, q)?;
    let pp = g.xlny(p, p)?;
    let qq = g.xlny(q, q)?;
    let ss = g.xlny(s, s)?;
    let own = g.add(pp, qq)?;
    let diff = g.sub(own, ss)?;
    let row = g.sum_last(diff)?;
    let half = g.scale(row, 0.5)?;
    g.add_scalar(half, std::f64::consts::LN_2)
}

/// Per-sample cross-entropy `[n, 1]` of `[n, K]` logits against one-hot targets.
pub fn cross_entropy_graph(g: &mut Graph, logits: Var, targets: Var) -> Result<Var> {
    let ls = g.log_softmax(logits)?;
    let picked = g.mul(ls, targets)?;
    let s = g.sum_last(picked)?;
    g.scale(s, -1.0)
}

/// Per-sample guidance term `[n, 1]`: for every exit `c < C`, the mean of the
/// JS divergences to the detached last exit at `τ₁` and `τ₂`.
pub fn guidance_graph(g: &mut Graph, logits: &[Var], tau1: f64, tau2: f64) -> Result<Var> {
    let c = logits.len();
    if c < 2 {
        return Err(Error::config("guidance needs at least 2 exits"));
    }
    let teacher = g.detach(logits[c - 1]);
    let mut total: Option<Var> = None;
    for &tau in &[tau1, tau2] {
        let pt = temperature_distribution_graph(g, teacher, tau)?;
        for &student in &logits[..c - 1] {
            let ps = temperature_distribution_graph(g, student, tau)?;
            let js = js_graph(g, pt, ps)?;
            total = Some(match total {
                None => js,
                Some(t) => g.add(t, js)?,
            });
        }
    }
    let total = total.expect("at least one student exit");
    g.scale(total, 0.5)
}

/// Scalar training loss for one batch: the mean over samples of the summed
/// per-exit loss, plus the guidance term when `regularize` is set.
pub fn gcdm_loss_graph(g: &mut Graph, logits: &[Var], labels: &[usize], cfg: &TrainingConfig) -> Result<Var> {
    if logits.is_empty() {
        return Err(Error::config("no exits"));
    }
    if cfg.regularize && logits.len() < 2 {
        return Err(Error::config("regularized training needs at least 2 exits"));
    }
    let k = g.value(logits[0]).last_dim();
    if logits.iter().any(|&l| g.value(l).shape() != [labels.len(), k]) {
        return Err(Error::data("every exit needs a [batch, K] logit matrix"));
    }
    let targets = g.constant(one_hot(labels, k)?);
    let mut per_sample: Option<Var> = None;
    for &l in logits {
        let term = match cfg.loss {
            LossMode::Edl => edl_loss_graph(g, l, targets, cfg.edl_mean_mode)?,
            LossMode::CrossEntropy => {
                let ce = cross_entropy_graph(g, l, targets)?;
                g.scale(ce, cfg.ce_weight)?
            }
        };
        per_sample = Some(match per_sample {
            None => term,
            Some(t) => g.add(t, term)?,
        });
    }
    let mut per_sample = per_sample.expect("non-empty");
    if cfg.regularize {
        let js = guidance_graph(g, logits, cfg.tau1, cfg.tau2)?;
        per_sample = g.add(js, per_sample)?;
    }
    g.mean(per_sample)
}

/// Value of [`gcdm_loss_graph`] for per-exit `[n, K]` logit matrices.
pub fn gcdm_loss(logits: &[Tensor], labels: &[usize], cfg: &TrainingConfig) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = logits.iter().map(|t| g.constant(t.clone())).collect();
    let loss = gcdm_loss_graph(&mut g, &vars, labels, cfg)?;
    g.value(loss).item()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evidential::{batch_edl_loss, quantify};

    #[test]
    fn temperature_examples() {
        // softplus^-1(2) and softplus^-1(0+) give evidence (2, ~0).
        let inv = |e: f64| (e.exp() - 1.0).ln();
        let p = temperature_distribution(&[inv(2.0), -800.0], 1.0).unwrap();
        assert!((p[0] - 0.880797).abs() < 1e-6 && (p[1] - 0.119203).abs() < 1e-6);
        let p = temperature_distribution(&[inv(2.0), -800.0], 0.5).unwrap();
        assert!((p[0] - 0.982014).abs() < 1e-6 && (p[1] - 0.017986).abs() < 1e-6);
        let p = temperature_distribution(&[1.0, 1.0, 1.0], 0.3).unwrap();
        assert!(p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        let p = temperature_distribution(&[5.0, -3.0], 1e9).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-6);
        assert!(temperature_distribution(&[1.0, 2.0], 0.0).is_err());
    }

    #[test]
    fn js_examples() {
        assert_eq!(js_divergence(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert!((js_divergence(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((js_divergence(&[0.5, 0.5], &[0.25, 0.75]).unwrap() - 0.033823).abs() < 1e-6);
        assert!(js_divergence(&[1.5, -0.5], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn js_graph_matches_scalar_form() {
        let p = [0.2, 0.5, 0.3];
        let q = [0.6, 0.1, 0.3];
        let mut g = Graph::new();
        let pv = g.constant(Tensor::from_rows(&[p]).unwrap());
        let qv = g.constant(Tensor::from_rows(&[q]).unwrap());
        let js = js_graph(&mut g, pv, qv).unwrap();
        let want = js_divergence(&p, &q).unwrap();
        assert!((g.value(js).item().unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn js_survives_subnormal_mass() {
        let tiny = f64::from_bits(1);
        let p = [1.0 - tiny, tiny, 0.0];
        let q = [1.0, 0.0, 0.0];
        assert!(js_divergence(&p, &q).unwrap().is_finite());
        let mut g = Graph::new();
        let pv = g.constant(Tensor::from_rows(&[p]).unwrap());
        let qv = g.constant(Tensor::from_rows(&[q]).unwrap());
        let js = js_graph(&mut g, pv, qv).unwrap();
        assert!(g.value(js).item().unwrap().abs() < 1e-12);
    }

    #[test]
    fn unregularized_edl_equals_batch_edl() {
        let l1 = Tensor::from_rows(&[vec![0.5, -1.0, 2.0], vec![0.0, 0.3, -0.2]]).unwrap();
        let l2 = Tensor::from_rows(&[vec![1.5, 0.0, -2.0], vec![-1.0, 2.3, 0.2]]).unwrap();
        let labels = [2, 1];
        let cfg = TrainingConfig { regularize: false, ..Default::default() };
        let got = gcdm_loss(&[l1.clone(), l2.clone()], &labels, &cfg).unwrap();
        let ops = |t: &Tensor| t.row_iter().map(|r| quantify(r).unwrap()).collect::<Vec<_>>();
        let want = batch_edl_loss(&[ops(&l1), ops(&l2)], &labels, EdlMeanMode::Belief).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn identical_exits_have_no_guidance() {
        let l = Tensor::from_rows(&[vec![0.5, -1.0, 2.0]]).unwrap();
        let on = TrainingConfig::default();
        let off = TrainingConfig { regularize: false, ..Default::default() };
        let a = gcdm_loss(&[l.clone(), l.clone()], &[0], &on).unwrap();
        let b = gcdm_loss(&[l.clone(), l], &[0], &off).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn regularize_needs_two_exits() {
        let l = Tensor::from_rows(&[vec![0.5, -1.0]]).unwrap();
        assert!(matches!(gcdm_loss(&[l], &[0], &TrainingConfig::default()), Err(Error::Config(_))));
    }

    #[test]
    fn step_decay_schedule() {
        let cfg = TrainingConfig { epochs: 8, learning_rate: 1.0, lr_decay: 0.1, ..Default::default() };
        let lrs: Vec<f64> = (0..8).map(|e| cfg.learning_rate_at(e)).collect();
        assert_eq!(lrs[..4], [1.0; 4]);
        assert!((lrs[4] - 0.1).abs() < 1e-15 && (lrs[7] - 0.01).abs() < 1e-15);
    }
}
