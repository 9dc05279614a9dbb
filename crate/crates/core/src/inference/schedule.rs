use super::store_decisions;
use crate::data::LogitsStore;
use crate::error::{Error, Result};
use crate::fusion::FusionOptions;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub const SCHEDULE_VERSION: u32 = 1;

const Q_LO: f64 = 1e-6;
const Q_HI: f64 = 1.0 - 1e-6;

/// Per-exit thresholds and target exit fractions for one per-sample budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSchedule {
    pub format_version: u32,
    pub budget: f64,
    /// Geometric parameter; `null` at the two clamps.
    pub q: Option<f64>,
    pub fractions: Vec<f64>,
    /// One threshold per exit except the last; infinities appear as `"+inf"` / `"-inf"`.
    #[serde(serialize_with = "ser_thresholds", deserialize_with = "de_thresholds")]
    pub thresholds: Vec<f64>,
    pub costs: Vec<f64>,
    pub expected_cost: f64,
    /// Whether thresholds were fitted to fused confidences.
    pub fusion: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ThresholdRepr {
    Finite(f64),
    Sentinel(String),
}

fn ser_thresholds<S: Serializer>(v: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    let reprs: Vec<ThresholdRepr> = v
        .iter()
        .map(|&t| {
            if t == f64::INFINITY {
                ThresholdRepr::Sentinel("+inf".into())
            } else if t == f64::NEG_INFINITY {
                ThresholdRepr::Sentinel("-inf".into())
            } else {
                ThresholdRepr::Finite(t)
            }
        })
        .collect();
    reprs.serialize(s)
}

fn de_thresholds<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
    let reprs = Vec::<ThresholdRepr>::deserialize(d)?;
    reprs
        .into_iter()
        .map(|r| match r {
            ThresholdRepr::Finite(t) => Ok(t),
            ThresholdRepr::Sentinel(s) if s == "+inf" => Ok(f64::INFINITY),
            ThresholdRepr::Sentinel(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
            ThresholdRepr::Sentinel(s) => Err(serde::de::Error::custom(format!("bad threshold '{s}'"))),
        })
        .collect()
}

/// Normalized `q(1-q)^(c-1)` for `c = 1..=n`.
pub fn geometric_fractions(q: f64, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|c| q * (1.0 - q).powi(c as i32)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|p| p / total).collect()
}

fn expected_cost(fractions: &[f64], costs: &[f64]) -> f64 {
    fractions.iter().zip(costs).map(|(p, f)| p * f).sum()
}

fn check_costs(costs: &[f64]) -> Result<()> {
    if costs.len() < 2 {
        return Err(Error::config("a schedule needs at least 2 exits"));
    }
    if costs.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(Error::config("exit costs must be positive and finite"));
    }
    if costs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config(format!("exit costs must strictly increase, got {costs:?}")));
    }
    Ok(())
}

/// Smallest `q` (largest expected cost) whose expected cost fits `budget`.
fn solve_q(costs: &[f64], budget: f64) -> f64 {
    let cost = |q: f64| expected_cost(&geometric_fractions(q, costs.len()), costs);
    if cost(Q_LO) <= budget {
        return Q_LO;
    }
    if cost(Q_HI) > budget {
        return Q_HI;
    }
    let (mut lo, mut hi) = (Q_LO, Q_HI);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if cost(mid) <= budget {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Largest `v` among `confs` such that at least a fraction `t` of them are `≥ v`.
fn alive_quantile(confs: &mut [f64], t: f64) -> f64 {
    if t <= 0.0 || confs.is_empty() {
        return f64::INFINITY;
    }
    confs.sort_by(|a, b| b.total_cmp(a));
    let need = (t * confs.len() as f64 - 1e-9).ceil().max(1.0) as usize;
    confs[need.min(confs.len()) - 1]
}

/// Calibrates a schedule on `validation` for exit costs `costs` and a
/// per-sample FLOPs `budget`.
pub fn calibrate(
    validation: &LogitsStore,
    costs: &[f64],
    budget: f64,
    fusion: Option<FusionOptions>,
) -> Result<BudgetSchedule> {
    check_costs(costs)?;
    if !(budget > 0.0) || !budget.is_finite() {
        return Err(Error::config(format!("budget must be positive and finite, got {budget}")));
    }
    if validation.is_empty() {
        return Err(Error::data("calibration needs a non-empty validation store"));
    }
    if validation.exit_count() < costs.len() {
        return Err(Error::config(format!(
            "store has {} exits, costs describe {}",
            validation.exit_count(),
            costs.len()
        )));
    }
    let c = costs.len();
    let (first, last) = (costs[0], costs[c - 1]);
    if budget < first {
        return Err(Error::InfeasibleBudget(format!(
            "budget {budget} is below the cheapest exit's cost {first}"
        )));
    }
    let mut schedule = BudgetSchedule {
        format_version: SCHEDULE_VERSION,
        budget,
        q: None,
        fractions: vec![0.0; c],
        thresholds: vec![f64::INFINITY; c - 1],
        costs: costs.to_vec(),
        expected_cost: 0.0,
        fusion: fusion.is_some(),
    };
    if budget >= last {
        schedule.fractions[c - 1] = 1.0;
        schedule.expected_cost = last;
        return Ok(schedule);
    }
    if budget == first {
        schedule.fractions[0] = 1.0;
        schedule.thresholds[0] = f64::NEG_INFINITY;
        schedule.expected_cost = first;
        return Ok(schedule);
    }

    let q = solve_q(costs, budget);
    let fractions = geometric_fractions(q, c);
    let decisions = store_decisions(validation, fusion)?;
    let n = decisions.len() as f64;
    let mut alive: Vec<usize> = (0..decisions.len()).collect();
    for k in 0..c - 1 {
        let t = fractions[k] * n / alive.len().max(1) as f64;
        let mut confs: Vec<f64> = alive.iter().map(|&i| decisions[i][k].confidence).collect();
        let theta = alive_quantile(&mut confs, t.min(1.0));
        schedule.thresholds[k] = theta;
        alive.retain(|&i| decisions[i][k].confidence < theta);
    }
    schedule.q = Some(q);
    schedule.expected_cost = expected_cost(&fractions, costs);
    schedule.fractions = fractions;
    Ok(schedule)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub accuracy: f64,
    pub mean_flops: f64,
    pub per_exit_counts: Vec<usize>,
}

/// Replays `schedule` on `store`: each sample exits at the first exit `c < C`
/// whose confidence reaches `θ_c`, otherwise at the last scheduled exit.
pub fn eval_budgeted(store: &LogitsStore, schedule: &BudgetSchedule, fusion: Option<FusionOptions>) -> Result<BudgetReport> {
    check_costs(&schedule.costs)?;
    let c = schedule.costs.len();
    if schedule.thresholds.len() != c - 1 {
        return Err(Error::data("schedule needs one threshold per non-final exit"));
    }
    if store.exit_count() < c {
        return Err(Error::config(format!(
            "schedule has {c} exits, store only {}",
            store.exit_count()
        )));
    }
    if store.is_empty() {
        return Err(Error::data("cannot evaluate an empty store"));
    }
    let decisions = store_decisions(store, fusion)?;
    let mut counts = vec![0usize; c];
    let mut correct = 0usize;
    let mut flops = 0.0;
    for (d, r) in decisions.iter().zip(store.records()) {
        let exit = (0..c - 1)
            .find(|&k| d[k].confidence >= schedule.thresholds[k])
            .unwrap_or(c - 1);
        counts[exit] += 1;
        correct += usize::from(d[exit].class == r.label);
        flops += schedule.costs[exit];
    }
    let n = store.len() as f64;
    Ok(BudgetReport {
        accuracy: correct as f64 / n,
        mean_flops: flops / n,
        per_exit_counts: counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{from_json_str, to_json_bytes};

    #[test]
    fn fractions_sum_to_one() {
        for q in [1e-6, 0.3, 0.999999] {
            let p = geometric_fractions(q, 5);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn solved_q_meets_budget() {
        let costs = [10.0, 20.0, 30.0, 40.0];
        for budget in [11.0, 15.0, 20.0, 24.0] {
            let q = solve_q(&costs, budget);
            let e = expected_cost(&geometric_fractions(q, 4), &costs);
            assert!(e <= budget * (1.0 + 1e-6), "{budget}: {e}");
            assert!(e >= budget * 0.99, "{budget}: {e}");
        }
        // Above the mean cost the family tops out at near-uniform fractions.
        assert_eq!(solve_q(&costs, 35.0), Q_LO);
    }

    #[test]
    fn quantile_rule() {
        let mut v = vec![0.1, 0.9, 0.5, 0.7];
        assert_eq!(alive_quantile(&mut v, 0.5), 0.7);
        assert_eq!(alive_quantile(&mut v, 0.0), f64::INFINITY);
        assert_eq!(alive_quantile(&mut v, 1.0), 0.1);
        assert_eq!(alive_quantile(&mut v, 0.3), 0.7);
    }

    #[test]
    fn infinite_thresholds_roundtrip() {
        let s = BudgetSchedule {
            format_version: SCHEDULE_VERSION,
            budget: 5.0,
            q: None,
            fractions: vec![1.0, 0.0, 0.0],
            thresholds: vec![f64::NEG_INFINITY, f64::INFINITY],
            costs: vec![5.0, 6.0, 7.0],
            expected_cost: 5.0,
            fusion: false,
        };
        let text = String::from_utf8(to_json_bytes(&s).unwrap()).unwrap();
        assert!(text.contains("\"-inf\"") && text.contains("\"+inf\""));
        let back: BudgetSchedule = from_json_str(&text).unwrap();
        assert_eq!(back, s);
    }
}
