//! Diversity between exits: Q-statistic and correlation from oracle
//! correctness, Kohavi-Wolpert variance, and label agreement.
//!
//! Any ratio whose denominator is zero is reported as 0.

use crate::data::LogitsStore;
use crate::error::{Error, Result};
use crate::evidential::argmax;
use serde::{Deserialize, Serialize};

/// Predictions and correctness of every exit on every sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleMatrix {
    /// `predictions[j][i]`: label predicted by exit `i` for sample `j`.
    pub predictions: Vec<Vec<usize>>,
    pub correct: Vec<Vec<bool>>,
}

impl OracleMatrix {
    pub fn new(predictions: Vec<Vec<usize>>, labels: &[usize]) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(Error::data(format!(
                "{} prediction rows for {} labels",
                predictions.len(),
                labels.len()
            )));
        }
        let l = predictions.first().map_or(0, |r| r.len());
        if predictions.iter().any(|r| r.len() != l) {
            return Err(Error::data("ragged prediction matrix"));
        }
        let correct = predictions
            .iter()
            .zip(labels)
            .map(|(row, &y)| row.iter().map(|&p| p == y).collect())
            .collect();
        Ok(OracleMatrix { predictions, correct })
    }

    /// Plain argmax predictions of every exit.
    pub fn from_store(store: &LogitsStore) -> Result<Self> {
        let preds = store
            .records()
            .iter()
            .map(|r| r.exit_logits.iter().map(|l| argmax(l)).collect())
            .collect();
        Self::new(preds, &store.labels())
    }

    pub fn sample_count(&self) -> usize {
        self.predictions.len()
    }

    pub fn exit_count(&self) -> usize {
        self.predictions.first().map_or(0, |r| r.len())
    }

    pub fn correct_column(&self, exit: usize) -> Vec<bool> {
        self.correct.iter().map(|r| r[exit]).collect()
    }

    pub fn prediction_column(&self, exit: usize) -> Vec<usize> {
        self.predictions.iter().map(|r| r[exit]).collect()
    }
}

/// Contingency counts of two correctness columns (`1` = correct).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub n11: u64,
    pub n10: u64,
    pub n01: u64,
    pub n00: u64,
}

impl PairCounts {
    pub fn count(a: &[bool], b: &[bool]) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::data(format!("columns of length {} and {}", a.len(), b.len())));
        }
        let mut c = PairCounts::default();
        for (&x, &y) in a.iter().zip(b) {
            match (x, y) {
                (true, true) => c.n11 += 1,
                (true, false) => c.n10 += 1,
                (false, true) => c.n01 += 1,
                (false, false) => c.n00 += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.n11 + self.n10 + self.n01 + self.n00
    }
}

/// Q-statistic and correlation coefficient of two correctness columns.
pub fn pair_diversity(a: &[bool], b: &[bool]) -> Result<(f64, f64)> {
    if a.is_empty() {
        return Err(Error::data("pair_diversity needs at least one sample"));
    }
    let c = PairCounts::count(a, b)?;
    let (n11, n10, n01, n00) = (c.n11 as f64, c.n10 as f64, c.n01 as f64, c.n00 as f64);
    let num = n11 * n00 - n01 * n10;
    let q_den = n11 * n00 + n01 * n10;
    let r_den = ((n11 + n10) * (n01 + n00) * (n11 + n01) * (n10 + n00)).sqrt();
    let q = if q_den == 0.0 { 0.0 } else { num / q_den };
    let rho = if r_den == 0.0 { 0.0 } else { num / r_den };
    Ok((q, rho))
}

/// `(1 / (N L²)) Σ_j l_j (L - l_j)` with `l_j` the number of exits correct on sample `j`.
pub fn kw_variance(m: &OracleMatrix) -> Result<f64> {
    let l = m.exit_count();
    if l < 2 {
        return Err(Error::config(format!("KW variance needs at least 2 exits, got {l}")));
    }
    let n = m.sample_count();
    let total: u64 = m
        .correct
        .iter()
        .map(|row| {
            let lj = row.iter().filter(|&&c| c).count() as u64;
            lj * (l as u64 - lj)
        })
        .sum();
    Ok(total as f64 / (n as f64 * (l * l) as f64))
}

/// `L × L` fraction of samples on which two exits predict the same label.
pub fn agreement_table(m: &OracleMatrix) -> Result<Vec<Vec<f64>>> {
    let l = m.exit_count();
    if l < 2 {
        return Err(Error::config(format!("agreement needs at least 2 exits, got {l}")));
    }
    let n = m.sample_count() as f64;
    let mut t = vec![vec![1.0; l]; l];
    for i in 0..l {
        for j in i + 1..l {
            let same = m.predictions.iter().filter(|r| r[i] == r[j]).count();
            let v = same as f64 / n;
            t[i][j] = v;
            t[j][i] = v;
        }
    }
    Ok(t)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub exit_count: usize,
    pub sample_count: usize,
    pub agreement: Vec<Vec<f64>>,
    pub q_statistic: Vec<Vec<f64>>,
    pub correlation: Vec<Vec<f64>>,
    pub kw_variance: f64,
}

impl DiversityReport {
    pub fn compute(m: &OracleMatrix) -> Result<Self> {
        let l = m.exit_count();
        let agreement = agreement_table(m)?;
        let kw = kw_variance(m)?;
        let mut q = vec![vec![1.0; l]; l];
        let mut rho = vec![vec![1.0; l]; l];
        let cols: Vec<Vec<bool>> = (0..l).map(|i| m.correct_column(i)).collect();
        for i in 0..l {
            for j in 0..l {
                let (qv, rv) = pair_diversity(&cols[i], &cols[j])?;
                q[i][j] = qv;
                rho[i][j] = rv;
            }
        }
        Ok(DiversityReport {
            exit_count: l,
            sample_count: m.sample_count(),
            agreement,
            q_statistic: q,
            correlation: rho,
            kw_variance: kw,
        })
    }

    /// Long-form CSV `exit_i,exit_j,metric,value` with 1-based exits; KW
    /// variance appears once with both exit columns empty.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::data(format!("cannot write diversity csv: {e}"));
        w.write_record(["exit_i", "exit_j", "metric", "value"]).map_err(err)?;
        for (name, table) in [("agreement", &self.agreement), ("q_statistic", &self.q_statistic), ("correlation", &self.correlation)] {
            for i in 0..self.exit_count {
                for j in 0..self.exit_count {
                    w.write_record([(i + 1).to_string(), (j + 1).to_string(), name.to_string(), table[i][j].to_string()])
                        .map_err(err)?;
                }
            }
        }
        w.write_record(["", "", "kw_variance", &self.kw_variance.to_string()]).map_err(err)?;
        let bytes = w.into_inner().map_err(|e| Error::data(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::data(e.to_string()))
    }
}
