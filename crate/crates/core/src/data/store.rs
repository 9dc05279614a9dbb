//! JSON Lines store of per-exit logits, one record per line:
//! `{"id":str,"label":int,"exit_logits":[[...],...]}`.

use crate::error::{Error, Result};
use crate::io::{read_string, write_atomic};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogitRecord {
    pub id: String,
    pub label: usize,
    pub exit_logits: Vec<Vec<f64>>,
}

impl LogitRecord {
    pub fn exit_count(&self) -> usize {
        self.exit_logits.len()
    }
}

/// Records that agree on exit count and class count, with unique ids.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LogitsStore {
    records: Vec<LogitRecord>,
    ids: HashSet<String>,
    exit_count: usize,
    class_count: usize,
}

fn check_record(r: &LogitRecord, exits: usize, classes: usize) -> std::result::Result<(), String> {
    if r.exit_logits.len() != exits {
        return Err(format!(
            "record '{}' has {} exits, expected {exits}",
            r.id,
            r.exit_logits.len()
        ));
    }
    for (c, l) in r.exit_logits.iter().enumerate() {
        if l.len() != classes {
            return Err(format!(
                "record '{}' exit {} has {} logits, expected {classes}",
                r.id,
                c + 1,
                l.len()
            ));
        }
        if l.iter().any(|v| !v.is_finite()) {
            return Err(format!("record '{}' exit {} has a non-finite logit", r.id, c + 1));
        }
    }
    if r.label >= classes {
        return Err(format!(
            "record '{}' label {} out of range for {classes} classes",
            r.id, r.label
        ));
    }
    Ok(())
}

impl LogitsStore {
    pub fn new(records: Vec<LogitRecord>) -> Result<Self> {
        let mut store = LogitsStore::default();
        for r in records {
            store.push(r).map_err(Error::data)?;
        }
        Ok(store)
    }

    fn push(&mut self, r: LogitRecord) -> std::result::Result<(), String> {
        if self.records.is_empty() {
            if r.exit_logits.is_empty() {
                return Err(format!("record '{}' has no exits", r.id));
            }
            self.exit_count = r.exit_logits.len();
            self.class_count = r.exit_logits[0].len();
            if self.class_count < 2 {
                return Err(format!("record '{}' has fewer than 2 classes", r.id));
            }
        }
        check_record(&r, self.exit_count, self.class_count)?;
        if !self.ids.insert(r.id.clone()) {
            return Err(format!("duplicate id '{}'", r.id));
        }
        self.records.push(r);
        Ok(())
    }

    pub fn records(&self) -> &[LogitRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn exit_count(&self) -> usize {
        self.exit_count
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label).collect()
    }

    /// Same records with exits reordered by `order` (a permutation of `0..C`).
    pub fn with_exit_order(&self, order: &[usize]) -> Result<Self> {
        let mut sorted = order.to_vec();
        sorted.sort_unstable();
        if sorted != (0..self.exit_count).collect::<Vec<_>>() {
            return Err(Error::contract(format!("{order:?} is not a permutation of the exits")));
        }
        let records = self
            .records
            .iter()
            .map(|r| LogitRecord {
                id: r.id.clone(),
                label: r.label,
                exit_logits: order.iter().map(|&c| r.exit_logits[c].clone()).collect(),
            })
            .collect();
        LogitsStore::new(records)
    }

    /// Keeps records whose index satisfies `keep`.
    pub fn filter_indexed(&self, mut keep: impl FnMut(usize) -> bool) -> Self {
        let records = self
            .records
            .iter()
            .enumerate()
            .filter(|(i, _)| keep(*i))
            .map(|(_, r)| r.clone())
            .collect();
        LogitsStore::new(records).expect("subset of a valid store is valid")
    }

    /// Serializes to JSON Lines.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            let line = serde_json::to_string(r)
                .map_err(|e| Error::data(format!("cannot serialize record '{}': {e}", r.id)))?;
            out.push_str(&line);
            out.push('\n');
        }
        Ok(out)
    }

    /// Parses JSON Lines; blank lines are skipped, errors name the 1-based line.
    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut store = LogitsStore::default();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let r: LogitRecord = serde_json::from_str(line)
                .map_err(|e| Error::parse_at_line(lineno, e.to_string()))?;
            store
                .push(r)
                .map_err(|reason| Error::parse_at_line(lineno, reason))?;
        }
        Ok(store)
    }
}

pub fn store_write(store: &LogitsStore, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, store.to_jsonl()?.as_bytes())
}

pub fn store_read(path: impl AsRef<Path>) -> Result<LogitsStore> {
    LogitsStore::from_jsonl(&read_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, label: usize, logits: Vec<Vec<f64>>) -> LogitRecord {
        LogitRecord {
            id: id.into(),
            label,
            exit_logits: logits,
        }
    }

    #[test]
    fn roundtrip_is_exact() {
        let s = LogitsStore::new(vec![
            rec("a", 1, vec![vec![0.1, 1.0 / 3.0], vec![-2.5e-300, 7.0e300]]),
            rec("b", 0, vec![vec![std::f64::consts::PI, -0.0], vec![1e-17, 2.0]]),
        ])
        .unwrap();
        let back = LogitsStore::from_jsonl(&s.to_jsonl().unwrap()).unwrap();
        assert_eq!(back, s);
        for (x, y) in s.records().iter().zip(back.records()) {
            for (a, b) in x.exit_logits.iter().flatten().zip(y.exit_logits.iter().flatten()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn empty_store_roundtrips() {
        let s = LogitsStore::default();
        assert_eq!(s.to_jsonl().unwrap(), "");
        assert!(LogitsStore::from_jsonl("").unwrap().is_empty());
    }

    #[test]
    fn wrong_exit_count_names_line() {
        let text = "{\"id\":\"a\",\"label\":0,\"exit_logits\":[[1,2],[3,4]]}\n\
                    {\"id\":\"b\",\"label\":0,\"exit_logits\":[[1,2]]}\n";
        match LogitsStore::from_jsonl(text) {
            Err(Error::Parse { location, .. }) => assert_eq!(location, "line 2"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = "{\"id\":\"a\",\"label\":0,\"exit_logits\":[[1,2]]}\n\
                    {\"id\":\"a\",\"label\":1,\"exit_logits\":[[1,2]]}\n";
        assert!(matches!(LogitsStore::from_jsonl(text), Err(Error::Parse { .. })));
    }

    #[test]
    fn exit_reorder() {
        let s = LogitsStore::new(vec![rec("a", 0, vec![vec![1.0, 0.0], vec![0.0, 1.0]])]).unwrap();
        let r = s.with_exit_order(&[1, 0]).unwrap();
        assert_eq!(r.records()[0].exit_logits[0], vec![0.0, 1.0]);
        assert!(s.with_exit_order(&[0, 0]).is_err());
    }
}
