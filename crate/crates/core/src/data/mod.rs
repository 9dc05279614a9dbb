//! Datasets, deterministic splits, synthetic generators and the per-exit logits store.

mod idx;
mod store;
mod synth;
mod tabular;

pub use idx::{load_idx, parse_idx};
pub use store::{store_read, store_write, LogitRecord, LogitsStore};
pub use synth::{gen_complementary_store, gen_gaussian_mixture, mixture_centres, GaussianMixtureSpec};
pub use tabular::{load_csv, parse_csv};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::config(format!(
                "unknown split '{other}' (expected train | validation | test)"
            ))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

/// Fractions used to tag samples. Validation is carved out of the non-test part.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub validation_fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            test_fraction: 0.2,
            validation_fraction: 0.1,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = |f: f64| (0.0..1.0).contains(&f);
        if !ok(self.test_fraction) || !ok(self.validation_fraction) {
            return Err(Error::config(format!(
                "split fractions must lie in [0, 1): test={}, validation={}",
                self.test_fraction, self.validation_fraction
            )));
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent child seed for one named random stream of a run.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ stream.wrapping_mul(0x2545_F491_4F6C_DD1D))
}

/// Split tag of sample `index`; a pure function of `(seed, index)`.
pub fn split_of(seed: u64, index: usize, spec: &SplitSpec) -> Split {
    let h = splitmix64(splitmix64(seed) ^ (index as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93));
    let u = (h >> 11) as f64 / (1u64 << 53) as f64;
    if u < spec.test_fraction {
        return Split::Test;
    }
    let rest = (u - spec.test_fraction) / (1.0 - spec.test_fraction);
    if rest < spec.validation_fraction {
        Split::Validation
    } else {
        Split::Train
    }
}

/// Labelled feature matrix with per-sample split tags.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Tensor,
    labels: Vec<usize>,
    class_count: usize,
    splits: Vec<Split>,
}

impl Dataset {
    /// All samples start tagged [`Split::Train`].
    pub fn new(features: Tensor, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(Error::data(format!(
                "features must be [n, d], got {:?}",
                features.shape()
            )));
        }
        if features.rows() != labels.len() {
            return Err(Error::data(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if class_count < 2 {
            return Err(Error::config(format!("need at least 2 classes, got {class_count}")));
        }
        if let Some((i, y)) = labels.iter().enumerate().find(|(_, &y)| y >= class_count) {
            return Err(Error::data(format!(
                "label {y} at sample {i} out of range for {class_count} classes"
            )));
        }
        let n = labels.len();
        Ok(Dataset {
            features,
            labels,
            class_count,
            splits: vec![Split::Train; n],
        })
    }

    /// Re-tags every sample with [`split_of`].
    pub fn with_splits(mut self, seed: u64, spec: &SplitSpec) -> Result<Self> {
        spec.validate()?;
        self.splits = (0..self.len()).map(|i| split_of(seed, i, spec)).collect();
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.last_dim()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    /// Features and labels of one split, in index order.
    pub fn part(&self, split: Split) -> Result<(Tensor, Vec<usize>)> {
        let idx = self.indices(split);
        if idx.is_empty() {
            return Err(Error::data(format!("split {split:?} is empty")));
        }
        let x = self.features.select_rows(&idx)?;
        let y = idx.iter().map(|&i| self.labels[i]).collect();
        Ok((x, y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_are_deterministic_disjoint_exhaustive() {
        let spec = SplitSpec::default();
        for seed in [0u64, 1, 42, u64::MAX] {
            let a: Vec<Split> = (0..5000).map(|i| split_of(seed, i, &spec)).collect();
            let b: Vec<Split> = (0..5000).map(|i| split_of(seed, i, &spec)).collect();
            assert_eq!(a, b);
            let count = |s| a.iter().filter(|&&x| x == s).count();
            assert_eq!(count(Split::Train) + count(Split::Validation) + count(Split::Test), 5000);
            let test = count(Split::Test) as f64 / 5000.0;
            assert!((test - 0.2).abs() < 0.03, "test fraction {test}");
            let val = count(Split::Validation) as f64 / 5000.0;
            assert!((val - 0.08).abs() < 0.03, "validation fraction {val}");
        }
    }

    #[test]
    fn dataset_validation() {
        let x = Tensor::from_rows(&[vec![0.0, 1.0], vec![2.0, 3.0]]).unwrap();
        assert!(Dataset::new(x.clone(), vec![0, 2], 2).is_err());
        assert!(Dataset::new(x.clone(), vec![0], 2).is_err());
        assert!(Dataset::new(x.clone(), vec![0, 1], 1).is_err());
        let d = Dataset::new(x, vec![0, 1], 2).unwrap();
        assert_eq!(d.indices(Split::Train), vec![0, 1]);
        assert!(d.part(Split::Test).is_err());
    }
}
