//! JSON checkpoints: `{format_version, arch, params, meta}`.
//!
//! Floats are written in shortest round-trip form and parsed with correct
//! rounding, so every parameter survives a save/load cycle bit-exactly.

use super::{ArchSpec, Dense, MultiExitModel};
use crate::error::{Error, Result};
use crate::io::{from_json_str, read_string, write_atomic};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Training provenance stored next to the weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub epochs: usize,
    pub loss: String,
    pub regularize: bool,
    pub tau1: f64,
    pub tau2: f64,
    pub edl_mean_mode: String,
    /// Epoch (1-based) whose weights were kept; 0 means untrained.
    pub best_epoch: usize,
    pub best_validation_accuracy: f64,
}

impl Default for CheckpointMeta {
    fn default() -> Self {
        CheckpointMeta {
            seed: 0,
            epochs: 0,
            loss: "edl".into(),
            regularize: false,
            tau1: 0.5,
            tau2: 1.0,
            edl_mean_mode: "belief".into(),
            best_epoch: 0,
            best_validation_accuracy: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Params {
    blocks: Vec<Vec<Dense>>,
    heads: Vec<Dense>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format_version: u32,
    arch: ArchSpec,
    params: Params,
    meta: CheckpointMeta,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: Option<serde_json::Value>,
}

/// A model together with its provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: MultiExitModel,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<Vec<u8>> {
        let file = CheckpointFile {
            format_version: CHECKPOINT_VERSION,
            arch: self.model.arch.clone(),
            params: Params {
                blocks: self.model.blocks.clone(),
                heads: self.model.heads.clone(),
            },
            meta: self.meta.clone(),
        };
        let mut out = serde_json::to_vec(&file)
            .map_err(|e| Error::data(format!("cannot serialize checkpoint: {e}")))?;
        out.push(b'\n');
        Ok(out)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let probe: VersionProbe = from_json_str(text)?;
        match probe.format_version {
            None => return Err(Error::parse_at_byte(0, "checkpoint lacks format_version")),
            Some(v) => {
                let found = v.as_u64().map(|n| n.min(u32::MAX as u64) as u32);
                match found {
                    Some(CHECKPOINT_VERSION) => {}
                    Some(found) => {
                        return Err(Error::Version {
                            found,
                            expected: CHECKPOINT_VERSION,
                        })
                    }
                    None => {
                        return Err(Error::parse_at_byte(0, format!("format_version {v} is not an integer")))
                    }
                }
            }
        }
        let file: CheckpointFile = from_json_str(text)?;
        let model = MultiExitModel::from_parts(file.arch, file.params.blocks, file.params.heads)?;
        Ok(Checkpoint { model, meta: file.meta })
    }
}

pub fn save(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &ckpt.to_json()?)
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_json(&read_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;

    fn ckpt() -> Checkpoint {
        let model = MultiExitModel::init(ArchSpec::uniform(4, 3, 2, 1, 5), 11).unwrap();
        Checkpoint { model, meta: CheckpointMeta::default() }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let c = ckpt();
        let text = String::from_utf8(c.to_json().unwrap()).unwrap();
        let back = Checkpoint::from_json(&text).unwrap();
        assert_eq!(back, c);
        for (a, b) in c.model.parameters().iter().zip(back.model.parameters()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        let x = Tensor::from_rows(&[vec![0.3, -1.0, 2.0, 0.25]]).unwrap();
        assert_eq!(c.model.forward_all(&x).unwrap(), back.model.forward_all(&x).unwrap());
    }

    #[test]
    fn version_and_truncation() {
        let text = String::from_utf8(ckpt().to_json().unwrap()).unwrap();
        let bumped = text.replacen("\"format_version\":1", "\"format_version\":2", 1);
        assert!(matches!(Checkpoint::from_json(&bumped), Err(Error::Version { found: 2, .. })));
        let cut = &text[..text.len() / 2];
        assert!(matches!(Checkpoint::from_json(cut), Err(Error::Parse { .. })));
    }

    #[test]
    fn shape_tampering_rejected() {
        let text = String::from_utf8(ckpt().to_json().unwrap()).unwrap();
        let bad = text.replacen("\"input_dim\":4", "\"input_dim\":6", 1);
        assert!(Checkpoint::from_json(&bad).is_err());
    }
}
