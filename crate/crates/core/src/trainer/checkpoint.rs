//! `LATL` checkpoint container.
//!
//! ```text
//! "LATL" | u32 LE version | u64 LE header length | JSON header | payloads
//! ```
//!
//! The header lists every tensor with its dtype, shape and byte offset into
//! the payload region. Values are raw little-endian, row-major.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, AdamState, Precision, Tensor};
use crate::corpus::{Language, LanguageInventory, Vocabulary};
use crate::error::{Error, Result};
use crate::nmt::{ModelConfig, ModelParams};

pub const MAGIC: &[u8; 4] = b"LATL";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerState {
    Sgd {
        lr: f64,
    },
    Adam {
        config: AdamConfig,
        state: AdamState,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub vocab: Vocabulary,
    pub inventory: LanguageInventory,
    pub step: u64,
    pub optimizer: OptimizerState,
    /// Generating configuration (seed, flags), carried for provenance.
    pub provenance: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum OptimizerHeader {
    Sgd { lr: f64 },
    Adam { config: AdamConfig, step: u64 },
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: Vec<String>,
    inventory: Vec<Language>,
    step: u64,
    optimizer: OptimizerHeader,
    #[serde(default)]
    provenance: BTreeMap<String, String>,
    tensors: Vec<TensorEntry>,
}

fn dtype_width(dtype: &str) -> Result<usize> {
    match Precision::from_tag(dtype) {
        Some(Precision::F32) => Ok(4),
        Some(Precision::F64) => Ok(8),
        None => Err(Error::Header(format!("unknown dtype `{dtype}`"))),
    }
}

fn write_values(out: &mut Vec<u8>, values: &[f64], precision: Precision) {
    match precision {
        Precision::F32 => values
            .iter()
            .for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes())),
        Precision::F64 => values
            .iter()
            .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
    }
}

fn read_values(bytes: &[u8], dtype: &str) -> Result<Vec<f64>> {
    Ok(match dtype_width(dtype)? {
        4 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect(),
        _ => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
    })
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let precision = self.params.config.precision;
        let mut payload = Vec::new();
        let mut tensors = Vec::new();
        let mut push = |name: String, shape: &[usize], values: &[f64], p: Precision| {
            tensors.push(TensorEntry {
                name,
                dtype: p.tag().to_string(),
                shape: shape.to_vec(),
                offset: payload.len() as u64,
            });
            write_values(&mut payload, values, p);
        };
        let named = self.params.named();
        for (name, t) in &named {
            push(name.clone(), t.shape(), t.data(), precision);
        }
        let optimizer = match &self.optimizer {
            OptimizerState::Sgd { lr } => OptimizerHeader::Sgd { lr: *lr },
            OptimizerState::Adam { config, state } => {
                if state.m.len() != named.len() || state.v.len() != named.len() {
                    return Err(Error::InvalidArgument(
                        "adam state does not match parameters".into(),
                    ));
                }
                for ((name, t), (m, v)) in named.iter().zip(state.m.iter().zip(&state.v)) {
                    push(format!("adam.m.{name}"), t.shape(), m, Precision::F64);
                    push(format!("adam.v.{name}"), t.shape(), v, Precision::F64);
                }
                OptimizerHeader::Adam {
                    config: *config,
                    step: state.step,
                }
            }
        };
        let header = Header {
            config: self.params.config,
            vocab: self.vocab.tokens().to_vec(),
            inventory: self.inventory.languages().to_vec(),
            step: self.step,
            optimizer,
            provenance: self.provenance.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Header(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Truncated("missing magic".into()));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::BadMagic);
        }
        if bytes.len() < 16 {
            return Err(Error::Truncated("incomplete preamble".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Version {
                found: version,
                expected: VERSION,
            });
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let header_end = 16usize
            .checked_add(header_len)
            .filter(|end| *end <= bytes.len())
            .ok_or_else(|| {
                Error::Truncated(format!("header of {header_len} bytes exceeds file"))
            })?;
        let header: Header = serde_json::from_slice(&bytes[16..header_end])
            .map_err(|e| Error::Header(e.to_string()))?;
        let payload = &bytes[header_end..];

        let mut by_name = BTreeMap::new();
        for entry in &header.tensors {
            let n: usize = entry.shape.iter().product();
            let width = dtype_width(&entry.dtype)?;
            let start = entry.offset as usize;
            let end = start
                .checked_add(n * width)
                .filter(|end| *end <= payload.len())
                .ok_or_else(|| Error::Truncated(format!("payload of tensor `{}`", entry.name)))?;
            let tensor = Tensor::new(
                &entry.shape,
                read_values(&payload[start..end], &entry.dtype)?,
            )?;
            if by_name.insert(entry.name.clone(), tensor).is_some() {
                return Err(Error::Header(format!("duplicate tensor `{}`", entry.name)));
            }
        }

        let template = ModelParams::init(header.config, 0)?;
        let names: Vec<String> = template.named().into_iter().map(|(n, _)| n).collect();
        let mut param_tensors = Vec::with_capacity(names.len());
        for name in &names {
            let t = by_name
                .remove(name)
                .ok_or_else(|| Error::Header(format!("missing tensor `{name}`")))?;
            param_tensors.push((name.clone(), t));
        }
        let params = ModelParams::from_named(header.config, param_tensors)?;

        let optimizer = match header.optimizer {
            OptimizerHeader::Sgd { lr } => OptimizerState::Sgd { lr },
            OptimizerHeader::Adam { config, step } => {
                let mut take = |prefix: &str, name: &str| -> Result<Vec<f64>> {
                    by_name
                        .remove(&format!("{prefix}{name}"))
                        .map(|t| t.data().to_vec())
                        .ok_or_else(|| Error::Header(format!("missing tensor `{prefix}{name}`")))
                };
                let mut state = AdamState {
                    step,
                    ..AdamState::default()
                };
                for name in &names {
                    state.m.push(take("adam.m.", name)?);
                    state.v.push(take("adam.v.", name)?);
                }
                OptimizerState::Adam { config, state }
            }
        };
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::Header(format!("unexpected tensor `{extra}`")));
        }

        Ok(Checkpoint {
            params,
            vocab: Vocabulary::from_tokens(header.vocab)?,
            inventory: LanguageInventory::new(header.inventory)?,
            step: header.step,
            optimizer,
            provenance: header.provenance,
        })
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ParallelExample;

    fn sample(precision: Precision, adam: bool) -> Checkpoint {
        let cfg = ModelConfig::new(8, 4, 5, 3, 2).with_precision(precision);
        let params = ModelParams::init(cfg, 11).unwrap();
        let vocab = Vocabulary::build(&[vec!["a", "b", "c", "d"]], 1, 8).unwrap();
        let inventory = LanguageInventory::parse("eng\tx\ndan\ty\n").unwrap();
        let optimizer = if adam {
            let mut state = AdamState::new(&params.tensors());
            state.step = 3;
            state.m[0][1] = 0.123456789;
            state.v[2][0] = 1e-7 / 3.0;
            OptimizerState::Adam {
                config: AdamConfig::default(),
                state,
            }
        } else {
            OptimizerState::Sgd { lr: 0.5 }
        };
        Checkpoint {
            params,
            vocab,
            inventory,
            step: 42,
            optimizer,
            provenance: BTreeMap::from([("seed".to_string(), "11".to_string())]),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for precision in [Precision::F32, Precision::F64] {
            for adam in [false, true] {
                let c = sample(precision, adam);
                let back = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap();
                assert_eq!(back, c);
                let ex = ParallelExample {
                    src_lang: 0,
                    tgt_lang: 1,
                    src_ids: vec![4, 5],
                    tgt_ids: vec![2, 6, 3],
                };
                let (a, b) = (c.params.loss(&ex).unwrap(), back.params.loss(&ex).unwrap());
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn corrupted_magic() {
        let mut bytes = sample(Precision::F32, false).to_bytes().unwrap();
        bytes[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::BadMagic)
        ));
    }

    #[test]
    fn version_bump() {
        let mut bytes = sample(Precision::F32, false).to_bytes().unwrap();
        bytes[4..8].copy_from_slice(&(VERSION + 1).to_le_bytes());
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::Version {
                found: 2,
                expected: 1
            })
        ));
    }

    #[test]
    fn truncated_payload() {
        let bytes = sample(Precision::F64, true).to_bytes().unwrap();
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Truncated(_))
        ));
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..10]),
            Err(Error::Truncated(_))
        ));
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..40]),
            Err(Error::Truncated(_))
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.latl");
        let c = sample(Precision::F32, true);
        save_checkpoint(&path, &c).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), c);
        assert!(matches!(
            load_checkpoint(dir.path().join("missing")),
            Err(Error::Io { .. })
        ));
    }
}
