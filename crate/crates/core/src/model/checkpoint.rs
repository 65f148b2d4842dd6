//! `CRMW` checkpoint container.
//!
//! Layout:
//!
//! ```text
//! "CRMW" | version: u8 | header_len: u32 LE | header: UTF-8 JSON | payload
//! ```
//!
//! The payload is little-endian `f32`, tensor after tensor in manifest order.
//! Adapter factors are stored as extra tensors named `<target>.lora.A` and
//! `<target>.lora.B`, and the header then carries `alpha` and `rank`.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::weights::push_f32_le;
use super::{ModelConfig, NamedWeights, Vocabulary};
use crate::error::{Error, Result};
use crate::merge::{AdapterMap, LoraAdapter, MergedModel};
use crate::numerics::Matrix;

pub const MAGIC: &[u8; 4] = b"CRMW";
pub const FORMAT_VERSION: u8 = 1;
const PREAMBLE_LEN: usize = 4 + 1 + 4;
const LORA_A_SUFFIX: &str = ".lora.A";
const LORA_B_SUFFIX: &str = ".lora.B";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    /// Byte offset into the payload.
    pub offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    vocab: Vocabulary,
    tensors: Vec<TensorEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rank: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    provenance: Vec<String>,
}

/// What a checkpoint holds: a plain model or a merged model with adapters.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelBody {
    Plain(NamedWeights),
    Merged(MergedModel),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub vocab: Vocabulary,
    pub body: ModelBody,
}

impl Checkpoint {
    pub fn plain(weights: NamedWeights, vocab: Vocabulary) -> Result<Self> {
        check_vocab(weights.config(), &vocab)?;
        Ok(Self {
            vocab,
            body: ModelBody::Plain(weights),
        })
    }

    pub fn merged(model: MergedModel, vocab: Vocabulary) -> Result<Self> {
        check_vocab(model.base().config(), &vocab)?;
        Ok(Self {
            vocab,
            body: ModelBody::Merged(model),
        })
    }

    pub fn base(&self) -> &NamedWeights {
        match &self.body {
            ModelBody::Plain(w) => w,
            ModelBody::Merged(m) => m.base(),
        }
    }

    pub fn config(&self) -> &ModelConfig {
        self.base().config()
    }

    pub fn has_adapters(&self) -> bool {
        matches!(self.body, ModelBody::Merged(_))
    }

    /// Serializes to the container format.
    pub fn encode(&self) -> Result<Vec<u8>> {
        let base = self.base();
        let mut payload = Vec::with_capacity(base.param_count() * 4);
        let mut tensors = Vec::new();
        let mut push = |name: String, m: &Matrix, payload: &mut Vec<u8>| -> Result<()> {
            tensors.push(TensorEntry {
                offset: payload.len() as u64,
                shape: [m.rows(), m.cols()],
                name: name.clone(),
            });
            push_f32_le(payload, m, &name)
        };
        for (name, m) in base.iter() {
            push(name.clone(), m, &mut payload)?;
        }
        let (alpha, rank, provenance) = match &self.body {
            ModelBody::Plain(_) => (None, None, Vec::new()),
            ModelBody::Merged(merged) => {
                for (name, ad) in merged.adapters() {
                    push(format!("{name}{LORA_A_SUFFIX}"), &ad.a, &mut payload)?;
                    push(format!("{name}{LORA_B_SUFFIX}"), &ad.b, &mut payload)?;
                }
                (
                    Some(merged.alpha()),
                    Some(merged.rank()),
                    merged.provenance().to_vec(),
                )
            }
        };
        let header = Header {
            config: *base.config(),
            vocab: self.vocab.clone(),
            tensors,
            alpha,
            rank,
            provenance,
        };
        let header_bytes = serde_json::to_vec(&header)
            .map_err(|e| Error::Checkpoint(format!("header serialization: {e}")))?;
        let header_len = u32::try_from(header_bytes.len())
            .map_err(|_| Error::Checkpoint("header larger than 4 GiB".into()))?;
        let mut out = Vec::with_capacity(PREAMBLE_LEN + header_bytes.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.push(FORMAT_VERSION);
        out.extend_from_slice(&header_len.to_le_bytes());
        out.extend_from_slice(&header_bytes);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    /// Parses and validates a container. Never panics on malformed input.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: String| Error::Checkpoint(msg);
        if bytes.len() < PREAMBLE_LEN {
            return Err(bad("truncated preamble".into()));
        }
        if &bytes[..4] != MAGIC {
            return Err(bad("bad magic bytes".into()));
        }
        if bytes[4] != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {}", bytes[4])));
        }
        let header_len = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
        let payload_start = PREAMBLE_LEN
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| bad("header length exceeds file".into()))?;
        let header: Header = serde_json::from_slice(&bytes[PREAMBLE_LEN..payload_start])
            .map_err(|e| bad(format!("header: {e}")))?;
        header.config.validate()?;
        check_vocab(&header.config, &header.vocab)?;
        let payload = &bytes[payload_start..];

        let mut cursor = 0u64;
        let mut tensors: IndexMap<String, Matrix> = IndexMap::with_capacity(header.tensors.len());
        for entry in &header.tensors {
            if entry.offset != cursor {
                return Err(bad(format!(
                    "tensor {} at offset {}, expected {cursor}",
                    entry.name, entry.offset
                )));
            }
            let [rows, cols] = entry.shape;
            let byte_len = rows
                .checked_mul(cols)
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| bad(format!("tensor {} shape overflows", entry.name)))?;
            let start = cursor as usize;
            let end = start
                .checked_add(byte_len)
                .filter(|&e| e <= payload.len())
                .ok_or_else(|| bad(format!("tensor {} runs past payload", entry.name)))?;
            let data = payload[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect();
            let m = Matrix::from_vec(rows, cols, data)
                .map_err(|_| Error::NonFinite(format!("tensor {}", entry.name)))?;
            if tensors.insert(entry.name.clone(), m).is_some() {
                return Err(bad(format!("duplicate tensor {}", entry.name)));
            }
            cursor = end as u64;
        }
        if cursor as usize != payload.len() {
            return Err(bad(format!(
                "{} trailing payload bytes",
                payload.len() - cursor as usize
            )));
        }

        let mut lora_a: IndexMap<String, Matrix> = IndexMap::new();
        let mut lora_b: IndexMap<String, Matrix> = IndexMap::new();
        let mut base = IndexMap::new();
        for (name, m) in tensors {
            if let Some(target) = name.strip_suffix(LORA_A_SUFFIX) {
                lora_a.insert(target.to_string(), m);
            } else if let Some(target) = name.strip_suffix(LORA_B_SUFFIX) {
                lora_b.insert(target.to_string(), m);
            } else {
                base.insert(name, m);
            }
        }
        let weights = NamedWeights::from_parts(header.config, base)?;

        let body = match (header.alpha, header.rank) {
            (None, None) => {
                if !lora_a.is_empty() || !lora_b.is_empty() || !header.provenance.is_empty() {
                    return Err(bad("adapter tensors without alpha/rank".into()));
                }
                ModelBody::Plain(weights)
            }
            (Some(alpha), Some(rank)) => {
                if !alpha.is_finite() || rank == 0 {
                    return Err(bad("invalid alpha or rank".into()));
                }
                if lora_a.len() != lora_b.len() {
                    return Err(bad("unpaired adapter factors".into()));
                }
                let mut adapters = AdapterMap::with_capacity(lora_a.len());
                for (target, a) in lora_a {
                    let b = lora_b
                        .shift_remove(&target)
                        .ok_or_else(|| bad(format!("adapter {target} lacks B")))?;
                    adapters.insert(
                        target.clone(),
                        LoraAdapter {
                            target,
                            a,
                            b,
                            alpha,
                        },
                    );
                }
                ModelBody::Merged(MergedModel::from_parts(
                    weights,
                    adapters,
                    alpha,
                    rank,
                    header.provenance,
                )?)
            }
            _ => return Err(bad("alpha and rank must appear together".into())),
        };
        Ok(Self {
            vocab: header.vocab,
            body,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }

    /// SHA-256 of the stored payload (base tensors and adapters), hex encoded.
    pub fn payload_digest(&self) -> Result<String> {
        let bytes = self.encode()?;
        let header_len = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
        Ok(hex::encode(Sha256::digest(&bytes[PREAMBLE_LEN + header_len..])))
    }
}

fn check_vocab(config: &ModelConfig, vocab: &Vocabulary) -> Result<()> {
    if vocab.len() != config.vocab_size {
        return Err(Error::Checkpoint(format!(
            "vocabulary has {} tokens, config says {}",
            vocab.len(),
            config.vocab_size
        )));
    }
    Ok(())
}

/// Returns the payload slice of an encoded container.
pub fn payload_of(bytes: &[u8]) -> Result<&[u8]> {
    if bytes.len() < PREAMBLE_LEN {
        return Err(Error::Checkpoint("truncated preamble".into()));
    }
    let header_len = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    bytes
        .get(PREAMBLE_LEN + header_len..)
        .ok_or_else(|| Error::Checkpoint("header length exceeds file".into()))
}
