use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const INIT_STD: f64 = 0.02;

/// The four self-attention projections, in canonical order.
pub const ATTENTION_PROJECTIONS: [&str; 4] = ["query", "key", "value", "output"];

pub fn token_embedding() -> &'static str {
    "embeddings.token"
}

pub fn position_embedding() -> &'static str {
    "embeddings.position"
}

pub fn attention_weight(layer: usize, proj: &str) -> String {
    format!("layers.{layer}.attention.{proj}.weight")
}

pub const CLS_HEAD_WEIGHT: &str = "cls_head.weight";
pub const CLS_HEAD_BIAS: &str = "cls_head.bias";
pub const MLM_HEAD_WEIGHT: &str = "mlm_head.weight";
pub const MLM_HEAD_BIAS: &str = "mlm_head.bias";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Gaussian,
    Zeros,
    Ones,
}

fn canonical_layout(config: &ModelConfig) -> Vec<(String, (usize, usize), Init)> {
    let d = config.d_model;
    let mut out = vec![
        (token_embedding().into(), (config.vocab_size, d), Init::Gaussian),
        (position_embedding().into(), (config.max_seq_len, d), Init::Gaussian),
    ];
    let norm = |out: &mut Vec<_>, prefix: String| {
        out.push((format!("{prefix}.gain"), (1, d), Init::Ones));
        out.push((format!("{prefix}.bias"), (1, d), Init::Zeros));
    };
    for i in 0..config.n_layers {
        norm(&mut out, format!("layers.{i}.attention_norm"));
        for proj in ATTENTION_PROJECTIONS {
            out.push((attention_weight(i, proj), (d, d), Init::Gaussian));
            out.push((
                format!("layers.{i}.attention.{proj}.bias"),
                (1, d),
                Init::Zeros,
            ));
        }
        norm(&mut out, format!("layers.{i}.ffn_norm"));
        out.push((
            format!("layers.{i}.ffn.up.weight"),
            (d, config.d_ff),
            Init::Gaussian,
        ));
        out.push((format!("layers.{i}.ffn.up.bias"), (1, config.d_ff), Init::Zeros));
        out.push((
            format!("layers.{i}.ffn.down.weight"),
            (config.d_ff, d),
            Init::Gaussian,
        ));
        out.push((format!("layers.{i}.ffn.down.bias"), (1, d), Init::Zeros));
    }
    norm(&mut out, "final_norm".into());
    out.push((MLM_HEAD_WEIGHT.into(), (d, config.vocab_size), Init::Gaussian));
    out.push((MLM_HEAD_BIAS.into(), (1, config.vocab_size), Init::Zeros));
    if config.num_labels > 0 {
        out.push((CLS_HEAD_WEIGHT.into(), (d, config.num_labels), Init::Gaussian));
        out.push((CLS_HEAD_BIAS.into(), (1, config.num_labels), Init::Zeros));
    }
    out
}

/// Canonical tensor names and shapes for `config`, in storage order.
pub fn canonical_names(config: &ModelConfig) -> Vec<(String, (usize, usize))> {
    canonical_layout(config)
        .into_iter()
        .map(|(n, s, _)| (n, s))
        .collect()
}

/// One model's tensors under the canonical name scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedWeights {
    config: ModelConfig,
    tensors: IndexMap<String, Matrix>,
}

/// Seeded initialization: Gaussian(0, 0.02) weights, zero biases, unit gains.
pub fn init_weights(config: &ModelConfig) -> Result<NamedWeights> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let tensors = canonical_layout(config)
        .into_iter()
        .map(|(name, (r, c), init)| {
            let m = match init {
                Init::Gaussian => Matrix::gaussian(r, c, INIT_STD, &mut rng),
                Init::Zeros => Matrix::zeros(r, c),
                Init::Ones => Matrix::filled(r, c, 1.0),
            };
            (name, m)
        })
        .collect();
    Ok(NamedWeights {
        config: *config,
        tensors,
    })
}

impl NamedWeights {
    /// Assembles weights from parts, checking the name set and every shape
    /// against the canonical scheme. Tensors are reordered canonically.
    pub fn from_parts(config: ModelConfig, mut tensors: IndexMap<String, Matrix>) -> Result<Self> {
        config.validate()?;
        let layout = canonical_names(&config);
        if tensors.len() != layout.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                layout.len(),
                tensors.len()
            )));
        }
        let mut ordered = IndexMap::with_capacity(layout.len());
        for (name, shape) in layout {
            let m = tensors
                .shift_remove(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if m.shape() != shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {shape:?}",
                    m.shape()
                )));
            }
            if !m.is_finite() {
                return Err(Error::NonFinite(name));
            }
            ordered.insert(name, m);
        }
        Ok(Self {
            config,
            tensors: ordered,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn get(&self, name: &str) -> Result<&Matrix> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::invalid(format!("unknown tensor {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Matrix> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::invalid(format!("unknown tensor {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Matrix)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Matrix)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn has_cls_head(&self) -> bool {
        self.config.num_labels > 0
    }

    pub fn param_count(&self) -> usize {
        self.tensors.values().map(Matrix::len).sum()
    }

    /// Replaces (or adds) the classification head with a freshly seeded one.
    pub fn with_cls_head(mut self, num_labels: usize, seed: u64) -> Result<Self> {
        if num_labels == 0 {
            return Err(Error::invalid("a classification head needs labels"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.config.num_labels = num_labels;
        self.tensors.insert(
            CLS_HEAD_WEIGHT.into(),
            Matrix::gaussian(self.config.d_model, num_labels, INIT_STD, &mut rng),
        );
        self.tensors
            .insert(CLS_HEAD_BIAS.into(), Matrix::zeros(1, num_labels));
        Ok(self)
    }

    /// Drops the classification head, if any.
    pub fn without_cls_head(mut self) -> Self {
        self.config.num_labels = 0;
        self.tensors.shift_remove(CLS_HEAD_WEIGHT);
        self.tensors.shift_remove(CLS_HEAD_BIAS);
        self
    }

    /// Little-endian `f32` payload in canonical order.
    pub fn payload_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(self.param_count() * 4);
        for (name, m) in &self.tensors {
            push_f32_le(&mut out, m, name)?;
        }
        Ok(out)
    }

    /// SHA-256 of [`Self::payload_bytes`], hex encoded.
    pub fn payload_digest(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.payload_bytes()?)))
    }
}

pub(crate) fn push_f32_le(out: &mut Vec<u8>, m: &Matrix, name: &str) -> Result<()> {
    for &v in m.as_slice() {
        let narrow = v as f32;
        if !narrow.is_finite() {
            return Err(Error::NonFinite(format!("{name} (f32 storage)")));
        }
        out.extend_from_slice(&narrow.to_le_bytes());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> ModelConfig {
        ModelConfig {
            vocab_size: 12,
            d_model: 8,
            n_heads: 2,
            n_layers: 2,
            d_ff: 16,
            max_seq_len: 6,
            num_labels: 2,
            seed: 9,
        }
    }

    #[test]
    fn init_is_deterministic_and_seeded() {
        let a = init_weights(&config()).unwrap();
        let b = init_weights(&config()).unwrap();
        assert_eq!(a, b);
        let c = init_weights(&ModelConfig { seed: 10, ..config() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn shapes_follow_config() {
        let w = init_weights(&config()).unwrap();
        assert_eq!(w.get(&attention_weight(0, "query")).unwrap().shape(), (8, 8));
        assert_eq!(w.get("layers.1.ffn.up.weight").unwrap().shape(), (8, 16));
        assert_eq!(w.get(CLS_HEAD_WEIGHT).unwrap().shape(), (8, 2));
        assert!(w.get("layers.0.attention.query.bias").unwrap().as_slice().iter().all(|&v| v == 0.0));
        assert!(w.get("final_norm.gain").unwrap().as_slice().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn head_is_optional() {
        let w = init_weights(&ModelConfig { num_labels: 0, ..config() }).unwrap();
        assert!(!w.contains(CLS_HEAD_WEIGHT));
        let with = w.with_cls_head(3, 1).unwrap();
        assert_eq!(with.config().num_labels, 3);
        let names: Vec<_> = canonical_names(with.config()).into_iter().map(|(n, _)| n).collect();
        assert_eq!(with.names().collect::<Vec<_>>(), names);
    }

    #[test]
    fn from_parts_reports_offending_tensor() {
        let w = init_weights(&config()).unwrap();
        let mut tensors: IndexMap<String, Matrix> =
            w.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        tensors.insert("final_norm.gain".into(), Matrix::zeros(1, 3));
        let err = NamedWeights::from_parts(*w.config(), tensors).unwrap_err();
        assert!(err.to_string().contains("final_norm.gain"), "{err}");
    }
}
