use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Encoder hyperparameters. `num_labels == 0` means no classification head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    #[serde(default)]
    pub num_labels: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_layers", self.n_layers),
            ("d_ff", self.d_ff),
            ("max_seq_len", self.max_seq_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::invalid(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.max_seq_len < 2 {
            return Err(Error::invalid("max_seq_len must be at least 2"));
        }
        if self.vocab_size < super::vocab::RESERVED.len() {
            return Err(Error::invalid("vocab_size smaller than the reserved set"));
        }
        // Keep tensor allocations bounded for configs read from untrusted files.
        let budget: u128 = 1 << 31;
        let largest = [
            self.vocab_size as u128 * self.d_model as u128,
            self.d_model as u128 * self.d_ff as u128,
            self.max_seq_len as u128 * self.d_model as u128,
            self.d_model as u128 * self.num_labels as u128,
        ];
        if largest.iter().any(|&n| n > budget) || self.n_layers > 4096 {
            return Err(Error::invalid("model dimensions exceed supported size"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Same architecture and vocabulary size; seeds may differ.
    pub fn same_architecture(&self, other: &ModelConfig) -> bool {
        ModelConfig { seed: 0, ..*self } == ModelConfig { seed: 0, ..*other }
    }
}
