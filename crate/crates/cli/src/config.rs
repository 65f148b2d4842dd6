//! Run configuration: a TOML document whose sections mirror the model, the
//! training spec, merge parameters and data paths. Unknown keys are errors.

use std::path::{Path, PathBuf};

use crm_core::model::ModelConfig;
use crm_core::numerics::AdamWConfig;
use crm_core::training::{Budget, Mode, TrainSpec};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const DEFAULT_RANK: usize = 8;
pub const DEFAULT_ALPHA: f64 = 16.0;
pub const DEFAULT_MLM_STEPS: u64 = 10_000;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub merge: MergeSection,
    #[serde(default)]
    pub data: DataSection,
}

/// Architecture of a model trained from scratch. The vocabulary size comes
/// from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            d_model: 32,
            n_heads: 4,
            n_layers: 2,
            d_ff: 128,
            max_seq_len: 64,
        }
    }
}

impl ModelSection {
    pub fn to_config(&self, vocab_size: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            vocab_size,
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_layers: self.n_layers,
            d_ff: self.d_ff,
            max_seq_len: self.max_seq_len,
            num_labels: 0,
            seed,
        }
    }
}

/// Overrides on top of the per-mode defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub steps: Option<u64>,
    pub epochs: Option<u64>,
    pub batch_size: Option<usize>,
    pub peak_lr: Option<f64>,
    pub warmup_ratio: Option<f64>,
    pub mask_rate: Option<f64>,
    pub lambda: Option<f64>,
    pub rate: Option<f64>,
    pub optimizer: Option<AdamWConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergeSection {
    pub rank: usize,
    pub alpha: f64,
}

impl Default for MergeSection {
    fn default() -> Self {
        Self {
            rank: DEFAULT_RANK,
            alpha: DEFAULT_ALPHA,
        }
    }
}

/// Input files. Relative paths resolve against the config file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Starting checkpoint; required by every mode except `mlm`.
    pub init: Option<PathBuf>,
    /// Masked-LM corpus (JSON lines of `{"tokens": [...]}`).
    pub corpus: Option<PathBuf>,
    /// Extra corpora whose tokens join the vocabulary of a fresh model.
    #[serde(default)]
    pub vocab_corpora: Vec<PathBuf>,
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    /// Synonym table for `semcr` and `semaug`.
    pub synonyms: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {}", e.message())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        if let Some(dir) = path.parent() {
            cfg.data.resolve_against(dir);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configs serialize")
    }

    /// The training spec for `mode`: mode defaults, then config values.
    pub fn train_spec(&self, mode: Mode) -> Result<TrainSpec, CliError> {
        let t = &self.train;
        let seed = self.seed.unwrap_or(0);
        let mut spec = match mode {
            Mode::Mlm => TrainSpec::mlm_defaults(DEFAULT_MLM_STEPS, seed),
            other => TrainSpec::finetune_defaults(other, seed),
        };
        spec.budget = match (t.steps, t.epochs) {
            (Some(_), Some(_)) => {
                return Err(CliError::Usage(
                    "train.steps and train.epochs are mutually exclusive".into(),
                ))
            }
            (Some(s), None) => Budget::Steps(s),
            (None, Some(e)) => Budget::Epochs(e),
            (None, None) => spec.budget,
        };
        if let Some(v) = t.batch_size {
            spec.batch_size = v;
        }
        if let Some(v) = t.peak_lr {
            spec.peak_lr = v;
        }
        if let Some(v) = t.warmup_ratio {
            spec.warmup_ratio = v;
        }
        if let Some(v) = t.mask_rate {
            spec.mask_rate = v;
        }
        if let Some(v) = t.optimizer {
            spec.optimizer = v;
        }
        spec.validate().map_err(|e| CliError::Usage(format!("train: {e}")))?;
        Ok(spec)
    }
}

impl DataSection {
    fn resolve_against(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        for p in [
            &mut self.init,
            &mut self.corpus,
            &mut self.train,
            &mut self.valid,
            &mut self.synonyms,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        self.vocab_corpora.iter_mut().for_each(fix);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::parse("[train]\nbatchsize = 4\n").unwrap_err();
        assert!(err.to_string().contains("batchsize"), "{err}");
        assert!(RunConfig::parse("sed = 1\n").is_err());
    }

    #[test]
    fn overrides_apply_over_mode_defaults() {
        let cfg = RunConfig::parse("seed = 3\n[train]\nepochs = 2\npeak_lr = 0.01\n").unwrap();
        let spec = cfg.train_spec(Mode::Pi).unwrap();
        assert_eq!(spec.budget, Budget::Epochs(2));
        assert_eq!(spec.peak_lr, 0.01);
        assert_eq!(spec.seed, 3);
        assert_eq!(spec.batch_size, 32);
        assert!(RunConfig::parse("[train]\nsteps = 1\nepochs = 1\n")
            .unwrap()
            .train_spec(Mode::Ft)
            .is_err());
    }

    #[test]
    fn echo_round_trips() {
        let cfg = RunConfig::parse("[data]\ncorpus = \"c.jsonl\"\n[merge]\nrank = 4\nalpha = 8.0\n").unwrap();
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }
}
