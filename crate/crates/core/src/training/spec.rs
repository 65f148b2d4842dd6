use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lexicon::DEFAULT_MASK_RATE;
use crate::numerics::{AdamWConfig, LrSchedule};

/// Training objective. `SemCr` carries λ, `SemAug` the substitution rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Mlm,
    Ft,
    Pi,
    SemCr { lambda: f64 },
    SemAug { rate: f64 },
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Mlm => "mlm",
            Mode::Ft => "ft",
            Mode::Pi => "pi",
            Mode::SemCr { .. } => "semcr",
            Mode::SemAug { .. } => "semaug",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Budget {
    Steps(u64),
    Epochs(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    pub mode: Mode,
    pub budget: Budget,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_ratio: f64,
    #[serde(default)]
    pub optimizer: AdamWConfig,
    pub seed: u64,
    /// Masked-LM selection rate (MLM only).
    #[serde(default = "default_mask_rate")]
    pub mask_rate: f64,
}

fn default_mask_rate() -> f64 {
    DEFAULT_MASK_RATE
}

impl TrainSpec {
    /// Fine-tuning defaults: 15 epochs, batch 32, warmup 0.06; lr 2e-5 for
    /// full fine-tuning and 5e-4 when only adapters train.
    pub fn finetune_defaults(mode: Mode, seed: u64) -> Self {
        let peak_lr = if mode == Mode::Pi { 5e-4 } else { 2e-5 };
        Self {
            mode,
            budget: Budget::Epochs(15),
            batch_size: 32,
            peak_lr,
            warmup_ratio: 0.06,
            optimizer: AdamWConfig::default(),
            seed,
            mask_rate: DEFAULT_MASK_RATE,
        }
    }

    /// Intermediate-training defaults: lr 1e-6 and the default optimizer.
    pub fn mlm_defaults(steps: u64, seed: u64) -> Self {
        Self {
            mode: Mode::Mlm,
            budget: Budget::Steps(steps),
            batch_size: 32,
            peak_lr: 1e-6,
            warmup_ratio: 0.06,
            optimizer: AdamWConfig::default(),
            seed,
            mask_rate: DEFAULT_MASK_RATE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        match self.budget {
            Budget::Steps(0) | Budget::Epochs(0) => {
                return Err(Error::invalid("training budget must be positive"))
            }
            _ => {}
        }
        LrSchedule::new(self.peak_lr, 1, self.warmup_ratio)?;
        self.optimizer.validate()?;
        match self.mode {
            Mode::SemCr { lambda } if !(lambda >= 0.0 && lambda.is_finite()) => {
                return Err(Error::invalid(format!("lambda {lambda} must be >= 0")))
            }
            Mode::SemAug { rate } if !(rate > 0.0 && rate < 1.0) => {
                return Err(Error::invalid(format!(
                    "augmentation rate {rate} outside (0, 1)"
                )))
            }
            Mode::Mlm if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) => {
                return Err(Error::invalid(format!(
                    "mask_rate {} outside (0, 1)",
                    self.mask_rate
                )))
            }
            _ => {}
        }
        Ok(())
    }

    /// Number of optimizer steps over a dataset of `n` examples.
    pub fn total_steps(&self, n: usize) -> u64 {
        match self.budget {
            Budget::Steps(s) => s,
            Budget::Epochs(e) => e * steps_per_epoch(n, self.batch_size),
        }
    }

    pub fn schedule(&self, n: usize) -> Result<LrSchedule> {
        LrSchedule::new(self.peak_lr, self.total_steps(n), self.warmup_ratio)
    }

    /// SHA-256 over the canonical JSON of the spec.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(Sha256::digest(json))
    }
}

pub(crate) fn steps_per_epoch(n: usize, batch_size: usize) -> u64 {
    n.div_ceil(batch_size) as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub mode: String,
    pub seed: u64,
    pub config_digest: String,
    pub steps: u64,
    /// Mean loss of every executed step.
    pub losses: Vec<f64>,
    pub masked_accuracy: Option<f64>,
    pub validation_accuracy: Option<f64>,
    pub epoch_validation: Vec<f64>,
    /// Zero-based epoch whose weights were kept.
    pub best_epoch: Option<u64>,
    /// Not serialized, so reports of identical runs are byte-identical.
    #[serde(skip)]
    pub wall_clock: Duration,
}

impl TrainReport {
    pub(crate) fn new(mode: &str, spec_seed: u64, digest: String) -> Self {
        Self {
            mode: mode.to_string(),
            seed: spec_seed,
            config_digest: digest,
            steps: 0,
            losses: Vec::new(),
            masked_accuracy: None,
            validation_accuracy: None,
            epoch_validation: Vec::new(),
            best_epoch: None,
            wall_clock: Duration::ZERO,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_serializes_with_parameters() {
        let json = serde_json::to_string(&Mode::SemCr { lambda: 0.5 }).unwrap();
        assert_eq!(json, r#"{"semcr":{"lambda":0.5}}"#);
        assert_eq!(serde_json::to_string(&Mode::Pi).unwrap(), r#""pi""#);
    }

    #[test]
    fn validation_rejects_bad_specs() {
        let ok = TrainSpec::finetune_defaults(Mode::Ft, 1);
        ok.validate().unwrap();
        assert!(TrainSpec { batch_size: 0, ..ok.clone() }.validate().is_err());
        assert!(TrainSpec { mode: Mode::SemAug { rate: 1.0 }, ..ok.clone() }.validate().is_err());
        assert!(TrainSpec { mode: Mode::SemCr { lambda: -1.0 }, ..ok.clone() }.validate().is_err());
        assert!(TrainSpec { budget: Budget::Epochs(0), ..ok }.validate().is_err());
    }

    #[test]
    fn epochs_round_up_partial_batches() {
        let spec = TrainSpec { batch_size: 4, budget: Budget::Epochs(3), ..TrainSpec::finetune_defaults(Mode::Ft, 0) };
        assert_eq!(spec.total_steps(10), 9);
        assert_eq!(TrainSpec::mlm_defaults(7, 0).total_steps(10), 7);
    }

    #[test]
    fn digest_tracks_content() {
        let a = TrainSpec::finetune_defaults(Mode::Ft, 1);
        let b = TrainSpec { seed: 2, ..a.clone() };
        assert_eq!(a.digest(), a.clone().digest());
        assert_ne!(a.digest(), b.digest());
    }
}
