//! Optimization loops: masked-LM intermediate training, the skip-gram
//! baseline, and classification fine-tuning in its FT, PI, Sem-CR and
//! Sem-Aug variants.

mod data;
mod finetune;
mod mlm;
mod paraphrase;
mod skipgram;
mod spec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use data::{parse_task_data_bytes, parse_task_data_str, write_task_data, TaskExample};
pub use finetune::{
    accuracy_of, finetune, num_labels_of, predict, predict_suite, semcr_grid, Artifact, GridOutcome, Prediction,
};
pub use mlm::{loss_window_decreases, masked_token_accuracy, train_mlm};
pub use paraphrase::{paraphrase_substitute, Paraphraser, SynonymTable};
pub use skipgram::{
    cosine_similarity, skipgram_grad, skipgram_loss, train_skipgram, unigram_noise, window_pairs,
    SgdSpec, SkipGramModel, SkipGramSpec,
};
pub use spec::{Budget, Mode, TrainReport, TrainSpec};

/// Deterministic sub-seed for `parts` under `base` (splitmix64 chaining).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut z = base;
    for &p in parts.iter().chain(std::iter::once(&0x5eed)) {
        z = z.wrapping_add(p).wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

/// Reshuffled-per-epoch minibatch order.
pub(crate) struct BatchPlan {
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchPlan {
    pub(crate) fn new(n: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            order: (0..n).collect(),
            batch_size,
            pos: n,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// The next batch and whether it closes an epoch.
    pub(crate) fn next_batch(&mut self) -> (Vec<usize>, bool) {
        if self.pos >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        (batch, end == self.order.len())
    }
}
