use std::time::Instant;

use super::spec::{Mode, TrainReport, TrainSpec};
use super::{derive_seed, BatchPlan};
use crate::error::{Error, Result};
use crate::lexicon::{mask_instance, TrainingInstance};
use crate::model::{argmax, GradScope, Gradients, NamedWeights, Network, Vocabulary};
use crate::numerics::{adamw_step, lr_at_step, AdamWState, Matrix};

const EVAL_STREAM: u64 = u64::MAX;

pub(crate) fn encode_corpus(
    weights: &NamedWeights,
    vocab: &Vocabulary,
    corpus: &[TrainingInstance],
) -> Result<Vec<Vec<u32>>> {
    if corpus.is_empty() {
        return Err(Error::invalid("empty corpus"));
    }
    if vocab.len() != weights.config().vocab_size {
        return Err(Error::Incompatible(format!(
            "vocabulary has {} tokens, model expects {}",
            vocab.len(),
            weights.config().vocab_size
        )));
    }
    let max_len = weights.config().max_seq_len;
    Ok(corpus.iter().map(|inst| vocab.encode(&inst.tokens, max_len)).collect())
}

/// Dense gradients in `names` order; absent entries are zero.
pub(crate) fn ordered_grads(grads: &mut Gradients, weights: &NamedWeights, names: &[String]) -> Vec<Matrix> {
    names
        .iter()
        .map(|n| {
            grads.tensors.shift_remove(n).unwrap_or_else(|| {
                let (r, c) = weights.get(n).expect("name from weights").shape();
                Matrix::zeros(r, c)
            })
        })
        .collect()
}

/// Masked-LM training over every tensor except the classification head.
/// The loss is cross entropy over masked targets only, averaged per target.
pub fn train_mlm(
    model: &NamedWeights,
    vocab: &Vocabulary,
    corpus: &[TrainingInstance],
    spec: &TrainSpec,
) -> Result<(NamedWeights, TrainReport)> {
    if spec.mode != Mode::Mlm {
        return Err(Error::invalid(format!(
            "train_mlm called with mode {}",
            spec.mode.name()
        )));
    }
    spec.validate()?;
    let started = Instant::now();
    let encoded = encode_corpus(model, vocab, corpus)?;
    let vocab_size = model.config().vocab_size;
    let schedule = spec.schedule(encoded.len())?;
    let mut weights = model.clone();
    let names: Vec<String> = weights
        .names()
        .filter(|n| !n.starts_with("cls_head."))
        .map(str::to_string)
        .collect();
    let mut state = AdamWState::new(
        spec.optimizer,
        names.iter().map(|n| weights.get(n).expect("known").shape()),
    );
    let mut plan = BatchPlan::new(encoded.len(), spec.batch_size, spec.seed);
    let mut report = TrainReport::new("mlm", spec.seed, spec.digest());

    for step in 0..schedule.total_steps {
        let (batch, _) = plan.next_batch();
        let net = Network::new(&weights);
        let mut grads = Gradients::default();
        let mut loss = 0.0;
        let mut targets = 0usize;
        for &i in &batch {
            let masked = mask_instance(
                &encoded[i],
                vocab_size,
                spec.mask_rate,
                derive_seed(spec.seed, &[step, i as u64]),
            )?;
            let (l, _, g) = net.mlm_loss_and_grad(&masked.ids, &masked.targets, GradScope::Full)?;
            loss += l;
            targets += masked.targets.len();
            grads.merge(g);
        }
        let mean = loss / targets as f64;
        if !mean.is_finite() {
            return Err(Error::NonFinite(format!("masked-LM loss at step {step}")));
        }
        grads.scale(1.0 / targets as f64);
        let ordered = ordered_grads(&mut grads, &weights, &names);
        let lr = lr_at_step(&schedule, step)?;
        let mut params: Vec<&mut Matrix> = weights
            .iter_mut()
            .filter(|(n, _)| !n.starts_with("cls_head."))
            .map(|(_, m)| m)
            .collect();
        adamw_step(&mut params, &ordered.iter().collect::<Vec<_>>(), &mut state, lr)?;
        report.losses.push(mean);
    }
    report.steps = schedule.total_steps;
    report.masked_accuracy = Some(masked_token_accuracy(
        &weights,
        vocab,
        corpus,
        spec.mask_rate,
        spec.seed,
    )?);
    report.wall_clock = started.elapsed();
    Ok((weights, report))
}

/// Fraction of masked targets predicted correctly over the whole corpus,
/// with one fixed mask per instance derived from `seed`.
pub fn masked_token_accuracy(
    weights: &NamedWeights,
    vocab: &Vocabulary,
    corpus: &[TrainingInstance],
    rate: f64,
    seed: u64,
) -> Result<f64> {
    let encoded = encode_corpus(weights, vocab, corpus)?;
    let net = Network::new(weights);
    let (mut correct, mut total) = (0usize, 0usize);
    for (i, ids) in encoded.iter().enumerate() {
        let masked = mask_instance(
            ids,
            weights.config().vocab_size,
            rate,
            derive_seed(seed, &[EVAL_STREAM, i as u64]),
        )?;
        let trace = net.trace(&masked.ids)?;
        let positions: Vec<usize> = masked.targets.iter().map(|&(p, _)| p).collect();
        let logits = net.mlm_logits_at(&trace, &positions)?;
        for (r, &(_, original)) in masked.targets.iter().enumerate() {
            correct += (argmax(logits.row(r)) == original as usize) as usize;
        }
        total += masked.targets.len();
    }
    Ok(correct as f64 / total as f64)
}

/// Counts consecutive `window`-step blocks within the first `horizon`
/// losses whose mean is strictly below the previous block's mean.
/// Returns `(decreasing, compared)`.
pub fn loss_window_decreases(losses: &[f64], window: usize, horizon: usize) -> (usize, usize) {
    let usable = losses.len().min(horizon);
    if window == 0 {
        return (0, 0);
    }
    let means: Vec<f64> = losses[..usable]
        .chunks_exact(window)
        .map(|c| c.iter().sum::<f64>() / window as f64)
        .collect();
    let compared = means.len().saturating_sub(1);
    let decreasing = means.windows(2).filter(|w| w[1] < w[0]).count();
    (decreasing, compared)
}
