//! Classification fine-tuning: FT (every tensor), PI (adapters and head of a
//! merged model), and the Sem-Aug / Sem-CR paraphrase baselines.

use std::time::Instant;

use super::data::TaskExample;
use super::mlm::ordered_grads;
use super::paraphrase::Paraphraser;
use super::spec::{Mode, TrainReport, TrainSpec};
use super::{derive_seed, BatchPlan};
use crate::consistency::{PredictionRecord, PredictionSet, Suite};
use crate::error::{Error, Result};
use crate::merge::MergedModel;
use crate::model::{
    argmax, GradScope, Gradients, NamedWeights, Network, Vocabulary, CLS_HEAD_BIAS,
    CLS_HEAD_WEIGHT,
};
use crate::numerics::{
    adamw_step, cross_entropy_row_grad, js_grad_wrt_first, js_unchecked, lr_at_step,
    softmax_backward, softmax_in_place, AdamWState, Matrix,
};

/// Share of eligible words rewritten for the Sem-CR paraphrase branch.
pub const SEMCR_PARAPHRASE_RATE: f64 = 0.15;

const HEAD_STREAM: u64 = 0x4ead;
const PARAPHRASE_STREAM: u64 = 0x9a7a;

/// A model as fine-tuning sees it.
#[derive(Debug, Clone, PartialEq)]
pub enum Artifact {
    Plain(NamedWeights),
    Merged(MergedModel),
}

impl Artifact {
    pub fn base(&self) -> &NamedWeights {
        match self {
            Artifact::Plain(w) => w,
            Artifact::Merged(m) => m.base(),
        }
    }

    pub fn network(&self) -> Network<'_> {
        match self {
            Artifact::Plain(w) => Network::new(w),
            Artifact::Merged(m) => Network::with_adapters(m.base(), m.adapters()),
        }
    }

    fn head_labels(&self) -> usize {
        self.base().config().num_labels
    }

    fn install_head(&mut self, num_labels: usize, seed: u64) -> Result<()> {
        match self {
            Artifact::Plain(w) => *w = w.clone().with_cls_head(num_labels, seed)?,
            Artifact::Merged(m) => m.set_cls_head(num_labels, seed)?,
        }
        Ok(())
    }
}

/// Predicted label and the full predictive distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub probs: Vec<f64>,
}

/// Label alphabet size: one past the largest label, at least two.
pub fn num_labels_of<'a>(examples: impl IntoIterator<Item = &'a TaskExample>) -> usize {
    examples
        .into_iter()
        .map(|e| e.label + 1)
        .max()
        .unwrap_or(0)
        .max(2)
}

fn encode(vocab: &Vocabulary, a: &[String], b: Option<&[String]>, max_len: usize) -> Result<Vec<u32>> {
    match b {
        Some(b) if max_len >= 3 => Ok(vocab.encode_pair(a, b, max_len)),
        Some(_) => Err(Error::invalid("max_seq_len too short for a segment pair")),
        None => Ok(vocab.encode(a, max_len)),
    }
}

fn encode_example(vocab: &Vocabulary, ex: &TaskExample, max_len: usize) -> Result<Vec<u32>> {
    encode(vocab, &ex.tokens_a, ex.tokens_b.as_deref(), max_len)
}

fn check_vocab(artifact: &Artifact, vocab: &Vocabulary) -> Result<()> {
    let expected = artifact.base().config().vocab_size;
    if vocab.len() != expected {
        return Err(Error::Incompatible(format!(
            "vocabulary has {} tokens, model expects {expected}",
            vocab.len()
        )));
    }
    Ok(())
}

pub fn predict(artifact: &Artifact, vocab: &Vocabulary, examples: &[TaskExample]) -> Result<Vec<Prediction>> {
    check_vocab(artifact, vocab)?;
    let net = artifact.network();
    let max_len = artifact.base().config().max_seq_len;
    examples
        .iter()
        .map(|ex| {
            let mut probs = net.forward_cls(&encode_example(vocab, ex, max_len)?)?;
            softmax_in_place(&mut probs);
            Ok(Prediction {
                label: argmax(&probs),
                probs,
            })
        })
        .collect()
}

/// Predictions for every suite instance, with distributions.
pub fn predict_suite(artifact: &Artifact, vocab: &Vocabulary, suite: &Suite) -> Result<PredictionSet> {
    let examples: Vec<TaskExample> = suite
        .instances
        .iter()
        .map(|inst| TaskExample {
            tokens_a: inst.tokens_a.clone(),
            tokens_b: inst.tokens_b.clone(),
            label: inst.label,
        })
        .collect();
    let preds = predict(artifact, vocab, &examples)?;
    PredictionSet::new(
        suite
            .instances
            .iter()
            .zip(preds)
            .map(|(inst, p)| PredictionRecord {
                id: inst.id.clone(),
                gold: inst.label,
                predicted: p.label,
                distribution: Some(p.probs),
            })
            .collect(),
    )
}

/// Fraction of `examples` whose label matches the prediction.
pub fn accuracy_of(preds: &[Prediction], examples: &[TaskExample]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let correct = preds
        .iter()
        .zip(examples)
        .filter(|(p, e)| p.label == e.label)
        .count();
    correct as f64 / examples.len() as f64
}

/// Loss `CE(o, y) + λ·JS(softmax o ‖ softmax p)` and its gradients with
/// respect to both logit vectors.
pub(crate) fn semcr_logit_grads(
    original: &[f64],
    paraphrased: &[f64],
    label: usize,
    lambda: f64,
) -> (f64, Vec<f64>, Vec<f64>) {
    let (ce, mut d_o) = cross_entropy_row_grad(original, label);
    let mut p = original.to_vec();
    let mut q = paraphrased.to_vec();
    softmax_in_place(&mut p);
    softmax_in_place(&mut q);
    let js = js_unchecked(&p, &q);
    let d_p = softmax_backward(&p, &js_grad_wrt_first(&p, &q));
    let d_q = softmax_backward(&q, &js_grad_wrt_first(&q, &p));
    for (d, g) in d_o.iter_mut().zip(&d_p) {
        *d += lambda * g;
    }
    let d_para = d_q.iter().map(|g| lambda * g).collect();
    (ce + lambda * js, d_o, d_para)
}

struct Item {
    ids: Vec<u32>,
    label: usize,
    paraphrase: Option<Vec<u32>>,
}

fn paraphrase_example(
    p: &dyn Paraphraser,
    ex: &TaskExample,
    rate: f64,
    seed: u64,
    index: usize,
) -> Result<TaskExample> {
    let a = p.paraphrase(&ex.tokens_a, rate, derive_seed(seed, &[PARAPHRASE_STREAM, index as u64, 0]))?;
    let b = match &ex.tokens_b {
        Some(b) => Some(p.paraphrase(b, rate, derive_seed(seed, &[PARAPHRASE_STREAM, index as u64, 1]))?),
        None => None,
    };
    Ok(TaskExample {
        tokens_a: a,
        tokens_b: b,
        label: ex.label,
    })
}

/// Paraphrases are drawn once per run from a stream separate from batching,
/// so `λ = 0` leaves the batch order untouched.
fn build_items(
    vocab: &Vocabulary,
    train: &[TaskExample],
    spec: &TrainSpec,
    max_len: usize,
    paraphraser: Option<&dyn Paraphraser>,
) -> Result<Vec<Item>> {
    let mut items = Vec::with_capacity(train.len());
    for (i, ex) in train.iter().enumerate() {
        let paraphrase = match (spec.mode, paraphraser) {
            (Mode::SemCr { lambda }, Some(p)) if lambda > 0.0 => {
                let para = paraphrase_example(p, ex, SEMCR_PARAPHRASE_RATE, spec.seed, i)?;
                Some(encode_example(vocab, &para, max_len)?)
            }
            _ => None,
        };
        items.push(Item {
            ids: encode_example(vocab, ex, max_len)?,
            label: ex.label,
            paraphrase,
        });
    }
    if let (Mode::SemAug { rate }, Some(p)) = (spec.mode, paraphraser) {
        for (i, ex) in train.iter().enumerate() {
            let para = paraphrase_example(p, ex, rate, spec.seed, i)?;
            items.push(Item {
                ids: encode_example(vocab, &para, max_len)?,
                label: ex.label,
                paraphrase: None,
            });
        }
    }
    Ok(items)
}

fn item_loss(net: &Network<'_>, item: &Item, lambda: f64, scope: GradScope) -> Result<(f64, Gradients)> {
    let Some(para) = &item.paraphrase else {
        let (loss, _, grads) = net.cls_loss_and_grad(&item.ids, item.label, scope)?;
        return Ok((loss, grads));
    };
    let trace_o = net.trace(&item.ids)?;
    let trace_p = net.trace(para)?;
    let logits_o = net.cls_logits(&trace_o)?;
    let logits_p = net.cls_logits(&trace_p)?;
    if item.label >= logits_o.len() {
        return Err(Error::invalid(format!("label {} outside head", item.label)));
    }
    let (loss, d_o, d_p) = semcr_logit_grads(&logits_o, &logits_p, item.label, lambda);
    let mut grads = Gradients::default();
    for (trace, d) in [(&trace_o, d_o), (&trace_p, d_p)] {
        let d_hidden = net.cls_head_backward(trace, &d, scope, &mut grads)?;
        net.backward(trace, &d_hidden, scope, &mut grads)?;
    }
    Ok((loss, grads))
}

fn pi_grads(grads: &mut Gradients, model: &MergedModel) -> Vec<Matrix> {
    let mut out = Vec::with_capacity(2 * model.adapters().len() + 2);
    for (name, ad) in model.adapters() {
        let (ga, gb) = grads.adapters.shift_remove(name).unwrap_or_else(|| {
            (
                Matrix::zeros(ad.a.rows(), ad.a.cols()),
                Matrix::zeros(ad.b.rows(), ad.b.cols()),
            )
        });
        out.push(ga);
        out.push(gb);
    }
    let names = [CLS_HEAD_WEIGHT.to_string(), CLS_HEAD_BIAS.to_string()];
    out.extend(ordered_grads(grads, model.base(), &names));
    out
}

/// Trains a classifier and returns the weights of the epoch with the best
/// validation accuracy (earliest on ties; the final weights when `valid` is
/// empty).
///
/// FT, Sem-Aug and Sem-CR update every tensor; a merged input is folded
/// first. PI needs a merged model and updates only its adapters and head.
/// A classification head is installed when the model has none, or too few
/// labels for the data.
pub fn finetune(
    artifact: Artifact,
    vocab: &Vocabulary,
    train: &[TaskExample],
    valid: &[TaskExample],
    spec: &TrainSpec,
    paraphraser: Option<&dyn Paraphraser>,
) -> Result<(Artifact, TrainReport)> {
    spec.validate()?;
    let started = Instant::now();
    if train.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    check_vocab(&artifact, vocab)?;
    let mut artifact = match (spec.mode, artifact) {
        (Mode::Mlm, _) => return Err(Error::invalid("masked-LM mode is not a fine-tuning mode")),
        (Mode::Pi, Artifact::Plain(_)) => {
            return Err(Error::invalid(
                "parameter integration needs a merged model with adapters",
            ))
        }
        (Mode::Pi, merged) => merged,
        (_, Artifact::Merged(m)) => Artifact::Plain(m.fold()?),
        (_, plain) => plain,
    };
    let lambda = match spec.mode {
        Mode::SemCr { lambda } => lambda,
        _ => 0.0,
    };
    if matches!(spec.mode, Mode::SemCr { .. } | Mode::SemAug { .. }) && paraphraser.is_none() {
        return Err(Error::invalid(format!("{} needs a paraphraser", spec.mode.name())));
    }
    let labels = num_labels_of(train.iter().chain(valid));
    if artifact.head_labels() < labels {
        artifact.install_head(labels, derive_seed(spec.seed, &[HEAD_STREAM]))?;
    }

    let max_len = artifact.base().config().max_seq_len;
    let items = build_items(vocab, train, spec, max_len, paraphraser)?;
    let schedule = spec.schedule(items.len())?;
    let scope = if spec.mode == Mode::Pi {
        GradScope::AdaptersAndHead
    } else {
        GradScope::Full
    };
    let dense_names: Vec<String> = artifact.base().names().map(str::to_string).collect();
    let shapes: Vec<(usize, usize)> = match &artifact {
        Artifact::Plain(w) => w.iter().map(|(_, m)| m.shape()).collect(),
        Artifact::Merged(m) => {
            let mut s: Vec<_> = m
                .adapters()
                .values()
                .flat_map(|a| [a.a.shape(), a.b.shape()])
                .collect();
            s.push(m.base().get(CLS_HEAD_WEIGHT)?.shape());
            s.push(m.base().get(CLS_HEAD_BIAS)?.shape());
            s
        }
    };
    let mut state = AdamWState::new(spec.optimizer, shapes);
    let mut plan = BatchPlan::new(items.len(), spec.batch_size, spec.seed);
    let mut report = TrainReport::new(spec.mode.name(), spec.seed, spec.digest());
    let mut best: Option<(f64, Artifact)> = None;
    let mut epoch = 0u64;

    for step in 0..schedule.total_steps {
        let (batch, epoch_end) = plan.next_batch();
        let mut grads = Gradients::default();
        let mut loss = 0.0;
        {
            let net = artifact.network();
            for &i in &batch {
                let (l, g) = item_loss(&net, &items[i], lambda, scope)?;
                loss += l;
                grads.merge(g);
            }
        }
        let mean = loss / batch.len() as f64;
        if !mean.is_finite() {
            return Err(Error::NonFinite(format!("training loss at step {step}")));
        }
        grads.scale(1.0 / batch.len() as f64);
        let lr = lr_at_step(&schedule, step)?;
        match &mut artifact {
            Artifact::Plain(w) => {
                let ordered = ordered_grads(&mut grads, w, &dense_names);
                let mut params: Vec<&mut Matrix> = w.iter_mut().map(|(_, m)| m).collect();
                adamw_step(&mut params, &ordered.iter().collect::<Vec<_>>(), &mut state, lr)?;
            }
            Artifact::Merged(m) => {
                let ordered = pi_grads(&mut grads, m);
                let mut params = m.trainable_mut()?;
                adamw_step(&mut params, &ordered.iter().collect::<Vec<_>>(), &mut state, lr)?;
            }
        }
        report.losses.push(mean);

        let last = step + 1 == schedule.total_steps;
        if (epoch_end || last) && !valid.is_empty() {
            let acc = accuracy_of(&predict(&artifact, vocab, valid)?, valid);
            report.epoch_validation.push(acc);
            if best.as_ref().is_none_or(|(b, _)| acc > *b) {
                best = Some((acc, artifact.clone()));
                report.best_epoch = Some(epoch);
            }
        }
        if epoch_end {
            epoch += 1;
        }
    }
    report.steps = schedule.total_steps;
    if let Some((acc, kept)) = best {
        report.validation_accuracy = Some(acc);
        artifact = kept;
    }
    report.wall_clock = started.elapsed();
    Ok((artifact, report))
}

/// One Sem-CR run per λ; the best validation accuracy wins, earliest λ on ties.
#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub reports: Vec<(f64, TrainReport)>,
    pub best: usize,
    pub artifact: Artifact,
}

pub fn semcr_grid(
    artifact: &Artifact,
    vocab: &Vocabulary,
    train: &[TaskExample],
    valid: &[TaskExample],
    template: &TrainSpec,
    lambdas: &[f64],
    paraphraser: &dyn Paraphraser,
) -> Result<GridOutcome> {
    if lambdas.is_empty() || valid.is_empty() {
        return Err(Error::invalid("a lambda grid needs lambdas and validation data"));
    }
    let mut reports = Vec::with_capacity(lambdas.len());
    let mut best: Option<(usize, f64, Artifact)> = None;
    for (i, &lambda) in lambdas.iter().enumerate() {
        let spec = TrainSpec {
            mode: Mode::SemCr { lambda },
            ..template.clone()
        };
        let (trained, report) = finetune(artifact.clone(), vocab, train, valid, &spec, Some(paraphraser))?;
        let acc = report.validation_accuracy.unwrap_or(0.0);
        if best.as_ref().is_none_or(|(_, b, _)| acc > *b) {
            best = Some((i, acc, trained));
        }
        reports.push((lambda, report));
    }
    let (best, _, artifact) = best.expect("grid is nonempty");
    Ok(GridOutcome {
        reports,
        best,
        artifact,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, relative_error};

    #[test]
    fn semcr_logit_gradients_match_finite_differences() {
        let o = vec![0.3, -1.2, 0.8];
        let p = vec![-0.4, 0.9, 0.1];
        let (_, d_o, d_p) = semcr_logit_grads(&o, &p, 2, 0.7);
        let params = [
            Matrix::row_vector(o.clone()).unwrap(),
            Matrix::row_vector(p.clone()).unwrap(),
        ];
        let num = finite_diff_grad(
            |m| semcr_logit_grads(m[0].as_slice(), m[1].as_slice(), 2, 0.7).0,
            &params,
            1e-5,
        );
        let a_o = Matrix::row_vector(d_o).unwrap();
        let a_p = Matrix::row_vector(d_p).unwrap();
        assert!(relative_error(&a_o, &num[0], 1e-8) < 1e-6);
        assert!(relative_error(&a_p, &num[1], 1e-8) < 1e-6);
    }

    #[test]
    fn semcr_loss_bounds_cross_entropy() {
        let o = [0.3, -1.2];
        let (ce, _) = cross_entropy_row_grad(&o, 0);
        let (with, _, _) = semcr_logit_grads(&o, &[1.0, 1.0], 0, 0.5);
        let (zero, _, d_p) = semcr_logit_grads(&o, &[1.0, 1.0], 0, 0.0);
        assert!(with >= ce);
        assert_eq!(zero, ce);
        assert!(d_p.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn label_alphabet() {
        let ex = |label| TaskExample {
            tokens_a: vec!["a".into()],
            tokens_b: None,
            label,
        };
        assert_eq!(num_labels_of(&[ex(0)]), 2);
        assert_eq!(num_labels_of(&[ex(0), ex(4)]), 5);
    }
}
