//! Skip-gram word vectors with negative sampling, trained by plain SGD.

use std::time::Instant;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::spec::TrainReport;
use crate::error::{Error, Result};
use crate::numerics::{log_sigmoid, sigmoid, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkipGramSpec {
    /// Context half-width.
    pub window: usize,
    /// Noise draws per positive pair.
    pub negatives: usize,
    pub dim: usize,
    /// Noise distribution over the vocabulary.
    pub noise: Vec<f64>,
}

impl SkipGramSpec {
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if self.window == 0 || self.dim == 0 {
            return Err(Error::invalid("window and dim must be positive"));
        }
        if self.noise.len() != vocab_size {
            return Err(Error::invalid(format!(
                "noise distribution has {} entries for {vocab_size} words",
                self.noise.len()
            )));
        }
        let sum: f64 = self.noise.iter().sum();
        if self.noise.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "noise distribution must be nonnegative and sum to 1 (sum {sum})"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdSpec {
    pub epochs: u64,
    pub lr: f64,
    pub seed: u64,
}

/// Center (`w`) and context (`t`) tables, one row per word.
#[derive(Debug, Clone, PartialEq)]
pub struct SkipGramModel {
    pub center: Matrix,
    pub context: Matrix,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_dims(w: &[f64], t: &[f64], negatives: &[&[f64]]) -> Result<()> {
    if t.len() != w.len() || negatives.iter().any(|n| n.len() != w.len()) {
        return Err(Error::shape(
            "skipgram_loss",
            format!("center has dimension {}, other vectors differ", w.len()),
        ));
    }
    Ok(())
}

/// `-(log σ(w·t) + Σ log σ(-w·t'))`.
pub fn skipgram_loss(w: &[f64], t: &[f64], negatives: &[&[f64]]) -> Result<f64> {
    check_dims(w, t, negatives)?;
    let mut objective = log_sigmoid(dot(w, t));
    for n in negatives {
        objective += log_sigmoid(-dot(w, n));
    }
    Ok(-objective)
}

/// Loss and gradients with respect to `w`, `t` and each negative.
pub fn skipgram_grad(
    w: &[f64],
    t: &[f64],
    negatives: &[&[f64]],
) -> Result<(f64, Vec<f64>, Vec<f64>, Vec<Vec<f64>>)> {
    let loss = skipgram_loss(w, t, negatives)?;
    let g_pos = sigmoid(dot(w, t)) - 1.0;
    let mut dw: Vec<f64> = t.iter().map(|v| g_pos * v).collect();
    let dt: Vec<f64> = w.iter().map(|v| g_pos * v).collect();
    let mut dn = Vec::with_capacity(negatives.len());
    for n in negatives {
        let g = sigmoid(dot(w, n));
        for (d, v) in dw.iter_mut().zip(n.iter()) {
            *d += g * v;
        }
        dn.push(w.iter().map(|v| g * v).collect());
    }
    Ok((loss, dw, dt, dn))
}

/// `(center, context)` position pairs within `window` of each other.
pub fn window_pairs(len: usize, window: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..len {
        let lo = i.saturating_sub(window);
        let hi = (i + window).min(len.saturating_sub(1));
        for j in lo..=hi {
            if j != i {
                out.push((i, j));
            }
        }
    }
    out
}

/// Relative frequency of each id in the corpus.
pub fn unigram_noise(corpus: &[Vec<u32>], vocab_size: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0.0; vocab_size];
    for s in corpus {
        for &id in s {
            let slot = counts
                .get_mut(id as usize)
                .ok_or_else(|| Error::invalid(format!("id {id} outside vocabulary")))?;
            *slot += 1.0;
        }
    }
    let total: f64 = counts.iter().sum();
    if total == 0.0 {
        return Err(Error::invalid("empty corpus"));
    }
    Ok(counts.into_iter().map(|c| c / total).collect())
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// One step per sentence: every window pair, each with fresh noise draws,
/// updated immediately. The recorded loss is the sentence mean.
pub fn train_skipgram(
    corpus: &[Vec<u32>],
    vocab_size: usize,
    spec: &SkipGramSpec,
    sgd: &SgdSpec,
) -> Result<(SkipGramModel, TrainReport)> {
    spec.validate(vocab_size)?;
    if corpus.is_empty() {
        return Err(Error::invalid("empty corpus"));
    }
    if corpus.iter().flatten().any(|&id| id as usize >= vocab_size) {
        return Err(Error::invalid("corpus id outside vocabulary"));
    }
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(sgd.seed);
    let bound = 0.5 / spec.dim as f64;
    let data: Vec<f64> = (0..vocab_size * spec.dim)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    let mut model = SkipGramModel {
        center: Matrix::from_vec(vocab_size, spec.dim, data)?,
        context: Matrix::zeros(vocab_size, spec.dim),
    };
    let noise = WeightedIndex::new(&spec.noise)
        .map_err(|e| Error::invalid(format!("noise distribution: {e}")))?;
    let digest = {
        let json = serde_json::to_vec(&(spec, sgd)).expect("specs serialize");
        hex::encode(Sha256::digest(json))
    };
    let mut report = TrainReport::new("skipgram", sgd.seed, digest);
    let mut order: Vec<usize> = (0..corpus.len()).collect();

    for _ in 0..sgd.epochs {
        order.shuffle(&mut rng);
        for &s in &order {
            let sentence = &corpus[s];
            let pairs = window_pairs(sentence.len(), spec.window);
            if pairs.is_empty() {
                continue;
            }
            let mut total = 0.0;
            for &(i, j) in &pairs {
                let (c, o) = (sentence[i] as usize, sentence[j] as usize);
                let negs: Vec<usize> = (0..spec.negatives).map(|_| noise.sample(&mut rng)).collect();
                let w = model.center.row(c).to_vec();
                let t = model.context.row(o).to_vec();
                let neg_vecs: Vec<Vec<f64>> = negs.iter().map(|&n| model.context.row(n).to_vec()).collect();
                let neg_refs: Vec<&[f64]> = neg_vecs.iter().map(Vec::as_slice).collect();
                let (loss, dw, dt, dn) = skipgram_grad(&w, &t, &neg_refs)?;
                total += loss;
                for (p, g) in model.center.row_mut(c).iter_mut().zip(&dw) {
                    *p -= sgd.lr * g;
                }
                for (p, g) in model.context.row_mut(o).iter_mut().zip(&dt) {
                    *p -= sgd.lr * g;
                }
                for (&n, g) in negs.iter().zip(&dn) {
                    for (p, gv) in model.context.row_mut(n).iter_mut().zip(g) {
                        *p -= sgd.lr * gv;
                    }
                }
            }
            let mean = total / pairs.len() as f64;
            if !mean.is_finite() {
                return Err(Error::NonFinite("skip-gram loss".into()));
            }
            report.losses.push(mean);
        }
    }
    report.steps = report.losses.len() as u64;
    report.wall_clock = started.elapsed();
    Ok((model, report))
}
