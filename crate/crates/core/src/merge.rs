//! Parameter integration: uniform averaging of same-architecture models,
//! low-rank adapters on the self-attention projections, and fold-in.
//!
//! The integrated weight for an adapted tensor is
//! `W = mean(W_p, W_c, W_s…) + (alpha / rank) · A·B`; every other tensor is the
//! plain mean. Averaging spans every tensor, adaptation only the Q/K/V/O
//! projection weights of each layer.

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{attention_weight, NamedWeights, ATTENTION_PROJECTIONS, INIT_STD};
use crate::numerics::Matrix;

pub const DEFAULT_ALPHA: f64 = 16.0;
pub const DEFAULT_RANK: usize = 8;

/// Low-rank update `A·B` for one target tensor, scaled by `alpha / rank`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    pub target: String,
    /// `(d, rank)`
    pub a: Matrix,
    /// `(rank, l)`
    pub b: Matrix,
    pub alpha: f64,
}

impl LoraAdapter {
    pub fn rank(&self) -> usize {
        self.a.cols()
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank() as f64
    }

    pub fn param_count(&self) -> usize {
        self.a.len() + self.b.len()
    }

    /// `scale · A·B`
    pub fn delta(&self) -> Result<Matrix> {
        Ok(self.a.matmul(&self.b)?.scale(self.scale()))
    }
}

/// Adapters keyed by target tensor name.
pub type AdapterMap = IndexMap<String, LoraAdapter>;

/// Averaged base weights plus trainable adapters.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedModel {
    base: NamedWeights,
    adapters: AdapterMap,
    alpha: f64,
    rank: usize,
    provenance: Vec<String>,
}

/// Names of every tensor that carries an adapter: Q, K, V, O weights of each layer.
pub fn adapted_tensor_names(base: &NamedWeights) -> Vec<String> {
    (0..base.config().n_layers)
        .flat_map(|l| ATTENTION_PROJECTIONS.iter().map(move |p| attention_weight(l, p)))
        .collect()
}

fn check_compatible(first: &NamedWeights, other: &NamedWeights) -> Result<()> {
    if !first.config().same_architecture(other.config()) {
        // find the first tensor that disagrees so the caller can act on it
        for (name, m) in first.iter() {
            match other.get(name) {
                Ok(o) if o.shape() == m.shape() => continue,
                _ => {
                    return Err(Error::Incompatible(format!(
                        "tensor {name} differs in presence or shape"
                    )))
                }
            }
        }
        return Err(Error::Incompatible(format!(
            "architectures differ: {:?} vs {:?}",
            first.config(),
            other.config()
        )));
    }
    for ((na, a), (nb, b)) in first.iter().zip(other.iter()) {
        if na != nb || a.shape() != b.shape() {
            return Err(Error::Incompatible(format!("tensor {na} vs {nb}")));
        }
    }
    Ok(())
}

/// Uniform elementwise mean of every named tensor.
///
/// Summation runs in the order of the models' payload digests, so the result
/// does not depend on argument order. Config is copied from the first model.
pub fn average_weights(models: &[NamedWeights]) -> Result<NamedWeights> {
    let first = models
        .first()
        .ok_or_else(|| Error::invalid("averaging needs at least one model"))?;
    for m in &models[1..] {
        check_compatible(first, m)?;
    }
    let mut order: Vec<(String, usize)> = models
        .iter()
        .enumerate()
        .map(|(i, m)| m.payload_digest().map(|d| (d, i)))
        .collect::<Result<_>>()?;
    order.sort();

    let count = models.len() as f64;
    let mut out = first.clone();
    for (name, target) in out.iter_mut() {
        let mut acc = Matrix::zeros(target.rows(), target.cols());
        for (_, i) in &order {
            acc.add_assign(models[*i].get(name)?)?;
        }
        acc.scale_in_place(1.0 / count);
        *target = acc;
    }
    Ok(out)
}

impl MergedModel {
    /// Wraps an already averaged base. `provenance` lists the digests of the
    /// averaged sources.
    pub fn attach(
        base: NamedWeights,
        rank: usize,
        alpha: f64,
        seed: u64,
        provenance: Vec<String>,
    ) -> Result<Self> {
        if rank == 0 {
            return Err(Error::invalid("adapter rank must be at least 1"));
        }
        if !alpha.is_finite() {
            return Err(Error::invalid("adapter alpha must be finite"));
        }
        let names = adapted_tensor_names(&base);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut adapters = AdapterMap::with_capacity(names.len());
        for name in names {
            let (d, l) = base.get(&name)?.shape();
            if rank > d.min(l) {
                return Err(Error::invalid(format!(
                    "rank {rank} exceeds min({d}, {l}) for {name}"
                )));
            }
            adapters.insert(
                name.clone(),
                LoraAdapter {
                    target: name,
                    a: Matrix::gaussian(d, rank, INIT_STD, &mut rng),
                    b: Matrix::zeros(rank, l),
                    alpha,
                },
            );
        }
        Ok(Self {
            base,
            adapters,
            alpha,
            rank,
            provenance,
        })
    }

    /// Restores a merged model from stored parts, checking that the adapter
    /// set is exactly the attention projections and every shape agrees.
    pub fn from_parts(
        base: NamedWeights,
        adapters: AdapterMap,
        alpha: f64,
        rank: usize,
        provenance: Vec<String>,
    ) -> Result<Self> {
        let expected = adapted_tensor_names(&base);
        if adapters.len() != expected.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} adapters, found {}",
                expected.len(),
                adapters.len()
            )));
        }
        let mut ordered = AdapterMap::with_capacity(expected.len());
        let mut adapters = adapters;
        for name in expected {
            let ad = adapters
                .shift_remove(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing adapter for {name}")))?;
            let (d, l) = base.get(&name)?.shape();
            if ad.a.shape() != (d, rank) || ad.b.shape() != (rank, l) || ad.alpha != alpha {
                return Err(Error::Checkpoint(format!("adapter for {name} is malformed")));
            }
            ordered.insert(name, ad);
        }
        Ok(Self {
            base,
            adapters: ordered,
            alpha,
            rank,
            provenance,
        })
    }

    pub fn base(&self) -> &NamedWeights {
        &self.base
    }

    pub fn adapters(&self) -> &AdapterMap {
        &self.adapters
    }

    pub fn adapters_mut(&mut self) -> &mut AdapterMap {
        &mut self.adapters
    }

    /// The tensors parameter integration trains: each adapter's `A` and `B`
    /// in adapter order, then the classification head weight and bias.
    pub(crate) fn trainable_mut(&mut self) -> Result<Vec<&mut Matrix>> {
        use crate::model::{CLS_HEAD_BIAS, CLS_HEAD_WEIGHT};
        let mut out: Vec<&mut Matrix> = Vec::with_capacity(2 * self.adapters.len() + 2);
        for ad in self.adapters.values_mut() {
            out.push(&mut ad.a);
            out.push(&mut ad.b);
        }
        let head: Vec<&mut Matrix> = self
            .base
            .iter_mut()
            .filter(|(n, _)| n.as_str() == CLS_HEAD_WEIGHT || n.as_str() == CLS_HEAD_BIAS)
            .map(|(_, m)| m)
            .collect();
        if head.len() != 2 {
            return Err(Error::invalid("no classification head"));
        }
        out.extend(head);
        Ok(out)
    }

    /// Installs a fresh classification head (base tensors untouched otherwise).
    pub fn set_cls_head(&mut self, num_labels: usize, seed: u64) -> Result<()> {
        self.base = self.base.clone().with_cls_head(num_labels, seed)?;
        Ok(())
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn provenance(&self) -> &[String] {
        &self.provenance
    }

    /// `base[name] + (alpha/rank)·A·B` when adapted, else `base[name]`.
    pub fn effective_weight(&self, name: &str) -> Result<Matrix> {
        let base = self.base.get(name)?;
        match self.adapters.get(name) {
            Some(ad) => base.add(&ad.delta()?),
            None => Ok(base.clone()),
        }
    }

    /// Materializes every adapter into its target and drops the adapters.
    pub fn fold(&self) -> Result<NamedWeights> {
        let mut out = self.base.clone();
        for (name, ad) in &self.adapters {
            out.get_mut(name)?.add_assign(&ad.delta()?)?;
        }
        Ok(out)
    }

    /// `Σ rank·(d + l)` over adapters, plus head parameters when asked.
    pub fn trainable_param_count(&self, with_head: bool) -> usize {
        let adapters: usize = self.adapters.values().map(LoraAdapter::param_count).sum();
        let head = if with_head && self.base.has_cls_head() {
            let l = self.base.config().num_labels;
            self.base.config().d_model * l + l
        } else {
            0
        };
        adapters + head
    }
}

/// Averages the inputs and attaches zero-initialized adapters; provenance is
/// the inputs' payload digests in argument order.
pub fn merge_models(models: &[NamedWeights], rank: usize, alpha: f64, seed: u64) -> Result<MergedModel> {
    let base = average_weights(models)?;
    let provenance = models
        .iter()
        .map(NamedWeights::payload_digest)
        .collect::<Result<_>>()?;
    MergedModel::attach(base, rank, alpha, seed, provenance)
}

pub fn attach_adapters(base: NamedWeights, rank: usize, alpha: f64, seed: u64) -> Result<MergedModel> {
    MergedModel::attach(base, rank, alpha, seed, Vec::new())
}

pub fn effective_weight(m: &MergedModel, name: &str) -> Result<Matrix> {
    m.effective_weight(name)
}

pub fn fold_adapters(m: &MergedModel) -> Result<NamedWeights> {
    m.fold()
}

pub fn trainable_param_count(m: &MergedModel, with_head: bool) -> usize {
    m.trainable_param_count(with_head)
}
