//! Pre-norm transformer encoder: forward pass, cached trace, and the
//! hand-derived backward pass.
//!
//! Row-vector convention throughout: a projection is `y = x·W + b` with `W`
//! stored as `(d_in, d_out)`. An adapter on `W` contributes
//! `scale · (x·A)·B` without materializing `A·B`.

use indexmap::IndexMap;

use super::vocab::PAD;
use super::weights::{CLS_HEAD_BIAS, CLS_HEAD_WEIGHT, MLM_HEAD_BIAS, MLM_HEAD_WEIGHT};
use super::NamedWeights;
use crate::error::{Error, Result};
use crate::merge::{AdapterMap, LoraAdapter};
use crate::numerics::{cross_entropy_row_grad, gelu, gelu_grad, softmax_in_place, Matrix};

const LAYER_NORM_EPS: f64 = 1e-5;
const MASK_PENALTY: f64 = -1e9;

/// Which parameters receive gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradScope {
    /// Every dense tensor (full fine-tuning, MLM).
    Full,
    /// Adapter factors plus the classification head only.
    AdaptersAndHead,
}

impl GradScope {
    fn dense(self, name: &str) -> bool {
        match self {
            GradScope::Full => true,
            GradScope::AdaptersAndHead => name.starts_with("cls_head."),
        }
    }

    fn adapters(self) -> bool {
        matches!(self, GradScope::AdaptersAndHead)
    }
}

/// Accumulated parameter gradients.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    pub tensors: IndexMap<String, Matrix>,
    /// Keyed by adapted tensor name: `(∂/∂A, ∂/∂B)`.
    pub adapters: IndexMap<String, (Matrix, Matrix)>,
}

impl Gradients {
    fn accumulate(&mut self, name: &str, g: Matrix) {
        match self.tensors.get_mut(name) {
            Some(acc) => acc.add_assign(&g).expect("gradient shapes agree"),
            None => {
                self.tensors.insert(name.to_string(), g);
            }
        }
    }

    fn accumulate_adapter(&mut self, name: &str, ga: Matrix, gb: Matrix) {
        match self.adapters.get_mut(name) {
            Some((a, b)) => {
                a.add_assign(&ga).expect("gradient shapes agree");
                b.add_assign(&gb).expect("gradient shapes agree");
            }
            None => {
                self.adapters.insert(name.to_string(), (ga, gb));
            }
        }
    }

    /// Adds `other` into `self`.
    pub fn merge(&mut self, other: Gradients) {
        for (k, v) in other.tensors {
            self.accumulate(&k, v);
        }
        for (k, (a, b)) in other.adapters {
            self.accumulate_adapter(&k, a, b);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.tensors.values_mut() {
            v.scale_in_place(factor);
        }
        for (a, b) in self.adapters.values_mut() {
            a.scale_in_place(factor);
            b.scale_in_place(factor);
        }
    }
}

struct NormCache {
    xhat: Matrix,
    inv_std: Vec<f64>,
}

fn layer_norm(x: &Matrix, gain: &Matrix, bias: &Matrix) -> (Matrix, NormCache) {
    let (n, d) = x.shape();
    let mut xhat = Matrix::zeros(n, d);
    let mut y = Matrix::zeros(n, d);
    let mut inv_std = Vec::with_capacity(n);
    for r in 0..n {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std.push(is);
        for c in 0..d {
            let h = (row[c] - mean) * is;
            xhat.set(r, c, h);
            y.set(r, c, h * gain.get(0, c) + bias.get(0, c));
        }
    }
    (y, NormCache { xhat, inv_std })
}

/// Returns `(dx, dgain, dbias)`.
fn layer_norm_backward(dy: &Matrix, cache: &NormCache, gain: &Matrix) -> (Matrix, Matrix, Matrix) {
    let (n, d) = dy.shape();
    let mut dx = Matrix::zeros(n, d);
    let mut dgain = Matrix::zeros(1, d);
    let mut dbias = Matrix::zeros(1, d);
    let mut dxhat = vec![0.0; d];
    for r in 0..n {
        let dyr = dy.row(r);
        let xh = cache.xhat.row(r);
        for c in 0..d {
            dgain.as_mut_slice()[c] += dyr[c] * xh[c];
            dbias.as_mut_slice()[c] += dyr[c];
            dxhat[c] = dyr[c] * gain.get(0, c);
        }
        let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dxhat_xhat = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        let is = cache.inv_std[r];
        for c in 0..d {
            dx.set(r, c, is * (dxhat[c] - mean_dxhat - xh[c] * mean_dxhat_xhat));
        }
    }
    (dx, dgain, dbias)
}

struct LayerTrace {
    norm1: NormCache,
    normed1: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    probs: Vec<Matrix>,
    context: Matrix,
    norm2: NormCache,
    normed2: Matrix,
    pre_act: Matrix,
    act: Matrix,
}

/// Everything the backward pass needs from one forward pass.
pub struct Trace {
    ids: Vec<u32>,
    layers: Vec<LayerTrace>,
    final_norm: NormCache,
    /// Final-norm output, `(seq_len, d_model)`.
    pub hidden: Matrix,
}

impl Trace {
    pub fn ids(&self) -> &[u32] {
        &self.ids
    }
}

/// A weight set, optionally with adapters, viewed as a runnable network.
#[derive(Clone, Copy)]
pub struct Network<'a> {
    weights: &'a NamedWeights,
    adapters: Option<&'a AdapterMap>,
}

impl<'a> Network<'a> {
    pub fn new(weights: &'a NamedWeights) -> Self {
        Self {
            weights,
            adapters: None,
        }
    }

    pub fn with_adapters(weights: &'a NamedWeights, adapters: &'a AdapterMap) -> Self {
        Self {
            weights,
            adapters: Some(adapters),
        }
    }

    pub fn weights(&self) -> &NamedWeights {
        self.weights
    }

    fn w(&self, name: &str) -> Result<&'a Matrix> {
        self.weights.get(name)
    }

    fn adapter(&self, weight_name: &str) -> Option<&'a LoraAdapter> {
        self.adapters.and_then(|a| a.get(weight_name))
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        let cfg = self.weights.config();
        if ids.is_empty() {
            return Err(Error::invalid("empty id sequence"));
        }
        if ids.len() > cfg.max_seq_len {
            return Err(Error::invalid(format!(
                "sequence length {} exceeds max_seq_len {}",
                ids.len(),
                cfg.max_seq_len
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= cfg.vocab_size) {
            return Err(Error::invalid(format!(
                "token id {bad} outside vocabulary of {}",
                cfg.vocab_size
            )));
        }
        Ok(())
    }

    fn linear(&self, x: &Matrix, prefix: &str) -> Result<Matrix> {
        let wname = format!("{prefix}.weight");
        let mut y = x.matmul(self.w(&wname)?)?;
        y.add_row_broadcast(self.w(&format!("{prefix}.bias"))?)?;
        if let Some(ad) = self.adapter(&wname) {
            let low = x.matmul(&ad.a)?.matmul(&ad.b)?;
            y.add_scaled(&low, ad.scale())?;
        }
        Ok(y)
    }

    fn linear_backward(
        &self,
        x: &Matrix,
        dy: &Matrix,
        prefix: &str,
        scope: GradScope,
        grads: &mut Gradients,
    ) -> Result<Matrix> {
        let wname = format!("{prefix}.weight");
        let w = self.w(&wname)?;
        let mut dx = dy.matmul_t(w)?;
        if scope.dense(&wname) {
            grads.accumulate(&wname, x.t_matmul(dy)?);
            grads.accumulate(&format!("{prefix}.bias"), dy.column_sums());
        }
        if let Some(ad) = self.adapter(&wname) {
            let s = ad.scale();
            let dy_bt = dy.matmul_t(&ad.b)?;
            dx.add_scaled(&dy_bt.matmul_t(&ad.a)?, s)?;
            if scope.adapters() {
                let ga = x.t_matmul(&dy_bt)?.scale(s);
                let gb = x.matmul(&ad.a)?.t_matmul(dy)?.scale(s);
                grads.accumulate_adapter(&wname, ga, gb);
            }
        }
        Ok(dx)
    }

    /// Runs the encoder and keeps the intermediate activations.
    pub fn trace(&self, ids: &[u32]) -> Result<Trace> {
        self.check_ids(ids)?;
        let cfg = *self.weights.config();
        let n = ids.len();
        let (d, heads, dh) = (cfg.d_model, cfg.n_heads, cfg.head_dim());
        let inv_sqrt = 1.0 / (dh as f64).sqrt();

        let tok = self.w(super::weights::token_embedding())?;
        let pos = self.w(super::weights::position_embedding())?;
        let mut x = Matrix::zeros(n, d);
        for (i, &id) in ids.iter().enumerate() {
            let row = x.row_mut(i);
            for ((o, a), b) in row.iter_mut().zip(tok.row(id as usize)).zip(pos.row(i)) {
                *o = a + b;
            }
        }
        let key_masked: Vec<bool> = ids.iter().map(|&i| i == PAD).collect();

        let mut layers = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let p = format!("layers.{l}");
            let (normed1, norm1) = layer_norm(
                &x,
                self.w(&format!("{p}.attention_norm.gain"))?,
                self.w(&format!("{p}.attention_norm.bias"))?,
            );
            let q = self.linear(&normed1, &format!("{p}.attention.query"))?;
            let k = self.linear(&normed1, &format!("{p}.attention.key"))?;
            let v = self.linear(&normed1, &format!("{p}.attention.value"))?;
            let mut context = Matrix::zeros(n, d);
            let mut probs = Vec::with_capacity(heads);
            for h in 0..heads {
                let qh = q.column_block(h * dh, dh);
                let kh = k.column_block(h * dh, dh);
                let vh = v.column_block(h * dh, dh);
                let mut scores = qh.matmul_t(&kh)?;
                for r in 0..n {
                    let row = scores.row_mut(r);
                    for (c, s) in row.iter_mut().enumerate() {
                        *s *= inv_sqrt;
                        if key_masked[c] {
                            *s += MASK_PENALTY;
                        }
                    }
                    softmax_in_place(row);
                }
                context.set_column_block(h * dh, &scores.matmul(&vh)?);
                probs.push(scores);
            }
            let attn_out = self.linear(&context, &format!("{p}.attention.output"))?;
            let mid = x.add(&attn_out)?;
            let (normed2, norm2) = layer_norm(
                &mid,
                self.w(&format!("{p}.ffn_norm.gain"))?,
                self.w(&format!("{p}.ffn_norm.bias"))?,
            );
            let pre_act = self.linear(&normed2, &format!("{p}.ffn.up"))?;
            let mut act = pre_act.clone();
            act.as_mut_slice().iter_mut().for_each(|v| *v = gelu(*v));
            let ffn_out = self.linear(&act, &format!("{p}.ffn.down"))?;
            let out = mid.add(&ffn_out)?;
            x = out;
            layers.push(LayerTrace {
                norm1,
                normed1,
                q,
                k,
                v,
                probs,
                context,
                norm2,
                normed2,
                pre_act,
                act,
            });
        }
        let (hidden, final_norm) =
            layer_norm(&x, self.w("final_norm.gain")?, self.w("final_norm.bias")?);
        if !hidden.is_finite() {
            return Err(Error::NonFinite("encoder activations".into()));
        }
        Ok(Trace {
            ids: ids.to_vec(),
            layers,
            final_norm,
            hidden,
        })
    }

    /// Backpropagates `d_hidden` (gradient w.r.t. [`Trace::hidden`]) through
    /// the encoder into `grads`.
    pub fn backward(
        &self,
        trace: &Trace,
        d_hidden: &Matrix,
        scope: GradScope,
        grads: &mut Gradients,
    ) -> Result<()> {
        let cfg = *self.weights.config();
        let (heads, dh) = (cfg.n_heads, cfg.head_dim());
        let inv_sqrt = 1.0 / (dh as f64).sqrt();
        let n = trace.ids.len();

        let (mut dx, dg, db) =
            layer_norm_backward(d_hidden, &trace.final_norm, self.w("final_norm.gain")?);
        if scope.dense("final_norm.gain") {
            grads.accumulate("final_norm.gain", dg);
            grads.accumulate("final_norm.bias", db);
        }

        for (l, lt) in trace.layers.iter().enumerate().rev() {
            let p = format!("layers.{l}");
            // feed-forward branch
            let d_act = self.linear_backward(&lt.act, &dx, &format!("{p}.ffn.down"), scope, grads)?;
            let mut d_pre = d_act;
            for (g, &z) in d_pre.as_mut_slice().iter_mut().zip(lt.pre_act.as_slice()) {
                *g *= gelu_grad(z);
            }
            let d_normed2 =
                self.linear_backward(&lt.normed2, &d_pre, &format!("{p}.ffn.up"), scope, grads)?;
            let gain2 = format!("{p}.ffn_norm.gain");
            let (d_mid_branch, dg, db) = layer_norm_backward(&d_normed2, &lt.norm2, self.w(&gain2)?);
            if scope.dense(&gain2) {
                grads.accumulate(&gain2, dg);
                grads.accumulate(&format!("{p}.ffn_norm.bias"), db);
            }
            let mut d_mid = dx;
            d_mid.add_assign(&d_mid_branch)?;

            // attention branch
            let d_context = self.linear_backward(
                &lt.context,
                &d_mid,
                &format!("{p}.attention.output"),
                scope,
                grads,
            )?;
            let d = cfg.d_model;
            let mut dq = Matrix::zeros(n, d);
            let mut dk = Matrix::zeros(n, d);
            let mut dv = Matrix::zeros(n, d);
            for h in 0..heads {
                let probs = &lt.probs[h];
                let qh = lt.q.column_block(h * dh, dh);
                let kh = lt.k.column_block(h * dh, dh);
                let vh = lt.v.column_block(h * dh, dh);
                let dctx = d_context.column_block(h * dh, dh);
                let dprobs = dctx.matmul_t(&vh)?;
                dv.set_column_block(h * dh, &probs.t_matmul(&dctx)?);
                let mut dscores = Matrix::zeros(n, n);
                for r in 0..n {
                    let pr = probs.row(r);
                    let dpr = dprobs.row(r);
                    let dot: f64 = pr.iter().zip(dpr).map(|(a, b)| a * b).sum();
                    for (c, out) in dscores.row_mut(r).iter_mut().enumerate() {
                        *out = pr[c] * (dpr[c] - dot) * inv_sqrt;
                    }
                }
                dq.set_column_block(h * dh, &dscores.matmul(&kh)?);
                dk.set_column_block(h * dh, &dscores.t_matmul(&qh)?);
            }
            let mut d_normed1 =
                self.linear_backward(&lt.normed1, &dq, &format!("{p}.attention.query"), scope, grads)?;
            d_normed1.add_assign(&self.linear_backward(
                &lt.normed1,
                &dk,
                &format!("{p}.attention.key"),
                scope,
                grads,
            )?)?;
            d_normed1.add_assign(&self.linear_backward(
                &lt.normed1,
                &dv,
                &format!("{p}.attention.value"),
                scope,
                grads,
            )?)?;
            let gain1 = format!("{p}.attention_norm.gain");
            let (d_in_branch, dg, db) = layer_norm_backward(&d_normed1, &lt.norm1, self.w(&gain1)?);
            if scope.dense(&gain1) {
                grads.accumulate(&gain1, dg);
                grads.accumulate(&format!("{p}.attention_norm.bias"), db);
            }
            dx = d_mid;
            dx.add_assign(&d_in_branch)?;
        }

        let tok_name = super::weights::token_embedding();
        if scope.dense(tok_name) {
            let mut g_tok = Matrix::zeros(cfg.vocab_size, cfg.d_model);
            let mut g_pos = Matrix::zeros(cfg.max_seq_len, cfg.d_model);
            for (i, &id) in trace.ids.iter().enumerate() {
                for (t, g) in g_tok.row_mut(id as usize).iter_mut().zip(dx.row(i)) {
                    *t += g;
                }
                for (p, g) in g_pos.row_mut(i).iter_mut().zip(dx.row(i)) {
                    *p += g;
                }
            }
            grads.accumulate(tok_name, g_tok);
            grads.accumulate(super::weights::position_embedding(), g_pos);
        }
        Ok(())
    }

    /// MLM logits at the listed positions, `(positions.len(), vocab_size)`.
    pub fn mlm_logits_at(&self, trace: &Trace, positions: &[usize]) -> Result<Matrix> {
        let h = trace.hidden.select_rows(positions);
        let mut logits = h.matmul(self.w(MLM_HEAD_WEIGHT)?)?;
        logits.add_row_broadcast(self.w(MLM_HEAD_BIAS)?)?;
        Ok(logits)
    }

    /// Gradient of the MLM head given `d_logits` for the listed positions;
    /// returns the gradient with respect to the encoder output.
    pub fn mlm_head_backward(
        &self,
        trace: &Trace,
        positions: &[usize],
        d_logits: &Matrix,
        scope: GradScope,
        grads: &mut Gradients,
    ) -> Result<Matrix> {
        let h = trace.hidden.select_rows(positions);
        if scope.dense(MLM_HEAD_WEIGHT) {
            grads.accumulate(MLM_HEAD_WEIGHT, h.t_matmul(d_logits)?);
            grads.accumulate(MLM_HEAD_BIAS, d_logits.column_sums());
        }
        let dh_sel = d_logits.matmul_t(self.w(MLM_HEAD_WEIGHT)?)?;
        let mut d_hidden = Matrix::zeros(trace.hidden.rows(), trace.hidden.cols());
        for (i, &p) in positions.iter().enumerate() {
            for (o, g) in d_hidden.row_mut(p).iter_mut().zip(dh_sel.row(i)) {
                *o += g;
            }
        }
        Ok(d_hidden)
    }

    fn require_head(&self) -> Result<()> {
        if !self.weights.has_cls_head() {
            return Err(Error::invalid("model has no classification head"));
        }
        Ok(())
    }

    /// Label logits from the CLS-position representation.
    pub fn cls_logits(&self, trace: &Trace) -> Result<Vec<f64>> {
        self.require_head()?;
        let h = trace.hidden.select_rows(&[0]);
        let mut logits = h.matmul(self.w(CLS_HEAD_WEIGHT)?)?;
        logits.add_row_broadcast(self.w(CLS_HEAD_BIAS)?)?;
        Ok(logits.into_vec())
    }

    pub fn cls_head_backward(
        &self,
        trace: &Trace,
        d_logits: &[f64],
        scope: GradScope,
        grads: &mut Gradients,
    ) -> Result<Matrix> {
        self.require_head()?;
        let dl = Matrix::row_vector(d_logits.to_vec())?;
        let h = trace.hidden.select_rows(&[0]);
        if scope.dense(CLS_HEAD_WEIGHT) {
            grads.accumulate(CLS_HEAD_WEIGHT, h.t_matmul(&dl)?);
            grads.accumulate(CLS_HEAD_BIAS, dl.clone());
        }
        let dh0 = dl.matmul_t(self.w(CLS_HEAD_WEIGHT)?)?;
        let mut d_hidden = Matrix::zeros(trace.hidden.rows(), trace.hidden.cols());
        d_hidden.row_mut(0).copy_from_slice(dh0.row(0));
        Ok(d_hidden)
    }

    /// Summed masked-LM cross entropy over `(position, original id)` targets,
    /// the number of targets predicted correctly, and the gradients.
    pub fn mlm_loss_and_grad(
        &self,
        ids: &[u32],
        targets: &[(usize, u32)],
        scope: GradScope,
    ) -> Result<(f64, usize, Gradients)> {
        if targets.is_empty() {
            return Err(Error::invalid("masked LM step without targets"));
        }
        let trace = self.trace(ids)?;
        let positions: Vec<usize> = targets.iter().map(|&(p, _)| p).collect();
        if positions.iter().any(|&p| p >= ids.len()) {
            return Err(Error::invalid("target position outside sequence"));
        }
        let logits = self.mlm_logits_at(&trace, &positions)?;
        let mut d_logits = Matrix::zeros(logits.rows(), logits.cols());
        let mut loss = 0.0;
        let mut correct = 0;
        for (r, &(_, target)) in targets.iter().enumerate() {
            let row = logits.row(r);
            if argmax(row) == target as usize {
                correct += 1;
            }
            let (l, g) = cross_entropy_row_grad(row, target as usize);
            loss += l;
            d_logits.row_mut(r).copy_from_slice(&g);
        }
        let mut grads = Gradients::default();
        let d_hidden = self.mlm_head_backward(&trace, &positions, &d_logits, scope, &mut grads)?;
        self.backward(&trace, &d_hidden, scope, &mut grads)?;
        Ok((loss, correct, grads))
    }

    /// Cross entropy of one labelled sequence; returns `(loss, logits, grads)`.
    pub fn cls_loss_and_grad(
        &self,
        ids: &[u32],
        label: usize,
        scope: GradScope,
    ) -> Result<(f64, Vec<f64>, Gradients)> {
        let trace = self.trace(ids)?;
        let logits = self.cls_logits(&trace)?;
        if label >= logits.len() {
            return Err(Error::invalid(format!(
                "label {label} outside {} classes",
                logits.len()
            )));
        }
        let (loss, d_logits) = cross_entropy_row_grad(&logits, label);
        let mut grads = Gradients::default();
        let d_hidden = self.cls_head_backward(&trace, &d_logits, scope, &mut grads)?;
        self.backward(&trace, &d_hidden, scope, &mut grads)?;
        Ok((loss, logits, grads))
    }

    /// Full MLM logits, `(ids.len(), vocab_size)`.
    pub fn forward_mlm(&self, ids: &[u32]) -> Result<Matrix> {
        let trace = self.trace(ids)?;
        let all: Vec<usize> = (0..ids.len()).collect();
        self.mlm_logits_at(&trace, &all)
    }

    pub fn forward_cls(&self, ids: &[u32]) -> Result<Vec<f64>> {
        self.require_head()?;
        let trace = self.trace(ids)?;
        self.cls_logits(&trace)
    }
}

/// MLM logits of a plain (adapter-free) model.
pub fn forward_mlm(w: &NamedWeights, ids: &[u32]) -> Result<Matrix> {
    Network::new(w).forward_mlm(ids)
}

/// Classification logits of a plain (adapter-free) model.
pub fn forward_cls(w: &NamedWeights, ids: &[u32]) -> Result<Vec<f64>> {
    Network::new(w).forward_cls(ids)
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
