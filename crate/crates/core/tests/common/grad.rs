//! Finite-difference checks of every analytic gradient on a one-layer
//! model. Each check returns `(tensor, relative error)` pairs.

use crm_core::merge::attach_adapters;
use crm_core::model::{init_weights, GradScope, Gradients, ModelConfig, NamedWeights, Network};
use crm_core::numerics::{finite_diff_grad, relative_error, Matrix};
use crm_core::training::{skipgram_grad, skipgram_loss};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
// Below this norm the comparison is effectively absolute (the key bias gradient is exactly zero).
pub const FLOOR: f64 = 1e-5;

pub const IDS: [u32; 6] = [3, 7, 0, 9, 12, 4];

pub fn config(d_model: usize, n_heads: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: 14,
        d_model,
        n_heads,
        n_layers: 1,
        d_ff: 2 * d_model,
        max_seq_len: 7,
        num_labels: 3,
        seed: 11,
    }
}

/// Initial weights plus noise so no gradient is trivially zero.
pub fn perturbed(cfg: &ModelConfig, seed: u64) -> NamedWeights {
    let mut w = init_weights(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (_, m) in w.iter_mut() {
        let noise = Matrix::gaussian(m.rows(), m.cols(), 0.4, &mut rng);
        m.add_assign(&noise).unwrap();
    }
    w
}

fn with_tensor(w: &NamedWeights, name: &str, value: &Matrix) -> NamedWeights {
    let mut out = w.clone();
    *out.get_mut(name).unwrap() = value.clone();
    out
}

pub fn dense_errors<F>(w: &NamedWeights, grads: &Gradients, only: Option<&[&str]>, loss: F) -> Vec<(String, f64)>
where
    F: Fn(&NamedWeights) -> f64,
{
    let mut out = Vec::new();
    for name in w.names() {
        if only.is_some_and(|o| !o.contains(&name)) {
            continue;
        }
        let param = w.get(name).unwrap().clone();
        let numeric = finite_diff_grad(|p| loss(&with_tensor(w, name, &p[0])), std::slice::from_ref(&param), H);
        let analytic = grads
            .tensors
            .get(name)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(param.rows(), param.cols()));
        out.push((name.to_string(), relative_error(&analytic, &numeric[0], FLOOR)));
    }
    out
}

pub fn mlm_errors() -> Vec<(String, f64)> {
    let w = perturbed(&config(8, 2), 1);
    let targets = [(1usize, 8u32), (3, 5), (4, 12)];
    let loss = |w: &NamedWeights| {
        Network::new(w)
            .mlm_loss_and_grad(&IDS, &targets, GradScope::Full)
            .unwrap()
    };
    let grads = loss(&w).2;
    dense_errors(&w, &grads, None, |w| loss(w).0)
}

pub fn cls_errors() -> Vec<(String, f64)> {
    let w = perturbed(&config(8, 2), 2);
    let loss = |w: &NamedWeights| Network::new(w).cls_loss_and_grad(&IDS, 2, GradScope::Full).unwrap();
    let grads = loss(&w).2;
    dense_errors(&w, &grads, None, |w| loss(w).0)
}

/// Adapter `A` and `B` factors and the head, with the base frozen. Also
/// returns the names of tensors that received a gradient.
pub fn adapter_errors() -> (Vec<(String, f64)>, Vec<String>, usize) {
    let w = perturbed(&config(8, 2), 3);
    let mut merged = attach_adapters(w, 2, 16.0, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for ad in merged.adapters_mut().values_mut() {
        ad.a = Matrix::gaussian(ad.a.rows(), ad.a.cols(), 0.2, &mut rng);
        ad.b = Matrix::gaussian(ad.b.rows(), ad.b.cols(), 0.2, &mut rng);
    }
    let net = Network::with_adapters(merged.base(), merged.adapters());
    let (_, _, grads) = net.cls_loss_and_grad(&IDS, 1, GradScope::AdaptersAndHead).unwrap();
    let touched: Vec<String> = grads.tensors.keys().cloned().collect();

    let mut out = Vec::new();
    let base = merged.base().clone();
    for (name, ad) in merged.adapters().clone() {
        let loss_with = |a: &Matrix, b: &Matrix| {
            let mut adapters = merged.adapters().clone();
            let slot = adapters.get_mut(&name).unwrap();
            slot.a = a.clone();
            slot.b = b.clone();
            Network::with_adapters(&base, &adapters)
                .cls_loss_and_grad(&IDS, 1, GradScope::AdaptersAndHead)
                .unwrap()
                .0
        };
        let num = finite_diff_grad(|p| loss_with(&p[0], &p[1]), &[ad.a.clone(), ad.b.clone()], H);
        let (ga, gb) = &grads.adapters[&name];
        out.push((format!("{name} A"), relative_error(ga, &num[0], FLOOR)));
        out.push((format!("{name} B"), relative_error(gb, &num[1], FLOOR)));
    }
    let head_loss = |w: &NamedWeights| {
        Network::with_adapters(w, merged.adapters())
            .cls_loss_and_grad(&IDS, 1, GradScope::AdaptersAndHead)
            .unwrap()
            .0
    };
    out.extend(dense_errors(
        merged.base(),
        &grads,
        Some(&["cls_head.weight", "cls_head.bias"]),
        head_loss,
    ));
    (out, touched, grads.adapters.len())
}

pub fn skipgram_errors() -> Vec<(String, f64)> {
    let vecs = [
        vec![0.3, -0.2, 0.5, 0.1],
        vec![-0.4, 0.6, 0.2, -0.1],
        vec![0.2, 0.2, -0.3, 0.4],
        vec![-0.5, 0.1, 0.1, 0.3],
    ];
    let (_, dw, dt, dn) = skipgram_grad(&vecs[0], &vecs[1], &[&vecs[2], &vecs[3]]).unwrap();
    let params: Vec<Matrix> = vecs.iter().map(|v| Matrix::row_vector(v.clone()).unwrap()).collect();
    let numeric = finite_diff_grad(
        |p| skipgram_loss(p[0].as_slice(), p[1].as_slice(), &[p[2].as_slice(), p[3].as_slice()]).unwrap(),
        &params,
        H,
    );
    let analytic = [dw, dt, dn[0].clone(), dn[1].clone()];
    ["center", "context", "negative 0", "negative 1"]
        .iter()
        .zip(analytic.iter().zip(&numeric))
        .map(|(name, (a, n))| {
            let a = Matrix::row_vector(a.clone()).unwrap();
            (name.to_string(), relative_error(&a, n, FLOOR))
        })
        .collect()
}

pub fn assert_within(errors: &[(String, f64)]) {
    for (name, err) in errors {
        assert!(*err <= TOLERANCE, "{name}: relative error {err:e}");
    }
}
