//! Folding removes every trace of the adapters from the forward pass.

use crm_core::merge::{attach_adapters, fold_adapters, merge_models};
use crm_core::model::{forward_cls, init_weights, ModelConfig, Network};
use crm_core::numerics::{probe, Matrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn config() -> ModelConfig {
    ModelConfig {
        vocab_size: 20,
        d_model: 16,
        n_heads: 4,
        n_layers: 2,
        d_ff: 32,
        max_seq_len: 10,
        num_labels: 3,
        seed: 8,
    }
}

#[test]
fn folded_model_runs_the_same_kernels_as_a_plain_one() {
    let cfg = config();
    let plain = init_weights(&cfg).unwrap();
    let mut merged = attach_adapters(plain.clone(), 8, 16.0, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for a in merged.adapters_mut().values_mut() {
        a.b = Matrix::gaussian(a.b.rows(), a.b.cols(), 0.05, &mut rng);
    }
    let folded = fold_adapters(&merged).unwrap();
    let ids = [3, 7, 8, 9, 4, 12, 13, 4];

    let (reference, plain_calls) = probe::trace(|| forward_cls(&plain, &ids).unwrap());
    let (from_folded, folded_calls) = probe::trace(|| forward_cls(&folded, &ids).unwrap());
    let (adapted, adapted_calls) =
        probe::trace(|| Network::with_adapters(merged.base(), merged.adapters()).forward_cls(&ids).unwrap());

    assert!(!plain_calls.is_empty());
    assert_eq!(folded_calls, plain_calls);
    assert!(adapted_calls.len() > plain_calls.len());
    // Folding changes the weights but not the function of the adapted model.
    for (f, a) in from_folded.iter().zip(&adapted) {
        assert!((f - a).abs() < 1e-9);
    }
    assert!(reference.iter().zip(&from_folded).any(|(r, f)| (r - f).abs() > 1e-6));
}

#[test]
fn merged_fold_without_training_is_the_average() {
    let cfg = config();
    let p = init_weights(&cfg).unwrap();
    let c = init_weights(&ModelConfig { seed: 9, ..cfg }).unwrap();
    let merged = merge_models(&[p, c], 8, 16.0, 0).unwrap();
    let folded = fold_adapters(&merged).unwrap();
    for (name, m) in folded.iter() {
        assert_eq!(m, merged.base().get(name).unwrap(), "{name}");
    }
    assert_eq!(merged.provenance().len(), 2);
}
