//! Training loops on a small synthetic world: fixed points, scope of
//! parameter integration, determinism and sampling rates.

use std::collections::BTreeMap;

use crm_core::consistency::{gen_synthetic_suite, SynthBundle, SynthSpec};
use crm_core::lexicon::{build_instances, mask_instance};
use crm_core::merge::merge_models;
use crm_core::model::{init_weights, Checkpoint, ModelConfig, NamedWeights};
use crm_core::numerics::Matrix;
use crm_core::training::{
    cosine_similarity, finetune, num_labels_of, paraphrase_substitute, semcr_grid,
    train_mlm, train_skipgram, unigram_noise, Artifact, Budget, Mode, SgdSpec, SkipGramSpec, SynonymTable,
    TrainSpec,
};

fn bundle() -> SynthBundle {
    gen_synthetic_suite(&SynthSpec {
        concepts: 4,
        nouns: 4,
        corpus_sentences: 100,
        train_examples: 48,
        valid_examples: 16,
        semantic: 8,
        negation: 8,
        symmetry: 8,
        transitive: 8,
        ..SynthSpec::default()
    })
    .unwrap()
}

fn model(b: &SynthBundle, seed: u64) -> NamedWeights {
    init_weights(&ModelConfig {
        vocab_size: b.vocab.len(),
        d_model: 16,
        n_heads: 2,
        n_layers: 1,
        d_ff: 32,
        max_seq_len: 24,
        num_labels: 0,
        seed,
    })
    .unwrap()
}

fn mlm_spec(steps: u64, lr: f64) -> TrainSpec {
    TrainSpec {
        batch_size: 8,
        peak_lr: lr,
        ..TrainSpec::mlm_defaults(steps, 3)
    }
}

fn ft_spec(mode: Mode, lr: f64) -> TrainSpec {
    TrainSpec {
        budget: Budget::Epochs(2),
        batch_size: 16,
        peak_lr: lr,
        ..TrainSpec::finetune_defaults(mode, 4)
    }
}

fn bits(m: &Matrix) -> Vec<u64> {
    m.as_slice().iter().map(|x| x.to_bits()).collect()
}

fn same_tensors(a: &NamedWeights, b: &NamedWeights) -> bool {
    a.iter().count() == b.iter().count()
        && a.iter().all(|(name, m)| b.get(name).map(|o| bits(m) == bits(o)).unwrap_or(false))
}

#[test]
fn zero_learning_rate_leaves_weights_unchanged() {
    let b = bundle();
    let w = model(&b, 1);
    let (out, report) = train_mlm(&w, &b.vocab, &b.corpus, &mlm_spec(5, 0.0)).unwrap();
    assert_eq!(report.steps, 5);
    assert_eq!(report.losses.len(), 5);
    assert!(same_tensors(&w, &out));

    let labels = num_labels_of(&b.train);
    let headed = w.with_cls_head(labels, 2).unwrap();
    let (out, _) = finetune(
        Artifact::Plain(headed.clone()),
        &b.vocab,
        &b.train,
        &b.valid,
        &ft_spec(Mode::Ft, 0.0),
        None,
    )
    .unwrap();
    assert!(same_tensors(&headed, out.base()));
}

#[test]
fn parameter_integration_touches_only_adapters_and_head() {
    let b = bundle();
    let merged = merge_models(&[model(&b, 1), model(&b, 2)], 8, 16.0, 5).unwrap();
    let before = merged.clone();
    let before_bytes = Checkpoint::merged(merged.clone(), b.vocab.clone()).unwrap().encode().unwrap();
    let (out, _) = finetune(
        Artifact::Merged(merged),
        &b.vocab,
        &b.train,
        &b.valid,
        &ft_spec(Mode::Pi, 1e-2),
        None,
    )
    .unwrap();
    let Artifact::Merged(after) = out else {
        panic!("parameter integration returned a plain model");
    };
    let after_bytes = Checkpoint::merged(after.clone(), b.vocab.clone()).unwrap().encode().unwrap();
    assert_ne!(before_bytes, after_bytes);

    let mut changed = Vec::new();
    for (name, m) in after.base().iter() {
        match before.base().get(name) {
            Ok(old) if bits(old) == bits(m) => {}
            _ => changed.push(name.clone()),
        }
    }
    assert_eq!(changed, vec!["cls_head.weight".to_string(), "cls_head.bias".to_string()]);
    assert_eq!(after.adapters().len(), 4);
    for (name, adapter) in after.adapters() {
        let old = &before.adapters()[name];
        assert_ne!(bits(&old.b), bits(&adapter.b), "adapter {name} did not train");
    }
}

#[test]
fn adapter_parameter_count_has_closed_form() {
    let b = bundle();
    let cfg = ModelConfig {
        vocab_size: b.vocab.len(),
        d_model: 32,
        n_heads: 4,
        n_layers: 2,
        d_ff: 64,
        max_seq_len: 24,
        num_labels: 0,
        seed: 0,
    };
    let mut merged = merge_models(&[init_weights(&cfg).unwrap()], 8, 16.0, 0).unwrap();
    assert_eq!(merged.trainable_param_count(false), 2 * 4 * 8 * (32 + 32));
    merged.set_cls_head(2, 0).unwrap();
    assert_eq!(merged.trainable_param_count(true), 4096 + 32 * 2 + 2);
}

#[test]
fn plain_model_cannot_be_integrated_and_paraphrase_modes_need_a_paraphraser() {
    let b = bundle();
    let w = model(&b, 1);
    let run = |mode| finetune(Artifact::Plain(w.clone()), &b.vocab, &b.train, &b.valid, &ft_spec(mode, 1e-3), None);
    assert!(run(Mode::Pi).is_err());
    assert!(run(Mode::SemCr { lambda: 0.5 }).is_err());
    assert!(run(Mode::SemAug { rate: 0.15 }).is_err());
    assert!(train_mlm(&w, &b.vocab, &[], &mlm_spec(1, 1e-3)).is_err());
}

#[test]
fn semcr_without_weight_reproduces_plain_finetuning() {
    let b = bundle();
    let w = model(&b, 1);
    let (ft_out, ft) = finetune(
        Artifact::Plain(w.clone()),
        &b.vocab,
        &b.train,
        &b.valid,
        &ft_spec(Mode::Ft, 1e-3),
        None,
    )
    .unwrap();
    let (cr_out, cr) = finetune(
        Artifact::Plain(w),
        &b.vocab,
        &b.train,
        &b.valid,
        &ft_spec(Mode::SemCr { lambda: 0.0 }, 1e-3),
        Some(&b.synonyms),
    )
    .unwrap();
    assert_eq!(ft.losses.len(), cr.losses.len());
    assert!(ft.losses.iter().zip(&cr.losses).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert!(same_tensors(ft_out.base(), cr_out.base()));
}

#[test]
fn semcr_grid_reports_every_weight_and_keeps_the_best() {
    let b = bundle();
    let template = ft_spec(Mode::SemCr { lambda: 0.1 }, 1e-3);
    let grid = semcr_grid(
        &Artifact::Plain(model(&b, 1)),
        &b.vocab,
        &b.train,
        &b.valid,
        &template,
        &[0.1, 0.5, 1.0],
        &b.synonyms,
    )
    .unwrap();
    assert_eq!(grid.reports.len(), 3);
    let lambdas: Vec<f64> = grid.reports.iter().map(|r| r.0).collect();
    assert_eq!(lambdas, vec![0.1, 0.5, 1.0]);
    let best = grid.reports[grid.best].1.validation_accuracy.unwrap();
    for (i, (_, r)) in grid.reports.iter().enumerate() {
        let acc = r.validation_accuracy.unwrap();
        assert!(acc < best || (acc == best && i >= grid.best));
    }
}

#[test]
fn training_is_deterministic() {
    let b = bundle();
    let w = model(&b, 1);
    let spec = mlm_spec(20, 1e-3);
    let (x, rx) = train_mlm(&w, &b.vocab, &b.corpus, &spec).unwrap();
    let (y, ry) = train_mlm(&w, &b.vocab, &b.corpus, &spec).unwrap();
    assert_eq!(x.payload_bytes().unwrap(), y.payload_bytes().unwrap());
    assert_eq!(serde_json::to_string(&rx).unwrap(), serde_json::to_string(&ry).unwrap());

    let merged = merge_models(&[x], 8, 16.0, 1).unwrap();
    let spec = ft_spec(Mode::Pi, 1e-2);
    let run = || {
        let (a, _) = finetune(Artifact::Merged(merged.clone()), &b.vocab, &b.train, &b.valid, &spec, None).unwrap();
        let Artifact::Merged(m) = a else { unreachable!() };
        Checkpoint::merged(m, b.vocab.clone()).unwrap().encode().unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn masking_selects_the_configured_share() {
    let ids: Vec<u32> = (0..100).map(|i| 5 + i % 50).collect();
    let trials = 10_000;
    let selected: usize = (0..trials)
        .map(|s| mask_instance(&ids, 60, 0.15, s).unwrap().targets.len())
        .sum();
    let rate = selected as f64 / (trials as f64 * 100.0);
    assert!((rate - 0.15).abs() <= 0.01, "{rate}");
}

#[test]
fn paraphrasing_replaces_the_configured_share() {
    let raw: BTreeMap<String, Vec<String>> = (0..10)
        .map(|i| (format!("w{i}"), vec![format!("s{i}a"), format!("s{i}b")]))
        .collect();
    let table = SynonymTable::new(raw).unwrap();
    let mut tokens: Vec<String> = (0..100).map(|i| format!("w{}", i % 10)).collect();
    tokens.push("plain".into());
    let trials = 10_000u64;
    let mut replaced = 0usize;
    for s in 0..trials {
        let out = paraphrase_substitute(&tokens, 0.15, &table, s).unwrap();
        assert_eq!(out.last().unwrap(), "plain");
        replaced += tokens.iter().zip(&out).filter(|(a, b)| a != b).count();
    }
    let mean = replaced as f64 / trials as f64;
    assert!((mean - 15.0).abs() <= 1.0, "{mean}");
}

#[test]
fn words_sharing_contexts_end_up_similar() {
    // 0 happy, 1 unhappy, 2..6 context words, 6..16 filler words that never
    // share a context with anything in particular.
    let mut corpus: Vec<Vec<u32>> = Vec::new();
    for i in 0..200u32 {
        let target = i % 2;
        let c = 2 + (i / 2) % 4;
        corpus.push(vec![c, target, 2 + (c - 1) % 4]);
        corpus.push(vec![6 + i % 10, 6 + (i * 3 + 1) % 10, 6 + (i * 7 + 2) % 10]);
    }
    let vocab_size = 16;
    let spec = SkipGramSpec {
        window: 1,
        negatives: 3,
        dim: 12,
        noise: unigram_noise(&corpus, vocab_size).unwrap(),
    };
    let (m, report) = train_skipgram(&corpus, vocab_size, &spec, &SgdSpec { epochs: 30, lr: 0.05, seed: 3 }).unwrap();
    assert!(report.losses.iter().all(|l| l.is_finite()));
    let target = cosine_similarity(m.center.row(0), m.center.row(1));
    let mut others = Vec::new();
    for i in 6..16 {
        for j in (i + 1)..16 {
            others.push(cosine_similarity(m.center.row(i), m.center.row(j)));
        }
    }
    let mean = others.iter().sum::<f64>() / others.len() as f64;
    assert!(target > mean, "happy/unhappy {target} vs random pairs {mean}");
    assert!(target > 0.5, "{target}");
}

#[test]
fn lexicon_instances_train_from_a_dictionary() {
    let b = bundle();
    let (instances, truncated) = build_instances(&b.lexicon, 24).unwrap();
    assert_eq!(instances.len(), b.lexicon.len());
    assert_eq!(truncated, 0);
    let (_, report) = train_mlm(&model(&b, 1), &b.vocab, &instances, &mlm_spec(3, 1e-3)).unwrap();
    assert_eq!(report.losses.len(), 3);
}
