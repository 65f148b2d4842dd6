use std::path::{Path, PathBuf};

use crm_core::consistency::{
    evaluate, gen_synthetic_suite, oracle_predictions, ConsistencyReport, EvalReport,
    PredictionSet, Suite, SynthSpec,
};
use crm_core::lexicon::{build_instances, parse_corpus_bytes, parse_lexicon, serialize_lexicon, write_corpus};
use crm_core::merge::merge_models;
use crm_core::model::{init_weights, Checkpoint, ModelBody, ModelConfig, Vocabulary};
use crm_core::training::{
    finetune, parse_task_data_bytes, predict_suite, train_mlm, write_task_data, Artifact, Mode,
    Paraphraser, SynonymTable, TrainReport, TrainSpec,
};
use serde::Serialize;

use crate::config::RunConfig;
use crate::{read, read_text, sidecar, CliError, Command, Context, ModeArg, Outputs};

pub fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::DictBuild {
            input,
            output,
            max_len,
        } => dict_build(&input, &output, max_len),
        Command::Train {
            mode,
            config,
            out,
            report,
            seed,
            init,
            lambda,
            rate,
        } => {
            let mut cfg = match config {
                Some(p) => RunConfig::load(&p)?,
                None => RunConfig::default(),
            };
            cfg.seed = seed.or(cfg.seed);
            cfg.data.init = init.or(cfg.data.init);
            cfg.train.lambda = lambda.or(cfg.train.lambda);
            cfg.train.rate = rate.or(cfg.train.rate);
            let report = report.unwrap_or_else(|| sidecar(&out, ".report.json"));
            train(mode, &cfg, &out, &report)
        }
        Command::Merge {
            inputs,
            config,
            rank,
            alpha,
            seed,
            out,
        } => {
            let mut cfg = match config {
                Some(p) => RunConfig::load(&p)?,
                None => RunConfig::default(),
            };
            cfg.seed = Some(seed.or(cfg.seed).unwrap_or(0));
            cfg.merge.rank = rank.unwrap_or(cfg.merge.rank);
            cfg.merge.alpha = alpha.unwrap_or(cfg.merge.alpha);
            merge(&inputs, &cfg, &out)
        }
        Command::Fold { model, out } => fold(&model, &out),
        Command::Eval {
            models,
            predictions,
            suite,
            report,
            baselines,
            predictions_out,
        } => eval(&models, &predictions, &suite, &report, &baselines, predictions_out.as_deref()),
        Command::Synth { out, seed, config } => synth(&out, seed, config.as_deref()),
    }
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("outputs serialize");
    s.push('\n');
    s.into_bytes()
}

fn dict_build(input: &Path, output: &Path, max_len: usize) -> Result<(), CliError> {
    let lexicon = parse_lexicon(input).context(input.display())?;
    let (instances, truncated) = build_instances(&lexicon.entries, max_len).context("instances")?;
    let mut stats = lexicon.stats;
    stats.truncated = truncated;
    let mut out = Outputs::default();
    out.add(output, write_corpus(&instances).context("corpus")?);
    out.commit()?;
    println!("{}", serde_json::to_string(&stats).expect("stats serialize"));
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    Checkpoint::decode(&read(path)?).context(path.display())
}

fn require<'a>(path: &'a Option<PathBuf>, key: &str, mode: &str) -> Result<&'a Path, CliError> {
    path.as_deref()
        .ok_or_else(|| CliError::Usage(format!("mode {mode} needs data.{key}")))
}

fn resolve_mode(arg: ModeArg, cfg: &RunConfig) -> Result<Mode, CliError> {
    Ok(match arg {
        ModeArg::Mlm => Mode::Mlm,
        ModeArg::Ft => Mode::Ft,
        ModeArg::Pi => Mode::Pi,
        ModeArg::Semcr => Mode::SemCr {
            lambda: cfg
                .train
                .lambda
                .ok_or_else(|| CliError::Usage("mode semcr needs --lambda (or train.lambda)".into()))?,
        },
        ModeArg::Semaug => Mode::SemAug {
            rate: cfg
                .train
                .rate
                .ok_or_else(|| CliError::Usage("mode semaug needs --rate (or train.rate)".into()))?,
        },
    })
}

/// Everything a training run was resolved to, written next to its outputs.
#[derive(Serialize)]
struct ResolvedRun<'a> {
    config: &'a RunConfig,
    spec: &'a TrainSpec,
    model: &'a ModelConfig,
    init_digest: Option<String>,
}

#[derive(Serialize)]
struct Timing {
    wall_clock_secs: f64,
}

fn train(mode: ModeArg, cfg: &RunConfig, out: &Path, report_path: &Path) -> Result<(), CliError> {
    let mode = resolve_mode(mode, cfg)?;
    let spec = cfg.train_spec(mode)?;
    let name = mode.name();
    let init = cfg.data.init.as_deref().map(load_checkpoint).transpose()?;
    let init_digest = init
        .as_ref()
        .map(|c| c.payload_digest().context("init checkpoint"))
        .transpose()?;

    let (checkpoint, report) = if mode == Mode::Mlm {
        let corpus_path = require(&cfg.data.corpus, "corpus", name)?;
        let corpus = parse_corpus_bytes(&read(corpus_path)?).context(corpus_path.display())?;
        let (weights, vocab) = match init {
            Some(c) => match c.body {
                ModelBody::Plain(w) => (w, c.vocab),
                ModelBody::Merged(_) => {
                    return Err(CliError::Data(
                        "masked-LM training needs a plain checkpoint; fold it first".into(),
                    ))
                }
            },
            None => {
                let mut tokens: Vec<String> = corpus.iter().flat_map(|i| i.tokens.iter().cloned()).collect();
                for p in &cfg.data.vocab_corpora {
                    let extra = parse_corpus_bytes(&read(p)?).context(p.display())?;
                    tokens.extend(extra.into_iter().flat_map(|i| i.tokens));
                }
                let vocab = Vocabulary::build(tokens);
                let model = cfg.model.to_config(vocab.len(), cfg.seed.unwrap_or(0));
                (init_weights(&model).context("model")?, vocab)
            }
        };
        let (trained, report) = train_mlm(&weights, &vocab, &corpus, &spec).context("training")?;
        (Checkpoint::plain(trained, vocab).context("checkpoint")?, report)
    } else {
        let init = init.ok_or_else(|| CliError::Usage(format!("mode {name} needs data.init or --init")))?;
        let train_path = require(&cfg.data.train, "train", name)?;
        let train = parse_task_data_bytes(&read(train_path)?).context(train_path.display())?;
        let valid = match &cfg.data.valid {
            Some(p) => parse_task_data_bytes(&read(p)?).context(p.display())?,
            None => Vec::new(),
        };
        let table = match mode {
            Mode::SemCr { .. } | Mode::SemAug { .. } => {
                let p = require(&cfg.data.synonyms, "synonyms", name)?;
                Some(SynonymTable::from_json(&read_text(p)?).context(p.display())?)
            }
            _ => None,
        };
        let artifact = match init.body {
            ModelBody::Plain(w) => Artifact::Plain(w),
            ModelBody::Merged(m) => Artifact::Merged(m),
        };
        let paraphraser = table.as_ref().map(|t| t as &dyn Paraphraser);
        let (trained, report) =
            finetune(artifact, &init.vocab, &train, &valid, &spec, paraphraser).context("training")?;
        let checkpoint = match trained {
            Artifact::Plain(w) => Checkpoint::plain(w, init.vocab),
            Artifact::Merged(m) => Checkpoint::merged(m, init.vocab),
        }
        .context("checkpoint")?;
        (checkpoint, report)
    };

    let resolved = ResolvedRun {
        config: cfg,
        spec: &spec,
        model: checkpoint.config(),
        init_digest,
    };
    let echo = toml::to_string(&resolved)
        .map_err(|e| CliError::Data(format!("resolved config: {e}")))?;
    let mut outputs = Outputs::default();
    outputs.add(out, checkpoint.encode().context("checkpoint")?);
    outputs.add(report_path, to_json(&report));
    outputs.add(sidecar(out, ".resolved.toml"), echo);
    outputs.add(
        sidecar(report_path, ".timing.json"),
        to_json(&Timing {
            wall_clock_secs: report.wall_clock.as_secs_f64(),
        }),
    );
    outputs.commit()?;
    print_summary(&report);
    Ok(())
}

fn print_summary(report: &TrainReport) {
    let summary = serde_json::json!({
        "mode": report.mode,
        "steps": report.steps,
        "final_loss": report.losses.last(),
        "masked_accuracy": report.masked_accuracy,
        "validation_accuracy": report.validation_accuracy,
    });
    println!("{summary}");
}

fn merge(inputs: &[PathBuf], cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let mut vocab: Option<Vocabulary> = None;
    let mut models = Vec::with_capacity(inputs.len());
    for path in inputs {
        let c = load_checkpoint(path)?;
        let w = match c.body {
            ModelBody::Plain(w) => w,
            ModelBody::Merged(_) => {
                return Err(CliError::Data(format!(
                    "{} already carries adapters; fold it before merging",
                    path.display()
                )))
            }
        };
        match &vocab {
            None => vocab = Some(c.vocab),
            Some(v) if *v != c.vocab => {
                return Err(CliError::Data(format!(
                    "{}: vocabulary differs from {}",
                    path.display(),
                    inputs[0].display()
                )))
            }
            Some(_) => {}
        }
        models.push(w);
    }
    let vocab = vocab.ok_or_else(|| CliError::Usage("merge needs at least one input".into()))?;
    let seed = cfg.seed.unwrap_or(0);
    let merged = merge_models(&models, cfg.merge.rank, cfg.merge.alpha, seed).context("merge")?;
    let echo = cfg.to_toml();
    let mut outputs = Outputs::default();
    outputs.add(out, Checkpoint::merged(merged, vocab).and_then(|c| c.encode()).context("checkpoint")?);
    outputs.add(sidecar(out, ".resolved.toml"), echo);
    outputs.commit()
}

fn fold(model: &Path, out: &Path) -> Result<(), CliError> {
    let c = load_checkpoint(model)?;
    let folded = match c.body {
        ModelBody::Merged(m) => m.fold().context("fold")?,
        ModelBody::Plain(_) => {
            return Err(CliError::Data(format!("{} has no adapters to fold", model.display())))
        }
    };
    let mut outputs = Outputs::default();
    outputs.add(out, Checkpoint::plain(folded, c.vocab).and_then(|c| c.encode()).context("checkpoint")?);
    outputs.commit()
}

fn check_suite_vocab(suite: &Suite, vocab: &Vocabulary, model: &Path) -> Result<(), CliError> {
    for inst in &suite.instances {
        let b = inst.tokens_b.iter().flatten();
        if let Some(t) = inst.tokens_a.iter().chain(b).find(|t| vocab.id(t).is_none()) {
            return Err(CliError::Data(format!(
                "vocabulary mismatch: {} has no token {t:?} (instance {})",
                model.display(),
                inst.id
            )));
        }
    }
    Ok(())
}

fn eval(
    models: &[PathBuf],
    predictions: &[PathBuf],
    suite_path: &Path,
    report_path: &Path,
    baselines: &[PathBuf],
    predictions_out: Option<&Path>,
) -> Result<(), CliError> {
    if models.is_empty() && predictions.is_empty() {
        return Err(CliError::Usage("eval needs --model or --predictions".into()));
    }
    let suite = Suite::from_bytes(&read(suite_path)?).context(suite_path.display())?;
    let mut outputs = Outputs::default();
    let mut runs: Vec<ConsistencyReport> = Vec::new();
    for path in models {
        let c = load_checkpoint(path)?;
        check_suite_vocab(&suite, &c.vocab, path)?;
        let artifact = match c.body {
            ModelBody::Plain(w) => Artifact::Plain(w),
            ModelBody::Merged(m) => Artifact::Merged(m),
        };
        let preds = predict_suite(&artifact, &c.vocab, &suite).context(path.display())?;
        runs.push(evaluate(&suite, &preds, None).context(path.display())?);
        if let Some(dir) = predictions_out {
            let stem = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            outputs.add(dir.join(format!("{stem}.predictions.jsonl")), preds.to_jsonl());
        }
    }
    for path in predictions {
        let preds = PredictionSet::from_bytes(&read(path)?).context(path.display())?;
        runs.push(evaluate(&suite, &preds, None).context(path.display())?);
    }
    let mut report = EvalReport::new(runs);
    if !baselines.is_empty() {
        let mut sample = Vec::new();
        for path in baselines {
            let r = EvalReport::from_json(&read_text(path)?).context(path.display())?;
            sample.extend(r.runs);
        }
        report.compare_with(&sample);
    }
    let json = report.to_json();
    outputs.add(report_path, json.clone());
    outputs.commit()?;
    print!("{json}");
    Ok(())
}

fn synth(out: &Path, seed: Option<u64>, config: Option<&Path>) -> Result<(), CliError> {
    let mut spec = match config {
        Some(p) => toml::from_str::<SynthSpec>(&read_text(p)?)
            .map_err(|e| CliError::Usage(format!("{}: {}", p.display(), e.message())))?,
        None => SynthSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let bundle = gen_synthetic_suite(&spec).context("synthetic world")?;
    let oracle = oracle_predictions(&bundle.world, &bundle.suite).context("oracle")?;
    std::fs::create_dir_all(out).map_err(|source| CliError::Io {
        path: out.to_path_buf(),
        source,
    })?;
    let mut outputs = Outputs::default();
    outputs.add(out.join("lexicon.tsv"), serialize_lexicon(&bundle.lexicon));
    outputs.add(out.join("corpus.jsonl"), write_corpus(&bundle.corpus).context("corpus")?);
    outputs.add(out.join("train.jsonl"), write_task_data(&bundle.train));
    outputs.add(out.join("valid.jsonl"), write_task_data(&bundle.valid));
    outputs.add(out.join("suite.jsonl"), bundle.suite.to_jsonl());
    outputs.add(out.join("synonyms.json"), to_json(&bundle.synonyms));
    outputs.add(out.join("oracle.predictions.jsonl"), oracle.to_jsonl());
    outputs.add(
        out.join("synth.toml"),
        toml::to_string(&spec).expect("synth specs serialize"),
    );
    outputs.commit()
}
