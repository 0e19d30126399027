//! Command-line front end: train, eval, gradcheck, ablate, synth.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dmn_core::encoder::{EmbeddingStore, Vocabulary};
use dmn_core::harness::{
    evaluate, generate_synthetic, model_gradient_check, random_gradcheck_case, run_ablation_suite,
    train, AblationData, AblationOptions, SynthTaskSpec, TrainConfig,
};
use dmn_core::interface::{
    load_model, read_jsonl, read_race_dir, save_model, write_jsonl, ModelBundle, MultiChoiceExample,
};
use dmn_core::matching::{AttentionNorm, Direction, Fusion, MatchConfig};
use dmn_core::model::EncoderKind;
use dmn_core::{Error, Model, ModelConfig, Result};

#[derive(Parser)]
#[command(
    name = "dmn",
    version,
    about = "Dual co-matching network for multi-choice reading comprehension"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and print one JSON metrics line per epoch.
    Train(TrainArgs),
    /// Score a saved model on a dataset.
    Eval(EvalArgs),
    /// Compare analytic gradients with central differences on a random instance.
    Gradcheck(GradcheckArgs),
    /// Train the ablation variants over several seeds and report deltas.
    Ablate(AblateArgs),
    /// Write a synthetic dataset as JSONL splits.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Race,
    Jsonl,
    Synth,
}

#[derive(Clone, Copy, ValueEnum)]
enum AttentionArg {
    Dual,
    Literal,
}

#[derive(Clone, Copy, ValueEnum)]
enum FusionArg {
    Gated,
    Concat,
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    Bi,
    Uni,
}

#[derive(Clone, Copy, ValueEnum)]
enum EncoderArg {
    Lookup,
    Precomputed,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Training data: RACE directory, JSONL file, or (synth) a directory written by `dmn synth`.
    /// With `--format synth` and no path, the default synthetic task is generated in memory.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "synth")]
    format: Format,
    /// Dev data in the same format (ignored for synth, which carries its own splits).
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Largest vocabulary built from training text.
    #[arg(long, default_value_t = 30000)]
    vocab_size: usize,
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    #[arg(long, default_value_t = 64)]
    max_len: usize,
    #[arg(long, value_enum, default_value = "dual")]
    attention: AttentionArg,
    #[arg(long, value_enum, default_value = "gated")]
    fusion: FusionArg,
    #[arg(long, value_enum, default_value = "bi")]
    direction: DirectionArg,
    /// Drop the question-answer pair from the representation.
    #[arg(long)]
    no_qa_pair: bool,
    /// Share one parameter set across the three pairs.
    #[arg(long)]
    share_pair_params: bool,
    #[arg(long, value_enum, default_value = "lookup")]
    encoder: EncoderArg,
    /// Embedding store file or directory for the precomputed encoder.
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct OptimArgs {
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 4)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dropout after the matching projections during training.
    #[arg(long, default_value_t = 0.3)]
    dropout_match: f64,
    #[arg(long, default_value_t = 0.1)]
    warmup: f64,
    /// Global gradient norm cap; 0 disables clipping.
    #[arg(long, default_value_t = 1.0)]
    clip: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    optim: OptimArgs,
    /// Where to save the trained model bundle.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also append per-epoch JSON lines to this file.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "jsonl")]
    format: Format,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Write per-example predictions as JSONL.
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 4)]
    hidden: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, value_enum, default_value = "dual")]
    attention: AttentionArg,
    #[arg(long, value_enum, default_value = "gated")]
    fusion: FusionArg,
    #[arg(long, value_enum, default_value = "bi")]
    direction: DirectionArg,
    #[arg(long)]
    no_qa_pair: bool,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    optim: OptimArgs,
    /// Seeds per variant.
    #[arg(long, default_value_t = 5)]
    seeds: usize,
    /// Also run the full model with single-softmax attention.
    #[arg(long)]
    literal: bool,
    #[arg(long)]
    json_out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 64)]
    vocab_size: usize,
    #[arg(long, default_value_t = 4)]
    candidates: usize,
    #[arg(long, default_value_t = 16)]
    passage_len: usize,
    #[arg(long, default_value_t = 4)]
    answer_len: usize,
    #[arg(long, default_value_t = 3)]
    question_len: usize,
    #[arg(long, default_value_t = 0.5)]
    overlap: f64,
    #[arg(long, default_value_t = 2000)]
    train_size: usize,
    #[arg(long, default_value_t = 500)]
    dev_size: usize,
    #[arg(long, default_value_t = 500)]
    test_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for train.jsonl, dev.jsonl, test.jsonl and spec.json.
    #[arg(long)]
    out: PathBuf,
}

fn matching_config(
    a: AttentionArg,
    f: FusionArg,
    d: DirectionArg,
    no_qa: bool,
    share: bool,
    dropout: f64,
) -> MatchConfig {
    MatchConfig {
        attention: match a {
            AttentionArg::Dual => AttentionNorm::Dual,
            AttentionArg::Literal => AttentionNorm::Literal,
        },
        direction: match d {
            DirectionArg::Bi => Direction::Bidirectional,
            DirectionArg::Uni => Direction::Unidirectional,
        },
        fusion: match f {
            FusionArg::Gated => Fusion::Gated,
            FusionArg::Concat => Fusion::Concat,
        },
        use_qa_pair: !no_qa,
        share_pair_params: share,
        matching_dropout: dropout,
    }
}

impl ModelArgs {
    fn config(&self, dropout: f64) -> ModelConfig {
        ModelConfig {
            hidden: self.hidden,
            max_len: self.max_len,
            encoder: match self.encoder {
                EncoderArg::Lookup => EncoderKind::Lookup,
                EncoderArg::Precomputed => EncoderKind::Precomputed,
            },
            matching: matching_config(
                self.attention,
                self.fusion,
                self.direction,
                self.no_qa_pair,
                self.share_pair_params,
                dropout,
            ),
        }
    }

    fn store(&self) -> Result<Option<EmbeddingStore>> {
        load_store(
            self.embeddings.as_deref(),
            matches!(self.encoder, EncoderArg::Precomputed),
        )
    }
}

impl OptimArgs {
    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            batch_size: self.batch,
            epochs: self.epochs,
            warmup_fraction: self.warmup,
            seed: self.seed,
            matching_dropout: self.dropout_match,
            gradient_clip_norm: (self.clip > 0.0).then_some(self.clip),
        }
    }
}

fn load_store(path: Option<&Path>, required: bool) -> Result<Option<EmbeddingStore>> {
    match path {
        Some(p) => EmbeddingStore::load(p).map(Some),
        None if required => Err(Error::Config(
            "--encoder precomputed needs --embeddings".into(),
        )),
        None => Ok(None),
    }
}

fn read_examples(path: &Path, format: Format) -> Result<Vec<MultiChoiceExample>> {
    match format {
        Format::Jsonl => {
            let read = read_jsonl(path)?;
            if !read.rejected.is_empty() {
                log::warn!(
                    "{}: {} line(s) rejected",
                    path.display(),
                    read.rejected.len()
                );
            }
            Ok(read.examples)
        }
        Format::Race => {
            let corpus = read_race_dir(path)?;
            for (subset, n) in &corpus.subset_counts {
                log::info!("{}: {subset} {n} examples", path.display());
            }
            Ok(corpus.examples)
        }
        Format::Synth => read_jsonl(path).map(|r| r.examples),
    }
}

struct Splits {
    train: Vec<MultiChoiceExample>,
    dev: Vec<MultiChoiceExample>,
    test: Vec<MultiChoiceExample>,
    vocab: Vocabulary,
}

fn load_splits(args: &DataArgs, seed: u64) -> Result<Splits> {
    match (args.format, &args.data) {
        (Format::Synth, None) => {
            let spec = SynthTaskSpec {
                seed,
                ..Default::default()
            };
            let d = generate_synthetic(&spec)?;
            Ok(Splits {
                train: d.train,
                dev: d.dev,
                test: d.test,
                vocab: spec.vocabulary(),
            })
        }
        (Format::Synth, Some(dir)) => {
            let spec_path = dir.join("spec.json");
            let text = fs::read_to_string(&spec_path).map_err(|e| Error::Io {
                path: spec_path.clone(),
                source: e,
            })?;
            let spec: SynthTaskSpec = serde_json::from_str(&text).map_err(|e| Error::Format {
                path: spec_path.clone(),
                reason: e.to_string(),
            })?;
            let split = |name: &str| -> Result<Vec<MultiChoiceExample>> {
                let p = dir.join(format!("{name}.jsonl"));
                if p.exists() {
                    read_examples(&p, Format::Jsonl)
                } else {
                    Ok(Vec::new())
                }
            };
            Ok(Splits {
                train: split("train")?,
                dev: split("dev")?,
                test: split("test")?,
                vocab: spec.vocabulary(),
            })
        }
        (format, Some(path)) => {
            let train = read_examples(path, format)?;
            let dev = match &args.dev {
                Some(p) => read_examples(p, format)?,
                None => Vec::new(),
            };
            let texts = train.iter().flat_map(|ex| {
                std::iter::once(ex.passage.as_str())
                    .chain([ex.question.as_str()])
                    .chain(ex.candidates.iter().map(String::as_str))
            });
            let vocab = Vocabulary::build(texts, Some(args.vocab_size));
            Ok(Splits {
                train,
                dev,
                test: Vec::new(),
                vocab,
            })
        }
        (_, None) => Err(Error::Config("--data is required for this format".into())),
    }
}

fn json_line(out: &mut impl Write, value: &impl serde::Serialize) -> Result<()> {
    let line = serde_json::to_string(value).expect("serializable");
    writeln!(out, "{line}").map_err(|e| Error::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    })
}

fn run_train(args: TrainArgs) -> Result<()> {
    let splits = load_splits(&args.data, args.optim.seed)?;
    let store = args.model.store()?;
    let cfg = args.optim.train_config();
    let model = Model::new(
        args.model.config(cfg.matching_dropout),
        splits.vocab,
        args.optim.seed,
    )?;
    let train_set = model.prepare_all(&splits.train, store.as_ref())?;
    let dev_set = model.prepare_all(&splits.dev, store.as_ref())?;

    let mut metrics_file = match &args.metrics {
        Some(p) => Some(BufWriter::new(File::create(p).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        })?)),
        None => None,
    };
    let stdout = std::io::stdout();
    let mut write_err = None;
    let outcome = train(model, &train_set, &dev_set, &cfg, |m| {
        let mut lock = stdout.lock();
        let mut r = json_line(&mut lock, m);
        if let Some(f) = metrics_file.as_mut() {
            r = r.and(json_line(f, m));
        }
        if let Err(e) = r {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    if let Some(f) = metrics_file.as_mut() {
        f.flush().map_err(|e| Error::Io {
            path: args.metrics.clone().unwrap_or_default(),
            source: e,
        })?;
    }

    eprintln!(
        "{:>5} {:>11} {:>9} {:>8}",
        "epoch", "train_loss", "dev_acc", "seconds"
    );
    for m in &outcome.metrics {
        let acc = m
            .dev_accuracy
            .map_or("-".to_string(), |a| format!("{:.4}", a));
        eprintln!(
            "{:>5} {:>11.5} {:>9} {:>8.2}",
            m.epoch, m.train_loss, acc, m.wall_seconds
        );
    }
    if let Some(best) = outcome.best_epoch {
        eprintln!("selected epoch {best} (best dev accuracy)");
    }
    if !splits.test.is_empty() {
        let test_set = outcome.model.prepare_all(&splits.test, store.as_ref())?;
        eprintln!(
            "test accuracy {:.4}",
            evaluate(&outcome.model, &test_set)?.accuracy
        );
    }
    if let Some(out) = &args.out {
        save_model(
            &ModelBundle::new(outcome.model, Some(outcome.optimizer)),
            out,
        )?;
        eprintln!("saved {}", out.display());
    }
    Ok(())
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let bundle = load_model(&args.model)?;
    let model = bundle.model;
    let path = args
        .data
        .ok_or_else(|| Error::Config("--data is required".into()))?;
    let examples = match args.format {
        Format::Synth if path.is_dir() => read_examples(&path.join("test.jsonl"), Format::Jsonl)?,
        f => read_examples(&path, f)?,
    };
    let store = load_store(
        args.embeddings.as_deref(),
        model.config.encoder == EncoderKind::Precomputed,
    )?;
    let data = model.prepare_all(&examples, store.as_ref())?;
    let result = evaluate(&model, &data)?;
    if let Some(p) = &args.predictions {
        let mut f = BufWriter::new(File::create(p).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        })?);
        for pred in &result.predictions {
            json_line(&mut f, pred)?;
        }
        f.flush().map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        })?;
    }
    json_line(
        &mut std::io::stdout().lock(),
        &serde_json::json!({ "accuracy": result.accuracy, "mean_loss": result.mean_loss, "examples": data.len() }),
    )
}

/// Returns whether the check passed.
fn run_gradcheck(args: GradcheckArgs) -> Result<bool> {
    let matching = matching_config(
        args.attention,
        args.fusion,
        args.direction,
        args.no_qa_pair,
        false,
        0.0,
    );
    let (model, ex) = random_gradcheck_case(args.hidden, matching, args.seed)?;
    let report = model_gradient_check(&model, &ex, args.step, args.tol)?;
    let mut out = std::io::stdout().lock();
    for e in &report.entries {
        json_line(
            &mut out,
            &serde_json::json!({
                "param": e.name, "max_rel_error": e.max_rel_error, "index": e.worst_index,
                "analytic": e.analytic, "numeric": e.numeric,
            }),
        )?;
    }
    json_line(
        &mut out,
        &serde_json::json!({ "max_rel_error": report.max_rel_error, "tolerance": report.tolerance, "passed": report.passed }),
    )?;
    Ok(report.passed)
}

fn run_ablate(args: AblateArgs) -> Result<()> {
    let splits = load_splits(&args.data, args.optim.seed)?;
    let store = args.model.store()?;
    let cfg = args.optim.train_config();
    let data = AblationData {
        vocab: &splits.vocab,
        train: &splits.train,
        dev: &splits.dev,
        test: &splits.test,
        store: store.as_ref(),
    };
    let opts = AblationOptions {
        seeds: args.seeds,
        base_seed: args.optim.seed,
        include_literal: args.literal,
    };
    let report = run_ablation_suite(&args.model.config(cfg.matching_dropout), &cfg, &data, &opts)?;
    print!("{}", report.to_text());
    if let Some(p) = &args.json_out {
        fs::write(p, report.to_json()).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        })?;
    }
    Ok(())
}

fn run_synth(args: SynthArgs) -> Result<()> {
    let spec = SynthTaskSpec {
        vocab_size: args.vocab_size,
        num_candidates: args.candidates,
        passage_len: args.passage_len,
        answer_len: args.answer_len,
        question_len: args.question_len,
        distractor_overlap: args.overlap,
        train_size: args.train_size,
        dev_size: args.dev_size,
        test_size: args.test_size,
        seed: args.seed,
    };
    let data = generate_synthetic(&spec)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::Io {
        path: args.out.clone(),
        source: e,
    })?;
    write_jsonl(args.out.join("train.jsonl"), &data.train)?;
    write_jsonl(args.out.join("dev.jsonl"), &data.dev)?;
    write_jsonl(args.out.join("test.jsonl"), &data.test)?;
    let spec_path = args.out.join("spec.json");
    fs::write(
        &spec_path,
        serde_json::to_string_pretty(&spec).expect("serializable"),
    )
    .map_err(|e| Error::Io {
        path: spec_path,
        source: e,
    })?;
    Ok(())
}

fn fail(kind: &str, message: impl std::fmt::Display) -> ExitCode {
    eprintln!(
        "{}",
        serde_json::json!({ "error": kind, "message": message.to_string() })
    );
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            return fail(
                "usage",
                msg.lines()
                    .next()
                    .unwrap_or("invalid arguments")
                    .trim_start_matches("error: "),
            );
        }
    };
    let result = match cli.command {
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Gradcheck(a) => match run_gradcheck(a) {
            Ok(true) => Ok(()),
            Ok(false) => return fail("gradcheck_failed", "relative error above tolerance"),
            Err(e) => Err(e),
        },
        Command::Ablate(a) => run_ablate(a),
        Command::Synth(a) => run_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), &e),
    }
}
