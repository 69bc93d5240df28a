//! `narm` — command-line front door for the session recommender.
//!
//! Six subcommands wire the library's pipeline end to end: `preprocess`
//! turns a raw click log into vocab/sessions/examples files, `train` fits
//! the attentive encoder-decoder and writes checkpoints, `evaluate` ranks a
//! held-out example set with the model or a baseline, `predict` scores one
//! prefix, `export-attention` dumps per-session attention weights, and
//! `gradcheck` compares analytic gradients against finite differences.
//!
//! Exit codes: 0 success, 1 verification/metric failure, 2 usage or input
//! error. All tabular output is tab-separated with a header line, and no
//! command writes outside the configured output directory.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand, ValueEnum};

use narm::baselines::{itemknn_train, pop_train, PopScorer, SpopScorer};
use narm::dataset::{
    build_sessions, corpus_stats, filter_corpus, filter_test_items, index_corpus, load_clicks,
    read_examples, read_sessions, split_sequences, take_recent_fraction, temporal_split,
    write_examples, write_sessions, ColumnSchema, ItemVocab, SessionCorpus,
};
use narm::evaluation::{evaluate, export_attention, top_k_indices};
use narm::model::gradcheck::gradient_check_seeds;
use narm::model::{
    load_checkpoint, predict, save_checkpoint, NarmConfig, NarmParams, NarmScorer, SessionFeature,
};
use narm::training::{train_log_to_tsv, train_with, TrainConfig};
use narm::RngState;

use config::{parse_delimiter, Failure, FileConfig};

#[derive(Parser)]
#[command(
    name = "narm",
    version,
    about = "Session-based next-item recommendation with an attentive GRU encoder"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Load a click log, filter and split it, and write vocab, sessions,
    /// examples, and a stats summary.
    Preprocess(PreprocessArgs),
    /// Train the model on preprocessed examples; writes per-epoch
    /// checkpoints, a training log, and a best-epoch pointer.
    Train(TrainArgs),
    /// Rank held-out examples with a trained model or a baseline and print
    /// recall/MRR.
    Evaluate(EvaluateArgs),
    /// Score one prefix of item ids and print the top-k items.
    Predict(PredictArgs),
    /// Write per-session attention weights as JSON lines.
    ExportAttention(ExportAttentionArgs),
    /// Compare analytic gradients against finite differences on a tiny
    /// random model.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FeatureArg {
    Hybrid,
    Global,
    Local,
}

impl FeatureArg {
    fn to_model(self) -> SessionFeature {
        match self {
            FeatureArg::Hybrid => SessionFeature::Hybrid,
            FeatureArg::Global => SessionFeature::Global,
            FeatureArg::Local => SessionFeature::Local,
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum ScorerArg {
    Narm,
    Pop,
    Spop,
    ItemKnn,
}

#[derive(clap::Args)]
struct PreprocessArgs {
    /// Flat key=value config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Click log with session id, timestamp, and item id columns.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Directory every artifact is written into.  [default: narm-out]
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Field delimiter, one byte or \t.  [default: ,]
    #[arg(long)]
    delimiter: Option<String>,
    /// Skip a header row.  [default: false]
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    has_header: Option<bool>,
    /// Zero-based session id column.  [default: 0]
    #[arg(long)]
    session_col: Option<usize>,
    /// Zero-based timestamp column.  [default: 1]
    #[arg(long)]
    time_col: Option<usize>,
    /// Zero-based item id column.  [default: 2]
    #[arg(long)]
    item_col: Option<usize>,
    /// Abort when more than this fraction of rows fails to parse.
    /// [default: 1.0]
    #[arg(long)]
    max_malformed_fraction: Option<f64>,
    /// Keep only the most recent fraction of sessions.  [default: 1.0]
    #[arg(long)]
    fraction: Option<f64>,
    /// Drop items with fewer total clicks than this.  [default: 5]
    #[arg(long)]
    min_item_support: Option<usize>,
    /// Drop sessions shorter than this.  [default: 2]
    #[arg(long)]
    min_session_len: Option<usize>,
    /// Re-run the support/length filter until nothing changes.
    /// [default: false]
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    filter_fixpoint: Option<bool>,
    /// Sessions starting within this many seconds of the latest session go
    /// to the test split.  [default: 86400]
    #[arg(long)]
    holdout_seconds: Option<i64>,
    /// Maximum prefix length kept when expanding sessions into examples.
    /// [default: 19]
    #[arg(long)]
    truncation: Option<usize>,
}

#[derive(clap::Args)]
struct TrainArgs {
    /// Flat key=value config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory checkpoints and the log are written into.
    /// [default: narm-out]
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Training examples TSV.  [default: {out-dir}/train-examples.tsv]
    #[arg(long)]
    examples: Option<PathBuf>,
    /// Vocabulary TSV.  [default: {out-dir}/vocab.tsv]
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Item embedding width.  [default: 50]
    #[arg(long)]
    embedding_dim: Option<usize>,
    /// GRU hidden width.  [default: 100]
    #[arg(long)]
    hidden_dim: Option<usize>,
    /// Maximum encoded prefix length.  [default: 19]
    #[arg(long)]
    truncation: Option<usize>,
    /// Session feature fed to the decoder.  [default: hybrid]
    #[arg(long, value_enum)]
    feature: Option<FeatureArg>,
    /// Softmax the attention scores over positions.  [default: false]
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    normalize_attention: Option<bool>,
    /// Add bias vectors to the GRU pre-activations.  [default: false]
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    use_biases: Option<bool>,
    /// Drop probability on embedded inputs.  [default: 0.25]
    #[arg(long)]
    dropout_embed: Option<f64>,
    /// Drop probability on the session representation.  [default: 0.5]
    #[arg(long)]
    dropout_repr: Option<f64>,
    /// Adam learning rate.  [default: 0.001]
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Mini-batch size.  [default: 512]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Number of passes over the training set.  [default: 30]
    #[arg(long)]
    epochs: Option<usize>,
    /// Share of examples held out for per-epoch validation.  [default: 0.1]
    #[arg(long)]
    validation_fraction: Option<f64>,
    /// Global-norm gradient clip; omit (or 'none' in the file) to disable.
    #[arg(long)]
    clip_norm: Option<f64>,
    /// Cutoff for the validation recall used in model selection.
    /// [default: 20]
    #[arg(long)]
    selection_k: Option<usize>,
    /// Seed for init, shuffling, and dropout.  [default: 1]
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(clap::Args)]
struct EvaluateArgs {
    /// Flat key=value config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory preprocessed inputs are read from.  [default: narm-out]
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Examples TSV to rank.  [default: {out-dir}/test-examples.tsv]
    #[arg(long)]
    examples: Option<PathBuf>,
    /// What does the ranking: the trained model or a baseline.
    /// [default: narm]
    #[arg(long, value_enum)]
    scorer: Option<ScorerArg>,
    /// Model checkpoint.  [default: the one named by
    /// {out-dir}/checkpoint-best.txt]
    #[arg(long)]
    model: Option<PathBuf>,
    /// Training sessions TSV baselines are fitted on.
    /// [default: {out-dir}/train-sessions.tsv]
    #[arg(long)]
    sessions: Option<PathBuf>,
    /// Vocabulary TSV.  [default: {out-dir}/vocab.tsv]
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Ranking cutoff.  [default: 20]
    #[arg(long)]
    k: Option<usize>,
    /// Also print the per-prefix-length breakdown.  [default: false]
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    per_length: Option<bool>,
    /// Item-KNN similarity damping term.  [default: 20]
    #[arg(long)]
    knn_lambda: Option<f64>,
    /// Item-KNN: score the just-clicked item at minus infinity.
    /// [default: true]
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    knn_exclude_current: Option<bool>,
}

#[derive(clap::Args)]
struct PredictArgs {
    /// Flat key=value config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory the model and vocab are read from.  [default: narm-out]
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Model checkpoint.  [default: the one named by
    /// {out-dir}/checkpoint-best.txt]
    #[arg(long)]
    model: Option<PathBuf>,
    /// Vocabulary TSV.  [default: {out-dir}/vocab.tsv]
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Comma-separated prefix of item ids, oldest first.
    #[arg(long)]
    items: Option<String>,
    /// How many items to print.  [default: 20]
    #[arg(long)]
    k: Option<usize>,
}

#[derive(clap::Args)]
struct ExportAttentionArgs {
    /// Flat key=value config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory inputs are read from and the dump is written into.
    /// [default: narm-out]
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Model checkpoint.  [default: the one named by
    /// {out-dir}/checkpoint-best.txt]
    #[arg(long)]
    model: Option<PathBuf>,
    /// Vocabulary TSV.  [default: {out-dir}/vocab.tsv]
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Sessions TSV to trace.  [default: {out-dir}/test-sessions.tsv]
    #[arg(long)]
    sessions: Option<PathBuf>,
    /// Recommendations recorded per trace.  [default: 20]
    #[arg(long)]
    k: Option<usize>,
    /// Output JSON-lines file.  [default: {out-dir}/attention.jsonl]
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(clap::Args)]
struct GradcheckArgs {
    /// Items in the random vocabulary.  [default: 11]
    #[arg(long)]
    vocab_size: Option<usize>,
    /// Item embedding width.  [default: 4]
    #[arg(long)]
    embedding_dim: Option<usize>,
    /// GRU hidden width.  [default: 5]
    #[arg(long)]
    hidden_dim: Option<usize>,
    /// Length of the random prefix.  [default: 3]
    #[arg(long)]
    prefix_len: Option<usize>,
    /// Number of random (model, prefix) draws.  [default: 20]
    #[arg(long)]
    seeds: Option<u64>,
    /// Finite-difference step.  [default: 1e-5]
    #[arg(long)]
    eps: Option<f64>,
    /// Largest accepted relative error.  [default: 1e-5]
    #[arg(long)]
    tolerance: Option<f64>,
    /// Session feature variant to check.  [default: hybrid]
    #[arg(long, value_enum)]
    feature: Option<FeatureArg>,
    /// Softmax the attention scores over positions.  [default: false]
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    normalize_attention: Option<bool>,
    /// Add bias vectors to the GRU pre-activations.  [default: false]
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    use_biases: Option<bool>,
    /// Self-test hook: perturb this analytic block before comparing, which
    /// must make the check fail.
    #[arg(long, hide = true)]
    corrupt: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Preprocess(args) => cmd_preprocess(args),
        Cmd::Train(args) => cmd_train(args),
        Cmd::Evaluate(args) => cmd_evaluate(args),
        Cmd::Predict(args) => cmd_predict(args),
        Cmd::ExportAttention(args) => cmd_export_attention(args),
        Cmd::Gradcheck(args) => cmd_gradcheck(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

/// flag > file > default resolution against one loaded config file.
struct Resolve<'a> {
    file: &'a FileConfig,
}

impl Resolve<'_> {
    fn get<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, Failure>
    where
        T::Err: std::fmt::Display,
    {
        Ok(flag.or(self.file.get(key)?).unwrap_or(default))
    }

    fn opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, Failure>
    where
        T::Err: std::fmt::Display,
    {
        Ok(flag.or(self.file.get(key)?))
    }

    fn required<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<T, Failure>
    where
        T::Err: std::fmt::Display,
    {
        self.opt(flag, key)?.ok_or_else(|| {
            Failure::usage(format!("missing --{key} (and no '{key}' in a config file)"))
        })
    }
}

fn load_file(path: Option<&Path>) -> Result<FileConfig, Failure> {
    match path {
        Some(p) => FileConfig::load(p),
        None => Ok(FileConfig::empty()),
    }
}

fn enum_from_file<T: ValueEnum>(file: &FileConfig, key: &str) -> Result<Option<T>, Failure> {
    match file.raw(key) {
        None => Ok(None),
        Some(raw) => T::from_str(raw, true)
            .map(Some)
            .map_err(|e| Failure::usage(format!("config key '{key}': {e}"))),
    }
}

fn out_dir_of(r: &Resolve, flag: Option<PathBuf>) -> Result<PathBuf, Failure> {
    r.get(flag, "out-dir", PathBuf::from("narm-out"))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, contents)
        .map_err(|e| Failure::usage(format!("write {}: {e}", path.display())))
}

fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir)
        .map_err(|e| Failure::usage(format!("create {}: {e}", dir.display())))
}

/// --model flag, then the 'model' file key, then the best-checkpoint
/// pointer written by `train`.
fn resolve_model(r: &Resolve, flag: Option<PathBuf>, out_dir: &Path) -> Result<PathBuf, Failure> {
    if let Some(p) = r.opt(flag, "model")? {
        return Ok(p);
    }
    let pointer = out_dir.join("checkpoint-best.txt");
    let name = fs::read_to_string(&pointer).map_err(|e| {
        Failure::usage(format!(
            "no --model given and cannot read {}: {e} (run train first?)",
            pointer.display()
        ))
    })?;
    let name = name.trim();
    if name.is_empty() {
        return Err(Failure::usage(format!("{} is empty", pointer.display())));
    }
    Ok(out_dir.join(name))
}

fn stats_table(train: &SessionCorpus, test: &SessionCorpus) -> String {
    use std::fmt::Write as _;
    let mut out = String::from("scope\tsessions\tclicks\titems\tavg_length\n");
    for (scope, c) in [("train", corpus_stats(train)), ("test", corpus_stats(test))] {
        let _ = writeln!(
            out,
            "{scope}\t{}\t{}\t{}\t{:.4}",
            c.sessions, c.clicks, c.items, c.avg_length
        );
    }
    out
}

fn cmd_preprocess(args: PreprocessArgs) -> Result<(), Failure> {
    let file = load_file(args.config.as_deref())?;
    let r = Resolve { file: &file };
    let input: PathBuf = r.required(args.input, "input")?;
    let out_dir = out_dir_of(&r, args.out_dir)?;
    let schema = ColumnSchema {
        delimiter: parse_delimiter(&r.get(args.delimiter, "delimiter", ",".to_string())?)?,
        has_header: r.get(args.has_header, "has-header", false)?,
        session_col: r.get(args.session_col, "session-col", 0)?,
        time_col: r.get(args.time_col, "time-col", 1)?,
        item_col: r.get(args.item_col, "item-col", 2)?,
        max_malformed_fraction: r.get(args.max_malformed_fraction, "max-malformed-fraction", 1.0)?,
    };
    let fraction = r.get(args.fraction, "fraction", 1.0)?;
    let min_item_support = r.get(args.min_item_support, "min-item-support", 5)?;
    let min_session_len = r.get(args.min_session_len, "min-session-len", 2)?;
    let fixpoint = r.get(args.filter_fixpoint, "filter-fixpoint", false)?;
    let holdout_seconds = r.get(args.holdout_seconds, "holdout-seconds", 86_400)?;
    let truncation = r.get(args.truncation, "truncation", 19)?;

    if !input.exists() {
        return Err(Failure::usage(format!("input file {} does not exist", input.display())));
    }
    let (events, load) = load_clicks(&input, &schema)?;
    if load.malformed > 0 {
        eprintln!("warning: skipped {} malformed of {} rows", load.malformed, load.total_rows);
    }
    let full = build_sessions(&events);
    let recent = if fraction < 1.0 { take_recent_fraction(&full, fraction)? } else { full };
    let filtered = filter_corpus(&recent, min_item_support, min_session_len, fixpoint)?;
    let (train_corpus, test_raw) = temporal_split(&filtered, holdout_seconds)?;
    let test_corpus = filter_test_items(&test_raw, &train_corpus)?;

    let vocab = ItemVocab::build(&train_corpus);
    let train_idx = index_corpus(&train_corpus, &vocab)?;
    let test_idx = index_corpus(&test_corpus, &vocab)?;
    let train_examples = split_sequences(&train_idx, truncation)?;
    let test_examples = split_sequences(&test_idx, truncation)?;

    ensure_dir(&out_dir)?;
    vocab.write(&out_dir.join("vocab.tsv"))?;
    write_sessions(&out_dir.join("train-sessions.tsv"), &train_corpus)?;
    write_sessions(&out_dir.join("test-sessions.tsv"), &test_corpus)?;
    write_examples(&out_dir.join("train-examples.tsv"), &train_examples)?;
    write_examples(&out_dir.join("test-examples.tsv"), &test_examples)?;

    let stats = stats_table(&train_corpus, &test_corpus);
    write_file(&out_dir.join("stats.tsv"), &stats)?;
    print!("{stats}");
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), Failure> {
    let file = load_file(args.config.as_deref())?;
    let r = Resolve { file: &file };
    let out_dir = out_dir_of(&r, args.out_dir)?;
    let examples_path = r.get(args.examples, "examples", out_dir.join("train-examples.tsv"))?;
    let vocab_path = r.get(args.vocab, "vocab", out_dir.join("vocab.tsv"))?;

    let vocab = ItemVocab::read(&vocab_path)?;
    let examples = read_examples(&examples_path)?;

    let mut model_config = NarmConfig::new(vocab.len());
    model_config.embedding_dim =
        r.get(args.embedding_dim, "embedding-dim", model_config.embedding_dim)?;
    model_config.hidden_dim = r.get(args.hidden_dim, "hidden-dim", model_config.hidden_dim)?;
    model_config.truncation = r.get(args.truncation, "truncation", model_config.truncation)?;
    if let Some(f) = args.feature.or(enum_from_file::<FeatureArg>(&file, "feature")?) {
        model_config.feature = f.to_model();
    }
    model_config.normalize_attention =
        r.get(args.normalize_attention, "normalize-attention", false)?;
    model_config.use_biases = r.get(args.use_biases, "use-biases", false)?;
    model_config.dropout_embed =
        r.get(args.dropout_embed, "dropout-embed", model_config.dropout_embed)?;
    model_config.dropout_repr =
        r.get(args.dropout_repr, "dropout-repr", model_config.dropout_repr)?;

    let defaults = TrainConfig::default();
    let clip_norm = match args.clip_norm {
        Some(v) => Some(v),
        None => match file.raw("clip-norm") {
            None => defaults.clip_norm,
            Some("none") => None,
            Some(_) => file.get::<f64>("clip-norm")?,
        },
    };
    let train_config = TrainConfig {
        learning_rate: r.get(args.learning_rate, "learning-rate", defaults.learning_rate)?,
        batch_size: r.get(args.batch_size, "batch-size", defaults.batch_size)?,
        epochs: r.get(args.epochs, "epochs", defaults.epochs)?,
        validation_fraction: r.get(
            args.validation_fraction,
            "validation-fraction",
            defaults.validation_fraction,
        )?,
        clip_norm,
        selection_k: r.get(args.selection_k, "selection-k", defaults.selection_k)?,
        seed: r.get(args.seed, "seed", defaults.seed)?,
    };
    let k = train_config.selection_k;

    ensure_dir(&out_dir)?;
    println!("epoch\tmean_loss\tval_recall@{k}\tval_mrr@{k}\twall_seconds");
    let outcome = train_with(&model_config, &train_config, &examples, |epoch, params, row| {
        save_checkpoint(
            &out_dir.join(format!("checkpoint-epoch-{epoch}.narm")),
            params,
            &model_config,
        )?;
        println!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.3}",
            row.epoch, row.mean_loss, row.val_recall, row.val_mrr, row.wall_seconds
        );
        Ok(())
    })?;

    write_file(
        &out_dir.join("train-log.tsv"),
        train_log_to_tsv(&outcome.log, k, outcome.best_epoch),
    )?;
    write_file(
        &out_dir.join("checkpoint-best.txt"),
        format!("checkpoint-epoch-{}.narm\n", outcome.best_epoch),
    )?;

    let best = &outcome.log[outcome.best_epoch - 1];
    println!("best_epoch\tval_recall@{k}\tval_mrr@{k}");
    println!("{}\t{:.6}\t{:.6}", outcome.best_epoch, best.val_recall, best.val_mrr);
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), Failure> {
    let file = load_file(args.config.as_deref())?;
    let r = Resolve { file: &file };
    let out_dir = out_dir_of(&r, args.out_dir)?;
    let scorer =
        args.scorer.or(enum_from_file::<ScorerArg>(&file, "scorer")?).unwrap_or(ScorerArg::Narm);
    let k = r.get(args.k, "k", 20)?;
    let per_length = r.get(args.per_length, "per-length", false)?;
    let examples_path = r.get(args.examples, "examples", out_dir.join("test-examples.tsv"))?;
    let examples = read_examples(&examples_path)?;

    let report = match scorer {
        ScorerArg::Narm => {
            let model_path = resolve_model(&r, args.model, &out_dir)?;
            let (params, model_config) = load_checkpoint(&model_path)?;
            evaluate(&NarmScorer { params: &params, config: &model_config }, &examples, k)?
        }
        _ => {
            let vocab_path = r.get(args.vocab, "vocab", out_dir.join("vocab.tsv"))?;
            let sessions_path =
                r.get(args.sessions, "sessions", out_dir.join("train-sessions.tsv"))?;
            let vocab = ItemVocab::read(&vocab_path)?;
            let corpus = read_sessions(&sessions_path)?;
            let sessions = index_corpus(&corpus, &vocab)?;
            match scorer {
                ScorerArg::Pop => {
                    let model = pop_train(&sessions, vocab.len());
                    evaluate(&PopScorer(&model), &examples, k)?
                }
                ScorerArg::Spop => {
                    let model = pop_train(&sessions, vocab.len());
                    evaluate(&SpopScorer(&model), &examples, k)?
                }
                ScorerArg::ItemKnn => {
                    let lambda = r.get(args.knn_lambda, "knn-lambda", 20.0)?;
                    let mut model = itemknn_train(&sessions, vocab.len(), lambda);
                    model.exclude_current =
                        r.get(args.knn_exclude_current, "knn-exclude-current", true)?;
                    evaluate(&model, &examples, k)?
                }
                ScorerArg::Narm => unreachable!("handled above"),
            }
        }
    };

    let text = report.to_tsv();
    if per_length {
        print!("{text}");
    } else {
        for line in text.lines().take(2) {
            println!("{line}");
        }
    }
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<(), Failure> {
    let file = load_file(args.config.as_deref())?;
    let r = Resolve { file: &file };
    let out_dir = out_dir_of(&r, args.out_dir)?;
    let items: String = r.required(args.items, "items")?;
    let k = r.get(args.k, "k", 20)?;
    if k == 0 {
        return Err(Failure::usage("k must be at least 1"));
    }

    let model_path = resolve_model(&r, args.model, &out_dir)?;
    let (params, model_config) = load_checkpoint(&model_path)?;
    let vocab_path = r.get(args.vocab, "vocab", out_dir.join("vocab.tsv"))?;
    let vocab = ItemVocab::read(&vocab_path)?;
    if vocab.len() != model_config.vocab_size {
        return Err(Failure::usage(format!(
            "vocabulary has {} items but the checkpoint was trained on {}",
            vocab.len(),
            model_config.vocab_size
        )));
    }

    let prefix = items
        .split(',')
        .map(str::trim)
        .filter(|id| !id.is_empty())
        .map(|id| vocab.index_of(id).ok_or_else(|| Failure::usage(format!("unknown item id: {id}"))))
        .collect::<Result<Vec<u32>, Failure>>()?;
    if prefix.is_empty() {
        return Err(Failure::usage("--items must name at least one item"));
    }

    let prediction = predict(&params, &model_config, &prefix)?;
    println!("item\tprobability");
    for idx in top_k_indices(&prediction.probs, k.min(vocab.len())) {
        let id = vocab.item(idx).expect("top-k index in vocab range");
        println!("{id}\t{:.9}", prediction.probs[idx as usize - 1]);
    }
    Ok(())
}

fn cmd_export_attention(args: ExportAttentionArgs) -> Result<(), Failure> {
    let file = load_file(args.config.as_deref())?;
    let r = Resolve { file: &file };
    let out_dir = out_dir_of(&r, args.out_dir)?;
    let k = r.get(args.k, "k", 20)?;
    let model_path = resolve_model(&r, args.model, &out_dir)?;
    let vocab_path = r.get(args.vocab, "vocab", out_dir.join("vocab.tsv"))?;
    let sessions_path = r.get(args.sessions, "sessions", out_dir.join("test-sessions.tsv"))?;
    let output = r.get(args.output, "output", out_dir.join("attention.jsonl"))?;

    let (params, model_config) = load_checkpoint(&model_path)?;
    let vocab = ItemVocab::read(&vocab_path)?;
    let corpus = read_sessions(&sessions_path)?;
    let sessions = index_corpus(&corpus, &vocab)?;

    let mut buf = Vec::new();
    let traces = export_attention(&params, &model_config, &sessions, &vocab, k, &mut buf)?;
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    write_file(&output, &buf)?;
    println!("traces\toutput");
    println!("{traces}\t{}", output.display());
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<(), Failure> {
    let vocab_size = args.vocab_size.unwrap_or(11);
    let prefix_len = args.prefix_len.unwrap_or(3);
    let seeds = args.seeds.unwrap_or(20);
    let eps = args.eps.unwrap_or(1e-5);
    let tolerance = args.tolerance.unwrap_or(1e-5);
    if seeds == 0 {
        return Err(Failure::usage("seeds must be at least 1"));
    }

    let mut config = NarmConfig::new(vocab_size);
    config.embedding_dim = args.embedding_dim.unwrap_or(4);
    config.hidden_dim = args.hidden_dim.unwrap_or(5);
    config.dropout_embed = 0.0;
    config.dropout_repr = 0.0;
    if let Some(f) = args.feature {
        config.feature = f.to_model();
    }
    config.normalize_attention = args.normalize_attention.unwrap_or(false);
    config.use_biases = args.use_biases.unwrap_or(false);

    if let Some(name) = args.corrupt.as_deref() {
        let probe = NarmParams::init(&config, &mut RngState::new(0))?;
        if !probe.blocks().iter().any(|(n, _)| *n == name) {
            return Err(Failure::usage(format!("unknown parameter block '{name}'")));
        }
    }

    let reports =
        gradient_check_seeds(&config, prefix_len, 0..seeds, eps, tolerance, args.corrupt.as_deref())?;

    // One row per parameter block, worst case over all seeds.
    println!("block\tmax_rel_error\tresult");
    let mut all_pass = true;
    let mut overall: f64 = 0.0;
    for i in 0..reports[0].blocks.len() {
        let name = reports[0].blocks[i].name;
        let mut worst: f64 = 0.0;
        let mut pass = true;
        for rep in &reports {
            debug_assert_eq!(rep.blocks[i].name, name);
            worst = worst.max(rep.blocks[i].rel_error);
            pass &= rep.blocks[i].pass;
        }
        overall = overall.max(worst);
        all_pass &= pass;
        println!("{name}\t{worst:.6e}\t{}", if pass { "ok" } else { "FAIL" });
    }
    println!(
        "max_rel_error\t{overall:.6e}\ttolerance\t{tolerance:.6e}\t{}",
        if all_pass { "PASS" } else { "FAIL" }
    );
    if !all_pass {
        return Err(Failure::check(format!(
            "gradient check failed: max relative error {overall:.6e} exceeds tolerance {tolerance:.6e}"
        )));
    }
    Ok(())
}
