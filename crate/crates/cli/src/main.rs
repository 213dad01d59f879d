//! `rebaseline` command-line entry point.
//!
//! Every report goes to stdout as JSON unless `--out` is given. Failures
//! print one JSON line `{"error": class, "exit_code": n, "message": ...}` on
//! stderr and exit with 2 (usage), 3 (io), 4 (validation) or 5 (internal).

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rebaseline::corpus::{compute_statistics, dataset_from_records, parse_jsonl, parse_records, LoadOptions, Record};
use rebaseline::eval::{build_clean, build_filtered, read_predictions, score_indices, score_predictions, Prediction};
use rebaseline::experiment::{noise, unseen_names, ExperimentSettings, Preset};
use rebaseline::marking::{MarkedRecord, SchemeKind};
use rebaseline::synth::{generate, masked_ceiling, type_marginal_ceiling, SynthConfig};
use rebaseline::tokenize::VocabOptions;
use rebaseline::train::{median_f1, predict_split, prepare, train_seeds};
use rebaseline::{
    build_vocab, mark, ClassifierParams, Dataset, Error, ErrorClass, HeadAnchor, LabelSchema, MarkingScheme, MaskMode,
    MatchRule, ModelConfig, TrainConfig, Vocabulary,
};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(
    name = "rebaseline",
    version,
    about = "Typed entity markers and TACRED-style relation classification at desk scale"
)]
struct Cli {
    /// Log progress to stderr (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Instance counts, label histograms and entity types per split.
    Stats(StatsArgs),
    /// Mark a corpus with one scheme and write marked JSON Lines.
    Preprocess(PreprocessArgs),
    /// Build a WordPiece vocabulary from a training split.
    Vocab(VocabArgs),
    /// Train one classifier per seed with dev-based checkpoint selection.
    Train(TrainArgs),
    /// Score predictions or evaluate a trained run.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Keep test instances whose entity mentions never occur in training.
    Filter(FilterArgs),
    /// Keep instances whose label survives re-annotation.
    Clean(CleanArgs),
    /// Generate a synthetic corpus with controllable name signal.
    Synth(SynthArgs),
    /// Run a pinned synthetic experiment and report a summary.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct SchemaArgs {
    /// Label schema: `tacred`, `infer` (from the input files) or a file with one label per line.
    #[arg(long, default_value = "tacred")]
    schema: String,
    /// The no-relation label.
    #[arg(long, default_value = "no_relation")]
    na_label: String,
    /// Drop invalid instances with a warning instead of failing.
    #[arg(long)]
    lenient: bool,
}

#[derive(Args)]
struct OutArg {
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    /// Corpus files (JSON array or .jsonl).
    #[arg(required = true)]
    files: Vec<PathBuf>,
    #[command(flatten)]
    schema: SchemaArgs,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct SchemeArgs {
    /// Entity representation scheme.
    #[arg(long)]
    scheme: SchemeKind,
    /// Which token represents an entity: `entity_first` or `marker_start`.
    #[arg(long, default_value = "entity_first")]
    head_anchor: HeadAnchor,
    /// How entity_mask replaces multi-token spans: `collapse` or `repeat`.
    #[arg(long, default_value = "collapse")]
    mask_mode: MaskMode,
}

impl SchemeArgs {
    fn scheme(&self) -> rebaseline::Result<MarkingScheme> {
        let s = MarkingScheme::new(self.scheme)
            .with_anchor(self.head_anchor)
            .with_mask_mode(self.mask_mode);
        s.validate()?;
        Ok(s)
    }
}

#[derive(Args)]
struct PreprocessArgs {
    /// Corpus file to mark.
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    scheme: SchemeArgs,
    #[command(flatten)]
    schema: SchemaArgs,
    /// Write marked JSON Lines here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VocabArgs {
    /// Training split.
    #[arg(long)]
    train: PathBuf,
    /// Schemes whose special tokens are registered (repeatable).
    #[arg(long = "scheme", required = true)]
    schemes: Vec<SchemeKind>,
    /// Maximum vocabulary size, special tokens included.
    #[arg(long, default_value_t = 8000)]
    max_size: usize,
    /// Lowercase words before splitting.
    #[arg(long)]
    lowercase: bool,
    #[command(flatten)]
    schema: SchemaArgs,
    /// Write the vocabulary here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training split.
    #[arg(long)]
    train: PathBuf,
    /// Development split used for checkpoint selection.
    #[arg(long)]
    dev: PathBuf,
    #[command(flatten)]
    scheme: SchemeArgs,
    /// Optimizer settings (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Encoder settings (TOML).
    #[arg(long)]
    model_config: Option<PathBuf>,
    /// Derive the run seeds from this base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Train seeds concurrently.
    #[arg(long)]
    parallel_seeds: bool,
    /// Directory for the run manifest, vocabulary, parameters and log.
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    schema: SchemaArgs,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Score `{id, pred}` JSON Lines against a gold corpus.
    Score(ScoreArgs),
    /// Predict with every seed of a trained run and score the results.
    Predict(PredictArgs),
}

#[derive(Args)]
struct ScoreArgs {
    /// Gold corpus.
    #[arg(long)]
    gold: PathBuf,
    /// Predictions, one `{"id", "pred"}` object per line.
    #[arg(long)]
    pred: PathBuf,
    #[command(flatten)]
    schema: SchemaArgs,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct PredictArgs {
    /// Directory written by `train`.
    #[arg(long)]
    run_dir: PathBuf,
    /// Corpus to predict.
    #[arg(long)]
    input: PathBuf,
    /// Also write `preds-<seed>.jsonl` files here.
    #[arg(long)]
    pred_dir: Option<PathBuf>,
    /// Drop invalid instances with a warning instead of failing.
    #[arg(long)]
    lenient: bool,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct FilterArgs {
    /// Test split to filter.
    #[arg(long)]
    test: PathBuf,
    /// Training split whose mentions count as seen.
    #[arg(long)]
    train: PathBuf,
    /// Compare mentions case-insensitively.
    #[arg(long)]
    case_fold: bool,
    /// Match subjects against training subjects and objects against training objects only.
    #[arg(long)]
    role_restricted: bool,
    /// Prune only when both mentions were seen.
    #[arg(long)]
    require_both: bool,
    /// Write the kept instances here.
    #[arg(long)]
    subset_out: Option<PathBuf>,
    #[command(flatten)]
    schema: SchemaArgs,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct CleanArgs {
    /// Original test split.
    #[arg(long)]
    original: PathBuf,
    /// Re-annotated test split, joined by id.
    #[arg(long)]
    relabeled: PathBuf,
    /// Schema of the re-annotated split, same forms as --schema.
    #[arg(long, default_value = "infer")]
    relabeled_schema: String,
    /// JSON object mapping original labels to re-annotated labels.
    #[arg(long)]
    label_map: Option<PathBuf>,
    /// Write the kept instances here.
    #[arg(long)]
    subset_out: Option<PathBuf>,
    #[command(flatten)]
    schema: SchemaArgs,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct SynthArgs {
    /// Generator settings (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the generator seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for the generated splits, labels and name rules.
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Args)]
struct ExperimentArgs {
    /// `unseen-names` or `noise`.
    #[arg(long)]
    preset: Preset,
    /// Re-seed the corpus and the training runs.
    #[arg(long)]
    seed: Option<u64>,
    /// Train seeds concurrently.
    #[arg(long)]
    parallel_seeds: bool,
    /// Report format.
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    #[command(flatten)]
    out: OutArg,
}

type Result<T> = rebaseline::Result<T>;

fn read_records(path: &Path) -> Result<Vec<Record>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e == "jsonl") {
        parse_jsonl(text.as_bytes())
    } else {
        parse_records(&text)
    }
}

fn split_name(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("data").to_string()
}

fn resolve_schema(spec: &str, na_label: &str, records: &[&[Record]]) -> Result<LabelSchema> {
    match spec {
        "tacred" => Ok(LabelSchema::tacred()),
        "infer" => Ok(LabelSchema::infer(
            records.iter().flat_map(|r| r.iter()).map(|r| r.relation.as_str()),
            na_label,
        )),
        path => LabelSchema::from_file(path, na_label),
    }
}

/// Loads every file under one schema.
fn load_all(paths: &[&Path], args: &SchemaArgs) -> Result<Vec<Dataset>> {
    let records = paths.iter().map(|p| read_records(p)).collect::<Result<Vec<_>>>()?;
    let slices: Vec<&[Record]> = records.iter().map(Vec::as_slice).collect();
    let schema = resolve_schema(&args.schema, &args.na_label, &slices)?;
    let opts = LoadOptions { lenient: args.lenient };
    paths
        .iter()
        .zip(records)
        .map(|(p, r)| dataset_from_records(split_name(p), r, &schema, opts))
        .collect()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))
}

/// Sends `text` to `out`, or to stdout.
fn emit_text(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => write_file(path, text.as_bytes()),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn emit<T: Serialize>(value: &T, out: &OutArg) -> Result<()> {
    emit_text(&(to_json(value)? + "\n"), out.out.as_deref())
}

fn stats(args: StatsArgs) -> Result<()> {
    let paths: Vec<&Path> = args.files.iter().map(PathBuf::as_path).collect();
    let datasets = load_all(&paths, &args.schema)?;
    let report = datasets
        .iter()
        .map(compute_statistics)
        .reduce(|a, b| a.merge(b))
        .expect("at least one file");
    emit(&report, &args.out)
}

fn preprocess(args: PreprocessArgs) -> Result<()> {
    let scheme = args.scheme.scheme()?;
    let [dataset] = load_all(&[&args.input], &args.schema)?.try_into().expect("one file");
    let mut text = String::new();
    for inst in &dataset.instances {
        let record = MarkedRecord::from(&mark(inst, &scheme)?);
        text += &serde_json::to_string(&record).map_err(|e| Error::Internal(e.to_string()))?;
        text.push('\n');
    }
    emit_text(&text, args.out.as_deref())
}

fn vocab(args: VocabArgs) -> Result<()> {
    let [train] = load_all(&[&args.train], &args.schema)?.try_into().expect("one file");
    let schemes: Vec<MarkingScheme> = args.schemes.iter().map(|&k| MarkingScheme::new(k)).collect();
    let vocab = build_vocab(
        &train,
        &schemes,
        VocabOptions {
            max_size: args.max_size,
            lowercase: args.lowercase,
        },
    )?;
    emit_text(&vocab.to_text(), args.out.as_deref())
}

/// `run.json` in a training output directory.
#[derive(Serialize, Deserialize)]
struct RunManifest {
    scheme: MarkingScheme,
    model: ModelConfig,
    train: TrainConfig,
    labels: Vec<String>,
    na_label: String,
    vocab: String,
    runs: Vec<SeedRun>,
    median_dev_f1: f64,
}

#[derive(Serialize, Deserialize)]
struct SeedRun {
    seed: u64,
    params: String,
    dev_f1: Vec<f64>,
    best_epoch: usize,
    best_dev_f1: Option<f64>,
}

fn train(args: TrainArgs) -> Result<()> {
    let scheme = args.scheme.scheme()?;
    let mut cfg = match &args.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg = cfg.reseeded(seed);
    }
    let model = match &args.model_config {
        Some(p) => ModelConfig::load(p)?,
        None => ModelConfig::default(),
    };
    let [train, dev] = load_all(&[&args.train, &args.dev], &args.schema)?
        .try_into()
        .expect("two files");
    let outcomes = train_seeds(&train, &dev, &scheme, &model, &cfg, args.parallel_seeds)?;

    let dir = &args.out_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let vocab_file = "vocab.txt";
    outcomes[0].vocab.save(dir.join(vocab_file))?;
    let mut log = String::new();
    let mut runs = Vec::new();
    for out in &outcomes {
        let params = format!("params-{}.json", out.seed);
        out.params.save(dir.join(&params))?;
        for record in &out.log {
            log += &serde_json::to_string(record).map_err(|e| Error::Internal(e.to_string()))?;
            log.push('\n');
        }
        runs.push(SeedRun {
            seed: out.seed,
            params,
            dev_f1: out.dev_f1.clone(),
            best_epoch: out.best_epoch,
            best_dev_f1: out.best_dev_f1(),
        });
    }
    write_file(&dir.join("log.jsonl"), log.as_bytes())?;
    let best: Vec<f64> = runs.iter().filter_map(|r| r.best_dev_f1).collect();
    let manifest = RunManifest {
        scheme,
        model,
        train: cfg,
        labels: train.schema.labels().to_vec(),
        na_label: train.schema.na_label().to_string(),
        vocab: vocab_file.into(),
        median_dev_f1: if best.is_empty() { 0.0 } else { median_f1(&best)? },
        runs,
    };
    let text = to_json(&manifest)? + "\n";
    write_file(&dir.join("run.json"), text.as_bytes())?;
    log::info!("wrote run to {}", dir.display());
    emit_text(&text, args.out.out.as_deref())
}

fn score(args: ScoreArgs) -> Result<()> {
    let [gold] = load_all(&[&args.gold], &args.schema)?.try_into().expect("one file");
    let file = fs::File::open(&args.pred).map_err(|e| Error::io(&args.pred, e))?;
    let preds = read_predictions(file)?;
    emit(&score_predictions(&gold, &preds)?, &args.out)
}

#[derive(Serialize)]
struct SeedEval {
    seed: u64,
    report: rebaseline::EvalReport,
}

#[derive(Serialize)]
struct PredictReport {
    runs: Vec<SeedEval>,
    median_f1: f64,
    median_accuracy: f64,
}

fn predict(args: PredictArgs) -> Result<()> {
    let manifest_path = args.run_dir.join("run.json");
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: RunManifest =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", manifest_path.display())))?;
    let schema = LabelSchema::new(manifest.labels.iter().map(String::as_str), &manifest.na_label)?;
    let records = read_records(&args.input)?;
    let dataset = dataset_from_records(
        split_name(&args.input),
        records,
        &schema,
        LoadOptions { lenient: args.lenient },
    )?;
    let vocab = Vocabulary::load(args.run_dir.join(&manifest.vocab))?;
    let split = prepare(&dataset, &manifest.scheme, &vocab, manifest.model.max_len)?;
    let mut runs = Vec::new();
    for run in &manifest.runs {
        let params = ClassifierParams::load(args.run_dir.join(&run.params))?;
        let preds = predict_split(&params, &split)?;
        if let Some(dir) = &args.pred_dir {
            let mut lines = String::new();
            for (id, &p) in split.ids.iter().zip(&preds) {
                let pred = Prediction {
                    id: id.clone(),
                    pred: schema.label(p).expect("predicted index in schema").to_string(),
                };
                lines += &serde_json::to_string(&pred).map_err(|e| Error::Internal(e.to_string()))?;
                lines.push('\n');
            }
            write_file(&dir.join(format!("preds-{}.jsonl", run.seed)), lines.as_bytes())?;
        }
        runs.push(SeedEval {
            seed: run.seed,
            report: score_indices(&split.gold(), &preds, &schema)?,
        });
    }
    let f1: Vec<f64> = runs.iter().map(|r| r.report.f1).collect();
    let acc: Vec<f64> = runs.iter().map(|r| r.report.accuracy).collect();
    let report = PredictReport {
        median_f1: median_f1(&f1)?,
        median_accuracy: median_f1(&acc)?,
        runs,
    };
    emit(&report, &args.out)
}

fn write_subset(dataset: &Dataset, path: Option<&Path>) -> Result<()> {
    if let Some(path) = path {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        dataset.write_json(path)?;
    }
    Ok(())
}

fn filter(args: FilterArgs) -> Result<()> {
    let [test, train] = load_all(&[&args.test, &args.train], &args.schema)?
        .try_into()
        .expect("two files");
    let rule = MatchRule {
        case_fold: args.case_fold,
        role_restricted: args.role_restricted,
        require_both: args.require_both,
    };
    let report = build_filtered(&test, &train, rule);
    write_subset(&report.subset(&test), args.subset_out.as_deref())?;
    emit(&report, &args.out)
}

fn clean(args: CleanArgs) -> Result<()> {
    let [original] = load_all(&[&args.original], &args.schema)?.try_into().expect("one file");
    let relabeled_args = SchemaArgs {
        schema: args.relabeled_schema.clone(),
        na_label: args.schema.na_label.clone(),
        lenient: args.schema.lenient,
    };
    let [relabeled] = load_all(&[&args.relabeled], &relabeled_args)?
        .try_into()
        .expect("one file");
    let label_map: HashMap<String, String> = match &args.label_map {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => HashMap::new(),
    };
    let report = build_clean(&original, &relabeled, &label_map)?;
    write_subset(&report.subset(&original), args.subset_out.as_deref())?;
    emit(&report, &args.out)
}

#[derive(Serialize)]
struct NameRule<'a> {
    subj_type: &'a str,
    obj_type: &'a str,
    key: &'a str,
    relation: &'a str,
}

#[derive(Serialize)]
struct SynthSummary {
    train: usize,
    dev: usize,
    test_unseen: usize,
    labels: Vec<String>,
    name_rules: usize,
    test_type_marginal_ceiling: f64,
    test_masked_ceiling: f64,
}

fn synth(args: SynthArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => SynthConfig::load(p)?,
        None => SynthConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let corpus = generate(&cfg)?;
    let dir = &args.out_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    corpus.train.write_json(dir.join("train.json"))?;
    corpus.dev.write_json(dir.join("dev.json"))?;
    corpus.test_unseen.write_json(dir.join("test_unseen.json"))?;
    let labels = corpus.train.schema.labels().to_vec();
    write_file(&dir.join("labels.txt"), (labels.join("\n") + "\n").as_bytes())?;
    let rules: Vec<NameRule> = corpus
        .name_rules
        .iter()
        .map(|((s, o, k), r)| NameRule {
            subj_type: s,
            obj_type: o,
            key: k,
            relation: r,
        })
        .collect();
    write_file(&dir.join("name_rules.json"), (to_json(&rules)? + "\n").as_bytes())?;
    let summary = SynthSummary {
        train: corpus.train.len(),
        dev: corpus.dev.len(),
        test_unseen: corpus.test_unseen.len(),
        labels,
        name_rules: rules.len(),
        test_type_marginal_ceiling: type_marginal_ceiling(&corpus.test_unseen),
        test_masked_ceiling: masked_ceiling(&corpus.test_unseen)?,
    };
    emit(&summary, &args.out)
}

fn experiment(args: ExperimentArgs) -> Result<()> {
    let mut settings = ExperimentSettings::preset(args.preset);
    if let Some(seed) = args.seed {
        settings = settings.with_seed(seed);
    }
    settings.parallel = args.parallel_seeds;
    let (json, table) = match args.preset {
        Preset::UnseenNames => {
            let r = unseen_names(&settings)?;
            (to_json(&r)?, r.to_string())
        }
        Preset::Noise => {
            let r = noise(&settings)?;
            (to_json(&r)?, r.to_string())
        }
    };
    let text = match args.format {
        Format::Json => json + "\n",
        Format::Table => table,
    };
    emit_text(&text, args.out.out.as_deref())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Stats(a) => stats(a),
        Command::Preprocess(a) => preprocess(a),
        Command::Vocab(a) => vocab(a),
        Command::Train(a) => train(a),
        Command::Eval(EvalCommand::Score(a)) => score(a),
        Command::Eval(EvalCommand::Predict(a)) => predict(a),
        Command::Filter(a) => filter(a),
        Command::Clean(a) => clean(a),
        Command::Synth(a) => synth(a),
        Command::Experiment(a) => experiment(a),
    }
}

fn fail(class: &str, code: u8, message: &str) -> ExitCode {
    let line = serde_json::json!({ "error": class, "exit_code": code, "message": message });
    eprintln!("{line}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            let message = e.kind().to_string();
            return fail("usage", 2, &message);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (class, code) = match e.class() {
                ErrorClass::Usage => ("usage", 2),
                ErrorClass::Io => ("io", 3),
                ErrorClass::Validation => ("validation", 4),
                ErrorClass::Internal => ("internal", 5),
            };
            fail(class, code, &e.to_string())
        }
    }
}
