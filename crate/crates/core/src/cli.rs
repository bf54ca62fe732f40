//! `taskcast` command-line entry point.
//!
//! Exit codes: 0 on success, 1 on a domain error, 2 on a usage error.
//! Diagnostics go to stderr; data goes to files or stdout.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use crate::collector::{collect, EndpointConfig, PromptTemplate, RetryPolicy};
use crate::corpus::{ingest_superni, load_tasks, load_tasks_with, read_generations, validate, LoadOptions};
use crate::metrics::{read_scores, score_all, write_scores, MetricKind, NormalizationPolicy, ScoreRecord};
use crate::perfdata::{build_dataset, make_splits_with, Fractions, PerfDataset, SplitPlan};
use crate::predictors::{write_predictions, PredictorKind, PredictorModel, TuneGrid};
use crate::report::{render_report_table, write_bundle, write_comparison};
use crate::runner::{
    compare_conditions, fit_predictor, partition, rmse, run_experiment, split_file_name, ExperimentConfig,
    ExperimentReport, PredictorSpec,
};
use crate::util::write_atomic;

#[derive(Debug, Parser)]
#[command(name = "taskcast", version, about = "Predict task-level performance of instruction-following models from the instruction alone")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Convert Super-NaturalInstructions task JSON into a task JSONL file
    Ingest(IngestArgs),
    /// Check that a generation file covers every instance of a task file
    Validate(ValidateArgs),
    /// Query a chat-completions endpoint for every instance
    Collect(CollectArgs),
    /// Compute per-task metric values
    Score(ScoreArgs),
    /// Pair instructions with task scores
    Dataset(DatasetArgs),
    /// Write seeded train/validation/test split files
    Split(SplitArgs),
    /// Tune and fit one predictor on a split
    Train(TrainArgs),
    /// Predict task metrics with a saved model
    Predict(PredictArgs),
    /// Test RMSE of a saved model on a split
    Evaluate(EvaluateArgs),
    /// Run a full experiment and write the report bundle
    Experiment(ExperimentArgs),
    /// Run several experiment configs over shared splits
    Compare(CompareArgs),
    /// Re-render tables and plots from a report.json
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// SuperNI task file or directory of task files
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    max_instances_per_task: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long)]
    tasks: PathBuf,
    #[arg(long)]
    gens: PathBuf,
}

#[derive(Debug, Args)]
struct CollectArgs {
    #[arg(long)]
    tasks: PathBuf,
    /// Base URL; requests go to <endpoint>/chat/completions
    #[arg(long)]
    endpoint: String,
    #[arg(long)]
    model: String,
    #[arg(long, default_value_t = 0)]
    k_demos: usize,
    #[arg(long)]
    cache_dir: PathBuf,
    #[arg(long)]
    rpm: Option<u32>,
    #[arg(long, default_value_t = 4)]
    max_inflight: usize,
    #[arg(long, default_value_t = 3)]
    max_attempts: u32,
    /// Base backoff delay in milliseconds
    #[arg(long, default_value_t = 500)]
    backoff_ms: u64,
    #[arg(long)]
    max_instances_per_task: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Generation JSONL output; metadata goes to <out>.meta.json
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Clone, Copy)]
struct NormalizationFlags {
    /// Keep letter case
    #[arg(long)]
    keep_case: bool,
    /// Keep punctuation
    #[arg(long)]
    keep_punctuation: bool,
    /// Treat every whitespace character as a separator
    #[arg(long)]
    keep_whitespace: bool,
}

impl NormalizationFlags {
    fn policy(self) -> NormalizationPolicy {
        NormalizationPolicy {
            lowercase: !self.keep_case,
            strip_punctuation: !self.keep_punctuation,
            collapse_whitespace: !self.keep_whitespace,
        }
    }
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long)]
    tasks: PathBuf,
    #[arg(long)]
    gens: PathBuf,
    /// exact_match, rouge_l or avg_token_loss
    #[arg(long)]
    metric: MetricKind,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    norm: NormalizationFlags,
    #[arg(long)]
    max_instances_per_task: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct DatasetArgs {
    #[arg(long)]
    tasks: PathBuf,
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    metric: MetricKind,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 10)]
    n_splits: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// train,val,test
    #[arg(long, default_value = "0.8,0.1,0.1")]
    fractions: String,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args, Clone, Default)]
struct GridFlags {
    /// Comma-separated ridge penalties
    #[arg(long)]
    lambdas: Option<String>,
    /// Comma-separated neighbour counts
    #[arg(long)]
    ks: Option<String>,
    /// Comma-separated featurizer specs, e.g. w1-2+c3-5,w1-1:sub
    #[arg(long)]
    featurizers: Option<String>,
}

impl GridFlags {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        [("lambdas", &self.lambdas), ("ks", &self.ks), ("featurizers", &self.featurizers)]
            .into_iter()
            .filter_map(|(k, v)| v.clone().map(|v| (k, v)))
            .collect()
    }

    fn grid(&self) -> anyhow::Result<TuneGrid> {
        let mut cfg = ExperimentConfig::default();
        for (k, v) in self.overrides() {
            cfg.set(k, &v, Path::new("."))?;
        }
        Ok(cfg.grid)
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    split: PathBuf,
    /// mean, ridge or knn
    #[arg(long)]
    predictor: PredictorKind,
    #[command(flatten)]
    grid: GridFlags,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Dataset whose instructions to predict
    #[arg(long)]
    dataset: PathBuf,
    /// Restrict to the test tasks of this split
    #[arg(long)]
    split: Option<PathBuf>,
    /// External-predictions JSONL output
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    split: PathBuf,
}

#[derive(Debug, Args, Default)]
struct ExperimentFlags {
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    tasks: Option<String>,
    #[arg(long)]
    gens: Option<String>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    metric: Option<String>,
    #[arg(long)]
    n_splits: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    fractions: Option<String>,
    #[arg(long)]
    splits_dir: Option<String>,
    /// Comma-separated: mean, ridge, knn, external
    #[arg(long)]
    predictors: Option<String>,
    #[arg(long)]
    external: Option<String>,
    #[arg(long)]
    augment_dataset: Option<String>,
    #[arg(long)]
    augment_tasks: Option<String>,
    #[arg(long)]
    augment_gens: Option<String>,
    #[arg(long)]
    im: Option<String>,
    #[arg(long)]
    prompt_format: Option<String>,
    #[command(flatten)]
    grid: GridFlags,
    #[arg(long)]
    out: Option<String>,
}

impl ExperimentFlags {
    fn apply(&self, cfg: &mut ExperimentConfig) -> anyhow::Result<()> {
        let pairs = [
            ("label", &self.label),
            ("tasks", &self.tasks),
            ("generations", &self.gens),
            ("dataset", &self.dataset),
            ("metric", &self.metric),
            ("n_splits", &self.n_splits),
            ("seed", &self.seed),
            ("fractions", &self.fractions),
            ("splits_dir", &self.splits_dir),
            ("predictors", &self.predictors),
            ("external", &self.external),
            ("augment_dataset", &self.augment_dataset),
            ("augment_tasks", &self.augment_tasks),
            ("augment_generations", &self.augment_gens),
            ("im", &self.im),
            ("prompt_format", &self.prompt_format),
            ("out", &self.out),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                cfg.set(key, v, Path::new("."))
                    .with_context(|| format!("--{}", key.replace('_', "-")))?;
            }
        }
        for (key, v) in self.grid.overrides() {
            cfg.set(key, &v, Path::new("."))?;
        }
        Ok(())
    }
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// Plain-text key = value config; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    flags: ExperimentFlags,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// One experiment config per condition (repeatable)
    #[arg(long = "config", required = true)]
    configs: Vec<PathBuf>,
    /// Draw splits per condition instead of sharing one set of plans
    #[arg(long)]
    independent_splits: bool,
    /// Also write each condition's report bundle under <out>/<index>/
    #[arg(long)]
    bundles: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

fn parse_fractions(s: &str) -> anyhow::Result<Fractions> {
    let mut cfg = ExperimentConfig::default();
    cfg.set("fractions", s, Path::new("."))?;
    Ok(cfg.fractions)
}

fn cmd_ingest(a: IngestArgs) -> anyhow::Result<()> {
    let opts = LoadOptions {
        max_instances_per_task: a.max_instances_per_task,
        seed: a.seed,
    };
    let set = ingest_superni(&a.input, &opts)?;
    set.write(&a.out)?;
    eprintln!("ingested {} tasks ({} instances)", set.len(), set.total_instances());
    Ok(())
}

fn cmd_validate(a: ValidateArgs) -> anyhow::Result<()> {
    let tasks = load_tasks(&a.tasks)?;
    let gens = read_generations(&a.gens)?;
    let report = validate(&tasks, &gens);
    println!("{}", serde_json::to_string_pretty(&report)?);
    if !report.is_clean() {
        bail!(
            "{} issue(s): {} missing, {} orphan, {} duplicate",
            report.issue_count(),
            report.missing.len(),
            report.orphans.len(),
            report.duplicates.len()
        );
    }
    Ok(())
}

fn cmd_collect(a: CollectArgs) -> anyhow::Result<()> {
    let tasks = load_tasks_with(
        &a.tasks,
        &LoadOptions {
            max_instances_per_task: a.max_instances_per_task,
            seed: a.seed,
        },
    )?;
    let mut endpoint = EndpointConfig::new(a.endpoint, a.model).with_env_api_key();
    endpoint.max_inflight = a.max_inflight;
    endpoint.rpm = a.rpm;
    endpoint.retry = RetryPolicy {
        max_attempts: a.max_attempts,
        backoff_base: Duration::from_millis(a.backoff_ms),
        ..RetryPolicy::default()
    };
    let template = PromptTemplate {
        k_demonstrations: a.k_demos,
    };
    let collection = collect(&tasks, &endpoint, &template, &a.cache_dir)?;
    collection.generations.write(&a.out)?;
    let meta_path = PathBuf::from(format!("{}.meta.json", a.out.display()));
    write_atomic(&meta_path, crate::util::to_canonical_json(&collection.meta)?.as_bytes())?;
    let s = &collection.stats;
    eprintln!(
        "{} prompts: {} cached, {} requests, {} retries",
        s.prompts, s.cache_hits, s.requests, s.retries
    );
    Ok(())
}

fn cmd_score(a: ScoreArgs) -> anyhow::Result<()> {
    let full = load_tasks(&a.tasks)?;
    let gens = crate::corpus::load_generations(&a.gens, &full)?;
    let tasks = match a.max_instances_per_task {
        Some(cap) => full.subsampled(cap, a.seed),
        None => full,
    };
    let policy = a.norm.policy();
    let scores = score_all(&tasks, &gens, a.metric, &policy)?;
    let records: Vec<ScoreRecord> = scores.iter().map(|s| ScoreRecord::from_score(s, policy)).collect();
    write_scores(&a.out, &records)?;
    eprintln!("scored {} tasks ({})", records.len(), a.metric);
    Ok(())
}

fn cmd_dataset(a: DatasetArgs) -> anyhow::Result<()> {
    let tasks = load_tasks(&a.tasks)?;
    let scores = read_scores(&a.scores)?;
    let mut dataset = build_dataset(&tasks, &scores, a.metric)?;
    dataset.provenance.generations = a
        .scores
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    dataset.write(&a.out)?;
    eprintln!("dataset of {} tasks", dataset.len());
    Ok(())
}

fn cmd_split(a: SplitArgs) -> anyhow::Result<()> {
    let dataset = PerfDataset::read(&a.dataset)?;
    let plans = make_splits_with(&dataset, a.n_splits, a.seed, &parse_fractions(&a.fractions)?)?;
    for (i, plan) in plans.iter().enumerate() {
        plan.write(&a.out_dir.join(split_file_name(i)))?;
    }
    eprintln!(
        "{} splits: {}/{}/{} train/val/test",
        plans.len(),
        plans[0].train_ids.len(),
        plans[0].val_ids.len(),
        plans[0].test_ids.len()
    );
    Ok(())
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<()> {
    if a.predictor == PredictorKind::External {
        bail!("external predictions are loaded, not trained");
    }
    let dataset = PerfDataset::read(&a.dataset)?;
    let plan = SplitPlan::read(&a.split)?;
    let (view, _) = partition(&dataset, None, &plan)?;
    let fitted = fit_predictor(&PredictorSpec::family(a.predictor), &view, &a.grid.grid()?)?;
    fitted.model.save(&a.out)?;
    println!(
        "{}",
        serde_json::json!({"hyperparams": fitted.hyperparams, "val_rmse": fitted.val_rmse})
    );
    Ok(())
}

fn test_subset<'a>(dataset: &'a PerfDataset, split: Option<&Path>) -> anyhow::Result<Vec<&'a crate::metrics::TaskScore>> {
    match split {
        None => Ok(dataset.entries.iter().collect()),
        Some(path) => {
            let plan = SplitPlan::read(path)?;
            let index = dataset.index();
            plan.test_ids
                .iter()
                .map(|id| {
                    index
                        .get(id.as_str())
                        .copied()
                        .with_context(|| format!("test task {id:?} not in dataset"))
                })
                .collect()
        }
    }
}

fn cmd_predict(a: PredictArgs) -> anyhow::Result<()> {
    let model = PredictorModel::load(&a.model)?;
    let dataset = PerfDataset::read(&a.dataset)?;
    let preds = test_subset(&dataset, a.split.as_deref())?
        .into_iter()
        .map(|s| Ok((s.task_id.clone(), model.predict(&s.task_id, &s.instruction)?.value)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    write_predictions(&a.out, &preds)?;
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> anyhow::Result<()> {
    let model = PredictorModel::load(&a.model)?;
    let dataset = PerfDataset::read(&a.dataset)?;
    let subset = test_subset(&dataset, Some(&a.split))?;
    let mut pred = Vec::new();
    for s in &subset {
        pred.push(model.predict(&s.task_id, &s.instruction)?.value);
    }
    let truth: Vec<f64> = subset.iter().map(|s| s.value).collect();
    println!(
        "{}",
        serde_json::json!({"kind": model.kind(), "n_test": truth.len(), "test_rmse": rmse(&pred, &truth)?})
    );
    Ok(())
}

fn cmd_experiment(a: ExperimentArgs) -> anyhow::Result<()> {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    a.flags.apply(&mut cfg)?;
    if cfg.out_dir.is_none() {
        bail!("no output directory: pass --out or set `out` in the config");
    }
    let report = run_experiment(&cfg)?;
    print!("{}", render_report_table(&report).0);
    Ok(())
}

fn cmd_compare(a: CompareArgs) -> anyhow::Result<()> {
    let configs = a
        .configs
        .iter()
        .map(|p| ExperimentConfig::from_file(p).with_context(|| p.display().to_string()))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let comparison = compare_conditions(&configs, !a.independent_splits)?;
    write_comparison(&a.out, &comparison.table)?;
    if a.bundles {
        for (i, report) in comparison.reports.iter().enumerate() {
            write_bundle(&a.out.join(format!("{i:02}")), report)?;
        }
    }
    print!("{}", crate::report::render_table(&comparison.table).0);
    Ok(())
}

fn cmd_report(a: ReportArgs) -> anyhow::Result<()> {
    let report = ExperimentReport::read(&a.report)?;
    write_bundle(&a.out_dir, &report)?;
    print!("{}", render_report_table(&report).0);
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Collect(a) => cmd_collect(a),
        Command::Score(a) => cmd_score(a),
        Command::Dataset(a) => cmd_dataset(a),
        Command::Split(a) => cmd_split(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Report(a) => cmd_report(a),
    }
}

/// Parses `argv` (including the program name), runs the command and returns the exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
