//! Experiment orchestration: per-split tuning and test evaluation, aggregation
//! across splits, and comparison across conditions.
//!
//! Standard deviations across splits use the sample (n − 1) denominator and
//! are omitted when fewer than two splits ran.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{load_generations, load_tasks};
use crate::metrics::{score_all, MetricKind, NormalizationPolicy, ScoreRecord, TaskScore};
use crate::perfdata::{augment_train, build_dataset, make_splits_with, Fractions, PerfDataset, SplitPlan};
use crate::predictors::{load_external, tune, FeaturizerConfig, Hyperparams, PredictorKind, PredictorModel, TuneGrid};
use crate::report;
use crate::util::{mean, to_canonical_json};
use crate::{Error, Result};

pub const REPORT_FORMAT_VERSION: u32 = 1;
pub const STD_KIND: &str = "sample (n-1) across splits";

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::Empty("rmse input"));
    }
    let mse = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64;
    Ok(mse.sqrt())
}

/// Sample standard deviation; `None` for fewer than two values.
pub fn sample_std(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let mu = mean(values);
    let ss = values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>();
    Some((ss / (values.len() - 1) as f64).sqrt())
}

/// A predictor family as configured for an experiment.
#[derive(Debug, Clone)]
pub struct PredictorSpec {
    pub name: String,
    pub kind: PredictorKind,
    /// Present only for [`PredictorKind::External`].
    pub external: Option<PredictorModel>,
}

impl PredictorSpec {
    pub fn family(kind: PredictorKind) -> Self {
        PredictorSpec {
            name: kind.to_string(),
            kind,
            external: None,
        }
    }

    pub fn external(name: impl Into<String>, model: PredictorModel) -> Self {
        PredictorSpec {
            name: name.into(),
            kind: PredictorKind::External,
            external: Some(model),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestPrediction {
    pub task_id: String,
    #[serde(rename = "true")]
    pub truth: f64,
    pub predicted: f64,
    /// Unclamped model output.
    pub raw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub seed: u64,
    pub predictor: String,
    pub kind: PredictorKind,
    pub hyperparams: Hyperparams,
    pub val_rmse: Option<f64>,
    pub test_rmse: f64,
    pub predictions: Vec<TestPrediction>,
}

/// Train and validation tasks of one plan. Test targets never enter this type.
#[derive(Debug, Clone)]
pub struct TrainingView {
    pub train: Vec<TaskScore>,
    pub val: Vec<TaskScore>,
}

/// Test tasks of one plan, stripped of their targets.
#[derive(Debug, Clone)]
pub struct TestQuery {
    pub task_id: String,
    pub instruction: String,
}

fn lookup<'a>(pool: &HashMap<&str, &'a TaskScore>, ids: &[String], part: &str) -> Result<Vec<&'a TaskScore>> {
    ids.iter()
        .map(|id| {
            pool.get(id.as_str())
                .copied()
                .ok_or_else(|| Error::InvalidData(format!("{part} task {id:?} not in dataset")))
        })
        .collect()
}

/// Splits the plan's tasks into the training view and target-free test queries.
pub fn partition(
    dataset: &PerfDataset,
    extra: Option<&PerfDataset>,
    plan: &SplitPlan,
) -> Result<(TrainingView, Vec<TestQuery>)> {
    let mut pool = dataset.index();
    if let Some(extra) = extra {
        pool.extend(extra.index());
    }
    let view = TrainingView {
        train: lookup(&pool, &plan.train_ids, "train")?.into_iter().cloned().collect(),
        val: lookup(&pool, &plan.val_ids, "validation")?.into_iter().cloned().collect(),
    };
    let test = lookup(&pool, &plan.test_ids, "test")?
        .into_iter()
        .map(|s| TestQuery {
            task_id: s.task_id.clone(),
            instruction: s.instruction.clone(),
        })
        .collect();
    Ok((view, test))
}

pub struct FittedPredictor {
    pub model: PredictorModel,
    pub hyperparams: Hyperparams,
    pub val_rmse: Option<f64>,
}

/// Fits (and tunes) a predictor from the training view alone.
pub fn fit_predictor(spec: &PredictorSpec, view: &TrainingView, grid: &TuneGrid) -> Result<FittedPredictor> {
    match (&spec.kind, &spec.external) {
        (PredictorKind::External, Some(model)) => Ok(FittedPredictor {
            model: model.clone(),
            hyperparams: Hyperparams::default(),
            val_rmse: None,
        }),
        (PredictorKind::External, None) => Err(Error::Config(format!(
            "external predictor {:?} has no predictions file",
            spec.name
        ))),
        (kind, _) => {
            let tuned = tune(*kind, &view.train, &view.val, grid)?;
            Ok(FittedPredictor {
                model: tuned.model,
                hyperparams: tuned.hyper,
                val_rmse: Some(tuned.val_rmse),
            })
        }
    }
}

pub fn run_split(
    dataset: &PerfDataset,
    extra: Option<&PerfDataset>,
    plan: &SplitPlan,
    spec: &PredictorSpec,
    grid: &TuneGrid,
) -> Result<SplitResult> {
    let (view, queries) = partition(dataset, extra, plan)?;
    let fitted = fit_predictor(spec, &view, grid)?;
    let truth_by_id = dataset.index();
    let mut predictions = Vec::with_capacity(queries.len());
    for q in &queries {
        let p = fitted.model.predict(&q.task_id, &q.instruction)?;
        let truth = truth_by_id
            .get(q.task_id.as_str())
            .map(|s| s.value)
            .ok_or_else(|| Error::InvalidData(format!("test task {:?} not in dataset", q.task_id)))?;
        predictions.push(TestPrediction {
            task_id: q.task_id.clone(),
            truth,
            predicted: p.value,
            raw: p.raw,
        });
    }
    let pred: Vec<f64> = predictions.iter().map(|p| p.predicted).collect();
    let truth: Vec<f64> = predictions.iter().map(|p| p.truth).collect();
    Ok(SplitResult {
        seed: plan.seed,
        predictor: spec.name.clone(),
        kind: spec.kind,
        hyperparams: fitted.hyperparams,
        val_rmse: fitted.val_rmse,
        test_rmse: rmse(&pred, &truth)?,
        predictions,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub label: String,
    pub im: String,
    pub metric: Option<MetricKind>,
    pub prompt_format: String,
    pub augmentation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorSummary {
    pub predictor: String,
    pub kind: PredictorKind,
    pub n_splits: usize,
    pub mean_rmse: f64,
    pub std_rmse: Option<f64>,
    pub split_rmses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub format_version: u32,
    pub condition: Condition,
    pub metric: MetricKind,
    pub n_tasks: usize,
    pub n_splits: usize,
    pub seed: u64,
    pub fractions: [f64; 3],
    pub std_kind: String,
    pub normalization: Option<NormalizationPolicy>,
    pub grid: TuneGrid,
    pub summaries: Vec<PredictorSummary>,
    pub splits: Vec<SplitResult>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        to_canonical_json(self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn summary(&self, predictor: &str) -> Option<&PredictorSummary> {
        self.summaries.iter().find(|s| s.predictor == predictor)
    }
}

/// Puts the mean baseline first, adding it when absent.
pub fn with_mean_baseline(mut specs: Vec<PredictorSpec>) -> Vec<PredictorSpec> {
    specs.retain(|s| s.kind != PredictorKind::Mean);
    specs.insert(0, PredictorSpec::family(PredictorKind::Mean));
    specs
}

pub fn summarize(predictor: &str, kind: PredictorKind, results: &[&SplitResult]) -> PredictorSummary {
    let split_rmses: Vec<f64> = results.iter().map(|r| r.test_rmse).collect();
    PredictorSummary {
        predictor: predictor.to_string(),
        kind,
        n_splits: split_rmses.len(),
        mean_rmse: mean(&split_rmses),
        std_rmse: sample_std(&split_rmses),
        split_rmses,
    }
}

/// Everything needed to run one condition once its inputs are loaded.
pub struct PreparedExperiment {
    pub condition: Condition,
    pub dataset: PerfDataset,
    pub extra: Option<PerfDataset>,
    pub predictors: Vec<PredictorSpec>,
    pub grid: TuneGrid,
    pub normalization: Option<NormalizationPolicy>,
    pub seed: u64,
    pub fractions: Fractions,
}

/// Runs every (plan, predictor) pair. Work may run in parallel; results are
/// reduced in plan order, then predictor order.
pub fn run_plans(exp: &PreparedExperiment, plans: &[SplitPlan]) -> Result<ExperimentReport> {
    if plans.is_empty() {
        return Err(Error::Config("n_splits must be >= 1".into()));
    }
    let predictors = with_mean_baseline(exp.predictors.clone());
    let plans: Vec<SplitPlan> = match &exp.extra {
        Some(extra) => plans
            .iter()
            .map(|p| augment_train(p, &exp.dataset, extra))
            .collect::<Result<_>>()?,
        None => plans.to_vec(),
    };
    let jobs: Vec<(usize, usize)> = (0..plans.len())
        .flat_map(|p| (0..predictors.len()).map(move |s| (p, s)))
        .collect();
    let splits: Vec<SplitResult> = jobs
        .par_iter()
        .map(|&(p, s)| run_split(&exp.dataset, exp.extra.as_ref(), &plans[p], &predictors[s], &exp.grid))
        .collect::<Result<_>>()?;
    let summaries = predictors
        .iter()
        .map(|spec| {
            let mine: Vec<&SplitResult> = splits.iter().filter(|r| r.predictor == spec.name).collect();
            summarize(&spec.name, spec.kind, &mine)
        })
        .collect();
    Ok(ExperimentReport {
        format_version: REPORT_FORMAT_VERSION,
        condition: exp.condition.clone(),
        metric: exp.dataset.metric,
        n_tasks: exp.dataset.len(),
        n_splits: plans.len(),
        seed: exp.seed,
        fractions: [exp.fractions.train, exp.fractions.val, exp.fractions.test],
        std_kind: STD_KIND.to_string(),
        normalization: exp.normalization,
        grid: exp.grid.clone(),
        summaries,
        splits,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub label: Option<String>,
    pub tasks: Option<PathBuf>,
    pub generations: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub metric: MetricKind,
    pub normalization: NormalizationPolicy,
    pub max_instances_per_task: Option<usize>,
    pub n_splits: usize,
    pub seed: u64,
    pub fractions: Fractions,
    pub splits_dir: Option<PathBuf>,
    pub predictors: Vec<PredictorKind>,
    pub grid: TuneGrid,
    pub external: Option<PathBuf>,
    pub augment_tasks: Option<PathBuf>,
    pub augment_generations: Option<PathBuf>,
    pub augment_dataset: Option<PathBuf>,
    pub im: Option<String>,
    pub prompt_format: Option<String>,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            label: None,
            tasks: None,
            generations: None,
            dataset: None,
            metric: MetricKind::RougeL,
            normalization: NormalizationPolicy::default(),
            max_instances_per_task: None,
            n_splits: 10,
            seed: 0,
            fractions: Fractions::default(),
            splits_dir: None,
            predictors: vec![PredictorKind::Mean, PredictorKind::Ridge, PredictorKind::Knn],
            grid: TuneGrid::default(),
            external: None,
            augment_tasks: None,
            augment_generations: None,
            augment_dataset: None,
            im: None,
            prompt_format: None,
            out_dir: None,
        }
    }
}

fn parse_list<T>(value: &str, parse: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse)
        .collect()
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        other => Err(Error::Config(format!("{key}: expected a boolean, got {other:?}"))),
    }
}

impl ExperimentConfig {
    /// Applies one `key = value` setting. Relative paths resolve against `base`.
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        let path = || Some(base.join(value.trim()));
        match key {
            "label" => self.label = Some(value.trim().to_string()),
            "tasks" => self.tasks = path(),
            "generations" | "gens" => self.generations = path(),
            "dataset" => self.dataset = path(),
            "metric" => self.metric = value.trim().parse()?,
            "lowercase" => self.normalization.lowercase = parse_bool(key, value)?,
            "strip_punctuation" => self.normalization.strip_punctuation = parse_bool(key, value)?,
            "collapse_whitespace" => self.normalization.collapse_whitespace = parse_bool(key, value)?,
            "max_instances_per_task" => self.max_instances_per_task = Some(parse_num(key, value)?),
            "n_splits" => self.n_splits = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "fractions" => {
                let f: Vec<f64> = parse_list(value, |s| parse_num(key, s))?;
                if f.len() != 3 {
                    return Err(Error::Config("fractions: expected train,val,test".into()));
                }
                self.fractions = Fractions {
                    train: f[0],
                    val: f[1],
                    test: f[2],
                };
            }
            "splits_dir" => self.splits_dir = path(),
            "predictors" => self.predictors = parse_list(value, |s| s.parse())?,
            "lambdas" => self.grid.lambdas = parse_list(value, |s| parse_num(key, s))?,
            "ks" => self.grid.ks = parse_list(value, |s| parse_num(key, s))?,
            "featurizers" => self.grid.featurizers = parse_list(value, FeaturizerConfig::parse)?,
            "external" => self.external = path(),
            "augment_tasks" => self.augment_tasks = path(),
            "augment_generations" => self.augment_generations = path(),
            "augment_dataset" => self.augment_dataset = path(),
            "im" => self.im = Some(value.trim().to_string()),
            "prompt_format" => self.prompt_format = Some(value.trim().to_string()),
            "out" | "out_dir" => self.out_dir = path(),
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Parses a plain-text config: one `key = value` per line, `#` comments.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            cfg.set(key.trim(), value, base)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        ExperimentConfig::parse(&text, base)
    }

    pub fn check(&self) -> Result<()> {
        if self.n_splits == 0 {
            return Err(Error::Config("n_splits must be >= 1".into()));
        }
        if self.dataset.is_none() && (self.tasks.is_none() || self.generations.is_none()) {
            return Err(Error::Config("need either dataset or both tasks and generations".into()));
        }
        if self.predictors.contains(&PredictorKind::External) != self.external.is_some() {
            return Err(Error::Config(
                "the external predictor and the external predictions file go together".into(),
            ));
        }
        self.fractions.validate()?;
        for p in [
            &self.tasks,
            &self.generations,
            &self.dataset,
            &self.external,
            &self.augment_tasks,
            &self.augment_generations,
            &self.augment_dataset,
            &self.splits_dir,
        ]
        .into_iter()
        .flatten()
        {
            if !p.exists() {
                return Err(Error::Config(format!("{} does not exist", p.display())));
            }
        }
        Ok(())
    }

    fn load_scored(&self, tasks: &Path, gens: &Path) -> Result<PerfDataset> {
        // Generations are resolved against the full task file so that records for
        // instances dropped by the cap are not mistaken for unknown ids.
        let full = load_tasks(tasks)?;
        let gen_set = load_generations(gens, &full)?;
        let task_set = match self.max_instances_per_task {
            Some(cap) => full.subsampled(cap, self.seed),
            None => full,
        };
        let scores = score_all(&task_set, &gen_set, self.metric, &self.normalization)?;
        let records: Vec<ScoreRecord> = scores
            .iter()
            .map(|s| ScoreRecord::from_score(s, self.normalization))
            .collect();
        let mut dataset = build_dataset(&task_set, &records, self.metric)?;
        dataset.provenance.tasks = tasks.display().to_string();
        dataset.provenance.generations = gen_set.model;
        Ok(dataset)
    }

    pub fn load_dataset(&self) -> Result<PerfDataset> {
        let dataset = match (&self.dataset, &self.tasks, &self.generations) {
            (Some(d), _, _) => PerfDataset::read(d)?,
            (None, Some(t), Some(g)) => self.load_scored(t, g)?,
            _ => return Err(Error::Config("need either dataset or both tasks and generations".into())),
        };
        if dataset.metric != self.metric {
            return Err(Error::MetricMismatch {
                expected: self.metric.to_string(),
                found: dataset.metric.to_string(),
            });
        }
        Ok(dataset)
    }

    pub fn load_augmentation(&self) -> Result<Option<PerfDataset>> {
        let extra = match (&self.augment_dataset, &self.augment_tasks, &self.augment_generations) {
            (Some(d), _, _) => PerfDataset::read(d)?,
            (None, Some(t), Some(g)) => self.load_scored(t, g)?,
            (None, None, None) => return Ok(None),
            _ => {
                return Err(Error::Config(
                    "augmentation needs augment_dataset or both augment_tasks and augment_generations".into(),
                ))
            }
        };
        Ok(Some(extra))
    }

    pub fn predictor_specs(&self) -> Result<Vec<PredictorSpec>> {
        self.predictors
            .iter()
            .map(|&kind| match kind {
                PredictorKind::External => {
                    let path = self
                        .external
                        .as_ref()
                        .ok_or_else(|| Error::Config("external predictor needs a predictions file".into()))?;
                    Ok(PredictorSpec::external("external", load_external(path, self.metric)?))
                }
                kind => Ok(PredictorSpec::family(kind)),
            })
            .collect()
    }

    pub fn prepare(&self) -> Result<PreparedExperiment> {
        self.check()?;
        let dataset = self.load_dataset()?;
        let extra = self.load_augmentation()?;
        let im = self.im.clone().unwrap_or_else(|| {
            if dataset.provenance.generations.is_empty() {
                "unknown".to_string()
            } else {
                dataset.provenance.generations.clone()
            }
        });
        let prompt_format = self.prompt_format.clone().unwrap_or_else(|| "instruction-only".into());
        let augmentation = extra.as_ref().map(|e| format!("+{} train tasks", e.len()));
        let label = self.label.clone().unwrap_or_else(|| {
            let mut l = format!("{im}/{}/{prompt_format}", self.metric);
            if let Some(a) = &augmentation {
                l.push_str(&format!("/{a}"));
            }
            l
        });
        let normalization = matches!(self.metric, MetricKind::ExactMatch | MetricKind::RougeL)
            .then_some(self.normalization);
        Ok(PreparedExperiment {
            condition: Condition {
                label,
                im,
                metric: Some(self.metric),
                prompt_format,
                augmentation,
            },
            dataset,
            extra,
            predictors: self.predictor_specs()?,
            grid: self.grid.clone(),
            normalization,
            seed: self.seed,
            fractions: self.fractions,
        })
    }

    pub fn plans_for(&self, dataset: &PerfDataset) -> Result<Vec<SplitPlan>> {
        match &self.splits_dir {
            Some(dir) => read_split_dir(dir),
            None => make_splits_with(dataset, self.n_splits, self.seed, &self.fractions),
        }
    }
}

/// Reads `split_*.json` files from a directory in file-name order.
pub fn read_split_dir(dir: &Path) -> Result<Vec<SplitPlan>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("split_") && n.ends_with(".json"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Config(format!("no split_*.json files in {}", dir.display())));
    }
    files.iter().map(|f| SplitPlan::read(f)).collect()
}

pub fn split_file_name(index: usize) -> String {
    format!("split_{index:03}.json")
}

/// Loads inputs, runs every split and, when `out_dir` is set, writes the report bundle.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let exp = config.prepare()?;
    let plans = config.plans_for(&exp.dataset)?;
    let report = run_plans(&exp, &plans)?;
    if let Some(dir) = &config.out_dir {
        report::write_bundle(dir, &report)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub predictor: String,
    pub condition: String,
    pub mean_rmse: f64,
    pub std_rmse: Option<f64>,
    pub n_splits: usize,
}

/// Predictors as rows, conditions as columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub predictors: Vec<String>,
    pub conditions: Vec<String>,
    pub cells: Vec<Cell>,
    pub std_kind: String,
}

impl ComparisonTable {
    pub fn from_reports<'a>(reports: impl IntoIterator<Item = &'a ExperimentReport>) -> Self {
        let mut predictors: Vec<String> = Vec::new();
        let mut conditions = Vec::new();
        let mut cells = Vec::new();
        for report in reports {
            conditions.push(report.condition.label.clone());
            for s in &report.summaries {
                if !predictors.contains(&s.predictor) {
                    predictors.push(s.predictor.clone());
                }
                cells.push(Cell {
                    predictor: s.predictor.clone(),
                    condition: report.condition.label.clone(),
                    mean_rmse: s.mean_rmse,
                    std_rmse: s.std_rmse,
                    n_splits: s.n_splits,
                });
            }
        }
        // Mean baseline is always the first row.
        if let Some(i) = predictors.iter().position(|p| p == "mean") {
            let m = predictors.remove(i);
            predictors.insert(0, m);
        }
        ComparisonTable {
            predictors,
            conditions,
            cells,
            std_kind: STD_KIND.to_string(),
        }
    }

    pub fn cell(&self, predictor: &str, condition: &str) -> Option<&Cell> {
        self.cells
            .iter()
            .find(|c| c.predictor == predictor && c.condition == condition)
    }
}

pub struct Comparison {
    pub table: ComparisonTable,
    pub reports: Vec<ExperimentReport>,
}

/// Runs several conditions over the same split plans.
///
/// With `shared_splits`, plans are drawn once from the first condition and
/// every condition must cover exactly the same task ids. Without it each
/// condition draws its own plans from its own config.
pub fn compare_conditions(configs: &[ExperimentConfig], shared_splits: bool) -> Result<Comparison> {
    let first = configs
        .first()
        .ok_or_else(|| Error::Misaligned("no conditions given".into()))?;
    for (i, c) in configs.iter().enumerate().skip(1) {
        if c.n_splits != first.n_splits || c.seed != first.seed || c.fractions != first.fractions {
            return Err(Error::Misaligned(format!(
                "condition {i} differs in n_splits/seed/fractions ({}/{} vs {}/{})",
                c.n_splits, c.seed, first.n_splits, first.seed
            )));
        }
    }
    let prepared = configs
        .iter()
        .map(ExperimentConfig::prepare)
        .collect::<Result<Vec<_>>>()?;
    let mut labels = BTreeSet::new();
    for p in &prepared {
        if !labels.insert(p.condition.label.clone()) {
            return Err(Error::Misaligned(format!("duplicate condition label {:?}", p.condition.label)));
        }
    }
    let shared = if shared_splits {
        let ids = |d: &PerfDataset| d.ids().map(str::to_string).collect::<BTreeSet<_>>();
        let reference = ids(&prepared[0].dataset);
        for p in &prepared[1..] {
            if ids(&p.dataset) != reference {
                return Err(Error::Misaligned(format!(
                    "condition {:?} covers a different task set",
                    p.condition.label
                )));
            }
        }
        Some(first.plans_for(&prepared[0].dataset)?)
    } else {
        None
    };
    let reports = prepared
        .iter()
        .zip(configs)
        .map(|(p, c)| match &shared {
            Some(plans) => run_plans(p, plans),
            None => run_plans(p, &c.plans_for(&p.dataset)?),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Comparison {
        table: ComparisonTable::from_reports(&reports),
        reports,
    })
}
