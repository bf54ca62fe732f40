//! Performance predictors: instruction text → predicted task metric.
//!
//! Model file (JSON, sorted keys):
//!
//! ```text
//! {"featurizer": {"config", "idf", "vocab"} | null, "format_version": 1,
//!  "kind": "mean" | "ridge" | "knn" | "external", "metric": ..., "params": {...}}
//! ```
//!
//! External predictions file (JSONL): `{"task_id": str, "prediction": float}`.

pub mod features;
pub mod knn;
pub mod ridge;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::metrics::{MetricKind, TaskScore};
use crate::runner::rmse;
use crate::util::{parse_line, read_lines, schema_err, to_canonical_json, write_atomic};
use crate::{Error, Result};
pub use features::{featurize, fit_featurizer, Featurizer, FeaturizerConfig, SparseVec};
pub use knn::Knn;
pub use ridge::{solve_ridge, RidgeSolution};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    Mean,
    Ridge,
    Knn,
    External,
}

impl PredictorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PredictorKind::Mean => "mean",
            PredictorKind::Ridge => "ridge",
            PredictorKind::Knn => "knn",
            PredictorKind::External => "external",
        }
    }
}

impl fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PredictorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(PredictorKind::Mean),
            "ridge" => Ok(PredictorKind::Ridge),
            "knn" => Ok(PredictorKind::Knn),
            "external" => Ok(PredictorKind::External),
            other => Err(Error::Config(format!("unknown predictor {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Params {
    Mean {
        mean: f64,
    },
    Ridge {
        weights: Vec<f64>,
        intercept: f64,
        lambda: f64,
    },
    Knn(Knn),
    External {
        predictions: BTreeMap<String, f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorModel {
    pub metric: MetricKind,
    pub featurizer: Option<Featurizer>,
    pub params: Params,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    /// Clamped to the metric's range.
    pub value: f64,
    pub raw: f64,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    kind: PredictorKind,
    metric: MetricKind,
    featurizer: Option<Featurizer>,
    params: serde_json::Value,
}

impl PredictorModel {
    pub fn kind(&self) -> PredictorKind {
        match self.params {
            Params::Mean { .. } => PredictorKind::Mean,
            Params::Ridge { .. } => PredictorKind::Ridge,
            Params::Knn(_) => PredictorKind::Knn,
            Params::External { .. } => PredictorKind::External,
        }
    }

    fn features(&self, instruction: &str) -> Result<SparseVec> {
        self.featurizer
            .as_ref()
            .map(|f| f.transform(instruction))
            .ok_or_else(|| Error::InvalidData(format!("{} model has no featurizer", self.kind())))
    }

    pub fn predict(&self, task_id: &str, instruction: &str) -> Result<Prediction> {
        let raw = match &self.params {
            Params::Mean { mean } => *mean,
            Params::Ridge {
                weights, intercept, ..
            } => {
                let x = self.features(instruction)?;
                if x.0.iter().any(|&(i, _)| i >= weights.len()) {
                    return Err(Error::InvalidData("featurizer/weight dimension mismatch".into()));
                }
                x.dot_dense(weights) + intercept
            }
            Params::Knn(knn) => knn.predict_raw(&self.features(instruction)?),
            Params::External { predictions } => {
                *predictions
                    .get(task_id)
                    .ok_or_else(|| Error::MissingPrediction {
                        task_id: task_id.to_string(),
                    })?
            }
        };
        Ok(Prediction {
            value: self.metric.clamp(raw),
            raw,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            format_version: FORMAT_VERSION,
            kind: self.kind(),
            metric: self.metric,
            featurizer: self.featurizer.clone(),
            params: serde_json::to_value(&self.params)?,
        };
        to_canonical_json(&file)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format_version != FORMAT_VERSION {
            return Err(Error::InvalidData(format!(
                "unsupported model format_version {}",
                file.format_version
            )));
        }
        let params = match file.kind {
            PredictorKind::Mean => {
                #[derive(Deserialize)]
                struct P {
                    mean: f64,
                }
                let p: P = serde_json::from_value(file.params)?;
                Params::Mean { mean: p.mean }
            }
            PredictorKind::Ridge => {
                #[derive(Deserialize)]
                struct P {
                    weights: Vec<f64>,
                    intercept: f64,
                    lambda: f64,
                }
                let p: P = serde_json::from_value(file.params)?;
                Params::Ridge {
                    weights: p.weights,
                    intercept: p.intercept,
                    lambda: p.lambda,
                }
            }
            PredictorKind::Knn => Params::Knn(serde_json::from_value(file.params)?),
            PredictorKind::External => {
                #[derive(Deserialize)]
                struct P {
                    predictions: BTreeMap<String, f64>,
                }
                let p: P = serde_json::from_value(file.params)?;
                Params::External {
                    predictions: p.predictions,
                }
            }
        };
        if matches!(file.kind, PredictorKind::Ridge | PredictorKind::Knn) && file.featurizer.is_none() {
            return Err(Error::InvalidData(format!("{} model requires a featurizer", file.kind)));
        }
        Ok(PredictorModel {
            metric: file.metric,
            featurizer: file.featurizer,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        PredictorModel::from_json(&text)
    }
}

fn metric_of(train: &[TaskScore]) -> Result<MetricKind> {
    let metric = train.first().ok_or(Error::EmptyTrain)?.metric;
    if let Some(other) = train.iter().find(|s| s.metric != metric) {
        return Err(Error::MetricMismatch {
            expected: metric.to_string(),
            found: other.metric.to_string(),
        });
    }
    Ok(metric)
}

pub fn fit_mean(train: &[TaskScore]) -> Result<PredictorModel> {
    let metric = metric_of(train)?;
    let y: Vec<f64> = train.iter().map(|s| s.value).collect();
    Ok(PredictorModel {
        metric,
        featurizer: None,
        params: Params::Mean {
            mean: crate::util::mean(&y),
        },
    })
}

fn featurize_all(f: &Featurizer, train: &[TaskScore]) -> (Vec<SparseVec>, Vec<f64>) {
    train
        .iter()
        .map(|s| (f.transform(&s.instruction), s.value))
        .unzip()
}

/// Ridge on TF-IDF features of the training instructions.
pub fn fit_ridge(featurizer: &Featurizer, train: &[TaskScore], lambda: f64) -> Result<PredictorModel> {
    let metric = metric_of(train)?;
    let (rows, y) = featurize_all(featurizer, train);
    Ok(ridge_model(featurizer, metric, solve_ridge(&rows, featurizer.dim(), &y, lambda)?))
}

fn ridge_model(featurizer: &Featurizer, metric: MetricKind, fit: RidgeSolution) -> PredictorModel {
    PredictorModel {
        metric,
        featurizer: Some(featurizer.clone()),
        params: Params::Ridge {
            weights: fit.weights,
            intercept: fit.intercept,
            lambda: fit.lambda,
        },
    }
}

pub fn fit_knn(featurizer: &Featurizer, train: &[TaskScore], k: usize) -> Result<PredictorModel> {
    let metric = metric_of(train)?;
    let (rows, y) = featurize_all(featurizer, train);
    Ok(PredictorModel {
        metric,
        featurizer: Some(featurizer.clone()),
        params: Params::Knn(knn::fit_knn(rows, y, k)?),
    })
}

#[derive(Debug, Deserialize)]
struct ExternalLine {
    task_id: String,
    prediction: f64,
}

/// Loads per-task predictions produced outside this tool.
pub fn load_external(path: &Path, metric: MetricKind) -> Result<PredictorModel> {
    let mut predictions = BTreeMap::new();
    for (line, text) in read_lines(path)? {
        let rec: ExternalLine = serde_json::from_value(parse_line(path, line, &text)?)
            .map_err(|e| schema_err(path, line, e.to_string()))?;
        if !metric.in_range(rec.prediction) {
            return Err(Error::OutOfRange {
                task_id: rec.task_id,
                value: rec.prediction,
                metric: metric.to_string(),
            });
        }
        if predictions.insert(rec.task_id.clone(), rec.prediction).is_some() {
            return Err(schema_err(path, line, format!("duplicate task_id {:?}", rec.task_id)));
        }
    }
    Ok(PredictorModel {
        metric,
        featurizer: None,
        params: Params::External { predictions },
    })
}

/// Writes predictions in the external-predictions format.
pub fn write_predictions(path: &Path, predictions: &[(String, f64)]) -> Result<()> {
    let lines = predictions
        .iter()
        .map(|(id, p)| serde_json::json!({"task_id": id, "prediction": p}));
    write_atomic(path, crate::util::to_jsonl(lines)?.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneGrid {
    pub lambdas: Vec<f64>,
    pub ks: Vec<usize>,
    pub featurizers: Vec<FeaturizerConfig>,
}

impl Default for TuneGrid {
    fn default() -> Self {
        TuneGrid {
            lambdas: vec![0.01, 0.1, 1.0, 10.0, 100.0],
            ks: vec![1, 3, 5, 10],
            featurizers: vec![
                FeaturizerConfig::default(),
                FeaturizerConfig::words_only(1, 2),
                FeaturizerConfig::words_only(1, 1),
            ],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub featurizer: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Tuned {
    pub model: PredictorModel,
    pub hyper: Hyperparams,
    pub val_rmse: f64,
    pub candidates: Vec<(Hyperparams, f64)>,
}

fn val_rmse(model: &PredictorModel, val: &[TaskScore]) -> Result<f64> {
    let pred = val
        .iter()
        .map(|s| model.predict(&s.task_id, &s.instruction).map(|p| p.value))
        .collect::<Result<Vec<_>>>()?;
    let truth: Vec<f64> = val.iter().map(|s| s.value).collect();
    rmse(&pred, &truth)
}

struct Candidate {
    model: PredictorModel,
    hyper: Hyperparams,
    rmse: f64,
    /// Larger wins a tie on RMSE.
    tie_key: f64,
}

/// Index of the lowest-RMSE candidate; ties prefer the larger tie key, then grid order.
fn select_best(scores: &[(f64, f64)]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &(rmse, key)) in scores.iter().enumerate() {
        best = match best {
            Some(b) if rmse > scores[b].0 || (rmse == scores[b].0 && key <= scores[b].1) => Some(b),
            _ => Some(i),
        };
    }
    best
}

/// Fits one model per grid point on `train`, scores it on `val` and returns
/// the validation-RMSE minimiser.
pub fn tune(family: PredictorKind, train: &[TaskScore], val: &[TaskScore], grid: &TuneGrid) -> Result<Tuned> {
    metric_of(train)?;
    if val.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    let candidates: Vec<Candidate> = match family {
        PredictorKind::Mean => {
            let model = fit_mean(train)?;
            let rmse = val_rmse(&model, val)?;
            vec![Candidate {
                model,
                hyper: Hyperparams::default(),
                rmse,
                tie_key: 0.0,
            }]
        }
        PredictorKind::Ridge | PredictorKind::Knn => {
            let points: Vec<(usize, f64)> = match family {
                PredictorKind::Ridge => grid
                    .featurizers
                    .iter()
                    .enumerate()
                    .flat_map(|(fi, _)| grid.lambdas.iter().map(move |&l| (fi, l)))
                    .collect(),
                _ => grid
                    .featurizers
                    .iter()
                    .enumerate()
                    .flat_map(|(fi, _)| {
                        grid.ks
                            .iter()
                            .filter(|&&k| k <= train.len())
                            .map(move |&k| (fi, k as f64))
                    })
                    .collect(),
            };
            if points.is_empty() {
                return Err(Error::Config(format!(
                    "empty {family} grid (no hyperparameter fits {} training tasks)",
                    train.len()
                )));
            }
            let instructions: Vec<&str> = train.iter().map(|s| s.instruction.as_str()).collect();
            let featurizers = grid
                .featurizers
                .iter()
                .map(|cfg| fit_featurizer(&instructions, cfg))
                .collect::<Result<Vec<_>>>()?;
            let design: Vec<(Vec<SparseVec>, Vec<f64>)> =
                featurizers.iter().map(|f| featurize_all(f, train)).collect();
            let metric = train[0].metric;
            points
                .par_iter()
                .map(|&(fi, value)| {
                    let f = &featurizers[fi];
                    let (rows, y) = &design[fi];
                    let (model, hyper) = if family == PredictorKind::Ridge {
                        let fit = solve_ridge(rows, f.dim(), y, value)?;
                        (
                            ridge_model(f, metric, fit),
                            Hyperparams {
                                lambda: Some(value),
                                featurizer: Some(f.config.label()),
                                ..Default::default()
                            },
                        )
                    } else {
                        let k = value as usize;
                        let model = PredictorModel {
                            metric,
                            featurizer: Some(f.clone()),
                            params: Params::Knn(knn::fit_knn(rows.clone(), y.clone(), k)?),
                        };
                        (
                            model,
                            Hyperparams {
                                k: Some(k),
                                featurizer: Some(f.config.label()),
                                ..Default::default()
                            },
                        )
                    };
                    let rmse = val_rmse(&model, val)?;
                    Ok(Candidate {
                        model,
                        hyper,
                        rmse,
                        tie_key: value,
                    })
                })
                .collect::<Result<Vec<_>>>()?
        }
        PredictorKind::External => {
            return Err(Error::Config(
                "external predictions are loaded, not tuned".into(),
            ))
        }
    };
    let keys: Vec<(f64, f64)> = candidates.iter().map(|c| (c.rmse, c.tie_key)).collect();
    let best = select_best(&keys).expect("non-empty candidates");
    let summary = candidates.iter().map(|c| (c.hyper.clone(), c.rmse)).collect();
    let chosen = candidates.into_iter().nth(best).expect("index in range");
    Ok(Tuned {
        model: chosen.model,
        hyper: chosen.hyper,
        val_rmse: chosen.rmse,
        candidates: summary,
    })
}
