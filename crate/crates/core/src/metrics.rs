//! Instance- and task-level evaluation metrics.
//!
//! Exact Match and ROUGE-L are reported on a 0–100 scale. ROUGE-L is the
//! sentence-level LCS F1 (β = 1), maximised over references, without stemming.
//! Average token loss is the negative mean gold-token log-probability in nats.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{GenerationSet, Task, TaskSet};
use crate::util::{parse_line, read_lines, schema_err, to_jsonl, write_atomic};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    ExactMatch,
    RougeL,
    AvgTokenLoss,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::ExactMatch => "exact_match",
            MetricKind::RougeL => "rouge_l",
            MetricKind::AvgTokenLoss => "avg_token_loss",
        }
    }

    /// Upper bound of the metric, `None` for unbounded loss.
    pub fn upper_bound(self) -> Option<f64> {
        match self {
            MetricKind::ExactMatch | MetricKind::RougeL => Some(100.0),
            MetricKind::AvgTokenLoss => None,
        }
    }

    pub fn in_range(self, value: f64) -> bool {
        value.is_finite() && value >= 0.0 && self.upper_bound().is_none_or(|hi| value <= hi)
    }

    pub fn clamp(self, value: f64) -> f64 {
        let v = value.max(0.0);
        match self.upper_bound() {
            Some(hi) => v.min(hi),
            None => v,
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact_match" | "em" => Ok(MetricKind::ExactMatch),
            "rouge_l" | "rougeL" => Ok(MetricKind::RougeL),
            "avg_token_loss" | "loss" => Ok(MetricKind::AvgTokenLoss),
            other => Err(Error::Config(format!("unknown metric {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizationPolicy {
    pub lowercase: bool,
    /// Map every non-alphanumeric codepoint to a space.
    pub strip_punctuation: bool,
    /// Split on runs of whitespace. When off, every single whitespace
    /// character separates tokens and empty tokens are kept.
    pub collapse_whitespace: bool,
}

impl Default for NormalizationPolicy {
    fn default() -> Self {
        NormalizationPolicy {
            lowercase: true,
            strip_punctuation: true,
            collapse_whitespace: true,
        }
    }
}

pub fn normalize(text: &str, policy: &NormalizationPolicy) -> Vec<String> {
    let mut s = if policy.lowercase {
        text.to_lowercase()
    } else {
        text.to_string()
    };
    if policy.strip_punctuation {
        s = s
            .chars()
            .map(|c| if c.is_alphanumeric() { c } else { ' ' })
            .collect();
    }
    if policy.collapse_whitespace {
        s.split_whitespace().map(str::to_string).collect()
    } else if s.is_empty() {
        Vec::new()
    } else {
        s.split(char::is_whitespace).map(str::to_string).collect()
    }
}

pub fn exact_match(candidate: &str, references: &[String], policy: &NormalizationPolicy) -> f64 {
    let cand = normalize(candidate, policy);
    if references.iter().any(|r| normalize(r, policy) == cand) {
        100.0
    } else {
        0.0
    }
}

/// Longest common subsequence length by the O(|a|·|b|) dynamic program,
/// keeping a single row.
pub fn lcs_length<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

fn lcs_f1(cand: &[String], reference: &[String]) -> f64 {
    match (cand.is_empty(), reference.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let lcs = lcs_length(cand, reference) as f64;
    let p = lcs / cand.len() as f64;
    let r = lcs / reference.len() as f64;
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn rouge_l(candidate: &str, references: &[String], policy: &NormalizationPolicy) -> f64 {
    let cand = normalize(candidate, policy);
    let best = references
        .iter()
        .map(|r| lcs_f1(&cand, &normalize(r, policy)))
        .fold(0.0, f64::max);
    100.0 * best
}

pub fn avg_token_loss(logprobs: &[f64]) -> Result<f64> {
    if logprobs.is_empty() {
        return Err(Error::NoTokens);
    }
    if logprobs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("token_logprobs"));
    }
    let loss = -logprobs.iter().sum::<f64>() / logprobs.len() as f64;
    // -0.0 would serialize as "-0.0"
    Ok(if loss == 0.0 { 0.0 } else { loss })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub task_id: String,
    pub instruction: String,
    pub metric: MetricKind,
    pub value: f64,
    pub n_instances: usize,
}

pub fn score_instance(
    task: &Task,
    instance_idx: usize,
    gens: &GenerationSet,
    metric: MetricKind,
    policy: &NormalizationPolicy,
) -> Result<f64> {
    let inst = &task.instances[instance_idx];
    let record = gens
        .get(&task.task_id, &inst.instance_id)
        .ok_or_else(|| Error::MissingGeneration {
            task_id: task.task_id.clone(),
            instance_id: inst.instance_id.clone(),
        })?;
    match metric {
        MetricKind::ExactMatch => Ok(exact_match(&record.output, &inst.references, policy)),
        MetricKind::RougeL => Ok(rouge_l(&record.output, &inst.references, policy)),
        MetricKind::AvgTokenLoss => {
            let lps = record
                .token_logprobs
                .as_ref()
                .ok_or_else(|| Error::MissingLogprobs {
                    task_id: task.task_id.clone(),
                    instance_id: inst.instance_id.clone(),
                })?;
            avg_token_loss(lps)
        }
    }
}

/// Unweighted mean of the per-instance metric over every instance of `task`.
pub fn score_task(
    task: &Task,
    gens: &GenerationSet,
    metric: MetricKind,
    policy: &NormalizationPolicy,
) -> Result<TaskScore> {
    let values = (0..task.instances.len())
        .map(|i| score_instance(task, i, gens, metric, policy))
        .collect::<Result<Vec<_>>>()?;
    Ok(TaskScore {
        task_id: task.task_id.clone(),
        instruction: task.instruction.clone(),
        metric,
        value: crate::util::mean(&values),
        n_instances: values.len(),
    })
}

/// Scores every task of the set in task-file order.
pub fn score_all(
    tasks: &TaskSet,
    gens: &GenerationSet,
    metric: MetricKind,
    policy: &NormalizationPolicy,
) -> Result<Vec<TaskScore>> {
    use rayon::prelude::*;
    let tasks: Vec<&Task> = tasks.iter().collect();
    tasks
        .par_iter()
        .map(|t| score_task(t, gens, metric, policy))
        .collect()
}

/// One line of a scores file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub task_id: String,
    pub metric: MetricKind,
    pub value: f64,
    pub n_instances: usize,
    pub normalization: NormalizationPolicy,
}

impl ScoreRecord {
    pub fn from_score(score: &TaskScore, policy: NormalizationPolicy) -> Self {
        ScoreRecord {
            task_id: score.task_id.clone(),
            metric: score.metric,
            value: score.value,
            n_instances: score.n_instances,
            normalization: policy,
        }
    }
}

pub fn write_scores(path: &Path, records: &[ScoreRecord]) -> Result<()> {
    write_atomic(path, to_jsonl(records)?.as_bytes())
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRecord>> {
    let mut out = Vec::new();
    for (line, text) in read_lines(path)? {
        let value = parse_line(path, line, &text)?;
        let rec: ScoreRecord =
            serde_json::from_value(value).map_err(|e| schema_err(path, line, e.to_string()))?;
        if !rec.metric.in_range(rec.value) {
            return Err(schema_err(
                path,
                line,
                format!("value {} out of range for {}", rec.value, rec.metric),
            ));
        }
        if rec.n_instances == 0 {
            return Err(schema_err(path, line, "n_instances must be >= 1"));
        }
        out.push(rec);
    }
    Ok(out)
}
