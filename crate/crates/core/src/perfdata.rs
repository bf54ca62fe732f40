//! Instruction → score datasets and seeded task-level splits.
//!
//! Split procedure for plan `i` of a run seeded with `seed`:
//!
//! 1. sort all task ids lexicographically;
//! 2. shuffle them with [`Pcg32::new(seed + i, SPLIT_STREAM)`](crate::rng::Pcg32);
//! 3. take `round_half_up(test_frac · N)` ids as test, the next
//!    `round_half_up(val_frac · N)` as validation, the remainder as train;
//! 4. sort the ids within each part.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::TaskSet;
use crate::metrics::{MetricKind, ScoreRecord, TaskScore};
use crate::rng::Pcg32;
use crate::util::{to_canonical_json, write_atomic};
use crate::{Error, Result};

/// PCG stream selector used for every split shuffle.
pub const SPLIT_STREAM: u64 = 0x5eed;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tasks: String,
    pub generations: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfDataset {
    pub metric: MetricKind,
    pub provenance: Provenance,
    pub entries: Vec<TaskScore>,
}

impl PerfDataset {
    pub fn new(metric: MetricKind, provenance: Provenance, entries: Vec<TaskScore>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if e.metric != metric {
                return Err(Error::MetricMismatch {
                    expected: metric.to_string(),
                    found: e.metric.to_string(),
                });
            }
            if !seen.insert(e.task_id.as_str()) {
                return Err(Error::InvalidData(format!("duplicate task_id {:?} in dataset", e.task_id)));
            }
            if !metric.in_range(e.value) {
                return Err(Error::OutOfRange {
                    task_id: e.task_id.clone(),
                    value: e.value,
                    metric: metric.to_string(),
                });
            }
        }
        Ok(PerfDataset {
            metric,
            provenance,
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.task_id.as_str())
    }

    pub fn index(&self) -> HashMap<&str, &TaskScore> {
        self.entries.iter().map(|e| (e.task_id.as_str(), e)).collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, to_canonical_json(self)?.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: PerfDataset = serde_json::from_str(&text)?;
        PerfDataset::new(raw.metric, raw.provenance, raw.entries)
    }
}

/// Pairs each task's instruction with its score, in task-file order.
pub fn build_dataset(tasks: &TaskSet, scores: &[ScoreRecord], metric: MetricKind) -> Result<PerfDataset> {
    let mut by_id: HashMap<&str, &ScoreRecord> = HashMap::new();
    for s in scores {
        if s.metric != metric {
            return Err(Error::MetricMismatch {
                expected: metric.to_string(),
                found: s.metric.to_string(),
            });
        }
        if by_id.insert(s.task_id.as_str(), s).is_some() {
            return Err(Error::InvalidData(format!("duplicate score for task {:?}", s.task_id)));
        }
        if tasks.get(&s.task_id).is_none() {
            return Err(Error::InvalidData(format!("score for unknown task {:?}", s.task_id)));
        }
    }
    let entries = tasks
        .iter()
        .map(|t| {
            let s = by_id.get(t.task_id.as_str()).ok_or_else(|| Error::MissingScore {
                task_id: t.task_id.clone(),
            })?;
            Ok(TaskScore {
                task_id: t.task_id.clone(),
                instruction: t.instruction.clone(),
                metric,
                value: s.value,
                n_instances: s.n_instances,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let provenance = Provenance {
        tasks: tasks
            .source
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_default(),
        generations: String::new(),
    };
    PerfDataset::new(metric, provenance, entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for Fractions {
    fn default() -> Self {
        Fractions {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl Fractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !f.is_finite() || *f <= 0.0) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions must be positive and sum to 1, got {parts:?}"
            )));
        }
        Ok(())
    }
}

fn round_half_up(x: f64) -> usize {
    // The epsilon absorbs binary error such as 0.1 * 45 = 4.499999...
    (x + 0.5 + 1e-9).floor() as usize
}

/// `(train, val, test)` sizes for `n` tasks.
pub fn split_sizes(n: usize, fractions: &Fractions) -> Result<(usize, usize, usize)> {
    fractions.validate()?;
    let val = round_half_up(fractions.val * n as f64);
    let test = round_half_up(fractions.test * n as f64);
    if val == 0 || test == 0 || val + test >= n {
        return Err(Error::InvalidData(format!(
            "{n} tasks are too few for a split with every part non-empty"
        )));
    }
    Ok((n - val - test, val, test))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub fractions: [f64; 3],
    #[serde(rename = "train")]
    pub train_ids: Vec<String>,
    #[serde(rename = "val")]
    pub val_ids: Vec<String>,
    #[serde(rename = "test")]
    pub test_ids: Vec<String>,
}

impl SplitPlan {
    pub fn all_ids(&self) -> impl Iterator<Item = &str> {
        self.train_ids
            .iter()
            .chain(&self.val_ids)
            .chain(&self.test_ids)
            .map(String::as_str)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let plan: SplitPlan = serde_json::from_str(&text)?;
        let mut seen = HashSet::new();
        if let Some(dup) = plan.all_ids().find(|id| !seen.insert(*id)) {
            return Err(Error::InvalidData(format!(
                "{}: task {dup:?} appears in more than one part",
                path.display()
            )));
        }
        Ok(plan)
    }
}

pub fn make_plan(ids: &[&str], seed: u64, fractions: &Fractions) -> Result<SplitPlan> {
    let (_, n_val, n_test) = split_sizes(ids.len(), fractions)?;
    let mut order: Vec<String> = ids.iter().map(|s| s.to_string()).collect();
    order.sort();
    order.dedup();
    if order.len() != ids.len() {
        return Err(Error::InvalidData("duplicate task ids in split input".into()));
    }
    Pcg32::new(seed, SPLIT_STREAM).shuffle(&mut order);
    let sorted = |s: &[String]| {
        let mut v = s.to_vec();
        v.sort();
        v
    };
    Ok(SplitPlan {
        seed,
        fractions: [fractions.train, fractions.val, fractions.test],
        test_ids: sorted(&order[..n_test]),
        val_ids: sorted(&order[n_test..n_test + n_val]),
        train_ids: sorted(&order[n_test + n_val..]),
    })
}

/// `n_splits` plans; plan `i` is drawn with seed `seed + i`.
pub fn make_splits(dataset: &PerfDataset, n_splits: usize, seed: u64) -> Result<Vec<SplitPlan>> {
    make_splits_with(dataset, n_splits, seed, &Fractions::default())
}

pub fn make_splits_with(
    dataset: &PerfDataset,
    n_splits: usize,
    seed: u64,
    fractions: &Fractions,
) -> Result<Vec<SplitPlan>> {
    let ids: Vec<&str> = dataset.ids().collect();
    (0..n_splits as u64)
        .map(|i| make_plan(&ids, seed.wrapping_add(i), fractions))
        .collect()
}

/// Adds every task of `extra` to the train part; validation and test are untouched.
pub fn augment_train(plan: &SplitPlan, dataset: &PerfDataset, extra: &PerfDataset) -> Result<SplitPlan> {
    if extra.is_empty() {
        return Ok(plan.clone());
    }
    if extra.metric != dataset.metric {
        return Err(Error::MetricMismatch {
            expected: dataset.metric.to_string(),
            found: extra.metric.to_string(),
        });
    }
    let existing: HashSet<&str> = plan.all_ids().chain(dataset.ids()).collect();
    if let Some(id) = extra.ids().find(|id| existing.contains(id)) {
        return Err(Error::IdCollision { id: id.to_string() });
    }
    let train: BTreeSet<String> = plan
        .train_ids
        .iter()
        .cloned()
        .chain(extra.ids().map(str::to_string))
        .collect();
    Ok(SplitPlan {
        train_ids: train.into_iter().collect(),
        ..plan.clone()
    })
}
