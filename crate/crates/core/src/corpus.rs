//! Task corpora and generation logs.
//!
//! Task file, one JSON object per line:
//!
//! ```text
//! {"task_id": str, "instruction": str, "category": str?,
//!  "demonstrations": [{"input": str, "output": str}]?,
//!  "instances": [{"instance_id": str, "input": str, "references": [str]}]}
//! ```
//!
//! Generation file, one JSON object per line:
//!
//! ```text
//! {"task_id": str, "instance_id": str, "output": str, "token_logprobs": [float]?}
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::rng::{fnv1a, Pcg32};
use crate::util::{parse_line, read_lines, schema_err, to_jsonl, write_atomic};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub instance_id: String,
    #[serde(default)]
    pub input: String,
    pub references: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub input: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: String,
    /// Stored verbatim; normalization only happens inside metrics.
    pub instruction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub demonstrations: Vec<Demonstration>,
    pub instances: Vec<Instance>,
}

impl Task {
    fn check(&self) -> std::result::Result<(), String> {
        if self.task_id.is_empty() {
            return Err("empty task_id".into());
        }
        if self.instruction.trim().is_empty() {
            return Err("empty instruction".into());
        }
        if self.instances.is_empty() {
            return Err(format!("task {:?} has no instances", self.task_id));
        }
        let mut seen = HashSet::new();
        for inst in &self.instances {
            if !seen.insert(inst.instance_id.as_str()) {
                return Err(format!(
                    "duplicate instance_id {:?} in task {:?}",
                    inst.instance_id, self.task_id
                ));
            }
            if inst.references.is_empty() {
                return Err(format!("instance {:?} has no references", inst.instance_id));
            }
        }
        if let Some(i) = self.demonstrations.iter().position(|d| d.output.is_empty()) {
            return Err(format!("demonstration {i} has empty output"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Keep at most this many instances per task, chosen by a seeded subsample.
    pub max_instances_per_task: Option<usize>,
    pub seed: u64,
}

/// Tasks in file order, addressable by id.
#[derive(Debug, Clone, Default)]
pub struct TaskSet {
    tasks: IndexMap<String, Task>,
    lines: HashMap<String, usize>,
    pub source: Option<PathBuf>,
}

impl PartialEq for TaskSet {
    fn eq(&self, other: &Self) -> bool {
        self.tasks == other.tasks
    }
}

impl TaskSet {
    pub fn from_tasks(tasks: impl IntoIterator<Item = Task>) -> Result<Self> {
        let mut set = TaskSet::default();
        for (i, task) in tasks.into_iter().enumerate() {
            task.check()
                .map_err(|m| schema_err(Path::new("<memory>"), i + 1, m))?;
            set.insert(task, i + 1)?;
        }
        Ok(set)
    }

    /// A copy with every task capped at `cap` instances (see [`subsample_instances`]).
    pub fn subsampled(&self, cap: usize, seed: u64) -> TaskSet {
        let mut out = self.clone();
        for task in out.tasks.values_mut() {
            subsample_instances(task, cap, seed);
        }
        out
    }

    fn insert(&mut self, task: Task, line: usize) -> Result<()> {
        if let Some(&first_line) = self.lines.get(&task.task_id) {
            return Err(Error::DuplicateTask {
                id: task.task_id,
                first_line,
                second_line: line,
            });
        }
        self.lines.insert(task.task_id.clone(), line);
        self.tasks.insert(task.task_id.clone(), task);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn get(&self, task_id: &str) -> Option<&Task> {
        self.tasks.get(task_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Task> {
        self.tasks.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.tasks.keys().map(String::as_str)
    }

    /// Source line of a task, when it was loaded from a file.
    pub fn line_of(&self, task_id: &str) -> Option<usize> {
        self.lines.get(task_id).copied()
    }

    pub fn contains_instance(&self, task_id: &str, instance_id: &str) -> bool {
        self.tasks
            .get(task_id)
            .is_some_and(|t| t.instances.iter().any(|i| i.instance_id == instance_id))
    }

    pub fn total_instances(&self) -> usize {
        self.tasks.values().map(|t| t.instances.len()).sum()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        to_jsonl(self.tasks.values())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_jsonl()?.as_bytes())
    }
}

pub fn load_tasks(path: &Path) -> Result<TaskSet> {
    load_tasks_with(path, &LoadOptions::default())
}

pub fn load_tasks_with(path: &Path, opts: &LoadOptions) -> Result<TaskSet> {
    let mut set = TaskSet {
        source: Some(path.to_path_buf()),
        ..TaskSet::default()
    };
    for (line, text) in read_lines(path)? {
        let value = parse_line(path, line, &text)?;
        let mut task: Task =
            serde_json::from_value(value).map_err(|e| schema_err(path, line, e.to_string()))?;
        task.check().map_err(|m| schema_err(path, line, m))?;
        if let Some(cap) = opts.max_instances_per_task {
            subsample_instances(&mut task, cap, opts.seed);
        }
        set.insert(task, line)?;
    }
    Ok(set)
}

/// Keeps `cap` instances chosen by a PRNG seeded from `(seed, task_id)`,
/// preserving their stored order.
pub fn subsample_instances(task: &mut Task, cap: usize, seed: u64) {
    let cap = cap.max(1);
    if task.instances.len() <= cap {
        return;
    }
    let mut rng = Pcg32::new(seed, fnv1a(&task.task_id));
    let mut idx: Vec<usize> = (0..task.instances.len()).collect();
    rng.shuffle(&mut idx);
    let mut keep: Vec<usize> = idx[..cap].to_vec();
    keep.sort_unstable();
    let old = std::mem::take(&mut task.instances);
    task.instances = keep.into_iter().map(|i| old[i].clone()).collect();
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub task_id: String,
    pub instance_id: String,
    pub output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<f64>>,
}

pub type GenerationKey = (String, String);

/// Generations keyed by `(task_id, instance_id)`, iterated in key order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GenerationSet {
    pub model: String,
    records: BTreeMap<GenerationKey, GenerationRecord>,
    duplicates: Vec<GenerationKey>,
}

impl GenerationSet {
    pub fn new(model: impl Into<String>) -> Self {
        GenerationSet {
            model: model.into(),
            ..Default::default()
        }
    }

    /// Inserts a record; a second record for the same key is kept aside as a duplicate.
    pub fn insert(&mut self, record: GenerationRecord) -> bool {
        let key = (record.task_id.clone(), record.instance_id.clone());
        if self.records.contains_key(&key) {
            self.duplicates.push(key);
            return false;
        }
        self.records.insert(key, record);
        true
    }

    pub fn get(&self, task_id: &str, instance_id: &str) -> Option<&GenerationRecord> {
        self.records
            .get(&(task_id.to_string(), instance_id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &GenerationRecord> {
        self.records.values()
    }

    pub fn duplicates(&self) -> &[GenerationKey] {
        &self.duplicates
    }

    pub fn to_jsonl(&self) -> Result<String> {
        to_jsonl(self.records.values())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_jsonl()?.as_bytes())
    }
}

fn check_logprobs(path: &Path, line: usize, record: &GenerationRecord) -> Result<()> {
    for &lp in record.token_logprobs.iter().flatten() {
        let message = if !lp.is_finite() {
            "non-finite log-prob"
        } else if lp > 0.0 {
            "positive log-prob"
        } else {
            continue;
        };
        return Err(Error::InvalidLogprob {
            path: path.to_path_buf(),
            line,
            message: format!("{message} {lp} for ({:?}, {:?})", record.task_id, record.instance_id),
        });
    }
    Ok(())
}

fn model_label(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn parse_generations(path: &Path) -> Result<Vec<(usize, GenerationRecord)>> {
    let mut out = Vec::new();
    for (line, text) in read_lines(path)? {
        let value = parse_line(path, line, &text)?;
        // Non-finite floats are not valid JSON; reject them through the number check below.
        let record: GenerationRecord =
            serde_json::from_value(value).map_err(|e| schema_err(path, line, e.to_string()))?;
        check_logprobs(path, line, &record)?;
        out.push((line, record));
    }
    Ok(out)
}

/// Parses a generation file without resolving ids against a task set.
/// Duplicate keys are retained for [`validate`] to report.
pub fn read_generations(path: &Path) -> Result<GenerationSet> {
    let mut set = GenerationSet::new(model_label(path));
    for (_, record) in parse_generations(path)? {
        set.insert(record);
    }
    Ok(set)
}

/// Parses a generation file, requiring every record to resolve to an instance of `tasks`.
pub fn load_generations(path: &Path, tasks: &TaskSet) -> Result<GenerationSet> {
    let mut set = GenerationSet::new(model_label(path));
    for (line, record) in parse_generations(path)? {
        if !tasks.contains_instance(&record.task_id, &record.instance_id) {
            return Err(Error::UnknownId {
                task_id: record.task_id,
                instance_id: record.instance_id,
                line,
            });
        }
        let (task_id, instance_id) = (record.task_id.clone(), record.instance_id.clone());
        if !set.insert(record) {
            return Err(Error::DuplicateGeneration {
                task_id,
                instance_id,
                line,
            });
        }
    }
    Ok(set)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct InstanceCount {
    pub expected: usize,
    pub covered: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub missing: Vec<GenerationKey>,
    pub orphans: Vec<GenerationKey>,
    pub duplicates: Vec<GenerationKey>,
    pub instance_counts: IndexMap<String, InstanceCount>,
}

impl ValidationReport {
    pub fn issue_count(&self) -> usize {
        self.missing.len() + self.orphans.len() + self.duplicates.len()
    }

    pub fn is_clean(&self) -> bool {
        self.issue_count() == 0
    }
}

pub fn validate(tasks: &TaskSet, gens: &GenerationSet) -> ValidationReport {
    let mut report = ValidationReport {
        duplicates: gens.duplicates().to_vec(),
        ..Default::default()
    };
    for task in tasks.iter() {
        let mut count = InstanceCount {
            expected: task.instances.len(),
            covered: 0,
        };
        for inst in &task.instances {
            if gens.get(&task.task_id, &inst.instance_id).is_some() {
                count.covered += 1;
            } else {
                report
                    .missing
                    .push((task.task_id.clone(), inst.instance_id.clone()));
            }
        }
        report.instance_counts.insert(task.task_id.clone(), count);
    }
    report.orphans = gens
        .iter()
        .filter(|r| !tasks.contains_instance(&r.task_id, &r.instance_id))
        .map(|r| (r.task_id.clone(), r.instance_id.clone()))
        .collect();
    report
}

#[derive(Debug, Deserialize)]
struct SuperNiExample {
    #[serde(default)]
    input: String,
    #[serde(default)]
    output: String,
}

#[derive(Debug, Deserialize)]
struct SuperNiInstance {
    id: String,
    #[serde(default)]
    input: String,
    output: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct SuperNiTask {
    #[serde(rename = "Definition")]
    definition: Vec<String>,
    #[serde(rename = "Categories", default)]
    categories: Vec<String>,
    #[serde(rename = "Positive Examples", default)]
    positive_examples: Vec<SuperNiExample>,
    #[serde(rename = "Instances")]
    instances: Vec<SuperNiInstance>,
}

/// Converts one Super-NaturalInstructions task file (`taskNNN_name.json`)
/// into a [`Task`]. The task id is the file stem; the instruction is the
/// definition strings joined by newlines; positive examples become
/// demonstrations and the first category (if any) becomes the label.
pub fn ingest_superni_file(path: &Path) -> Result<Task> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: SuperNiTask = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let task = Task {
        task_id: model_label(path),
        instruction: raw.definition.join("\n"),
        category: raw.categories.into_iter().next(),
        demonstrations: raw
            .positive_examples
            .into_iter()
            .filter(|d| !d.output.is_empty())
            .map(|d| Demonstration {
                input: d.input,
                output: d.output,
            })
            .collect(),
        instances: raw
            .instances
            .into_iter()
            .map(|i| Instance {
                instance_id: i.id,
                input: i.input,
                references: i.output,
            })
            .collect(),
    };
    task.check().map_err(|m| schema_err(path, 1, m))?;
    Ok(task)
}

/// Ingests a single SuperNI task file or every `*.json` file of a directory
/// (sorted by file name).
pub fn ingest_superni(path: &Path, opts: &LoadOptions) -> Result<TaskSet> {
    let files = if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        files
    } else {
        vec![path.to_path_buf()]
    };
    let mut set = TaskSet::default();
    for (i, file) in files.iter().enumerate() {
        let mut task = ingest_superni_file(file)?;
        if let Some(cap) = opts.max_instances_per_task {
            subsample_instances(&mut task, cap, opts.seed);
        }
        set.insert(task, i + 1)?;
    }
    Ok(set)
}
