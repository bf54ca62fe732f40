//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line, written straight
//! to stderr so it shows up even when the harness captures output.

mod common;

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use taskcast::collector::{collect, EndpointConfig, PromptTemplate, RetryPolicy};
use taskcast::corpus::{GenerationRecord, GenerationSet, Instance, Task, TaskSet};
use taskcast::metrics::{avg_token_loss, lcs_length, rouge_l, score_task, MetricKind, NormalizationPolicy, TaskScore};
use taskcast::perfdata::{make_splits, PerfDataset, Provenance};
use taskcast::predictors::features::{fit_featurizer, FeaturizerConfig, SparseVec};
use taskcast::predictors::ridge::solve_ridge;
use taskcast::predictors::{fit_mean, PredictorKind, TuneGrid};
use taskcast::runner::{rmse, run_experiment, run_split, ExperimentConfig, ExperimentReport, PredictorSpec};

fn criterion(id: u32, name: &str, body: impl FnOnce() -> Result<String, String>) {
    let outcome = catch_unwind(AssertUnwindSafe(body)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let (status, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    let _ = writeln!(std::io::stderr(), "{status} criterion {id:02} {name}: {detail}");
    if let Err(d) = outcome {
        panic!("criterion {id} failed: {d}");
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn score(id: &str, instruction: String, value: f64) -> TaskScore {
    TaskScore {
        task_id: id.to_string(),
        instruction,
        metric: MetricKind::RougeL,
        value,
        n_instances: 1,
    }
}

fn dataset(entries: Vec<TaskScore>) -> PerfDataset {
    PerfDataset::new(MetricKind::RougeL, Provenance::default(), entries).unwrap()
}

/// Length of the longest common subsequence by trying every subsequence of `a`.
fn lcs_exhaustive(a: &[u8], b: &[u8]) -> usize {
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let sub: Vec<u8> = (0..a.len()).filter(|i| mask & (1 << i) != 0).map(|i| a[i]).collect();
        if sub.len() <= best {
            continue;
        }
        let mut it = b.iter();
        if sub.iter().all(|c| it.any(|d| d == c)) {
            best = sub.len();
        }
    }
    best
}

#[test]
fn c01_lcs_matches_exhaustive_oracle() {
    criterion(1, "LCS DP equals exhaustive enumeration", || {
        let start = Instant::now();
        let mut r = common::rng(2024);
        let pairs = 500;
        for _ in 0..pairs {
            let la = r.gen_range(0..=8);
            let lb = r.gen_range(0..=8);
            let alphabet = r.gen_range(1..=4u8);
            let a: Vec<u8> = (0..la).map(|_| r.gen_range(0..alphabet)).collect();
            let b: Vec<u8> = (0..lb).map(|_| r.gen_range(0..alphabet)).collect();
            let (dp, oracle) = (lcs_length(&a, &b), lcs_exhaustive(&a, &b));
            check(dp == oracle, || format!("{a:?} vs {b:?}: dp {dp}, oracle {oracle}"))?;
        }
        let t = start.elapsed();
        check(t < Duration::from_secs(5), || format!("took {t:?}"))?;
        Ok(format!("{pairs} pairs equal in {t:?}"))
    });
}

#[test]
fn c02_rouge_l_worked_example() {
    criterion(2, "ROUGE-L worked example", || {
        let v = rouge_l("the cat sat", &["the cat was sat".to_string()], &NormalizationPolicy::default());
        // LCS 3, P = 3/3, R = 3/4, F = 2PR/(P+R) = 6/7.
        let expected = 100.0 * 2.0 * 1.0 * 0.75 / 1.75;
        check((v - 85.7142857).abs() <= 1e-6, || format!("got {v}"))?;
        check((v - expected).abs() <= 1e-12, || format!("got {v}, hand value {expected}"))?;
        Ok(format!("{v:.7}"))
    });
}

#[test]
fn c03_split_structure() {
    criterion(3, "119 tasks -> 95/12/12, 10 splits -> 120 test predictions", || {
        let entries = (0..119)
            .map(|i| score(&format!("task{i:03}"), format!("instruction {i}"), (i % 100) as f64))
            .collect();
        let d = dataset(entries);
        let plans = make_splits(&d, 10, 0).map_err(|e| e.to_string())?;
        for plan in &plans {
            let sizes = (plan.train_ids.len(), plan.val_ids.len(), plan.test_ids.len());
            check(sizes == (95, 12, 12), || format!("sizes {sizes:?}"))?;
            let mut all: Vec<&str> = plan.all_ids().collect();
            all.sort_unstable();
            all.dedup();
            check(all.len() == 119, || "parts overlap or miss tasks".into())?;
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.json");
        d.write(&path).unwrap();
        let cfg = ExperimentConfig {
            dataset: Some(path),
            predictors: vec![PredictorKind::Mean],
            ..ExperimentConfig::default()
        };
        let report = run_experiment(&cfg).map_err(|e| e.to_string())?;
        let n: usize = report.splits.iter().map(|s| s.predictions.len()).sum();
        check(n == 120, || format!("{n} test predictions"))?;
        Ok(format!("sizes 95/12/12 on all 10 splits, {n} predictions"))
    });
}

#[test]
fn c04_mean_baseline_identity() {
    criterion(4, "mean-baseline train RMSE equals population std", || {
        let mut r = common::rng(4);
        let mut worst = 0.0f64;
        for trial in 0..200 {
            let n = r.gen_range(1..60);
            let train: Vec<TaskScore> = (0..n)
                .map(|i| score(&format!("t{i}"), format!("x {i}"), r.gen_range(0.0..100.0)))
                .collect();
            let model = fit_mean(&train).map_err(|e| e.to_string())?;
            let pred: Vec<f64> = train
                .iter()
                .map(|s| model.predict(&s.task_id, &s.instruction).unwrap().value)
                .collect();
            let y: Vec<f64> = train.iter().map(|s| s.value).collect();
            let mu = y.iter().sum::<f64>() / n as f64;
            let pop_std = (y.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n as f64).sqrt();
            let got = rmse(&pred, &y).map_err(|e| e.to_string())?;
            let diff = (got - pop_std).abs();
            worst = worst.max(diff);
            check(diff <= 1e-12, || format!("trial {trial}: rmse {got} vs std {pop_std}"))?;
        }
        Ok(format!("200 train sets, max |diff| = {worst:e}"))
    });
}

/// ‖(XᵀX + λI)w − Xᵀ(y − b)‖ and ‖Xᵀ(y − b)‖, computed densely.
fn dense_residual(rows: &[SparseVec], dim: usize, y: &[f64], lambda: f64, w: &[f64], b: f64) -> (f64, f64) {
    let mut xtx_w = vec![0.0; dim];
    let mut rhs = vec![0.0; dim];
    for (row, &yi) in rows.iter().zip(y) {
        let xw: f64 = row.0.iter().map(|&(j, v)| v * w[j]).sum();
        for &(j, v) in &row.0 {
            xtx_w[j] += v * xw;
            rhs[j] += v * (yi - b);
        }
    }
    let res: f64 = (0..dim)
        .map(|j| (xtx_w[j] + lambda * w[j] - rhs[j]).powi(2))
        .sum::<f64>()
        .sqrt();
    (res, rhs.iter().map(|v| v * v).sum::<f64>().sqrt())
}

#[test]
fn c05_ridge_solver() {
    criterion(5, "ridge residual bound and hand fixtures", || {
        let two = [SparseVec(vec![(0, 1.0)]), SparseVec(vec![(0, -1.0)])];
        for (lambda, want) in [(0.0, 1.0), (2.0, 0.5)] {
            let s = solve_ridge(&two, 1, &[1.0, -1.0], lambda).map_err(|e| e.to_string())?;
            check((s.weights[0] - want).abs() <= 1e-10 && s.intercept.abs() <= 1e-10, || {
                format!("lambda {lambda}: w {} b {}", s.weights[0], s.intercept)
            })?;
        }

        let mut r = common::rng(5);
        let mut fits = 0;
        let mut worst = 0.0f64;
        // Real TF-IDF designs.
        for trial in 0..6 {
            let n = 20 + 15 * trial;
            let texts: Vec<String> = (0..n).map(|_| common::random_text(&mut r, 12)).collect();
            let y: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..100.0)).collect();
            let f = fit_featurizer(&texts, &FeaturizerConfig::default()).map_err(|e| e.to_string())?;
            let rows: Vec<SparseVec> = texts.iter().map(|t| f.transform(t)).collect();
            for lambda in [0.01, 0.1, 1.0, 10.0, 100.0] {
                let s = solve_ridge(&rows, f.dim(), &y, lambda).map_err(|e| e.to_string())?;
                let (res, rhs) = dense_residual(&rows, f.dim(), &y, lambda, &s.weights, s.intercept);
                let rel = res / rhs;
                worst = worst.max(rel);
                check(rel <= 1e-8, || format!("n {n} lambda {lambda}: relative residual {rel:e}"))?;
                fits += 1;
            }
        }
        // Random dense-ish designs, including ill-conditioned ones.
        for _ in 0..40 {
            let n = r.gen_range(2..30);
            let dim = r.gen_range(1..40);
            let scale = 10f64.powi(r.gen_range(-3..3));
            let rows: Vec<SparseVec> = (0..n)
                .map(|_| {
                    let mut row = Vec::new();
                    for j in 0..dim {
                        if r.gen_bool(0.4) {
                            row.push((j, scale * r.gen_range(-1.0..1.0)));
                        }
                    }
                    SparseVec(row)
                })
                .collect();
            let y: Vec<f64> = (0..n).map(|_| r.gen_range(-50.0..50.0)).collect();
            let lambda = [1e-3, 0.1, 1.0, 100.0][r.gen_range(0..4)];
            let s = solve_ridge(&rows, dim, &y, lambda).map_err(|e| e.to_string())?;
            let (res, rhs) = dense_residual(&rows, dim, &y, lambda, &s.weights, s.intercept);
            let ok = if rhs == 0.0 { res <= 1e-10 } else { res / rhs <= 1e-8 };
            check(ok, || format!("residual {res:e} rhs {rhs:e}"))?;
            if rhs > 0.0 {
                worst = worst.max(res / rhs);
            }
            fits += 1;
        }
        Ok(format!("fixtures exact; {fits} fits, worst relative residual {worst:e}"))
    });
}

/// Synthetic instructions for the signal/no-signal corpora: this many words drawn
/// from a shared 50-word vocabulary. The length is fixed because L2-normalized rows
/// scale a lone keyword's feature by 1/length, and with a large vocabulary ridge
/// prefers memorizing rare per-task words over a keyword present in half the tasks.
const INSTRUCTION_WORDS: usize = 12;

/// Runs mean and ridge over 10 splits of `entries` and returns (baseline, ridge) mean test RMSE.
fn mean_vs_ridge(entries: Vec<TaskScore>, seed: u64) -> (f64, f64, ExperimentReport) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.json");
    dataset(entries).write(&path).unwrap();
    let cfg = ExperimentConfig {
        dataset: Some(path),
        predictors: vec![PredictorKind::Mean, PredictorKind::Ridge],
        n_splits: 10,
        seed,
        ..ExperimentConfig::default()
    };
    let report = run_experiment(&cfg).unwrap();
    let base = report.summary("mean").unwrap().mean_rmse;
    let ridge = report.summary("ridge").unwrap().mean_rmse;
    (base, ridge, report)
}

#[test]
fn c06_no_signal_matches_baseline() {
    criterion(6, "no-signal corpus: ridge within 15% of mean baseline", || {
        let start = Instant::now();
        let mut r = common::rng(6);
        let noise = Normal::new(50.0, 15.0).unwrap();
        let entries = (0..100)
            .map(|i| {
                let text = common::random_text(&mut r, INSTRUCTION_WORDS);
                let y: f64 = noise.sample(&mut r);
                score(&format!("task{i:03}"), text, y.clamp(0.0, 100.0))
            })
            .collect();
        let (base, ridge, _) = mean_vs_ridge(entries, 0);
        let ratio = ridge / base;
        let t = start.elapsed();
        check((ratio - 1.0).abs() <= 0.15, || format!("ridge {ridge:.3} vs mean {base:.3} (ratio {ratio:.3})"))?;
        check(t < Duration::from_secs(30), || format!("took {t:?}"))?;
        Ok(format!("ridge {ridge:.3} vs mean {base:.3}, ratio {ratio:.3}, {t:?}"))
    });
}

#[test]
fn c07_signal_is_detected() {
    criterion(7, "marker-token corpus: ridge below 0.3x baseline", || {
        let start = Instant::now();
        let mut r = common::rng(7);
        let entries = (0..100)
            .map(|i| {
                let mut words: Vec<String> = common::random_text(&mut r, INSTRUCTION_WORDS)
                    .split(' ')
                    .map(String::from)
                    .collect();
                let marked = r.gen_bool(0.5);
                if marked {
                    let at = r.gen_range(0..words.len());
                    words[at] = "flamingo".into();
                }
                score(&format!("task{i:03}"), words.join(" "), if marked { 80.0 } else { 20.0 })
            })
            .collect();
        let (base, ridge, _) = mean_vs_ridge(entries, 0);
        let t = start.elapsed();
        check(ridge < 0.3 * base, || format!("ridge {ridge:.3} vs mean {base:.3}"))?;
        check(t < Duration::from_secs(30), || format!("took {t:?}"))?;
        Ok(format!("ridge {ridge:.3} vs mean {base:.3} ({:.3}x), {t:?}", ridge / base))
    });
}

#[test]
fn c08_loss_metric() {
    criterion(8, "average token loss and task aggregation", || {
        let single = avg_token_loss(&[-0.5, -1.5]).map_err(|e| e.to_string())?;
        check(single == 1.0, || format!("loss {single}"))?;
        let task = Task {
            task_id: "t".into(),
            instruction: "i".into(),
            category: None,
            demonstrations: vec![],
            instances: ["a", "b"]
                .iter()
                .map(|id| Instance {
                    instance_id: id.to_string(),
                    input: String::new(),
                    references: vec!["r".into()],
                })
                .collect(),
        };
        let mut gens = GenerationSet::new("m");
        for (id, lps) in [("a", vec![-1.0]), ("b", vec![-2.0, -2.0])] {
            gens.insert(GenerationRecord {
                task_id: "t".into(),
                instance_id: id.into(),
                output: String::new(),
                token_logprobs: Some(lps),
            });
        }
        let agg = score_task(&task, &gens, MetricKind::AvgTokenLoss, &NormalizationPolicy::default())
            .map_err(|e| e.to_string())?
            .value;
        check(agg == 1.5, || format!("task loss {agg}"))?;
        Ok(format!("{single} and {agg}"))
    });
}

fn write_e2e_inputs(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let tasks = dir.join("tasks.jsonl");
    let gens = dir.join("toy-im.jsonl");
    common::write_toy_tasks(&tasks, 20, 5, 11);
    common::write_mock_generations(&tasks, &gens, 12);
    (tasks, gens)
}

fn run_bin(args: &[&str]) -> Result<std::process::Output, String> {
    let o = Command::new(env!("CARGO_BIN_EXE_taskcast"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&o.stderr)));
    }
    Ok(o)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn c09_experiment_is_deterministic() {
    criterion(9, "identical experiment runs are byte-identical", || {
        let dir = tempfile::tempdir().unwrap();
        let (tasks, gens) = write_e2e_inputs(dir.path());
        let config = dir.path().join("exp.conf");
        std::fs::write(
            &config,
            "tasks = tasks.jsonl\ngenerations = toy-im.jsonl\nmetric = rouge_l\nn_splits = 5\nseed = 3\n\
             predictors = mean, ridge, knn\nfractions = 0.6, 0.2, 0.2\n",
        )
        .unwrap();
        let _ = (tasks, gens);
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        for out in [&a, &b] {
            run_bin(&["experiment", "--config", s(&config), "--out", s(out)])?;
        }
        let mut compared = Vec::new();
        for entry in std::fs::read_dir(&a).unwrap() {
            let name = entry.unwrap().file_name().into_string().unwrap();
            let (x, y) = (std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap());
            check(x == y, || format!("{name} differs"))?;
            compared.push(name);
        }
        compared.sort();
        for need in ["report.json", "table.md", "scatter_mean.svg", "scatter_ridge.svg", "scatter_knn.svg"] {
            check(compared.iter().any(|n| n == need), || format!("{need} not written"))?;
        }
        Ok(format!("{} files identical: {}", compared.len(), compared.join(", ")))
    });
}

#[test]
fn c10_no_leakage() {
    criterion(10, "perturbing test targets leaves test predictions unchanged", || {
        let mut r = common::rng(10);
        let entries: Vec<TaskScore> = (0..60)
            .map(|i| {
                let len = r.gen_range(6..16);
                let text = common::random_text(&mut r, len);
                score(&format!("task{i:03}"), text, r.gen_range(0.0..100.0))
            })
            .collect();
        let d = dataset(entries);
        let plans = make_splits(&d, 3, 1).unwrap();
        let grid = TuneGrid::default();
        let mut checked = 0;
        for plan in &plans {
            let mut perturbed = d.clone();
            for e in perturbed.entries.iter_mut().filter(|e| plan.test_ids.contains(&e.task_id)) {
                e.value = 100.0 - e.value;
            }
            for kind in [PredictorKind::Mean, PredictorKind::Ridge, PredictorKind::Knn] {
                let spec = PredictorSpec::family(kind);
                let a = run_split(&d, None, plan, &spec, &grid).map_err(|e| e.to_string())?;
                let b = run_split(&perturbed, None, plan, &spec, &grid).map_err(|e| e.to_string())?;
                let pa: Vec<f64> = a.predictions.iter().map(|p| p.predicted).collect();
                let pb: Vec<f64> = b.predictions.iter().map(|p| p.predicted).collect();
                check(pa == pb, || format!("{kind} predictions moved"))?;
                check(a.hyperparams == b.hyperparams, || format!("{kind} hyperparameters moved"))?;
                check(a.test_rmse != b.test_rmse, || format!("{kind}: perturbation had no effect"))?;
                checked += 1;
            }
        }
        Ok(format!("{checked} (split, predictor) pairs unchanged"))
    });
}

#[test]
fn c11_end_to_end_desk_run() {
    criterion(11, "end-to-end toy run through the CLI", || {
        let start = Instant::now();
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        let (tasks, gens) = write_e2e_inputs(d);
        let (scores, data, splits, out, rendered) =
            (d.join("scores.jsonl"), d.join("dataset.json"), d.join("splits"), d.join("exp"), d.join("rendered"));
        run_bin(&["validate", "--tasks", s(&tasks), "--gens", s(&gens)])?;
        run_bin(&["score", "--tasks", s(&tasks), "--gens", s(&gens), "--metric", "rouge_l", "--out", s(&scores)])?;
        run_bin(&["dataset", "--tasks", s(&tasks), "--scores", s(&scores), "--metric", "rouge_l", "--out", s(&data)])?;
        run_bin(&["split", "--dataset", s(&data), "--n-splits", "10", "--seed", "0", "--out-dir", s(&splits)])?;
        run_bin(&[
            "experiment", "--dataset", s(&data), "--metric", "rouge_l", "--splits-dir", s(&splits), "--predictors",
            "ridge,knn", "--out", s(&out),
        ])?;
        run_bin(&["report", "--report", s(&out.join("report.json")), "--out-dir", s(&rendered)])?;
        let t = start.elapsed();

        let table = std::fs::read_to_string(rendered.join("table.md")).map_err(|e| e.to_string())?;
        let rows: Vec<&str> = table.lines().filter(|l| l.starts_with('|')).collect();
        check(rows.len() == 5, || format!("expected header, rule and 3 predictor rows:\n{table}"))?;
        check(rows[2].starts_with("| mean"), || format!("mean row missing or not first:\n{table}"))?;
        check(rows[3].starts_with("| ridge") && rows[4].starts_with("| knn"), || table.clone())?;
        let report = ExperimentReport::read(&out.join("report.json")).map_err(|e| e.to_string())?;
        check(report.n_tasks == 20 && report.n_splits == 10, || "wrong report shape".into())?;
        check(t < Duration::from_secs(60), || format!("took {t:?}"))?;
        Ok(format!("{} in {t:?}", rows[2].trim()))
    });
}

#[test]
fn c12_collector_contract() {
    criterion(12, "collector warm-cache idempotence and retry-then-succeed", || {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tasks.jsonl");
        common::write_toy_tasks(&path, 4, 3, 12);
        let tasks: TaskSet = taskcast::corpus::load_tasks(&path).unwrap();
        // Every prompt's first attempt fails with 503; the retry succeeds.
        let failed = Arc::new(std::sync::Mutex::new(std::collections::HashSet::new()));
        let f = failed.clone();
        let server = common::MockServer::start(Arc::new(move |_, body, _| {
            let prompt = common::prompt_of(body).to_string();
            if f.lock().unwrap().insert(prompt) {
                (503, "{}".into())
            } else {
                (200, common::chat_body("generated"))
            }
        }));
        let mut e = EndpointConfig::new(server.url.clone(), "mock");
        e.api_key = Some("k".into());
        e.retry = RetryPolicy {
            max_attempts: 3,
            backoff_base: Duration::from_millis(1),
            max_backoff: Duration::from_millis(4),
        };
        let cache = dir.path().join("cache");
        let first = collect(&tasks, &e, &PromptTemplate::default(), &cache).map_err(|e| e.to_string())?;
        check(first.stats.requests == 24 && first.stats.retries == 12, || format!("{:?}", first.stats))?;
        check(first.generations.len() == 12, || "missing generations".into())?;
        let second = collect(&tasks, &e, &PromptTemplate::default(), &cache).map_err(|e| e.to_string())?;
        check(second.stats.requests == 0 && server.hits() == 24, || format!("{:?}", second.stats))?;
        check(
            first.generations.to_jsonl().unwrap() == second.generations.to_jsonl().unwrap(),
            || "second run output differs".into(),
        )?;
        Ok(format!(
            "cold: {} requests / {} retries; warm: {} requests",
            first.stats.requests, first.stats.retries, second.stats.requests
        ))
    });
}
