//! Generation collection from a chat-completions style endpoint.
//!
//! Request body: `{"model": ..., "messages": [{"role": "user", "content": prompt}],
//! "temperature": 0}` POSTed to `<base_url>/chat/completions`; the output is
//! `choices[0].message.content`. Responses are cached one JSON file per key
//! under the cache directory, so a warm cache needs no network access.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{GenerationRecord, GenerationSet, Instance, Task, TaskSet};
use crate::util::write_atomic;
use crate::{Error, Result};

pub const API_KEY_ENV: &str = "TASKCAST_API_KEY";

/// Version tag of the prompt layout; part of every cache key.
pub const TEMPLATE_VERSION: &str = "taskcast-prompt-v1";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub k_demonstrations: usize,
}

/// Renders the prompt for one instance:
///
/// ```text
/// Definition: {instruction}
///
/// Positive Example 1 -
/// Input: {demo input}
/// Output: {demo output}
///
/// Now complete the following example -
/// Input: {instance input}
/// Output:
/// ```
///
/// with one positive-example block per demonstration, in stored order.
pub fn render_prompt(task: &Task, instance: &Instance, template: &PromptTemplate) -> Result<String> {
    let k = template.k_demonstrations;
    if k > task.demonstrations.len() {
        return Err(Error::InsufficientDemonstrations {
            task_id: task.task_id.clone(),
            needed: k,
            available: task.demonstrations.len(),
        });
    }
    let mut prompt = format!("Definition: {}\n\n", task.instruction);
    for (i, demo) in task.demonstrations.iter().take(k).enumerate() {
        prompt.push_str(&format!(
            "Positive Example {} -\nInput: {}\nOutput: {}\n\n",
            i + 1,
            demo.input,
            demo.output
        ));
    }
    prompt.push_str(&format!(
        "Now complete the following example -\nInput: {}\nOutput:",
        instance.input
    ));
    Ok(prompt)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub temperature: f64,
}

impl Default for DecodingParams {
    fn default() -> Self {
        DecodingParams { temperature: 0.0 }
    }
}

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Delay before retry `n` (1-based) is `backoff_base · 2^(n−1)`, capped at `max_backoff`.
    pub backoff_base: Duration,
    pub max_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            backoff_base: Duration::from_millis(500),
            max_backoff: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 2u32.saturating_pow(retry.saturating_sub(1));
        self.backoff_base.saturating_mul(factor).min(self.max_backoff)
    }
}

#[derive(Debug, Clone)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub max_inflight: usize,
    /// Requests-per-minute cap (counted per HTTP attempt).
    pub rpm: Option<u32>,
    /// Length of the rate window; one minute outside of tests.
    pub rate_window: Duration,
    pub retry: RetryPolicy,
    pub timeout: Duration,
    pub decoding: DecodingParams,
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        EndpointConfig {
            base_url: base_url.into(),
            model: model.into(),
            api_key: None,
            max_inflight: 4,
            rpm: None,
            rate_window: Duration::from_secs(60),
            retry: RetryPolicy::default(),
            timeout: Duration::from_secs(120),
            decoding: DecodingParams::default(),
        }
    }

    /// Reads the auth token from `TASKCAST_API_KEY`.
    pub fn with_env_api_key(mut self) -> Self {
        self.api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        self
    }

    fn check(&self) -> Result<()> {
        if self.max_inflight == 0 {
            return Err(Error::Config("max in-flight requests must be >= 1".into()));
        }
        if self.retry.max_attempts == 0 {
            return Err(Error::Config("max attempts must be >= 1".into()));
        }
        if self.rpm == Some(0) {
            return Err(Error::Config("requests per minute must be >= 1".into()));
        }
        Ok(())
    }

    fn url(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

#[derive(Serialize)]
struct CacheKeyMaterial<'a> {
    decoding: DecodingParams,
    model: &'a str,
    prompt: &'a str,
    template_version: &'a str,
}

/// Hex SHA-256 of the canonical JSON of (decoding params, model, prompt, template version).
pub fn cache_key(model: &str, prompt: &str, decoding: &DecodingParams) -> String {
    let material = CacheKeyMaterial {
        decoding: *decoding,
        model,
        prompt,
        template_version: TEMPLATE_VERSION,
    };
    let bytes = serde_json::to_vec(&material).expect("cache key material serializes");
    hex::encode(Sha256::digest(&bytes))
}

pub fn cache_path(cache_dir: &Path, key: &str) -> PathBuf {
    cache_dir.join(format!("{key}.json"))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub request: serde_json::Value,
    pub response: serde_json::Value,
    pub output: String,
    pub timestamp: u64,
}

fn read_cache(path: &Path) -> Option<CacheEntry> {
    let text = std::fs::read_to_string(path).ok()?;
    match serde_json::from_str(&text) {
        Ok(entry) => Some(entry),
        Err(e) => {
            warn!("ignoring unreadable cache entry {}: {e}", path.display());
            None
        }
    }
}

/// Sliding-window limiter: at most `cap` acquisitions in any `window`.
#[derive(Debug)]
pub struct RateLimiter {
    cap: usize,
    window: Duration,
    starts: Mutex<VecDeque<Instant>>,
}

impl RateLimiter {
    pub fn new(cap: usize, window: Duration) -> Self {
        RateLimiter {
            cap: cap.max(1),
            window,
            starts: Mutex::new(VecDeque::new()),
        }
    }

    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut starts = self.starts.lock().expect("limiter lock");
                let now = Instant::now();
                while starts.front().is_some_and(|t| now.duration_since(*t) >= self.window) {
                    starts.pop_front();
                }
                if starts.len() < self.cap {
                    starts.push_back(now);
                    return;
                }
                self.window - now.duration_since(starts[0])
            };
            std::thread::sleep(wait);
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CollectStats {
    pub prompts: usize,
    pub cache_hits: usize,
    /// HTTP attempts issued, including retries.
    pub requests: usize,
    pub retries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectionMeta {
    pub model: String,
    pub template_version: String,
    pub template: PromptTemplate,
    pub decoding: DecodingParams,
}

#[derive(Debug)]
pub struct Collection {
    pub generations: GenerationSet,
    pub stats: CollectStats,
    pub meta: CollectionMeta,
}

struct Job {
    task_id: String,
    instance_id: String,
    prompt: String,
    key: String,
}

enum Attempt {
    Retryable(String),
    Fatal(String),
}

struct Client<'a> {
    http: reqwest::blocking::Client,
    endpoint: &'a EndpointConfig,
    limiter: Option<RateLimiter>,
    requests: AtomicUsize,
    retries: AtomicUsize,
}

impl Client<'_> {
    fn attempt(&self, body: &serde_json::Value) -> std::result::Result<serde_json::Value, Attempt> {
        if let Some(l) = &self.limiter {
            l.acquire();
        }
        self.requests.fetch_add(1, Ordering::SeqCst);
        let mut req = self.http.post(self.endpoint.url()).json(body);
        if let Some(key) = &self.endpoint.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Attempt::Retryable(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let msg = format!("HTTP {status}");
            return Err(if matches!(status.as_u16(), 408 | 429) || status.is_server_error() {
                Attempt::Retryable(msg)
            } else {
                Attempt::Fatal(msg)
            });
        }
        resp.json().map_err(|e| Attempt::Retryable(format!("bad response body: {e}")))
    }

    fn complete(&self, job: &Job) -> std::result::Result<CacheEntry, String> {
        let body = serde_json::json!({
            "model": self.endpoint.model,
            "messages": [{"role": "user", "content": job.prompt}],
            "temperature": self.endpoint.decoding.temperature,
        });
        let policy = &self.endpoint.retry;
        let mut last = String::new();
        for attempt in 1..=policy.max_attempts {
            if attempt > 1 {
                self.retries.fetch_add(1, Ordering::SeqCst);
                let delay = policy.delay(attempt - 1);
                warn!(
                    "retry {}/{} for {}/{} in {delay:?}: {last}",
                    attempt - 1,
                    policy.max_attempts - 1,
                    job.task_id,
                    job.instance_id
                );
                std::thread::sleep(delay);
            }
            match self.attempt(&body) {
                Ok(response) => {
                    let output = response
                        .pointer("/choices/0/message/content")
                        .and_then(|v| v.as_str())
                        .ok_or_else(|| "response has no choices[0].message.content".to_string())?
                        .to_string();
                    let timestamp = SystemTime::now()
                        .duration_since(UNIX_EPOCH)
                        .map(|d| d.as_secs())
                        .unwrap_or(0);
                    return Ok(CacheEntry {
                        key: job.key.clone(),
                        request: body,
                        response,
                        output,
                        timestamp,
                    });
                }
                Err(Attempt::Fatal(msg)) => return Err(msg),
                Err(Attempt::Retryable(msg)) => last = msg,
            }
        }
        Err(last)
    }
}

/// Produces one generation per instance, from cache where possible.
pub fn collect(
    tasks: &TaskSet,
    endpoint: &EndpointConfig,
    template: &PromptTemplate,
    cache_dir: &Path,
) -> Result<Collection> {
    endpoint.check()?;
    let mut jobs = Vec::new();
    for task in tasks.iter() {
        for inst in &task.instances {
            let prompt = render_prompt(task, inst, template)?;
            let key = cache_key(&endpoint.model, &prompt, &endpoint.decoding);
            jobs.push(Job {
                task_id: task.task_id.clone(),
                instance_id: inst.instance_id.clone(),
                prompt,
                key,
            });
        }
    }

    let mut outputs: Vec<Option<String>> = jobs
        .iter()
        .map(|j| read_cache(&cache_path(cache_dir, &j.key)).map(|e| e.output))
        .collect();
    let misses: Vec<usize> = (0..jobs.len()).filter(|&i| outputs[i].is_none()).collect();
    let mut stats = CollectStats {
        prompts: jobs.len(),
        cache_hits: jobs.len() - misses.len(),
        ..Default::default()
    };
    debug!("{} prompts, {} cached", stats.prompts, stats.cache_hits);

    if !misses.is_empty() {
        if endpoint.api_key.is_none() {
            return Err(Error::AuthMissing);
        }
        std::fs::create_dir_all(cache_dir).map_err(|e| Error::io(cache_dir, e))?;
        let client = Client {
            http: reqwest::blocking::Client::builder()
                .timeout(endpoint.timeout)
                .build()
                .map_err(|e| Error::Config(format!("HTTP client: {e}")))?,
            endpoint,
            limiter: endpoint
                .rpm
                .map(|r| RateLimiter::new(r as usize, endpoint.rate_window)),
            requests: AtomicUsize::new(0),
            retries: AtomicUsize::new(0),
        };
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<(usize, std::result::Result<String, String>)>> = Mutex::new(Vec::new());
        std::thread::scope(|scope| {
            for _ in 0..endpoint.max_inflight.min(misses.len()) {
                scope.spawn(|| loop {
                    let n = next.fetch_add(1, Ordering::SeqCst);
                    let Some(&i) = misses.get(n) else { break };
                    let job = &jobs[i];
                    let result = client.complete(job).and_then(|entry| {
                        let bytes = serde_json::to_vec_pretty(&entry).map_err(|e| e.to_string())?;
                        write_atomic(&cache_path(cache_dir, &job.key), &bytes).map_err(|e| e.to_string())?;
                        Ok(entry.output)
                    });
                    results.lock().expect("results lock").push((i, result));
                });
            }
        });
        stats.requests = client.requests.load(Ordering::SeqCst);
        stats.retries = client.retries.load(Ordering::SeqCst);
        let mut failed = Vec::new();
        let mut message = String::new();
        let mut results = results.into_inner().expect("results lock");
        results.sort_by_key(|(i, _)| *i);
        for (i, r) in results {
            match r {
                Ok(out) => outputs[i] = Some(out),
                Err(e) => {
                    failed.push(format!("{}/{}", jobs[i].task_id, jobs[i].instance_id));
                    if message.is_empty() {
                        message = e;
                    }
                }
            }
        }
        if !failed.is_empty() {
            return Err(Error::Http { failed, message });
        }
    }

    let mut generations = GenerationSet::new(endpoint.model.clone());
    for (job, out) in jobs.iter().zip(outputs) {
        generations.insert(GenerationRecord {
            task_id: job.task_id.clone(),
            instance_id: job.instance_id.clone(),
            output: out.expect("every job resolved"),
            token_logprobs: None,
        });
    }
    Ok(Collection {
        generations,
        stats,
        meta: CollectionMeta {
            model: endpoint.model.clone(),
            template_version: TEMPLATE_VERSION.to_string(),
            template: *template,
            decoding: endpoint.decoding,
        },
    })
}
