#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;
use serde_json::{json, Value};

/// What the mock returns for the `n`-th request (0-based) with the given JSON body and auth header.
pub type Handler = dyn Fn(usize, &Value, Option<&str>) -> (u16, String) + Send + Sync;

pub struct MockServer {
    pub url: String,
    pub hits: Arc<AtomicUsize>,
    pub times: Arc<Mutex<Vec<Instant>>>,
    pub max_concurrent: Arc<AtomicUsize>,
}

pub fn chat_body(content: &str) -> String {
    json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]}).to_string()
}

pub fn prompt_of(body: &Value) -> &str {
    body.pointer("/messages/0/content").and_then(Value::as_str).unwrap_or("")
}

/// Echoes the last `Input:` line of the prompt back as the completion.
pub fn echo_handler() -> Arc<Handler> {
    Arc::new(|_, body, _| {
        let prompt = prompt_of(body);
        let input = prompt
            .lines()
            .rev()
            .find_map(|l| l.strip_prefix("Input: "))
            .unwrap_or("");
        (200, chat_body(input))
    })
}

impl MockServer {
    pub fn start(handler: Arc<Handler>) -> Self {
        Self::start_with_delay(handler, Duration::ZERO)
    }

    pub fn start_with_delay(handler: Arc<Handler>, delay: Duration) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let times = Arc::new(Mutex::new(Vec::new()));
        let max_concurrent = Arc::new(AtomicUsize::new(0));
        let inflight = Arc::new(AtomicUsize::new(0));
        let (h, t, m) = (hits.clone(), times.clone(), max_concurrent.clone());
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let (handler, h, t, m, inflight) = (handler.clone(), h.clone(), t.clone(), m.clone(), inflight.clone());
                std::thread::spawn(move || {
                    serve(stream, &*handler, delay, &h, &t, &m, &inflight);
                });
            }
        });
        MockServer {
            url,
            hits,
            times,
            max_concurrent,
        }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

fn serve(
    stream: TcpStream,
    handler: &Handler,
    delay: Duration,
    hits: &AtomicUsize,
    times: &Mutex<Vec<Instant>>,
    max_concurrent: &AtomicUsize,
    inflight: &AtomicUsize,
) {
    let mut writer = stream.try_clone().unwrap();
    let mut reader = BufReader::new(stream);
    loop {
        let mut request_line = String::new();
        if reader.read_line(&mut request_line).unwrap_or(0) == 0 {
            return;
        }
        let mut length = 0usize;
        let mut auth = None;
        loop {
            let mut line = String::new();
            if reader.read_line(&mut line).unwrap_or(0) == 0 {
                return;
            }
            let line = line.trim_end();
            if line.is_empty() {
                break;
            }
            if let Some((name, value)) = line.split_once(':') {
                match name.trim().to_ascii_lowercase().as_str() {
                    "content-length" => length = value.trim().parse().unwrap_or(0),
                    "authorization" => auth = Some(value.trim().to_string()),
                    _ => {}
                }
            }
        }
        let mut body = vec![0u8; length];
        if reader.read_exact(&mut body).is_err() {
            return;
        }
        let now = inflight.fetch_add(1, Ordering::SeqCst) + 1;
        max_concurrent.fetch_max(now, Ordering::SeqCst);
        let n = hits.fetch_add(1, Ordering::SeqCst);
        times.lock().unwrap().push(Instant::now());
        let value: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
        let (status, text) = handler(n, &value, auth.as_deref());
        std::thread::sleep(delay);
        inflight.fetch_sub(1, Ordering::SeqCst);
        let response = format!(
            "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\n\r\n{text}",
            text.len()
        );
        if writer.write_all(response.as_bytes()).is_err() {
            return;
        }
    }
}

const WORDS: &[&str] = &[
    "alpha", "bravo", "cobalt", "delta", "ember", "fjord", "garnet", "harbor", "iris", "jasper", "kelp", "lumen",
    "mosaic", "nectar", "onyx", "pylon", "quartz", "rivet", "sable", "tundra", "umber", "vortex", "willow", "xenon",
    "yonder", "zephyr", "amber", "basalt", "cinder", "dune", "eddy", "flint", "grove", "heron", "inlet", "juniper",
    "kestrel", "lagoon", "marsh", "nimbus", "orchid", "prism", "quill", "ridge", "spruce", "thistle", "upland",
    "vale", "wharf", "yarrow",
];

/// Random instruction text of `len` words drawn from a fixed vocabulary.
pub fn random_text(rng: &mut Pcg64, len: usize) -> String {
    (0..len)
        .map(|_| *WORDS.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn rng(seed: u64) -> Pcg64 {
    Pcg64::seed_from_u64(seed)
}

pub fn uniform(rng: &mut Pcg64, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo..hi)
}

/// Writes a toy task file: `n_tasks` tasks × `n_inst` instances with single-sentence references.
pub fn write_toy_tasks(path: &Path, n_tasks: usize, n_inst: usize, seed: u64) {
    let mut r = rng(seed);
    let mut out = String::new();
    for t in 0..n_tasks {
        let instances: Vec<Value> = (0..n_inst)
            .map(|i| {
                json!({
                    "instance_id": format!("task{t:03}-{i}"),
                    "input": random_text(&mut r, 6),
                    "references": [random_text(&mut r, 5)],
                })
            })
            .collect();
        let task = json!({
            "task_id": format!("task{t:03}"),
            "instruction": format!("Given the text, {}.", random_text(&mut r, 8)),
            "instances": instances,
        });
        out.push_str(&task.to_string());
        out.push('\n');
    }
    std::fs::write(path, out).unwrap();
}

/// Mock generations for a task file: each reference word is kept with a per-task probability.
pub fn write_mock_generations(tasks: &Path, out: &Path, seed: u64) {
    let mut r = rng(seed);
    let mut text = String::new();
    for line in std::fs::read_to_string(tasks).unwrap().lines() {
        let task: Value = serde_json::from_str(line).unwrap();
        let keep = uniform(&mut r, 0.1, 0.95);
        for inst in task["instances"].as_array().unwrap() {
            let reference = inst["references"][0].as_str().unwrap();
            let output: Vec<&str> = reference.split(' ').filter(|_| r.gen_bool(keep)).collect();
            let record = json!({
                "task_id": task["task_id"],
                "instance_id": inst["instance_id"],
                "output": output.join(" "),
            });
            text.push_str(&record.to_string());
            text.push('\n');
        }
    }
    std::fs::write(out, text).unwrap();
}
