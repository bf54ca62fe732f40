mod common;

use std::sync::Arc;
use std::time::{Duration, Instant};

use common::{chat_body, echo_handler, MockServer};
use taskcast::collector::{cache_key, collect, render_prompt, EndpointConfig, PromptTemplate, RetryPolicy};
use taskcast::corpus::{load_tasks, TaskSet};
use taskcast::Error;

fn toy_tasks(dir: &std::path::Path, n_tasks: usize, n_inst: usize) -> TaskSet {
    let path = dir.join("tasks.jsonl");
    common::write_toy_tasks(&path, n_tasks, n_inst, 7);
    load_tasks(&path).unwrap()
}

fn endpoint(server: &MockServer) -> EndpointConfig {
    let mut e = EndpointConfig::new(server.url.clone(), "mock-im");
    e.api_key = Some("test-key".into());
    e.retry = RetryPolicy {
        max_attempts: 3,
        backoff_base: Duration::from_millis(1),
        max_backoff: Duration::from_millis(5),
    };
    e
}

#[test]
fn warm_cache_makes_no_requests() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = toy_tasks(dir.path(), 3, 4);
    let server = MockServer::start(echo_handler());
    let cache = dir.path().join("cache");
    let template = PromptTemplate::default();

    let first = collect(&tasks, &endpoint(&server), &template, &cache).unwrap();
    assert_eq!(first.stats.prompts, 12);
    assert_eq!(first.stats.requests, 12);
    assert_eq!(first.stats.cache_hits, 0);
    assert_eq!(server.hits(), 12);
    assert_eq!(std::fs::read_dir(&cache).unwrap().count(), 12);

    let second = collect(&tasks, &endpoint(&server), &template, &cache).unwrap();
    assert_eq!(second.stats.requests, 0);
    assert_eq!(second.stats.cache_hits, 12);
    assert_eq!(server.hits(), 12);
    assert_eq!(first.generations.to_jsonl().unwrap(), second.generations.to_jsonl().unwrap());

    // The echo server returns each instance's input.
    for task in tasks.iter() {
        for inst in &task.instances {
            let rec = second.generations.get(&task.task_id, &inst.instance_id).unwrap();
            assert_eq!(rec.output, inst.input);
            assert!(rec.token_logprobs.is_none());
        }
    }
}

#[test]
fn retries_then_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = toy_tasks(dir.path(), 1, 1);
    let server = MockServer::start(Arc::new(|n, _, _| {
        if n < 2 {
            (503, "{}".into())
        } else {
            (200, chat_body("ok"))
        }
    }));
    let c = collect(&tasks, &endpoint(&server), &PromptTemplate::default(), &dir.path().join("c")).unwrap();
    assert_eq!(server.hits(), 3);
    assert_eq!(c.stats.requests, 3);
    assert_eq!(c.stats.retries, 2);
    assert_eq!(c.generations.iter().next().unwrap().output, "ok");
}

#[test]
fn rate_limit_responses_are_retried() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = toy_tasks(dir.path(), 1, 1);
    let server = MockServer::start(Arc::new(|n, _, _| {
        if n == 0 {
            (429, "{}".into())
        } else {
            (200, chat_body("fine"))
        }
    }));
    let c = collect(&tasks, &endpoint(&server), &PromptTemplate::default(), &dir.path().join("c")).unwrap();
    assert_eq!(c.stats.retries, 1);
}

#[test]
fn exhausted_retries_fail_without_caching() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = toy_tasks(dir.path(), 1, 2);
    let server = MockServer::start(Arc::new(|_, _, _| (500, "{}".into())));
    let cache = dir.path().join("c");
    let err = collect(&tasks, &endpoint(&server), &PromptTemplate::default(), &cache).unwrap_err();
    match err {
        Error::Http { failed, message } => {
            assert_eq!(failed.len(), 2);
            assert!(message.contains("500"), "{message}");
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(server.hits(), 6);
    assert_eq!(std::fs::read_dir(&cache).map(|d| d.count()).unwrap_or(0), 0);
}

#[test]
fn client_errors_are_not_retried() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = toy_tasks(dir.path(), 1, 1);
    let server = MockServer::start(Arc::new(|_, _, _| (400, "{}".into())));
    let err = collect(&tasks, &endpoint(&server), &PromptTemplate::default(), &dir.path().join("c")).unwrap_err();
    assert!(matches!(err, Error::Http { .. }));
    assert_eq!(server.hits(), 1);
}

#[test]
fn malformed_body_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = toy_tasks(dir.path(), 1, 1);
    let server = MockServer::start(Arc::new(|_, _, _| (200, r#"{"choices": []}"#.into())));
    let err = collect(&tasks, &endpoint(&server), &PromptTemplate::default(), &dir.path().join("c")).unwrap_err();
    assert!(err.to_string().contains("choices"), "{err}");
}

#[test]
fn request_shape_and_auth_header() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = toy_tasks(dir.path(), 1, 1);
    let seen = Arc::new(std::sync::Mutex::new(Vec::new()));
    let s = seen.clone();
    let server = MockServer::start(Arc::new(move |_, body, auth| {
        s.lock().unwrap().push((body.clone(), auth.map(str::to_string)));
        (200, chat_body("x"))
    }));
    let template = PromptTemplate { k_demonstrations: 0 };
    collect(&tasks, &endpoint(&server), &template, &dir.path().join("c")).unwrap();
    let seen = seen.lock().unwrap();
    let (body, auth) = &seen[0];
    assert_eq!(auth.as_deref(), Some("Bearer test-key"));
    assert_eq!(body["model"], "mock-im");
    assert_eq!(body["temperature"], 0.0);
    let task = tasks.iter().next().unwrap();
    let expected = render_prompt(task, &task.instances[0], &template).unwrap();
    assert_eq!(body["messages"][0]["content"], expected.as_str());
    assert_eq!(body["messages"][0]["role"], "user");
}

#[test]
fn cache_only_run_needs_no_key() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = toy_tasks(dir.path(), 2, 2);
    let server = MockServer::start(echo_handler());
    let cache = dir.path().join("c");
    collect(&tasks, &endpoint(&server), &PromptTemplate::default(), &cache).unwrap();

    let mut keyless = endpoint(&server);
    keyless.api_key = None;
    let c = collect(&tasks, &keyless, &PromptTemplate::default(), &cache).unwrap();
    assert_eq!(c.stats.cache_hits, 4);
    assert_eq!(server.hits(), 4);
}

#[test]
fn missing_key_with_cache_misses_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = toy_tasks(dir.path(), 1, 2);
    let server = MockServer::start(echo_handler());
    let mut keyless = endpoint(&server);
    keyless.api_key = None;
    let err = collect(&tasks, &keyless, &PromptTemplate::default(), &dir.path().join("c")).unwrap_err();
    assert!(matches!(err, Error::AuthMissing));
    assert_eq!(server.hits(), 0);
}

#[test]
fn template_change_invalidates_cache() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tasks.jsonl");
    std::fs::write(
        &path,
        r#"{"task_id":"t","instruction":"Answer.","demonstrations":[{"input":"a","output":"b"}],"instances":[{"instance_id":"i","input":"q","references":["r"]}]}"#,
    )
    .unwrap();
    let tasks = load_tasks(&path).unwrap();
    let server = MockServer::start(echo_handler());
    let cache = dir.path().join("c");
    collect(&tasks, &endpoint(&server), &PromptTemplate { k_demonstrations: 0 }, &cache).unwrap();
    collect(&tasks, &endpoint(&server), &PromptTemplate { k_demonstrations: 1 }, &cache).unwrap();
    assert_eq!(server.hits(), 2);

    let mut other_model = endpoint(&server);
    other_model.model = "other".into();
    collect(&tasks, &other_model, &PromptTemplate { k_demonstrations: 0 }, &cache).unwrap();
    assert_eq!(server.hits(), 3);
    let d = taskcast::collector::DecodingParams::default();
    assert_ne!(cache_key("a", "p", &d), cache_key("b", "p", &d));
}

#[test]
fn inflight_requests_are_capped() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = toy_tasks(dir.path(), 2, 5);
    let server = MockServer::start_with_delay(echo_handler(), Duration::from_millis(40));
    let mut e = endpoint(&server);
    e.max_inflight = 2;
    collect(&tasks, &e, &PromptTemplate::default(), &dir.path().join("c")).unwrap();
    assert_eq!(server.hits(), 10);
    let peak = server.max_concurrent.load(std::sync::atomic::Ordering::SeqCst);
    assert!((1..=2).contains(&peak), "peak concurrency {peak}");
}

#[test]
fn request_rate_is_capped() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = toy_tasks(dir.path(), 1, 6);
    let server = MockServer::start(echo_handler());
    let mut e = endpoint(&server);
    e.rpm = Some(2);
    e.rate_window = Duration::from_millis(300);
    e.max_inflight = 4;
    let start = Instant::now();
    collect(&tasks, &e, &PromptTemplate::default(), &dir.path().join("c")).unwrap();
    // 6 requests at 2 per window need at least two full windows of waiting.
    assert!(start.elapsed() >= Duration::from_millis(600), "{:?}", start.elapsed());
    assert_eq!(server.hits(), 6);
}
