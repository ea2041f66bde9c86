mod common;

use std::collections::BTreeMap;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use metaphor_er_core::corpus::synthetic::{compatibility_corpus, SyntheticSpec};
use metaphor_er_core::corpus::TargetInstance;
use metaphor_er_core::evaluation::micro_average;
use metaphor_er_core::llm_baseline::{
    features_for, fold_aligned_predictions, parse_answers, query_all, render_prompt, CacheMode, ChatBackend,
    ClientConfig, HttpChatClient, LlmError, ParseStatus, ResponseCache, DEFAULT_L2, N_FEATURES,
};
use metaphor_er_core::splits::build_wid_folds;

use common::fixture;

fn read_fixture(name: &str) -> String {
    std::fs::read_to_string(fixture(&format!("llm/{name}"))).unwrap()
}

#[test]
fn parses_clean_fixture() {
    let f = parse_answers("a", &read_fixture("clean.txt"));
    assert_eq!(f.parse_status, ParseStatus::Clean);
    assert_eq!(f.features, vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
}

#[test]
fn parses_partial_fixture() {
    let f = parse_answers("b", &read_fixture("partial.txt"));
    assert_eq!(f.parse_status, ParseStatus::Partial);
    let mut want = vec![0.5; N_FEATURES];
    want[..5].copy_from_slice(&[1.0, 0.5, 0.0, 0.5, 1.0]);
    assert_eq!(f.features, want);
}

#[test]
fn parses_failed_fixture() {
    let f = parse_answers("c", &read_fixture("failed.txt"));
    assert_eq!(f.parse_status, ParseStatus::Failed);
    assert_eq!(f.features, vec![0.5; N_FEATURES]);
    assert_eq!(parse_answers("d", ""), f.clone().with_id("d"));
}

trait WithId {
    fn with_id(self, id: &str) -> Self;
}

impl WithId for metaphor_er_core::llm_baseline::AnswerFeatures {
    fn with_id(mut self, id: &str) -> Self {
        self.instance_id = id.into();
        self
    }
}

/// Answers from the prompt text alone: says "metaphorical" when the starred
/// verb's class differs from the nouns' class. Some prompts get partial or
/// unusable answers, chosen by a fixed hash of the prompt.
struct Oracle {
    calls: AtomicUsize,
}

impl Oracle {
    fn new() -> Self {
        Self { calls: AtomicUsize::new(0) }
    }
}

fn class_of(word: &str) -> &str {
    word[1..].split('x').next().unwrap()
}

impl ChatBackend for Oracle {
    fn model(&self) -> &str {
        "stub-oracle"
    }

    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let text = prompt.lines().find_map(|l| l.strip_prefix("text: ")).unwrap();
        let words: Vec<&str> = text.split(|c: char| c == ' ' || c == '.').filter(|w| !w.is_empty()).collect();
        let target = words.iter().find(|w| w.starts_with('*')).unwrap().trim_matches('*');
        let noun = words.iter().find(|w| w.starts_with('n')).unwrap();
        let meta = class_of(target) != class_of(noun);
        let (y, n) = if meta { ("yes", "no") } else { ("no", "yes") };
        let mut h = DefaultHasher::new();
        prompt.hash(&mut h);
        Ok(match h.finish() % 8 {
            0 => "I cannot answer that.".into(),
            1 => format!("['{target}', '{n}', 'unsure', '{y}']"),
            _ => format!("['{target}', '{n}', '{y}', '{y}', '{n}', '{n}', '{n}', '{n}', '{n}', '{n}', '{n}', '{y}', 'no', 'no']"),
        })
    }
}

struct Unreachable(&'static str);

impl ChatBackend for Unreachable {
    fn model(&self) -> &str {
        self.0
    }

    fn complete(&self, _: &str) -> Result<String, LlmError> {
        panic!("replay must not touch the network");
    }
}

fn corpus() -> Vec<TargetInstance> {
    compatibility_corpus(&SyntheticSpec {
        n_instances: 300,
        classes: 4,
        seed: 21,
        ..Default::default()
    })
}

struct PipelineOut {
    f1: f64,
    probabilities: Vec<(String, u64)>,
    statuses: BTreeMap<&'static str, usize>,
}

fn pipeline(data: &[TargetInstance], backend: &dyn ChatBackend, cache: &ResponseCache, mode: CacheMode, concurrency: usize) -> PipelineOut {
    let prompts: Vec<_> = data.iter().map(|t| render_prompt(t).unwrap()).collect();
    let outcomes = query_all(&prompts, backend, cache, mode, concurrency).unwrap();
    let features = features_for(&outcomes);
    let mut statuses = BTreeMap::new();
    for f in &features {
        let k = match f.parse_status {
            ParseStatus::Clean => "clean",
            ParseStatus::Partial => "partial",
            ParseStatus::Failed => "failed",
        };
        *statuses.entry(k).or_insert(0) += 1;
    }
    let features: BTreeMap<_, _> = features.into_iter().map(|f| (f.instance_id.clone(), f)).collect();
    let gold: BTreeMap<String, u8> = data.iter().map(|t| (t.instance_id.clone(), t.label)).collect();
    let plan = build_wid_folds(data, 5, 7).unwrap();
    let folds = fold_aligned_predictions(&features, &gold, &plan, DEFAULT_L2, "LLM").unwrap();
    let (_, prf) = micro_average(&folds, &gold).unwrap();
    let mut probabilities: Vec<(String, u64)> =
        folds.concat().into_iter().map(|p| (p.instance_id, p.probability.to_bits())).collect();
    probabilities.sort();
    PipelineOut {
        f1: prf.f1,
        probabilities,
        statuses,
    }
}

#[test]
fn stubbed_pipeline_is_deterministic() {
    let data = corpus();
    let dir = tempfile::tempdir().unwrap();
    let cache_a = ResponseCache::open(&dir.path().join("a.jsonl")).unwrap();
    let cache_b = ResponseCache::open(&dir.path().join("b.jsonl")).unwrap();
    let oracle = Oracle::new();
    let a = pipeline(&data, &oracle, &cache_a, CacheMode::Live, 1);
    let b = pipeline(&data, &Oracle::new(), &cache_b, CacheMode::Live, 4);
    assert_eq!(a.probabilities, b.probabilities);
    assert_eq!(a.f1, b.f1);
    assert_eq!(oracle.calls.load(Ordering::SeqCst), data.len());
    // every kind of answer occurred and failures were kept, not dropped
    assert!(a.statuses.values().all(|&n| n > 0) && a.statuses.len() == 3, "{:?}", a.statuses);
    assert_eq!(a.probabilities.len(), data.len());
    // the stub answers are informative for most instances
    assert!(a.f1 > 0.8, "F1 {}", a.f1);

    // a rerun against the warm cache issues no requests and changes nothing
    let again = Oracle::new();
    let c = pipeline(&data, &again, &cache_a, CacheMode::Live, 2);
    assert_eq!(again.calls.load(Ordering::SeqCst), 0);
    assert_eq!(c.probabilities, a.probabilities);
    // replay from the persisted file, offline
    let reopened = ResponseCache::open(&dir.path().join("a.jsonl")).unwrap();
    assert_eq!(reopened.len(), data.len());
    let d = pipeline(&data, &Unreachable("stub-oracle"), &reopened, CacheMode::Replay, 3);
    assert_eq!(d.probabilities, a.probabilities);
}

#[test]
fn replay_without_cache_entry_fails() {
    let data = corpus();
    let dir = tempfile::tempdir().unwrap();
    let cache = ResponseCache::open(&dir.path().join("empty.jsonl")).unwrap();
    let prompts: Vec<_> = data[..3].iter().map(|t| render_prompt(t).unwrap()).collect();
    let err = query_all(&prompts, &Unreachable("stub-oracle"), &cache, CacheMode::Replay, 1).unwrap_err();
    assert!(matches!(err, LlmError::NotCached(_)));
}

/// Minimal HTTP/1.1 server answering each connection with the next scripted
/// `(status, body)`; the last entry repeats.
fn serve(script: Vec<(u16, String)>) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let mut stream = stream.unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap() == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut body = vec![0u8; len];
            reader.read_exact(&mut body).unwrap();
            let n = counter.fetch_add(1, Ordering::SeqCst);
            let (status, reply) = &script[n.min(script.len() - 1)];
            let resp = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            );
            stream.write_all(resp.as_bytes()).unwrap();
        }
    });
    (format!("http://{addr}/v1"), hits)
}

fn client(base_url: String) -> HttpChatClient {
    HttpChatClient::new(
        ClientConfig {
            base_url,
            max_attempts: 3,
            initial_backoff_ms: 1,
            timeout_secs: 5,
            ..Default::default()
        },
        Some("test-key".into()),
    )
}

fn completion(text: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
}

#[test]
fn http_client_retries_server_errors() {
    let (url, hits) = serve(vec![(500, "{}".into()), (429, "{}".into()), (200, completion("['x', 'yes']"))]);
    let text = client(url).complete("hello").unwrap();
    assert_eq!(text, "['x', 'yes']");
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn http_client_gives_up_and_failure_becomes_neutral_features() {
    let (url, hits) = serve(vec![(503, "{}".into())]);
    let backend = client(url);
    let data = corpus();
    let prompts = vec![render_prompt(&data[0]).unwrap()];
    let dir = tempfile::tempdir().unwrap();
    let cache = ResponseCache::open(&dir.path().join("c.jsonl")).unwrap();
    let out = query_all(&prompts, &backend, &cache, CacheMode::Live, 1).unwrap();
    assert_eq!(hits.load(Ordering::SeqCst), 3);
    assert!(out[0].response.is_none() && out[0].error.as_deref().unwrap().contains("503"));
    let f = &features_for(&out)[0];
    assert_eq!(f.parse_status, ParseStatus::Failed);
    assert_eq!(f.features, vec![0.5; N_FEATURES]);
    // the failure is cached; replay reproduces it without a request
    let model = ClientConfig::default().model;
    let replayed = query_all(&prompts, &Unreachable(model.leak()), &cache, CacheMode::Replay, 1).unwrap();
    assert!(replayed[0].from_cache && replayed[0].error == out[0].error);
    // the cache key includes the model name
    let other = query_all(&prompts, &Unreachable("other-model"), &cache, CacheMode::Replay, 1);
    assert!(matches!(other, Err(LlmError::NotCached(_))));
}

#[test]
fn http_client_does_not_retry_client_errors() {
    let (url, hits) = serve(vec![(400, "{}".into())]);
    let err = client(url).complete("hello").unwrap_err();
    assert!(matches!(err, LlmError::Request { attempts: 1, .. }));
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}
