//! Chat-completion client, append-only response cache and bounded-concurrency
//! dispatch.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{parse_answers, AnswerFeatures, LlmError, PromptInstance};

/// Something that turns a prompt into raw response text.
pub trait ChatBackend: Sync {
    fn model(&self) -> &str;
    fn complete(&self, prompt: &str) -> Result<String, LlmError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientConfig {
    pub base_url: String,
    pub model: String,
    pub api_key_env: String,
    pub max_attempts: usize,
    pub initial_backoff_ms: u64,
    pub timeout_secs: u64,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-3.5-turbo-0125".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            max_attempts: 3,
            initial_backoff_ms: 500,
            timeout_secs: 60,
        }
    }
}

/// OpenAI-style `/chat/completions` client at temperature 0.
pub struct HttpChatClient {
    config: ClientConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpChatClient {
    /// Reads the key from `config.api_key_env`.
    pub fn from_env(config: ClientConfig) -> Result<Self, LlmError> {
        let key = std::env::var(&config.api_key_env).map_err(|_| LlmError::MissingKey(config.api_key_env.clone()))?;
        Ok(Self::new(config, Some(key)))
    }

    pub fn new(config: ClientConfig, api_key: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        Self { config, api_key, agent }
    }

    fn attempt(&self, prompt: &str) -> Result<String, (bool, String)> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let body = json!({
            "model": self.config.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut req = self.agent.post(&url).header("Content-Type", "application/json");
        if let Some(k) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {k}"));
        }
        let mut resp = match req.send_json(&body) {
            Ok(r) => r,
            Err(ureq::Error::StatusCode(code)) => {
                let retry = code == 429 || code >= 500;
                return Err((retry, format!("HTTP {code}")));
            }
            Err(e) => return Err((true, e.to_string())),
        };
        let v: Value = resp.body_mut().read_json().map_err(|e| (true, e.to_string()))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| (false, format!("no message content in {v}")))
    }
}

impl ChatBackend for HttpChatClient {
    fn model(&self) -> &str {
        &self.config.model
    }

    /// Retries transport errors, 429 and 5xx with exponential backoff.
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let mut backoff = Duration::from_millis(self.config.initial_backoff_ms);
        let attempts = self.config.max_attempts.max(1);
        let mut last = String::new();
        for i in 0..attempts {
            match self.attempt(prompt) {
                Ok(text) => return Ok(text),
                Err((retry, msg)) => {
                    log::warn!("chat request attempt {} failed: {msg}", i + 1);
                    last = msg;
                    if !retry {
                        return Err(LlmError::Request { attempts: i + 1, message: last });
                    }
                    if i + 1 < attempts {
                        std::thread::sleep(backoff);
                        backoff *= 2;
                    }
                }
            }
        }
        Err(LlmError::Request { attempts, message: last })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheKey {
    pub instance_id: String,
    pub model: String,
    pub prompt_sha256: String,
}

impl CacheKey {
    pub fn new(prompt: &PromptInstance, model: &str) -> Self {
        Self {
            instance_id: prompt.instance_id.clone(),
            model: model.to_string(),
            prompt_sha256: hex::encode(Sha256::digest(prompt.text.as_bytes())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: CacheKey,
    pub response: Option<String>,
    pub error: Option<String>,
    pub unix_time: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CacheMode {
    /// Use cached successes, query the backend for everything else.
    Live,
    /// Never touch the backend.
    Replay,
}

/// Append-only JSONL store. The latest entry per key wins.
pub struct ResponseCache {
    path: PathBuf,
    entries: Mutex<HashMap<CacheKey, CacheEntry>>,
    file: Mutex<Option<File>>,
}

impl ResponseCache {
    pub fn open(path: &Path) -> Result<Self, LlmError> {
        let mut entries = HashMap::new();
        if path.exists() {
            for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let e: CacheEntry = serde_json::from_str(&line).map_err(|e| LlmError::Cache {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
                entries.insert(e.key.clone(), e);
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            entries: Mutex::new(entries),
            file: Mutex::new(None),
        })
    }

    pub fn get(&self, key: &CacheKey) -> Option<CacheEntry> {
        self.entries.lock().unwrap().get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn append(&self, entry: CacheEntry) -> Result<(), LlmError> {
        let line = serde_json::to_string(&entry).expect("cache entry serializes");
        {
            let mut f = self.file.lock().unwrap();
            if f.is_none() {
                if let Some(parent) = self.path.parent() {
                    std::fs::create_dir_all(parent)?;
                }
                *f = Some(OpenOptions::new().create(true).append(true).open(&self.path)?);
            }
            let file = f.as_mut().unwrap();
            writeln!(file, "{line}")?;
            file.flush()?;
        }
        self.entries.lock().unwrap().insert(entry.key.clone(), entry);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub instance_id: String,
    pub response: Option<String>,
    pub error: Option<String>,
    pub from_cache: bool,
}

fn query_one(prompt: &PromptInstance, backend: &dyn ChatBackend, cache: &ResponseCache, mode: CacheMode) -> Result<QueryOutcome, LlmError> {
    let key = CacheKey::new(prompt, backend.model());
    let cached = cache.get(&key);
    if let Some(e) = &cached {
        if e.response.is_some() || mode == CacheMode::Replay {
            return Ok(QueryOutcome {
                instance_id: prompt.instance_id.clone(),
                response: e.response.clone(),
                error: e.error.clone(),
                from_cache: true,
            });
        }
    }
    if mode == CacheMode::Replay {
        return Err(LlmError::NotCached(prompt.instance_id.clone()));
    }
    let (response, error) = match backend.complete(&prompt.text) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let unix_time = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    cache.append(CacheEntry {
        key,
        response: response.clone(),
        error: error.clone(),
        unix_time,
    })?;
    Ok(QueryOutcome {
        instance_id: prompt.instance_id.clone(),
        response,
        error,
        from_cache: false,
    })
}

/// Queries every prompt with at most `concurrency` requests in flight.
/// Results are in input order; failed requests are recorded, not dropped.
pub fn query_all(
    prompts: &[PromptInstance],
    backend: &dyn ChatBackend,
    cache: &ResponseCache,
    mode: CacheMode,
    concurrency: usize,
) -> Result<Vec<QueryOutcome>, LlmError> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<QueryOutcome, LlmError>>>> = prompts.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..concurrency.clamp(1, prompts.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= prompts.len() {
                    break;
                }
                *slots[i].lock().unwrap() = Some(query_one(&prompts[i], backend, cache, mode));
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every slot filled"))
        .collect()
}

/// Features for each outcome; failed requests give all-0.5 features.
pub fn features_for(outcomes: &[QueryOutcome]) -> Vec<AnswerFeatures> {
    outcomes
        .iter()
        .map(|o| match &o.response {
            Some(r) => parse_answers(&o.instance_id, r),
            None => AnswerFeatures::failed(&o.instance_id),
        })
        .collect()
}
