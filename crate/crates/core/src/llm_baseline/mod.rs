//! Zero-shot chat-model baseline: prompt rendering, querying with a replay
//! cache, answer parsing and a logistic-regression classifier over the
//! yes/no answers.

mod classifier;
mod client;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TargetInstance;
pub use classifier::{fold_aligned_predictions, LogisticModel, DEFAULT_L2};
pub use client::{
    features_for, query_all, CacheEntry, CacheKey, CacheMode, ChatBackend, ClientConfig, HttpChatClient, QueryOutcome,
    ResponseCache,
};

/// Questions 2 to 14 become features.
pub const N_FEATURES: usize = 13;

const TEMPLATE: &str = include_str!("../../templates/prompt.txt");

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("cannot render prompt for `{instance_id}`: {reason}")]
    Render { instance_id: String, reason: String },
    #[error("request failed after {attempts} attempt(s): {message}")]
    Request { attempts: usize, message: String },
    #[error("malformed response: {0}")]
    Response(String),
    #[error("environment variable `{0}` is not set")]
    MissingKey(String),
    #[error("no cached response for `{0}` in replay mode")]
    NotCached(String),
    #[error("classifier: {0}")]
    Classifier(String),
    #[error("{path}:{line}: {message}")]
    Cache { path: String, line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptInstance {
    pub instance_id: String,
    pub target: String,
    pub text: String,
}

/// Joins tokens with spaces, without a space before closing punctuation or
/// clitics and after opening brackets.
pub fn detokenize(tokens: &[String]) -> String {
    let mut out = String::new();
    let mut glue_next = false;
    for (i, tok) in tokens.iter().enumerate() {
        let attaches = matches!(tok.as_str(), "." | "," | ";" | ":" | "!" | "?" | ")" | "]" | "}" | "%")
            || tok.starts_with('\'') && tok.len() > 1
            || tok.eq_ignore_ascii_case("n't");
        if i > 0 && !attaches && !glue_next {
            out.push(' ');
        }
        out.push_str(tok);
        glue_next = matches!(tok.as_str(), "(" | "[" | "{" | "$");
    }
    out
}

fn fill(template: &str, text: &str, target: &str) -> String {
    let mut out = String::with_capacity(template.len() + text.len() + 16 * target.len());
    let mut rest = template;
    while let Some(pos) = rest.find('{') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        if let Some(r) = tail.strip_prefix("{text}") {
            out.push_str(text);
            rest = r;
        } else if let Some(r) = tail.strip_prefix("{target}") {
            out.push_str(target);
            rest = r;
        } else {
            out.push('{');
            rest = &tail[1..];
        }
    }
    out.push_str(rest);
    out
}

/// Fills the prompt template, starring the token at `target_index`.
pub fn render_prompt(instance: &TargetInstance) -> Result<PromptInstance, LlmError> {
    let err = |reason: String| LlmError::Render {
        instance_id: instance.instance_id.clone(),
        reason,
    };
    let target = instance
        .sentence
        .get(instance.target_index)
        .ok_or_else(|| err(format!("target index {} out of range", instance.target_index)))?
        .clone();
    if target.contains('*') {
        return Err(err(format!("target word {target:?} contains an asterisk")));
    }
    let mut tokens = instance.sentence.clone();
    tokens[instance.target_index] = format!("*{target}*");
    let sentence = detokenize(&tokens);
    Ok(PromptInstance {
        instance_id: instance.instance_id.clone(),
        text: fill(TEMPLATE, &sentence, &target),
        target,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseStatus {
    Clean,
    Partial,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerFeatures {
    pub instance_id: String,
    pub features: Vec<f64>,
    pub parse_status: ParseStatus,
}

impl AnswerFeatures {
    pub fn failed(instance_id: impl Into<String>) -> Self {
        Self {
            instance_id: instance_id.into(),
            features: vec![0.5; N_FEATURES],
            parse_status: ParseStatus::Failed,
        }
    }
}

/// Items of the first bracketed list, with quotes honoured.
fn first_list(raw: &str) -> Option<Vec<String>> {
    let start = raw.find('[')?;
    let mut items = Vec::new();
    let mut cur = String::new();
    let mut quote: Option<char> = None;
    let mut escaped = false;
    for c in raw[start + 1..].chars() {
        if let Some(q) = quote {
            if escaped {
                cur.push(c);
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == q {
                quote = None;
            } else {
                cur.push(c);
            }
            continue;
        }
        match c {
            '"' | '\'' if cur.trim().is_empty() => {
                cur.clear();
                quote = Some(c);
            }
            ',' => items.push(std::mem::take(&mut cur)),
            ']' => {
                if !cur.trim().is_empty() || !items.is_empty() {
                    items.push(cur);
                }
                return Some(items);
            }
            _ => cur.push(c),
        }
    }
    None
}

fn yes_no(item: &str) -> Option<f64> {
    let t = item
        .trim()
        .trim_matches(|c: char| c == '"' || c == '\'')
        .trim_end_matches(|c: char| c.is_ascii_punctuation())
        .trim()
        .to_ascii_lowercase();
    match t.as_str() {
        "yes" => Some(1.0),
        "no" => Some(0.0),
        _ => None,
    }
}

/// Maps answers 2 to 14 of the first bracketed list to 1 (yes), 0 (no) or
/// 0.5 (anything else). Never fails.
pub fn parse_answers(instance_id: &str, raw: &str) -> AnswerFeatures {
    let Some(items) = first_list(raw) else {
        return AnswerFeatures::failed(instance_id);
    };
    let mut status = ParseStatus::Clean;
    let features = (1..=N_FEATURES)
        .map(|i| match items.get(i).and_then(|s| yes_no(s)) {
            Some(v) => v,
            None => {
                status = ParseStatus::Partial;
                0.5
            }
        })
        .collect();
    AnswerFeatures {
        instance_id: instance_id.to_string(),
        features,
        parse_status: status,
    }
}
