//! Aligned realization / expectation inputs.
//!
//! For a sentence `w0 .. wn` with target `wt`:
//!
//! ```text
//! realization  [CLS] w0 .. [TGT] wt.. [TGT] .. wn [SEP]
//! expectation  [CLS] w0 ..  [MASK]*|wt|     .. wn [SEP]
//! ```
//!
//! `wt..` are the target's subwords; the expectation input has one mask per
//! subword so both sequences stay position-aligned apart from the markers.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::TargetInstance;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";
/// Reserved token bracketing the target in the realization input.
pub const MARKER: &str = "[TGT]";

/// Default maximum sequence length in subword tokens.
pub const MAX_SEQUENCE_LENGTH: usize = 150;

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("target of `{id}` falls outside the first {max_len} tokens")]
    TargetTruncated { id: String, max_len: usize },
    #[error("target word of `{0}` produced no subword tokens")]
    EmptyTarget(String),
    #[error("max_len {0} leaves no room for special tokens")]
    MaxLenTooSmall(usize),
    #[error("vocabulary is missing required token {0}")]
    MissingSpecial(&'static str),
    #[error("vocabulary error: {0}")]
    Vocab(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Subword tokenizer contract used by [`encode_pair`].
pub trait SubwordTokenizer: Send + Sync {
    fn tokenize_word(&self, word: &str) -> Vec<u32>;
    fn vocab_size(&self) -> usize;
    fn cls_id(&self) -> u32;
    fn sep_id(&self) -> u32;
    fn pad_id(&self) -> u32;
    fn mask_id(&self) -> u32;
    fn marker_id(&self) -> u32;
    /// Stable fingerprint of the vocabulary, recorded in checkpoints.
    fn vocab_hash(&self) -> String;
}

/// Greedy longest-match-first WordPiece tokenizer over a plain `vocab.txt`
/// (one token per line, continuation pieces prefixed with `##`).
#[derive(Debug, Clone)]
pub struct WordPieceTokenizer {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    lowercase: bool,
    unk: u32,
    cls: u32,
    sep: u32,
    pad: u32,
    mask: u32,
    marker: u32,
}

impl WordPieceTokenizer {
    /// Builds a tokenizer from an ordered token list. The marker token is
    /// appended when absent.
    pub fn from_tokens(mut tokens: Vec<String>, lowercase: bool) -> Result<Self, EncodeError> {
        if !tokens.iter().any(|t| t == MARKER) {
            tokens.push(MARKER.to_string());
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(EncodeError::Vocab(format!("duplicate token {t:?}")));
            }
        }
        let id = |t: &'static str| index.get(t).copied().ok_or(EncodeError::MissingSpecial(t));
        Ok(Self {
            unk: id(UNK)?,
            cls: id(CLS)?,
            sep: id(SEP)?,
            pad: id(PAD)?,
            mask: id(MASK)?,
            marker: id(MARKER)?,
            tokens,
            index,
            lowercase,
        })
    }

    pub fn from_vocab_reader<R: BufRead>(reader: R, lowercase: bool) -> Result<Self, EncodeError> {
        let tokens = reader
            .lines()
            .map(|l| l.map(|s| s.trim_end_matches('\r').to_string()))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_tokens(tokens, lowercase)
    }

    pub fn from_vocab_file(path: &Path, lowercase: bool) -> Result<Self, EncodeError> {
        let file = std::fs::File::open(path)?;
        Self::from_vocab_reader(std::io::BufReader::new(file), lowercase)
    }

    /// Word-level vocabulary from a corpus: special tokens, every word seen at
    /// least `min_count` times, and single-character pieces so any word still
    /// tokenizes (as several subwords).
    pub fn build_from_instances(instances: &[TargetInstance], min_count: usize, lowercase: bool) -> Self {
        let norm = |w: &str| if lowercase { w.to_lowercase() } else { w.to_string() };
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut chars: BTreeMap<char, ()> = BTreeMap::new();
        for inst in instances {
            for w in &inst.sentence {
                let w = norm(w);
                chars.extend(w.chars().map(|c| (c, ())));
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut tokens: Vec<String> = [PAD, UNK, CLS, SEP, MASK, MARKER].iter().map(|s| s.to_string()).collect();
        for c in chars.keys() {
            tokens.push(c.to_string());
            tokens.push(format!("##{c}"));
        }
        for (w, n) in counts {
            if n >= min_count && w.chars().count() > 1 {
                tokens.push(w);
            }
        }
        Self::from_tokens(tokens, lowercase).expect("specials present and tokens unique")
    }

    pub fn write_vocab<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for t in &self.tokens {
            writeln!(out, "{t}")?;
        }
        Ok(())
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }
}

impl SubwordTokenizer for WordPieceTokenizer {
    fn tokenize_word(&self, word: &str) -> Vec<u32> {
        let word = if self.lowercase { word.to_lowercase() } else { word.to_string() };
        let chars: Vec<char> = word.chars().collect();
        if chars.is_empty() {
            return Vec::new();
        }
        if chars.len() > 100 {
            return vec![self.unk];
        }
        let mut out = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while start < end {
                let piece: String = chars[start..end].iter().collect();
                let piece = if start > 0 { format!("##{piece}") } else { piece };
                if let Some(&id) = self.index.get(&piece) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(id) => {
                    out.push(id);
                    start = end;
                }
                None => return vec![self.unk],
            }
        }
        out
    }

    fn vocab_size(&self) -> usize {
        self.tokens.len()
    }
    fn cls_id(&self) -> u32 {
        self.cls
    }
    fn sep_id(&self) -> u32 {
        self.sep
    }
    fn pad_id(&self) -> u32 {
        self.pad
    }
    fn mask_id(&self) -> u32 {
        self.mask
    }
    fn marker_id(&self) -> u32 {
        self.marker
    }

    fn vocab_hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

/// Marked (realization) and masked (expectation) token sequences for one target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedPair {
    pub instance_id: String,
    pub label: u8,
    pub realization_ids: Vec<u32>,
    pub expectation_ids: Vec<u32>,
    /// Target subwords inside `realization_ids` (markers excluded).
    pub realization_span: Range<usize>,
    /// Mask positions inside `expectation_ids`.
    pub expectation_span: Range<usize>,
    pub target_ids: Vec<u32>,
    /// The sentence tail was cut to fit `max_len`.
    pub truncated: bool,
}

impl EncodedPair {
    pub fn realization_len(&self) -> usize {
        self.realization_ids.len()
    }

    pub fn expectation_len(&self) -> usize {
        self.expectation_ids.len()
    }

    /// Realization sequence with both markers removed.
    pub fn unmarked(&self, marker: u32) -> Vec<u32> {
        self.realization_ids.iter().copied().filter(|&t| t != marker).collect()
    }

    /// Expectation sequence with masks replaced by the target subwords.
    pub fn unmasked(&self) -> Vec<u32> {
        let mut ids = self.expectation_ids.clone();
        ids[self.expectation_span.clone()].copy_from_slice(&self.target_ids);
        ids
    }
}

pub fn encode_pair(
    instance: &TargetInstance,
    tokenizer: &dyn SubwordTokenizer,
    max_len: usize,
) -> Result<EncodedPair, EncodeError> {
    // [CLS] + [SEP] + two markers
    if max_len < 5 {
        return Err(EncodeError::MaxLenTooSmall(max_len));
    }
    let max_body = max_len - 4;
    let mut body: Vec<u32> = Vec::new();
    let mut target = 0..0;
    for (i, word) in instance.sentence.iter().enumerate() {
        let pieces = tokenizer.tokenize_word(word);
        if i == instance.target_index {
            if pieces.is_empty() {
                return Err(EncodeError::EmptyTarget(instance.instance_id.clone()));
            }
            target = body.len()..body.len() + pieces.len();
        }
        body.extend(pieces);
        if body.len() > max_body && i >= instance.target_index {
            break;
        }
    }
    if target.end > max_body {
        return Err(EncodeError::TargetTruncated {
            id: instance.instance_id.clone(),
            max_len,
        });
    }
    let truncated = body.len() > max_body;
    body.truncate(max_body);

    let target_ids = body[target.clone()].to_vec();
    let mut realization = Vec::with_capacity(body.len() + 4);
    realization.push(tokenizer.cls_id());
    realization.extend_from_slice(&body[..target.start]);
    realization.push(tokenizer.marker_id());
    realization.extend_from_slice(&target_ids);
    realization.push(tokenizer.marker_id());
    realization.extend_from_slice(&body[target.end..]);
    realization.push(tokenizer.sep_id());

    let mut expectation = Vec::with_capacity(body.len() + 2);
    expectation.push(tokenizer.cls_id());
    expectation.extend_from_slice(&body[..target.start]);
    expectation.extend(std::iter::repeat_n(tokenizer.mask_id(), target_ids.len()));
    expectation.extend_from_slice(&body[target.end..]);
    expectation.push(tokenizer.sep_id());

    Ok(EncodedPair {
        instance_id: instance.instance_id.clone(),
        label: instance.label,
        realization_ids: realization,
        expectation_ids: expectation,
        realization_span: target.start + 2..target.end + 2,
        expectation_span: target.start + 1..target.end + 1,
        target_ids,
        truncated,
    })
}

/// An instance left out of the encoded corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeAudit {
    pub instance_id: String,
    pub reason: String,
}

/// Encodes every instance, collecting the ones that cannot be encoded.
pub fn encode_all(
    instances: &[TargetInstance],
    tokenizer: &dyn SubwordTokenizer,
    max_len: usize,
) -> (Vec<EncodedPair>, Vec<EncodeAudit>) {
    let mut pairs = Vec::with_capacity(instances.len());
    let mut excluded = Vec::new();
    for inst in instances {
        match encode_pair(inst, tokenizer, max_len) {
            Ok(p) => pairs.push(p),
            Err(e) => excluded.push(EncodeAudit {
                instance_id: inst.instance_id.clone(),
                reason: e.to_string(),
            }),
        }
    }
    (pairs, excluded)
}
