//! Source-format adapters.
//!
//! * `vua20`: delimited file with a header naming (at least) an id, the
//!   sentence, the 0-based token index of the target and a 0/1 label.
//! * `lcc`: delimited file with id, sentence, token index and a `[0, 3]`
//!   metaphoricity score. Score 3 becomes label 1, score 0 label 0, anything
//!   else is skipped and counted.
//! * `trofi`: TroFi example-base cluster files: `***verb***` headings,
//!   `*literal cluster*` / `*nonliteral cluster*` sections and
//!   `<id> <L|N>\t<sentence>` data lines. The target is the first token that
//!   inflects the heading verb.
//! * `canonical`: the TSV written by [`super::write_canonical`].
//!
//! Delimited formats use a tab when the header line contains one, a comma
//! otherwise. Column names are matched case-insensitively against a few
//! common aliases.

use std::collections::HashSet;
use std::fmt;
use std::io::BufRead;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::lemma::lemmatize;
use super::{read_canonical, CorpusError, DatasetId, Ingested, Rejection, TargetInstance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceFormat {
    Vua20,
    Lcc,
    Trofi,
    Canonical,
}

impl fmt::Display for SourceFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SourceFormat::Vua20 => "vua20",
            SourceFormat::Lcc => "lcc",
            SourceFormat::Trofi => "trofi",
            SourceFormat::Canonical => "canonical",
        })
    }
}

impl FromStr for SourceFormat {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "vua20" | "vua" => Ok(SourceFormat::Vua20),
            "lcc" => Ok(SourceFormat::Lcc),
            "trofi" => Ok(SourceFormat::Trofi),
            "canonical" | "tsv" => Ok(SourceFormat::Canonical),
            _ => Err(CorpusError::UnknownFormat(s.to_string())),
        }
    }
}

pub fn ingest(path: &Path, dataset: DatasetId, format: SourceFormat) -> Result<Ingested, CorpusError> {
    let file = std::fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ingest_reader(std::io::BufReader::new(file), dataset, format)
}

pub fn ingest_reader<R: BufRead>(
    reader: R,
    dataset: DatasetId,
    format: SourceFormat,
) -> Result<Ingested, CorpusError> {
    let mut out = match format {
        SourceFormat::Canonical => read_canonical(reader)?,
        SourceFormat::Vua20 => read_delimited(reader, dataset, Layout::Vua20)?,
        SourceFormat::Lcc => read_delimited(reader, dataset, Layout::Lcc)?,
        SourceFormat::Trofi => read_trofi(reader, dataset)?,
    };
    if format == SourceFormat::Canonical {
        // Canonical rows carry their own dataset column; re-tagging would
        // hide a mismatch, so reject instead.
        let (keep, wrong): (Vec<_>, Vec<_>) =
            out.instances.into_iter().partition(|i| i.dataset == dataset);
        out.instances = keep;
        for inst in wrong {
            out.rejections.push(Rejection {
                line: 0,
                instance_id: Some(inst.instance_id),
                reason: format!("dataset {} does not match requested {}", inst.dataset, dataset),
            });
        }
    }
    dedupe_ids(&mut out);
    Ok(out)
}

fn dedupe_ids(out: &mut Ingested) {
    let mut seen = HashSet::new();
    let mut keep = Vec::with_capacity(out.instances.len());
    for inst in out.instances.drain(..) {
        if seen.insert(inst.instance_id.clone()) {
            keep.push(inst);
        } else {
            out.rejections.push(Rejection {
                line: 0,
                instance_id: Some(inst.instance_id.clone()),
                reason: "duplicate instance id".into(),
            });
        }
    }
    out.instances = keep;
}

#[derive(Clone, Copy)]
enum Layout {
    Vua20,
    Lcc,
}

struct Columns {
    id: usize,
    sentence: usize,
    index: usize,
    label: Option<usize>,
    score: Option<usize>,
    lemma: Option<usize>,
    pos: Option<usize>,
    target: Option<usize>,
}

fn find_col(header: &csv::StringRecord, aliases: &[&str]) -> Option<usize> {
    header
        .iter()
        .position(|h| aliases.iter().any(|a| h.trim().eq_ignore_ascii_case(a)))
}

fn resolve_columns(header: &csv::StringRecord, layout: Layout) -> Result<Columns, CorpusError> {
    let need = |aliases: &[&str]| {
        find_col(header, aliases).ok_or_else(|| CorpusError::Parse {
            line: 1,
            message: format!("missing column (one of {aliases:?}) in header"),
        })
    };
    let id = need(&["instance_id", "id", "index"])?;
    let sentence = need(&["sentence", "sentence_txt", "text"])?;
    let index = need(&["target_index", "w_index", "token_index"])?;
    let (label, score) = match layout {
        Layout::Vua20 => (Some(need(&["label"])?), None),
        Layout::Lcc => (None, Some(need(&["metaphoricity", "score"])?)),
    };
    Ok(Columns {
        id,
        sentence,
        index,
        label,
        score,
        lemma: find_col(header, &["lemma"]),
        pos: find_col(header, &["pos"]),
        target: find_col(header, &["target", "target_word"]),
    })
}

fn read_delimited<R: BufRead>(mut reader: R, dataset: DatasetId, layout: Layout) -> Result<Ingested, CorpusError> {
    let mut text = String::new();
    reader.read_to_string(&mut text).map_err(|e| CorpusError::Parse {
        line: 0,
        message: e.to_string(),
    })?;
    let first_line = text.lines().next().unwrap_or("");
    let tabbed = first_line.contains('\t');
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(if tabbed { b'\t' } else { b',' })
        .quoting(!tabbed)
        .has_headers(true)
        .flexible(false)
        .from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| CorpusError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let cols = resolve_columns(&header, layout)?;

    let mut out = Ingested::default();
    for record in rdr.records() {
        let record = record.map_err(|e| CorpusError::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |i: usize| record.get(i).unwrap_or("").trim();
        let parse_err = |what: &str, v: &str| CorpusError::Parse {
            line,
            message: format!("invalid {what} {v:?}"),
        };
        let id = field(cols.id).to_string();
        let sentence: Vec<String> = field(cols.sentence).split_whitespace().map(str::to_string).collect();
        let target_index: usize = field(cols.index)
            .parse()
            .map_err(|_| parse_err("target index", field(cols.index)))?;

        let (label, metaphoricity) = match layout {
            Layout::Vua20 => {
                let raw = field(cols.label.unwrap());
                let label: u8 = raw.parse().map_err(|_| parse_err("label", raw))?;
                (label, None)
            }
            Layout::Lcc => {
                let raw = field(cols.score.unwrap());
                let score: f64 = raw.parse().map_err(|_| parse_err("metaphoricity", raw))?;
                if !score.is_finite() || !(0.0..=3.0).contains(&score) {
                    out.rejections.push(Rejection {
                        line,
                        instance_id: Some(id),
                        reason: format!("metaphoricity {score} outside [0, 3]"),
                    });
                    continue;
                }
                if score == 3.0 {
                    (1, Some(score))
                } else if score == 0.0 {
                    (0, Some(score))
                } else {
                    out.excluded_intermediate += 1;
                    continue;
                }
            }
        };

        if let (Some(tc), Some(word)) = (cols.target, sentence.get(target_index)) {
            let expected = field(tc);
            if !expected.is_empty() && expected != word {
                out.rejections.push(Rejection {
                    line,
                    instance_id: Some(id),
                    reason: format!("target column {expected:?} does not match token {word:?}"),
                });
                continue;
            }
        }

        let pos = cols.pos.map(field).filter(|p| !p.is_empty()).map(str::to_string);
        let given_lemma = cols.lemma.map(field).filter(|l| !l.is_empty());
        let (lemma, derived_lemma) = match given_lemma {
            Some(l) => (l.to_lowercase(), false),
            None => (
                sentence
                    .get(target_index)
                    .map(|w| lemmatize(w, pos.as_deref()))
                    .unwrap_or_default(),
                true,
            ),
        };
        let inst = TargetInstance {
            instance_id: id,
            dataset,
            sentence,
            target_index,
            label,
            lemma,
            pos,
            metaphoricity,
            derived_lemma,
        };
        push_checked(&mut out, inst, line);
    }
    Ok(out)
}

fn push_checked(out: &mut Ingested, inst: TargetInstance, line: usize) {
    match inst.validate() {
        Ok(()) => out.instances.push(inst),
        Err(e) => out.rejections.push(Rejection {
            line,
            instance_id: Some(inst.instance_id),
            reason: e.to_string(),
        }),
    }
}

/// Index of the first token that is an inflection of `verb`.
pub fn locate_verb(sentence: &[String], verb: &str) -> Option<usize> {
    let verb = verb.to_lowercase();
    if let Some(i) = sentence.iter().position(|w| lemmatize(w, None) == verb) {
        return Some(i);
    }
    // Fall back to a stem-prefix match for forms the rules mangle
    // (escaped -> escap).
    let stem = verb.strip_suffix('e').unwrap_or(&verb);
    sentence.iter().position(|w| {
        let w = w.to_lowercase();
        w.starts_with(stem) && w.len() <= verb.len() + 4
    })
}

fn read_trofi<R: BufRead>(reader: R, dataset: DatasetId) -> Result<Ingested, CorpusError> {
    let mut out = Ingested::default();
    let mut verb: Option<String> = None;
    let mut cluster: Option<u8> = None;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| CorpusError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.chars().all(|c| c == '*') {
            continue;
        }
        if let Some(v) = trimmed.strip_prefix("***").and_then(|r| r.strip_suffix("***")) {
            verb = Some(v.trim().to_lowercase());
            cluster = None;
            continue;
        }
        if trimmed.starts_with('*') && trimmed.ends_with('*') {
            let name = trimmed.trim_matches('*').trim().to_lowercase();
            cluster = match name.as_str() {
                "literal cluster" => Some(0),
                "nonliteral cluster" => Some(1),
                _ => {
                    return Err(CorpusError::Parse {
                        line: lineno,
                        message: format!("unknown cluster heading {trimmed:?}"),
                    })
                }
            };
            continue;
        }
        let (Some(v), Some(label)) = (verb.as_deref(), cluster) else {
            return Err(CorpusError::Parse {
                line: lineno,
                message: "data line before a verb heading and cluster heading".into(),
            });
        };
        let Some((head, sentence_text)) = line.split_once('\t') else {
            return Err(CorpusError::Parse {
                line: lineno,
                message: "expected `<id> <tag>\\t<sentence>`".into(),
            });
        };
        let mut head_parts = head.split_whitespace();
        let source_id = head_parts.next().ok_or_else(|| CorpusError::Parse {
            line: lineno,
            message: "missing sentence id".into(),
        })?;
        if let Some(tag) = head_parts.next() {
            let tag_label = match tag {
                "L" => 0,
                "N" => 1,
                _ => {
                    return Err(CorpusError::Parse {
                        line: lineno,
                        message: format!("unknown tag {tag:?}"),
                    })
                }
            };
            if tag_label != label {
                out.rejections.push(Rejection {
                    line: lineno,
                    instance_id: Some(format!("{v}:{source_id}")),
                    reason: format!("tag {tag} contradicts enclosing cluster"),
                });
                continue;
            }
        }
        let sentence: Vec<String> = sentence_text.split_whitespace().map(str::to_string).collect();
        let instance_id = format!("{v}:{source_id}");
        let Some(target_index) = locate_verb(&sentence, v) else {
            out.rejections.push(Rejection {
                line: lineno,
                instance_id: Some(instance_id),
                reason: format!("no inflection of {v:?} found in sentence"),
            });
            continue;
        };
        let inst = TargetInstance {
            instance_id,
            dataset,
            sentence,
            target_index,
            label,
            lemma: v.to_string(),
            pos: Some("VERB".into()),
            metaphoricity: None,
            derived_lemma: false,
        };
        push_checked(&mut out, inst, lineno);
    }
    Ok(out)
}
