//! Canonical annotated-target records and dataset statistics.
//!
//! Every source format is converted by an adapter (see [`adapters`]) into
//! [`TargetInstance`] records. The canonical on-disk form is a UTF-8 TSV file
//! with one target per line; see [`write_canonical`] and [`read_canonical`].

pub mod adapters;
pub mod lemma;
pub mod synthetic;

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adapters::{ingest, ingest_reader, SourceFormat};

/// Column header of the canonical TSV format.
pub const CANONICAL_HEADER: [&str; 9] = [
    "instance_id",
    "dataset",
    "sentence",
    "target_index",
    "label",
    "lemma",
    "pos",
    "metaphoricity",
    "derived_lemma",
];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown dataset id `{0}`")]
    UnknownDataset(String),
    #[error("unknown source format `{0}`")]
    UnknownFormat(String),
    #[error("cannot compute statistics over an empty instance list")]
    EmptyInput,
    #[error("instance `{id}` violates an invariant: {reason}")]
    Invariant { id: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DatasetId {
    #[serde(rename = "VUA20")]
    Vua20,
    #[serde(rename = "LCC")]
    Lcc,
    #[serde(rename = "TROFI")]
    Trofi,
}

impl DatasetId {
    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetId::Vua20 => "VUA20",
            DatasetId::Lcc => "LCC",
            DatasetId::Trofi => "TROFI",
        }
    }
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetId {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().replace(['-', '_'], "").as_str() {
            "VUA20" | "VUA" => Ok(DatasetId::Vua20),
            "LCC" => Ok(DatasetId::Lcc),
            "TROFI" => Ok(DatasetId::Trofi),
            _ => Err(CorpusError::UnknownDataset(s.to_string())),
        }
    }
}

/// One annotated target word in a sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetInstance {
    pub instance_id: String,
    pub dataset: DatasetId,
    pub sentence: Vec<String>,
    pub target_index: usize,
    /// 1 = metaphorical, 0 = literal.
    pub label: u8,
    pub lemma: String,
    pub pos: Option<String>,
    /// LCC metaphoricity rating in `[0, 3]`.
    pub metaphoricity: Option<f64>,
    /// The lemma was produced by [`lemma::lemmatize`] rather than read from the source.
    pub derived_lemma: bool,
}

impl TargetInstance {
    pub fn target_word(&self) -> &str {
        &self.sentence[self.target_index]
    }

    pub fn sentence_text(&self) -> String {
        self.sentence.join(" ")
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let fail = |reason: String| {
            Err(CorpusError::Invariant {
                id: self.instance_id.clone(),
                reason,
            })
        };
        if self.instance_id.is_empty() || self.instance_id.contains(['\t', '\n']) {
            return fail("instance id must be non-empty and free of tabs/newlines".into());
        }
        if self.sentence.is_empty() {
            return fail("empty sentence".into());
        }
        if let Some(tok) = self
            .sentence
            .iter()
            .find(|t| t.is_empty() || t.chars().any(char::is_whitespace))
        {
            return fail(format!("sentence token {tok:?} is empty or contains whitespace"));
        }
        if self.target_index >= self.sentence.len() {
            return fail(format!(
                "target_index {} out of bounds for sentence of {} words",
                self.target_index,
                self.sentence.len()
            ));
        }
        if self.label > 1 {
            return fail(format!("label {} is not binary", self.label));
        }
        if self.lemma.is_empty() || self.lemma.chars().any(char::is_whitespace) {
            return fail("lemma must be a non-empty single token".into());
        }
        if self.lemma != self.lemma.to_lowercase() {
            return fail(format!("lemma {:?} is not lowercased", self.lemma));
        }
        if let Some(pos) = &self.pos {
            if pos.contains(['\t', '\n']) {
                return fail("pos contains a tab or newline".into());
            }
        }
        if let Some(score) = self.metaphoricity {
            if !(0.0..=3.0).contains(&score) {
                return fail(format!("metaphoricity {score} outside [0, 3]"));
            }
        }
        if self.dataset == DatasetId::Lcc {
            match self.metaphoricity {
                Some(s) if s == 3.0 && self.label == 1 => {}
                Some(s) if s == 0.0 && self.label == 0 => {}
                other => {
                    return fail(format!(
                        "LCC label {} inconsistent with metaphoricity {:?}",
                        self.label, other
                    ))
                }
            }
        }
        Ok(())
    }
}

/// Per-dataset summary statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_targets: usize,
    pub n_metaphor: usize,
    pub pct_metaphor: f64,
    /// Number of distinct sentences.
    pub n_sentences: usize,
    /// Mean length in words over distinct sentences.
    pub avg_sentence_len: f64,
}

impl DatasetStats {
    /// `#words  %M  #Sent  Len` with the rounding used in dataset tables.
    pub fn table_row(&self) -> String {
        format!(
            "{:>9} {:>5.1} {:>7} {:>5.1}",
            self.n_targets, self.pct_metaphor, self.n_sentences, self.avg_sentence_len
        )
    }
}

pub fn compute_stats(instances: &[TargetInstance]) -> Result<DatasetStats, CorpusError> {
    if instances.is_empty() {
        return Err(CorpusError::EmptyInput);
    }
    let n_metaphor = instances.iter().filter(|i| i.label == 1).count();
    let mut seen = HashSet::new();
    let mut total_len = 0usize;
    for inst in instances {
        if seen.insert(inst.sentence.as_slice()) {
            total_len += inst.sentence.len();
        }
    }
    let n_sentences = seen.len();
    Ok(DatasetStats {
        n_targets: instances.len(),
        n_metaphor,
        pct_metaphor: 100.0 * n_metaphor as f64 / instances.len() as f64,
        n_sentences,
        avg_sentence_len: total_len as f64 / n_sentences as f64,
    })
}

/// A source row that parsed but failed a [`TargetInstance`] invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    /// 1-based line number in the source file.
    pub line: usize,
    pub instance_id: Option<String>,
    pub reason: String,
}

/// Output of an adapter run.
#[derive(Debug, Clone, Default)]
pub struct Ingested {
    pub instances: Vec<TargetInstance>,
    pub rejections: Vec<Rejection>,
    /// LCC rows with intermediate scores (neither 0 nor 3) that were skipped.
    pub excluded_intermediate: usize,
}

fn format_score(score: f64) -> String {
    format!("{score}")
}

pub fn write_canonical<W: Write>(mut out: W, instances: &[TargetInstance]) -> std::io::Result<()> {
    writeln!(out, "{}", CANONICAL_HEADER.join("\t"))?;
    for inst in instances {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            inst.instance_id,
            inst.dataset,
            inst.sentence.join(" "),
            inst.target_index,
            inst.label,
            inst.lemma,
            inst.pos.as_deref().unwrap_or(""),
            inst.metaphoricity.map(format_score).unwrap_or_default(),
            inst.derived_lemma,
        )?;
    }
    Ok(())
}

pub fn write_canonical_file(path: &Path, instances: &[TargetInstance]) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = std::io::BufWriter::new(file);
    write_canonical(&mut w, instances).map_err(io_err)?;
    w.flush().map_err(io_err)
}

/// Reads a canonical TSV file. The trailing `derived_lemma` column is optional
/// on input so that eight-column files are accepted too.
pub fn read_canonical<R: BufRead>(reader: R) -> Result<Ingested, CorpusError> {
    let mut out = Ingested::default();
    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, line)) => line.map_err(|e| CorpusError::Parse {
            line: 1,
            message: e.to_string(),
        })?,
        None => return Ok(out),
    };
    let cols: Vec<&str> = header.trim_end_matches('\r').split('\t').collect();
    if cols.len() < 8 || cols[..8] != CANONICAL_HEADER[..8] {
        return Err(CorpusError::Parse {
            line: 1,
            message: format!("unexpected canonical header {header:?}"),
        });
    }
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line.map_err(|e| CorpusError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 8 && f.len() != 9 {
            return Err(CorpusError::Parse {
                line: lineno,
                message: format!("expected 8 or 9 tab-separated fields, found {}", f.len()),
            });
        }
        let parse_err = |what: &str, v: &str| CorpusError::Parse {
            line: lineno,
            message: format!("invalid {what} {v:?}"),
        };
        let dataset: DatasetId = f[1].parse().map_err(|_| parse_err("dataset", f[1]))?;
        let target_index: usize = f[3].parse().map_err(|_| parse_err("target_index", f[3]))?;
        let label: u8 = f[4].parse().map_err(|_| parse_err("label", f[4]))?;
        let metaphoricity = if f[7].is_empty() {
            None
        } else {
            Some(f[7].parse::<f64>().map_err(|_| parse_err("metaphoricity", f[7]))?)
        };
        let derived_lemma = match f.get(8) {
            None => false,
            Some(v) => v.parse::<bool>().map_err(|_| parse_err("derived_lemma", v))?,
        };
        let inst = TargetInstance {
            instance_id: f[0].to_string(),
            dataset,
            sentence: f[2].split(' ').map(str::to_string).collect(),
            target_index,
            label,
            lemma: f[5].to_string(),
            pos: (!f[6].is_empty()).then(|| f[6].to_string()),
            metaphoricity,
            derived_lemma,
        };
        match inst.validate() {
            Ok(()) => out.instances.push(inst),
            Err(e) => out.rejections.push(Rejection {
                line: lineno,
                instance_id: Some(inst.instance_id),
                reason: e.to_string(),
            }),
        }
    }
    Ok(out)
}

pub fn read_canonical_file(path: &Path) -> Result<Ingested, CorpusError> {
    let file = std::fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_canonical(std::io::BufReader::new(file))
}

pub fn write_rejections<W: Write>(mut out: W, rejections: &[Rejection]) -> std::io::Result<()> {
    writeln!(out, "line\tinstance_id\treason")?;
    for r in rejections {
        writeln!(
            out,
            "{}\t{}\t{}",
            r.line,
            r.instance_id.as_deref().unwrap_or(""),
            r.reason.replace(['\t', '\n'], " ")
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn inst(id: &str, words: &str, t: usize, label: u8, lemma: &str) -> TargetInstance {
        TargetInstance {
            instance_id: id.into(),
            dataset: DatasetId::Vua20,
            sentence: words.split(' ').map(String::from).collect(),
            target_index: t,
            label,
            lemma: lemma.into(),
            pos: None,
            metaphoricity: None,
            derived_lemma: false,
        }
    }

    #[test]
    fn stats_two_instances_symmetric() {
        let xs = vec![inst("a", "the sun walked", 2, 1, "walk"), inst("b", "we walked", 1, 0, "walk")];
        let s = compute_stats(&xs).unwrap();
        assert_eq!(s.pct_metaphor, 50.0);
        assert_eq!(s.n_sentences, 2);
        assert_eq!(s.avg_sentence_len, 2.5);
    }

    #[test]
    fn stats_counts_shared_sentences_once() {
        let xs = vec![inst("a", "the sun walked", 1, 0, "sun"), inst("b", "the sun walked", 2, 1, "walk")];
        let s = compute_stats(&xs).unwrap();
        assert_eq!(s.n_targets, 2);
        assert_eq!(s.n_sentences, 1);
        assert_eq!(s.avg_sentence_len, 3.0);
    }

    #[test]
    fn stats_empty_is_error() {
        assert!(matches!(compute_stats(&[]), Err(CorpusError::EmptyInput)));
    }

    #[test]
    fn out_of_bounds_target_rejected() {
        let x = inst("a", "the sun walked", 3, 1, "walk");
        assert!(x.validate().is_err());
    }

    #[test]
    fn lcc_label_must_match_score() {
        let mut x = inst("a", "the sun walked", 2, 1, "walk");
        x.dataset = DatasetId::Lcc;
        x.metaphoricity = Some(3.0);
        assert!(x.validate().is_ok());
        x.metaphoricity = Some(2.0);
        assert!(x.validate().is_err());
        x.label = 0;
        x.metaphoricity = Some(0.0);
        assert!(x.validate().is_ok());
    }

    #[test]
    fn canonical_round_trip_is_byte_stable() {
        let mut xs = vec![inst("a", "the sun walked .", 2, 1, "walk")];
        let mut b = inst("b", "prices fell", 1, 0, "fall");
        b.dataset = DatasetId::Lcc;
        b.metaphoricity = Some(0.0);
        b.pos = Some("VERB".into());
        b.derived_lemma = true;
        xs.push(b);
        let mut first = Vec::new();
        write_canonical(&mut first, &xs).unwrap();
        let back = read_canonical(first.as_slice()).unwrap();
        assert!(back.rejections.is_empty());
        assert_eq!(back.instances, xs);
        let mut second = Vec::new();
        write_canonical(&mut second, &back.instances).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn canonical_bad_row_reports_line() {
        let text = format!("{}\nx\tLCC\tonly\n", CANONICAL_HEADER.join("\t"));
        match read_canonical(text.as_bytes()) {
            Err(CorpusError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn canonical_invariant_failure_is_rejection() {
        let text = format!(
            "{}\nx\tVUA20\ta b\t2\t1\tb\t\t\tfalse\n",
            CANONICAL_HEADER.join("\t")
        );
        let got = read_canonical(text.as_bytes()).unwrap();
        assert!(got.instances.is_empty());
        assert_eq!(got.rejections.len(), 1);
        assert_eq!(got.rejections[0].line, 2);
    }
}
