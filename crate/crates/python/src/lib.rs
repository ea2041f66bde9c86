//! Python bindings: corpus ingestion, fold construction, encoding, metrics,
//! answer parsing and the full command-line pipeline.

use std::path::PathBuf;

use metaphor_er_core::corpus::synthetic::{compatibility_corpus, SyntheticSpec};
use metaphor_er_core::corpus::{self, SourceFormat};
use metaphor_er_core::encoding::{encode_pair, SubwordTokenizer};
use metaphor_er_core::evaluation::{self, ConfusionCounts};
use metaphor_er_core::llm_baseline::{self, ParseStatus};
use metaphor_er_core::splits;
use metaphor_er_core::{DatasetId, TargetInstance, WordPieceTokenizer};
use pyo3::exceptions::{PyKeyError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "Instance", module = "metaphor_er", from_py_object)]
#[derive(Clone)]
struct PyInstance {
    inner: TargetInstance,
}

#[pymethods]
impl PyInstance {
    #[new]
    #[pyo3(signature = (instance_id, sentence, target_index, label, lemma, dataset="VUA20", pos=None, metaphoricity=None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        instance_id: String,
        sentence: Vec<String>,
        target_index: usize,
        label: u8,
        lemma: String,
        dataset: &str,
        pos: Option<String>,
        metaphoricity: Option<f64>,
    ) -> PyResult<Self> {
        let inner = TargetInstance {
            instance_id,
            dataset: dataset.parse::<DatasetId>().map_err(value_err)?,
            sentence,
            target_index,
            label,
            lemma,
            pos,
            metaphoricity,
            derived_lemma: false,
        };
        inner.validate().map_err(value_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn instance_id(&self) -> &str {
        &self.inner.instance_id
    }

    #[getter]
    fn dataset(&self) -> &'static str {
        self.inner.dataset.as_str()
    }

    #[getter]
    fn sentence(&self) -> Vec<String> {
        self.inner.sentence.clone()
    }

    #[getter]
    fn target_index(&self) -> usize {
        self.inner.target_index
    }

    #[getter]
    fn target_word(&self) -> &str {
        self.inner.target_word()
    }

    #[getter]
    fn label(&self) -> u8 {
        self.inner.label
    }

    #[getter]
    fn lemma(&self) -> &str {
        &self.inner.lemma
    }

    #[getter]
    fn pos(&self) -> Option<&str> {
        self.inner.pos.as_deref()
    }

    #[getter]
    fn metaphoricity(&self) -> Option<f64> {
        self.inner.metaphoricity
    }

    fn __repr__(&self) -> String {
        format!(
            "Instance({:?}, target={:?}, label={})",
            self.inner.instance_id,
            self.inner.target_word(),
            self.inner.label
        )
    }
}

fn unwrap_all(instances: &[PyInstance]) -> Vec<TargetInstance> {
    instances.iter().map(|i| i.inner.clone()).collect()
}

/// Reads a corpus file. Returns the instances and the rejected rows as
/// `(line, reason)` pairs.
#[pyfunction]
#[pyo3(signature = (path, dataset, format=None))]
fn ingest(path: PathBuf, dataset: &str, format: Option<&str>) -> PyResult<(Vec<PyInstance>, Vec<(usize, String)>)> {
    let dataset: DatasetId = dataset.parse().map_err(value_err)?;
    let format: SourceFormat = format.unwrap_or(dataset.as_str()).parse().map_err(value_err)?;
    let got = corpus::ingest(&path, dataset, format).map_err(value_err)?;
    let rejected = got.rejections.into_iter().map(|r| (r.line, r.reason)).collect();
    Ok((got.instances.into_iter().map(|inner| PyInstance { inner }).collect(), rejected))
}

#[pyfunction]
#[pyo3(signature = (n_instances, classes=4, seed=13))]
fn synthetic_corpus(n_instances: usize, classes: usize, seed: u64) -> Vec<PyInstance> {
    compatibility_corpus(&SyntheticSpec {
        n_instances,
        classes,
        seed,
        ..Default::default()
    })
    .into_iter()
    .map(|inner| PyInstance { inner })
    .collect()
}

#[pyfunction]
fn compute_stats<'py>(py: Python<'py>, instances: Vec<PyInstance>) -> PyResult<Bound<'py, PyDict>> {
    let s = corpus::compute_stats(&unwrap_all(&instances)).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("n_targets", s.n_targets)?;
    d.set_item("n_metaphor", s.n_metaphor)?;
    d.set_item("pct_metaphor", s.pct_metaphor)?;
    d.set_item("n_sentences", s.n_sentences)?;
    d.set_item("avg_sentence_len", s.avg_sentence_len)?;
    d.set_item("table_row", s.table_row())?;
    Ok(d)
}

#[pyclass(name = "FoldPlan", module = "metaphor_er", frozen)]
struct PyFoldPlan {
    inner: splits::FoldPlan,
}

#[pymethods]
impl PyFoldPlan {
    #[getter]
    fn k(&self) -> usize {
        self.inner.k
    }

    #[getter]
    fn mode(&self) -> String {
        self.inner.mode.to_string()
    }

    fn fold_of(&self, instance_id: &str) -> PyResult<usize> {
        self.inner
            .fold_of(instance_id)
            .ok_or_else(|| PyKeyError::new_err(instance_id.to_string()))
    }

    fn fold_sizes(&self) -> Vec<usize> {
        self.inner.fold_sizes()
    }

    fn test_ids(&self, fold: usize) -> Vec<String> {
        self.inner.test_ids(fold).into_iter().map(String::from).collect()
    }

    fn train_ids(&self, fold: usize) -> Vec<String> {
        self.inner.train_ids(fold).into_iter().map(String::from).collect()
    }

    #[pyo3(signature = (test_fold, dev_fraction=0.1, seed=1))]
    fn train_dev_split(&self, test_fold: usize, dev_fraction: f64, seed: u64) -> (Vec<String>, Vec<String>) {
        self.inner.train_dev_split(test_fold, dev_fraction, seed)
    }
}

#[pyfunction]
#[pyo3(signature = (instances, k, seed=7))]
fn build_wid_folds(instances: Vec<PyInstance>, k: usize, seed: u64) -> PyResult<PyFoldPlan> {
    let inner = splits::build_wid_folds(&unwrap_all(&instances), k, seed).map_err(value_err)?;
    Ok(PyFoldPlan { inner })
}

#[pyfunction]
#[pyo3(signature = (instances, k, seed=7))]
fn build_ood_folds(instances: Vec<PyInstance>, k: usize, seed: u64) -> PyResult<PyFoldPlan> {
    let inner = splits::build_ood_folds(&unwrap_all(&instances), k, seed).map_err(value_err)?;
    Ok(PyFoldPlan { inner })
}

#[pyclass(name = "Tokenizer", module = "metaphor_er", frozen)]
struct PyTokenizer {
    inner: WordPieceTokenizer,
}

#[pymethods]
impl PyTokenizer {
    /// Loads a `vocab.txt` file.
    #[staticmethod]
    #[pyo3(signature = (path, lowercase=true))]
    fn from_vocab(path: PathBuf, lowercase: bool) -> PyResult<Self> {
        let inner = WordPieceTokenizer::from_vocab_file(&path, lowercase).map_err(value_err)?;
        Ok(Self { inner })
    }

    /// Whole-word vocabulary over the given instances.
    #[staticmethod]
    #[pyo3(signature = (instances, min_count=1, lowercase=true))]
    fn from_instances(instances: Vec<PyInstance>, min_count: usize, lowercase: bool) -> Self {
        let inner = WordPieceTokenizer::build_from_instances(&unwrap_all(&instances), min_count, lowercase);
        Self { inner }
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }

    fn tokenize_word(&self, word: &str) -> Vec<u32> {
        self.inner.tokenize_word(word)
    }

    /// Marked and masked id sequences with their target spans.
    #[pyo3(signature = (instance, max_len=128))]
    fn encode<'py>(&self, py: Python<'py>, instance: PyInstance, max_len: usize) -> PyResult<Bound<'py, PyDict>> {
        let p = encode_pair(&instance.inner, &self.inner, max_len).map_err(value_err)?;
        let d = PyDict::new(py);
        d.set_item("realization_ids", p.realization_ids)?;
        d.set_item("expectation_ids", p.expectation_ids)?;
        d.set_item("realization_span", (p.realization_span.start, p.realization_span.end))?;
        d.set_item("expectation_span", (p.expectation_span.start, p.expectation_span.end))?;
        d.set_item("target_ids", p.target_ids)?;
        d.set_item("truncated", p.truncated)?;
        Ok(d)
    }
}

/// Precision, recall and F1 as fractions.
#[pyfunction]
fn prf(tp: u64, fp: u64, fn_: u64, tn: u64) -> (f64, f64, f64) {
    let p = ConfusionCounts::new(tp, fp, fn_, tn).prf();
    (p.precision, p.recall, p.f1)
}

/// Confusion counts `(tp, fp, fn, tn)` at threshold 0.5.
#[pyfunction]
fn confusion(gold: Vec<u8>, probabilities: Vec<f64>) -> PyResult<(u64, u64, u64, u64)> {
    if gold.len() != probabilities.len() {
        return Err(PyValueError::new_err("gold and probabilities differ in length"));
    }
    let predicted: Vec<u8> = probabilities.iter().map(|&p| u8::from(p >= 0.5)).collect();
    let c = ConfusionCounts::from_labels(&gold, &predicted);
    Ok((c.tp, c.fp, c.fn_, c.tn))
}

/// One-tailed paired t-test that `a` exceeds `b`; returns `(t, p)`.
#[pyfunction]
fn paired_ttest(a: Vec<f64>, b: Vec<f64>) -> PyResult<(f64, f64)> {
    let r = evaluation::paired_ttest(&a, &b).map_err(value_err)?;
    Ok((r.t, r.p_value))
}

/// Answer features and parse status (`clean`, `partial` or `failed`).
#[pyfunction]
fn parse_answers(raw: &str) -> (Vec<f64>, &'static str) {
    let f = llm_baseline::parse_answers("", raw);
    let status = match f.parse_status {
        ParseStatus::Clean => "clean",
        ParseStatus::Partial => "partial",
        ParseStatus::Failed => "failed",
    };
    (f.features, status)
}

#[pyfunction]
fn render_prompt(instance: PyInstance) -> PyResult<String> {
    Ok(llm_baseline::render_prompt(&instance.inner).map_err(value_err)?.text)
}

/// Runs a `metaphor-er` command line and returns its exit status.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> i32 {
    let argv: Vec<String> = std::iter::once("metaphor-er".to_string()).chain(args).collect();
    py.detach(|| metaphor_er_core::cli::run(argv))
}

#[pymodule]
fn metaphor_er(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyInstance>()?;
    m.add_class::<PyFoldPlan>()?;
    m.add_class::<PyTokenizer>()?;
    m.add_function(wrap_pyfunction!(ingest, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(compute_stats, m)?)?;
    m.add_function(wrap_pyfunction!(build_wid_folds, m)?)?;
    m.add_function(wrap_pyfunction!(build_ood_folds, m)?)?;
    m.add_function(wrap_pyfunction!(prf, m)?)?;
    m.add_function(wrap_pyfunction!(confusion, m)?)?;
    m.add_function(wrap_pyfunction!(paired_ttest, m)?)?;
    m.add_function(wrap_pyfunction!(parse_answers, m)?)?;
    m.add_function(wrap_pyfunction!(render_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
