//! Python bindings: corpora, model training and inference, attention dumps,
//! metrics and the gradient checker.

// pyo3 0.22's generated wrappers trip this lint on every PyResult method
#![allow(clippy::useless_conversion)]

use std::path::PathBuf;

use memcause::corpus::{
    annotation_instances, corpus_stats, parse_corpus_str, split_documents, Document,
};
use memcause::eval::{
    dump_attention, evaluate, f_measure, fit, predict_document, EmbeddingSource, Prf,
};
use memcause::memnet::softmax_norm;
use memcause::model::ModelKind;
use memcause::synthetic::random_model_and_instance;
use memcause::training::TrainConfig;
use pyo3::exceptions::{PyIOError, PyKeyError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: memcause::Error) -> PyErr {
    match e {
        memcause::Error::Io(io) => PyIOError::new_err(io.to_string()),
        memcause::Error::UnknownDocument(id) => PyKeyError::new_err(id),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse_kind(kind: &str) -> PyResult<ModelKind> {
    kind.parse().map_err(to_py)
}

/// Annotated documents in the canonical JSON-lines format.
#[pyclass(module = "memcause")]
#[derive(Clone)]
struct Corpus {
    docs: Vec<Document>,
}

impl Corpus {
    fn doc(&self, doc_id: &str) -> PyResult<&Document> {
        self.docs
            .iter()
            .find(|d| d.doc_id == doc_id)
            .ok_or_else(|| PyKeyError::new_err(doc_id.to_string()))
    }
}

#[pymethods]
impl Corpus {
    #[staticmethod]
    fn from_jsonl(text: &str) -> PyResult<Self> {
        Ok(Corpus {
            docs: parse_corpus_str(text).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path)
            .map_err(|e| PyIOError::new_err(format!("{}: {e}", path.display())))?;
        Self::from_jsonl(&text)
    }

    /// The seeded synthetic corpus whose cause clauses all contain one trigger word.
    #[staticmethod]
    #[pyo3(signature = (documents = 20, seed = 1))]
    fn synthetic(documents: usize, seed: u64) -> Self {
        Corpus {
            docs: memcause::synthetic::trigger_corpus(documents, seed),
        }
    }

    fn to_jsonl(&self) -> String {
        self.docs.iter().map(|d| d.to_line() + "\n").collect()
    }

    fn doc_ids(&self) -> Vec<String> {
        self.docs.iter().map(|d| d.doc_id.clone()).collect()
    }

    fn clauses(&self, doc_id: &str) -> PyResult<Vec<Vec<String>>> {
        Ok(self
            .doc(doc_id)?
            .clauses
            .iter()
            .map(|c| c.tokens.clone())
            .collect())
    }

    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let s = corpus_stats(&self.docs);
        let d = PyDict::new_bound(py);
        d.set_item("documents", s.documents)?;
        d.set_item("clauses", s.clauses)?;
        d.set_item("annotations", s.annotations)?;
        d.set_item("cause_clauses", s.cause_clauses)?;
        d.set_item("keyword_spans", s.keyword_spans)?;
        Ok(d)
    }

    /// Seeded document-level split into `(train, test)`.
    #[pyo3(signature = (train_fraction = 0.9, seed = 1))]
    fn split(&self, train_fraction: f64, seed: u64) -> PyResult<(Corpus, Corpus)> {
        let (a, b) = split_documents(&self.docs, train_fraction, seed).map_err(to_py)?;
        Ok((Corpus { docs: a }, Corpus { docs: b }))
    }

    fn __len__(&self) -> usize {
        self.docs.len()
    }

    fn __repr__(&self) -> String {
        format!("Corpus({} documents)", self.docs.len())
    }
}

fn prf_dict<'py>(py: Python<'py>, p: &Prf) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new_bound(py);
    d.set_item("precision", p.precision)?;
    d.set_item("recall", p.recall)?;
    d.set_item("f1", p.f1)?;
    d.set_item("correct", p.correct)?;
    d.set_item("proposed", p.proposed)?;
    d.set_item("annotated", p.annotated)?;
    Ok(d)
}

/// A trained basic or ConvMS memory network.
#[pyclass(module = "memcause")]
struct Model {
    inner: memcause::Model,
}

#[pymethods]
impl Model {
    /// Trains on every document of `corpus` from random word vectors.
    #[staticmethod]
    #[pyo3(signature = (
        corpus, kind = "convms", hops = 3, dim = 20, dropout = 0.4, epochs = 20,
        learning_rate = 0.01, seed = 1, min_count = 1, init_scale = 0.1
    ))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        py: Python<'_>,
        corpus: &Corpus,
        kind: &str,
        hops: usize,
        dim: usize,
        dropout: f64,
        epochs: usize,
        learning_rate: f64,
        seed: u64,
        min_count: usize,
        init_scale: f64,
    ) -> PyResult<(Self, Vec<f64>)> {
        let config = TrainConfig {
            kind: parse_kind(kind)?,
            hops,
            dim,
            dropout,
            epochs,
            learning_rate,
            seed,
            ..TrainConfig::default()
        };
        let source = EmbeddingSource::Random { scale: init_scale };
        let (model, history) = py
            .allow_threads(|| fit(&corpus.docs, &config, min_count, &source))
            .map_err(to_py)?;
        Ok((Model { inner: model }, history.epoch_losses))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Model {
            inner: memcause::Model::load(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py)
    }

    #[getter]
    fn kind(&self) -> String {
        self.inner.kind.to_string()
    }

    #[getter]
    fn hops(&self) -> usize {
        self.inner.hops
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.vocab.len()
    }

    /// Cause probability of every clause, the chosen clause and its keyword index.
    #[pyo3(signature = (corpus, doc_id, annotation = 0))]
    fn predict<'py>(
        &self,
        py: Python<'py>,
        corpus: &Corpus,
        doc_id: &str,
        annotation: usize,
    ) -> PyResult<Bound<'py, PyDict>> {
        let p = predict_document(&self.inner, corpus.doc(doc_id)?, annotation).map_err(to_py)?;
        let d = PyDict::new_bound(py);
        d.set_item("probabilities", p.probabilities)?;
        d.set_item("chosen", p.chosen)?;
        d.set_item("keyword", p.keyword)?;
        Ok(d)
    }

    /// Clause- and keyword-level precision, recall and F.
    fn evaluate<'py>(&self, py: Python<'py>, corpus: &Corpus) -> PyResult<Bound<'py, PyDict>> {
        let ev = evaluate(&self.inner, &corpus.docs).map_err(to_py)?;
        let d = PyDict::new_bound(py);
        d.set_item("clause", prf_dict(py, &ev.clause)?)?;
        d.set_item("keyword", prf_dict(py, &ev.keyword)?)?;
        Ok(d)
    }

    /// `(windows, weights)`: `(previous, current, following)` words per position
    /// and one attention row per hop.
    #[pyo3(signature = (corpus, doc_id, clause, annotation = 0))]
    #[allow(clippy::type_complexity)]
    fn attention(
        &self,
        corpus: &Corpus,
        doc_id: &str,
        clause: usize,
        annotation: usize,
    ) -> PyResult<(Vec<(String, String, String)>, Vec<Vec<f64>>)> {
        let doc = corpus.doc(doc_id)?;
        if annotation >= doc.annotations.len() || clause >= doc.clauses.len() {
            return Err(PyValueError::new_err(format!(
                "no annotation {annotation} / clause {clause} in `{doc_id}`"
            )));
        }
        let inst = &annotation_instances(doc, annotation, &self.inner.vocab)[clause];
        let t = dump_attention(&self.inner, inst).map_err(to_py)?;
        let windows = t.windows.into_iter().map(|[a, b, c]| (a, b, c)).collect();
        Ok((windows, t.weights))
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(kind={}, hops={}, dim={})",
            self.inner.kind,
            self.inner.hops,
            self.inner.dim()
        )
    }
}

/// Max-subtracted softmax.
#[pyfunction]
fn softmax(scores: Vec<f64>) -> Vec<f64> {
    softmax_norm(&scores)
}

/// `(precision, recall, f1)` from raw counts.
#[pyfunction]
fn prf(correct: usize, proposed: usize, annotated: usize) -> (f64, f64, f64) {
    let p = Prf::from_counts(correct, proposed, annotated);
    (p.precision, p.recall, p.f1)
}

/// Harmonic mean of precision and recall.
#[pyfunction]
fn f1(precision: f64, recall: f64) -> f64 {
    f_measure(precision, recall)
}

/// Finite-difference check on one random model and instance; returns the
/// worst relative error per parameter block.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (kind = "convms", hops = 3, dim = 4, clause_len = 5, seed = 0, eps = 1e-5, tol = 1e-4))]
fn gradient_check<'py>(
    py: Python<'py>,
    kind: &str,
    hops: usize,
    dim: usize,
    clause_len: usize,
    seed: u64,
    eps: f64,
    tol: f64,
) -> PyResult<Bound<'py, PyDict>> {
    if hops == 0 || dim == 0 || clause_len == 0 {
        return Err(PyValueError::new_err(
            "hops, dim and clause_len must be >= 1",
        ));
    }
    let (model, inst) =
        random_model_and_instance(parse_kind(kind)?, hops, dim, clause_len, seed, 0.5);
    let report = memcause::training::gradient_check(&model, &inst, eps, tol).map_err(to_py)?;
    let d = PyDict::new_bound(py);
    for b in &report.blocks {
        d.set_item(&b.block, b.max_rel_error)?;
    }
    d.set_item("passed", report.passed())?;
    Ok(d)
}

#[pymodule]
#[pyo3(name = "memcause")]
fn memcause_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Corpus>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    m.add_function(wrap_pyfunction!(prf, m)?)?;
    m.add_function(wrap_pyfunction!(f1, m)?)?;
    m.add_function(wrap_pyfunction!(gradient_check, m)?)?;
    Ok(())
}
