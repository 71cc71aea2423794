//! Scoring: per-document argmax prediction, clause- and keyword-level
//! precision/recall/F, the repeated-split protocol, hop sweeps and the
//! attention and epoch trace tables.

use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    annotation_instances, build_all_instances, build_vocabulary, split_documents, Document,
    Instance, Vocabulary,
};
use crate::embeddings::{
    random_init, train_skipgram, transfer_embeddings, EmbeddingMatrix, SkipgramConfig,
};
use crate::error::{Error, Result};
use crate::memnet::AttentionTrace;
use crate::model::Model;
use crate::training::{train, TrainConfig, TrainHistory};

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    pub doc_id: String,
    pub annotation_index: usize,
    pub probabilities: Vec<f64>,
    /// Proposed cause clause.
    pub chosen: usize,
    /// Highest-attention token of the chosen clause at the final hop.
    pub keyword: usize,
}

/// Keyword token from the final hop of a trace. For the slot network this is
/// the current-slot word at the highest-attention position.
pub fn extract_keyword(trace: &AttentionTrace) -> usize {
    argmax(&trace.last().attention)
}

pub fn predict_document(
    model: &Model,
    doc: &Document,
    annotation_index: usize,
) -> Result<PredictionResult> {
    if annotation_index >= doc.annotations.len() {
        return Err(Error::InvalidDocument {
            doc_id: doc.doc_id.clone(),
            reason: format!("no annotation {annotation_index}"),
        });
    }
    let preds = annotation_instances(doc, annotation_index, &model.vocab)
        .iter()
        .map(|inst| model.forward(inst))
        .collect::<Result<Vec<_>>>()?;
    let probabilities: Vec<f64> = preds.iter().map(|p| p.probability).collect();
    let chosen = argmax(&probabilities);
    Ok(PredictionResult {
        doc_id: doc.doc_id.clone(),
        annotation_index,
        keyword: extract_keyword(&preds[chosen].trace),
        probabilities,
        chosen,
    })
}

pub fn predict_all(model: &Model, docs: &[Document]) -> Result<Vec<PredictionResult>> {
    let mut out = Vec::new();
    for d in docs {
        for ai in 0..d.annotations.len() {
            out.push(predict_document(model, d, ai)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub correct: usize,
    pub proposed: usize,
    pub annotated: usize,
}

impl Prf {
    pub fn from_counts(correct: usize, proposed: usize, annotated: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(correct, proposed);
        let recall = ratio(correct, annotated);
        Prf {
            precision,
            recall,
            f1: f_measure(precision, recall),
            correct,
            proposed,
            annotated,
        }
    }
}

/// Harmonic mean, 0 when both are 0.
pub fn f_measure(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

fn gold_index(docs: &[Document]) -> HashMap<&str, &Document> {
    docs.iter().map(|d| (d.doc_id.as_str(), d)).collect()
}

fn gold_for<'a>(
    gold: &HashMap<&str, &'a Document>,
    p: &PredictionResult,
) -> Result<&'a crate::corpus::EmotionAnnotation> {
    gold.get(p.doc_id.as_str())
        .and_then(|d| d.annotations.get(p.annotation_index))
        .ok_or_else(|| Error::UnknownDocument(p.doc_id.clone()))
}

/// A proposal is correct when the chosen clause is one of the annotation's
/// cause clauses. Recall counts every annotated cause clause in `docs`.
pub fn clause_prf(predictions: &[PredictionResult], docs: &[Document]) -> Result<Prf> {
    let gold = gold_index(docs);
    let mut correct = 0;
    for p in predictions {
        if gold_for(&gold, p)?.is_cause(p.chosen) {
            correct += 1;
        }
    }
    let annotated = docs
        .iter()
        .flat_map(|d| &d.annotations)
        .map(|a| a.cause_clauses.len())
        .sum();
    Ok(Prf::from_counts(correct, predictions.len(), annotated))
}

/// One keyword is proposed per prediction (from its chosen clause); it is
/// correct when it falls inside an annotated keyword span of that clause.
pub fn keyword_prf(predictions: &[PredictionResult], docs: &[Document]) -> Result<Prf> {
    let gold = gold_index(docs);
    let mut correct = 0;
    for p in predictions {
        let ann = gold_for(&gold, p)?;
        if ann
            .keyword_spans
            .iter()
            .any(|s| s.contains(p.chosen, p.keyword))
        {
            correct += 1;
        }
    }
    let annotated = docs
        .iter()
        .flat_map(|d| &d.annotations)
        .map(|a| a.keyword_spans.len())
        .sum();
    Ok(Prf::from_counts(correct, predictions.len(), annotated))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub clause: Prf,
    pub keyword: Prf,
    pub predictions: Vec<PredictionResult>,
}

pub fn evaluate(model: &Model, docs: &[Document]) -> Result<Evaluation> {
    let predictions = predict_all(model, docs)?;
    Ok(Evaluation {
        clause: clause_prf(&predictions, docs)?,
        keyword: keyword_prf(&predictions, docs)?,
        predictions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Clause,
    Keyword,
}

/// Per-run P/R/F with their means and sample standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub level: Level,
    pub runs: Vec<Prf>,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_f1: f64,
    pub std_precision: f64,
    pub std_recall: f64,
    pub std_f1: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

impl MetricsReport {
    pub fn aggregate(level: Level, runs: Vec<Prf>) -> Self {
        let col = |f: fn(&Prf) -> f64| mean_std(&runs.iter().map(f).collect::<Vec<_>>());
        let (mean_precision, std_precision) = col(|p| p.precision);
        let (mean_recall, std_recall) = col(|p| p.recall);
        let (mean_f1, std_f1) = col(|p| p.f1);
        MetricsReport {
            level,
            runs,
            mean_precision,
            mean_recall,
            mean_f1,
            std_precision,
            std_recall,
            std_f1,
        }
    }
}

/// Where a protocol run's word vectors come from.
#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingSource {
    /// Uniform in `[-scale, scale]`.
    Random { scale: f64 },
    /// Fixed vectors; words they lack get uniform values in `[-scale, scale]`.
    Pretrained {
        vocab: Vocabulary,
        matrix: EmbeddingMatrix,
        scale: f64,
    },
    /// Skip-gram trained on each run's training split.
    Skipgram(SkipgramConfig),
}

impl EmbeddingSource {
    pub fn build(
        &self,
        vocab: &Vocabulary,
        train_docs: &[Document],
        dim: usize,
        seed: u64,
    ) -> Result<EmbeddingMatrix> {
        match self {
            EmbeddingSource::Random { scale } => random_init(vocab.len(), dim, seed, *scale),
            EmbeddingSource::Pretrained {
                vocab: src,
                matrix,
                scale,
            } => {
                if matrix.dim() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        found: matrix.dim(),
                    });
                }
                transfer_embeddings(src, matrix, vocab, seed, *scale)
            }
            EmbeddingSource::Skipgram(cfg) => {
                let cfg = SkipgramConfig {
                    dim,
                    seed,
                    ..cfg.clone()
                };
                let seqs: Vec<Vec<usize>> = train_docs
                    .iter()
                    .flat_map(|d| &d.clauses)
                    .map(|c| c.tokens.iter().map(|t| vocab.id(t)).collect())
                    .collect();
                train_skipgram(&seqs, vocab.len(), &cfg)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    pub train: TrainConfig,
    pub runs: usize,
    pub train_fraction: f64,
    /// Run `r` uses seed `master_seed + r` for its split, init and training.
    pub master_seed: u64,
    pub min_count: usize,
    pub embeddings: EmbeddingSource,
    /// Worker threads; results are ordered by run regardless.
    pub jobs: usize,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            train: TrainConfig::default(),
            runs: 25,
            train_fraction: 0.9,
            master_seed: 1,
            min_count: 1,
            embeddings: EmbeddingSource::Random { scale: 0.1 },
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run: usize,
    pub seed: u64,
    pub train_documents: usize,
    pub test_documents: usize,
    pub clause: Prf,
    pub keyword: Prf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub runs: Vec<RunResult>,
    pub clause: MetricsReport,
    pub keyword: MetricsReport,
}

pub fn run_seed(master_seed: u64, run: usize) -> u64 {
    master_seed.wrapping_add(run as u64)
}

/// Trains on `train_docs` and returns the fitted model and its history.
pub fn fit(
    train_docs: &[Document],
    config: &TrainConfig,
    min_count: usize,
    source: &EmbeddingSource,
) -> Result<(Model, TrainHistory)> {
    let vocab = build_vocabulary(train_docs, min_count)?;
    let embeddings = source.build(&vocab, train_docs, config.dim, config.seed)?;
    let instances = build_all_instances(train_docs, &vocab);
    let model = config.init_model(vocab, embeddings)?;
    train(&instances, model, config)
}

fn protocol_run(docs: &[Document], cfg: &ProtocolConfig, run: usize) -> Result<RunResult> {
    let seed = run_seed(cfg.master_seed, run);
    let (train_docs, test_docs) = split_documents(docs, cfg.train_fraction, seed)?;
    let train_cfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let (model, _) = fit(&train_docs, &train_cfg, cfg.min_count, &cfg.embeddings)?;
    let ev = evaluate(&model, &test_docs)?;
    Ok(RunResult {
        run,
        seed,
        train_documents: train_docs.len(),
        test_documents: test_docs.len(),
        clause: ev.clause,
        keyword: ev.keyword,
    })
}

/// Repeated random document splits, each with fresh training and test
/// evaluation.
pub fn run_protocol(docs: &[Document], cfg: &ProtocolConfig) -> Result<ProtocolReport> {
    if cfg.runs == 0 {
        return Err(Error::InvalidConfig("runs must be >= 1".into()));
    }
    cfg.train.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let runs = pool.install(|| {
        (0..cfg.runs)
            .into_par_iter()
            .map(|r| protocol_run(docs, cfg, r))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(ProtocolReport {
        clause: MetricsReport::aggregate(Level::Clause, runs.iter().map(|r| r.clause).collect()),
        keyword: MetricsReport::aggregate(Level::Keyword, runs.iter().map(|r| r.keyword).collect()),
        runs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopSweepRow {
    pub hops: usize,
    pub clause: MetricsReport,
    pub keyword: MetricsReport,
}

pub fn hop_sweep(
    docs: &[Document],
    cfg: &ProtocolConfig,
    hops: impl IntoIterator<Item = usize>,
) -> Result<Vec<HopSweepRow>> {
    hops.into_iter()
        .map(|h| {
            let mut c = cfg.clone();
            c.train.hops = h;
            let rep = run_protocol(docs, &c)?;
            Ok(HopSweepRow {
                hops: h,
                clause: rep.clause,
                keyword: rep.keyword,
            })
        })
        .collect()
}

pub const PAD: &str = "<pad>";

/// Per-position attention across hops, with each position's 3-word window.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTable {
    /// `(previous, current, following)` surface forms per position.
    pub windows: Vec<[String; 3]>,
    /// `weights[h][i]`: attention of hop `h + 1` at position `i`.
    pub weights: Vec<Vec<f64>>,
}

pub fn dump_attention(model: &Model, inst: &Instance) -> Result<AttentionTable> {
    let pred = model.forward(inst)?;
    let word = |j: isize| -> String {
        if j < 0 || j as usize >= inst.token_ids.len() {
            PAD.to_string()
        } else {
            model
                .vocab
                .word(inst.token_ids[j as usize])
                .unwrap_or(crate::corpus::OOV_TOKEN)
                .to_string()
        }
    };
    let windows = (0..inst.token_ids.len() as isize)
        .map(|i| [word(i - 1), word(i), word(i + 1)])
        .collect();
    Ok(AttentionTable {
        windows,
        weights: pred
            .trace
            .hops
            .iter()
            .map(|h| h.attention.clone())
            .collect(),
    })
}

fn fmt_value(v: f64, decimals: Option<usize>) -> String {
    match decimals {
        Some(p) => format!("{v:.p$}"),
        None => format!("{v}"),
    }
}

impl AttentionTable {
    pub fn column_sums(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w.iter().sum()).collect()
    }

    /// Tab-separated: `position previous current following hop1 .. hopH`.
    /// `decimals = None` writes values losslessly.
    pub fn to_tsv(&self, decimals: Option<usize>) -> String {
        let mut s = String::from("position\tprevious\tcurrent\tfollowing");
        for h in 0..self.weights.len() {
            write!(s, "\thop{}", h + 1).unwrap();
        }
        s.push('\n');
        for (i, w) in self.windows.iter().enumerate() {
            write!(s, "{i}\t{}\t{}\t{}", w[0], w[1], w[2]).unwrap();
            for hop in &self.weights {
                write!(s, "\t{}", fmt_value(hop[i], decimals)).unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::EmptyInput("attention table"))?;
        let hops = header.split('\t').count().saturating_sub(4);
        let mut windows = Vec::new();
        let mut weights = vec![Vec::new(); hops];
        for (n, line) in lines {
            let bad = |m: &str| Error::Parse {
                line: n + 1,
                message: m.to_string(),
            };
            let cells: Vec<&str> = line.split('\t').collect();
            if cells.len() != 4 + hops {
                return Err(bad("wrong column count"));
            }
            windows.push([
                cells[1].to_string(),
                cells[2].to_string(),
                cells[3].to_string(),
            ]);
            for (h, c) in cells[4..].iter().enumerate() {
                weights[h].push(c.parse().map_err(|_| bad("non-numeric weight"))?);
            }
        }
        Ok(AttentionTable { windows, weights })
    }
}

/// One row per (checkpoint, clause) of every watched annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub doc_id: String,
    pub annotation_index: usize,
    pub clause: usize,
    pub epoch: usize,
    pub probability: f64,
}

pub fn epoch_probability_trace(history: &TrainHistory) -> Vec<TraceRow> {
    history
        .watched
        .iter()
        .flat_map(|e| {
            e.probabilities
                .iter()
                .enumerate()
                .map(move |(clause, &p)| TraceRow {
                    doc_id: e.doc_id.clone(),
                    annotation_index: e.annotation_index,
                    clause,
                    epoch: e.epoch,
                    probability: p,
                })
        })
        .collect()
}

/// Clause-by-epoch grid: one line per clause, one column per checkpoint.
pub fn format_trace_table(rows: &[TraceRow], decimals: usize) -> String {
    let mut epochs: Vec<usize> = rows.iter().map(|r| r.epoch).collect();
    epochs.sort_unstable();
    epochs.dedup();
    let mut keys: Vec<(&str, usize, usize)> = rows
        .iter()
        .map(|r| (r.doc_id.as_str(), r.annotation_index, r.clause))
        .collect();
    keys.dedup();
    keys.sort();
    keys.dedup();
    let mut s = String::from("doc_id\tannotation\tclause");
    for e in &epochs {
        write!(s, "\tepoch{e}").unwrap();
    }
    s.push('\n');
    for (doc, ann, clause) in keys {
        write!(s, "{doc}\t{ann}\t{clause}").unwrap();
        for &e in &epochs {
            match rows.iter().find(|r| {
                r.doc_id == doc && r.annotation_index == ann && r.clause == clause && r.epoch == e
            }) {
                Some(r) => write!(s, "\t{:.decimals$}", r.probability).unwrap(),
                None => s.push_str("\t-"),
            }
        }
        s.push('\n');
    }
    s
}

/// Human-readable summary, 4 decimal places.
pub fn format_metrics_table(reports: &[&MetricsReport]) -> String {
    let mut s = String::from("level\truns\tP\tR\tF\tsd(F)\n");
    for r in reports {
        let level = match r.level {
            Level::Clause => "clause",
            Level::Keyword => "keyword",
        };
        writeln!(
            s,
            "{level}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
            r.runs.len(),
            r.mean_precision,
            r.mean_recall,
            r.mean_f1,
            r.std_f1
        )
        .unwrap();
    }
    s
}
