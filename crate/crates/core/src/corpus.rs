//! Annotated corpus: parsing, vocabulary, instance construction and splits.
//!
//! The on-disk format is one JSON object per line:
//!
//! ```text
//! {"doc_id": "d1", "clauses": [["I", "lost", "my", "phone"], ["I", "feel", "sad"]],
//!  "annotations": [{"emotion_word": "sad", "emotion_clause": 1, "emotion_token": 2,
//!                   "cause_clauses": [0], "keyword_spans": [[0, 1, 3]]}]}
//! ```

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Surface form reserved for out-of-vocabulary tokens. Always id 0.
pub const OOV_TOKEN: &str = "<unk>";
pub const OOV_ID: usize = 0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clause {
    pub index: usize,
    pub tokens: Vec<String>,
}

/// Inclusive token span of an annotated cause keyword.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[usize; 3]", into = "[usize; 3]")]
pub struct KeywordSpan {
    pub clause: usize,
    pub start: usize,
    pub end: usize,
}

impl KeywordSpan {
    pub fn contains(&self, clause: usize, token: usize) -> bool {
        self.clause == clause && self.start <= token && token <= self.end
    }
}

impl From<[usize; 3]> for KeywordSpan {
    fn from([clause, start, end]: [usize; 3]) -> Self {
        KeywordSpan { clause, start, end }
    }
}

impl From<KeywordSpan> for [usize; 3] {
    fn from(s: KeywordSpan) -> Self {
        [s.clause, s.start, s.end]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmotionAnnotation {
    pub emotion_word: String,
    pub emotion_clause: usize,
    pub emotion_token: usize,
    /// Sorted, deduplicated.
    pub cause_clauses: Vec<usize>,
    #[serde(default)]
    pub keyword_spans: Vec<KeywordSpan>,
}

impl EmotionAnnotation {
    pub fn is_cause(&self, clause: usize) -> bool {
        self.cause_clauses.binary_search(&clause).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub clauses: Vec<Clause>,
    pub annotations: Vec<EmotionAnnotation>,
}

#[derive(Serialize, Deserialize)]
struct Record {
    doc_id: String,
    clauses: Vec<Vec<String>>,
    annotations: Vec<EmotionAnnotation>,
}

impl Document {
    /// Builds a document from raw clause tokens, checking every invariant.
    pub fn new(
        doc_id: impl Into<String>,
        clauses: Vec<Vec<String>>,
        mut annotations: Vec<EmotionAnnotation>,
    ) -> Result<Self> {
        let doc_id = doc_id.into();
        for a in &mut annotations {
            a.cause_clauses.sort_unstable();
            a.cause_clauses.dedup();
        }
        let doc = Document {
            clauses: clauses
                .into_iter()
                .enumerate()
                .map(|(index, tokens)| Clause { index, tokens })
                .collect(),
            annotations,
            doc_id,
        };
        doc.validate()?;
        Ok(doc)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| {
            Err(Error::InvalidDocument {
                doc_id: self.doc_id.clone(),
                reason,
            })
        };
        if self.clauses.is_empty() {
            return fail("document has no clauses".into());
        }
        for (i, c) in self.clauses.iter().enumerate() {
            if c.index != i {
                return fail(format!("clause index {} at position {i}", c.index));
            }
            if c.tokens.is_empty() {
                return fail(format!("clause {i} is empty"));
            }
            if let Some(t) = c
                .tokens
                .iter()
                .find(|t| t.is_empty() || t.chars().any(char::is_whitespace))
            {
                return fail(format!("clause {i} has invalid token {t:?}"));
            }
        }
        if self.annotations.is_empty() {
            return fail("document has no annotations".into());
        }
        let n = self.clauses.len();
        for (ai, a) in self.annotations.iter().enumerate() {
            if a.emotion_word.is_empty() || a.emotion_word.chars().any(char::is_whitespace) {
                return fail(format!("annotation {ai}: invalid emotion word"));
            }
            if a.emotion_clause >= n {
                return fail(format!(
                    "annotation {ai}: emotion clause {} out of range ({n} clauses)",
                    a.emotion_clause
                ));
            }
            if a.emotion_token >= self.clauses[a.emotion_clause].tokens.len() {
                return fail(format!(
                    "annotation {ai}: emotion token {} out of range",
                    a.emotion_token
                ));
            }
            if a.cause_clauses.is_empty() {
                return fail(format!("annotation {ai}: no cause clauses"));
            }
            if let Some(&c) = a.cause_clauses.iter().find(|&&c| c >= n) {
                return fail(format!(
                    "annotation {ai}: cause clause {c} out of range ({n} clauses)"
                ));
            }
            for s in &a.keyword_spans {
                if !a.is_cause(s.clause) {
                    return fail(format!(
                        "annotation {ai}: keyword span in non-cause clause {}",
                        s.clause
                    ));
                }
                if s.start > s.end || s.end >= self.clauses[s.clause].tokens.len() {
                    return fail(format!(
                        "annotation {ai}: keyword span [{}, {}] outside clause {}",
                        s.start, s.end, s.clause
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn clause_count(&self) -> usize {
        self.clauses.len()
    }

    fn to_record(&self) -> Record {
        Record {
            doc_id: self.doc_id.clone(),
            clauses: self.clauses.iter().map(|c| c.tokens.clone()).collect(),
            annotations: self.annotations.clone(),
        }
    }

    /// One-line canonical JSON encoding.
    pub fn to_line(&self) -> String {
        serde_json::to_string(&self.to_record()).expect("corpus records always serialize")
    }
}

/// Parses one record; `line` is used for error reporting only.
pub fn parse_record(text: &str, line: usize) -> Result<Document> {
    let rec: Record = serde_json::from_str(text).map_err(|e| Error::Parse {
        line,
        message: e.to_string(),
    })?;
    Document::new(rec.doc_id, rec.clauses, rec.annotations)
}

/// Reads a whole corpus. Blank lines are skipped; line numbers are 1-based.
pub fn parse_corpus<R: BufRead>(source: R) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line.map_err(|e| match e.kind() {
            std::io::ErrorKind::InvalidData => Error::Parse {
                line: i + 1,
                message: "invalid UTF-8".into(),
            },
            _ => Error::Io(e),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        docs.push(parse_record(&line, i + 1)?);
    }
    Ok(docs)
}

pub fn parse_corpus_str(text: &str) -> Result<Vec<Document>> {
    parse_corpus(text.as_bytes())
}

pub fn write_corpus<W: Write>(docs: &[Document], mut out: W) -> Result<()> {
    for d in docs {
        writeln!(out, "{}", d.to_line())?;
    }
    Ok(())
}

/// Tallies matching the dataset summary table layout.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub documents: usize,
    pub clauses: usize,
    pub annotations: usize,
    pub cause_clauses: usize,
    pub keyword_spans: usize,
    /// `annotations_per_doc[n]` = documents with exactly `n` annotations.
    pub annotations_per_doc: Vec<usize>,
    /// `causes_per_annotation[n]` = annotations with exactly `n` cause clauses.
    pub causes_per_annotation: Vec<usize>,
}

pub fn corpus_stats(docs: &[Document]) -> CorpusStats {
    fn bump(v: &mut Vec<usize>, n: usize) {
        if v.len() <= n {
            v.resize(n + 1, 0);
        }
        v[n] += 1;
    }
    let mut s = CorpusStats::default();
    for d in docs {
        s.documents += 1;
        s.clauses += d.clauses.len();
        s.annotations += d.annotations.len();
        bump(&mut s.annotations_per_doc, d.annotations.len());
        for a in &d.annotations {
            s.cause_clauses += a.cause_clauses.len();
            s.keyword_spans += a.keyword_spans.len();
            bump(&mut s.causes_per_annotation, a.cause_clauses.len());
        }
    }
    s
}

/// Bijective surface/id map with a reserved out-of-vocabulary entry at id 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// A vocabulary holding only the OOV entry.
    pub fn empty() -> Self {
        Self::from_words(std::iter::empty::<String>())
    }

    /// Builds from an ordered word list; duplicates and the OOV surface are ignored.
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Vocabulary {
            words: vec![OOV_TOKEN.to_string()],
            index: HashMap::from([(OOV_TOKEN.to_string(), OOV_ID)]),
        };
        for w in words {
            v.insert(w.into());
        }
        v
    }

    fn insert(&mut self, w: String) -> usize {
        if let Some(&id) = self.index.get(&w) {
            return id;
        }
        let id = self.words.len();
        self.index.insert(w.clone(), id);
        self.words.push(w);
        id
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    /// Id of `word`, or the OOV id.
    pub fn id(&self, word: &str) -> usize {
        self.get(word).unwrap_or(OOV_ID)
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

/// Collects every token with frequency >= `min_count`, in order of first
/// appearance. Emotion words are always kept.
pub fn build_vocabulary(docs: &[Document], min_count: usize) -> Result<Vocabulary> {
    if min_count == 0 {
        return Err(Error::InvalidConfig("min_count must be at least 1".into()));
    }
    if docs.is_empty() {
        return Err(Error::EmptyInput("corpus has no documents"));
    }
    let mut order: Vec<&str> = Vec::new();
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for d in docs {
        for t in d.clauses.iter().flat_map(|c| &c.tokens) {
            let n = counts.entry(t.as_str()).or_insert(0);
            if *n == 0 {
                order.push(t);
            }
            *n += 1;
        }
    }
    let mut vocab = Vocabulary::from_words(
        order
            .into_iter()
            .filter(|t| counts[t] >= min_count)
            .map(str::to_string),
    );
    for a in docs.iter().flat_map(|d| &d.annotations) {
        vocab.insert(a.emotion_word.clone());
    }
    Ok(vocab)
}

/// One (clause, emotion) question: "is this clause a cause of the emotion?"
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub doc_id: String,
    pub annotation_index: usize,
    pub clause_index: usize,
    pub token_ids: Vec<usize>,
    pub emotion_word_id: usize,
    /// `clause_index - emotion_clause`, in clauses.
    pub distance: i64,
    pub label: bool,
}

/// Instances for a single annotation, one per clause in order.
pub fn annotation_instances(
    doc: &Document,
    annotation_index: usize,
    vocab: &Vocabulary,
) -> Vec<Instance> {
    let a = &doc.annotations[annotation_index];
    let emotion_word_id = vocab.id(&a.emotion_word);
    doc.clauses
        .iter()
        .map(|c| Instance {
            doc_id: doc.doc_id.clone(),
            annotation_index,
            clause_index: c.index,
            token_ids: c.tokens.iter().map(|t| vocab.id(t)).collect(),
            emotion_word_id,
            distance: c.index as i64 - a.emotion_clause as i64,
            label: a.is_cause(c.index),
        })
        .collect()
}

/// One instance per (annotation, clause) pair, grouped by annotation.
pub fn build_instances(doc: &Document, vocab: &Vocabulary) -> Vec<Instance> {
    (0..doc.annotations.len())
        .flat_map(|ai| annotation_instances(doc, ai, vocab))
        .collect()
}

pub fn build_all_instances(docs: &[Document], vocab: &Vocabulary) -> Vec<Instance> {
    docs.iter()
        .flat_map(|d| build_instances(d, vocab))
        .collect()
}

/// Number of training documents for a split: round-half-up of
/// `fraction * n`, kept within `[1, n - 1]`.
pub fn train_size(n: usize, fraction: f64) -> usize {
    let raw = (fraction * n as f64 + 0.5).floor() as usize;
    raw.clamp(1, n - 1)
}

/// Seeded document-level train/test split.
pub fn split_documents(
    docs: &[Document],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<Document>, Vec<Document>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    if docs.len() < 2 {
        return Err(Error::EmptyInput("need at least two documents to split"));
    }
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = train_size(docs.len(), train_fraction);
    let (tr, te) = order.split_at(n_train);
    let pick = |ids: &[usize]| ids.iter().map(|&i| docs[i].clone()).collect::<Vec<_>>();
    Ok((pick(tr), pick(te)))
}
