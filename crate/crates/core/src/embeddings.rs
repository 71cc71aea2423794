//! Word vectors: the shared `d x |V|` embedding matrix, a small skip-gram
//! trainer with negative sampling, and text/binary vector files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::vector::{all_finite, axpy, dot, sigmoid};

pub const DEFAULT_DIM: usize = 20;

const BINARY_MAGIC: &[u8; 6] = b"MCEMB\0";
const BINARY_VERSION: u32 = 1;

/// Dense embedding matrix stored column by column: column `id` is the
/// vector for vocabulary id `id`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    values: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn zeros(dim: usize, vocab_size: usize) -> Self {
        EmbeddingMatrix {
            dim,
            values: vec![0.0; dim * vocab_size],
        }
    }

    /// Builds from column-major values; `values.len()` must be a multiple of `dim`.
    pub fn from_columns(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig(
                "embedding dimension must be >= 1".into(),
            ));
        }
        if !values.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: values.len() % dim,
            });
        }
        if !all_finite(&values) {
            return Err(Error::NonFinite("embedding values".into()));
        }
        Ok(EmbeddingMatrix { dim, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_size(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn lookup(&self, id: usize) -> Result<&[f64]> {
        if id >= self.vocab_size() {
            return Err(Error::IdOutOfRange {
                id,
                size: self.vocab_size(),
            });
        }
        Ok(self.column(id))
    }

    /// Unchecked column access; panics when `id` is out of range.
    pub fn column(&self, id: usize) -> &[f64] {
        &self.values[id * self.dim..(id + 1) * self.dim]
    }

    pub fn column_mut(&mut self, id: usize) -> &mut [f64] {
        &mut self.values[id * self.dim..(id + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.values)
    }

    pub fn cosine(&self, a: usize, b: usize) -> f64 {
        let (x, y) = (self.column(a), self.column(b));
        let denom = dot(x, x).sqrt() * dot(y, y).sqrt();
        if denom == 0.0 {
            0.0
        } else {
            dot(x, y) / denom
        }
    }
}

/// Uniform init in `[-scale, scale]`.
pub fn random_init(
    vocab_size: usize,
    dim: usize,
    seed: u64,
    scale: f64,
) -> Result<EmbeddingMatrix> {
    if dim == 0 {
        return Err(Error::InvalidConfig(
            "embedding dimension must be >= 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..dim * vocab_size)
        .map(|_| (2.0 * rng.gen::<f64>() - 1.0) * scale)
        .collect();
    Ok(EmbeddingMatrix { dim, values })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipgramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    /// Starting rate; decays linearly towards zero over all epochs.
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SkipgramConfig {
    fn default() -> Self {
        SkipgramConfig {
            dim: DEFAULT_DIM,
            window: 2,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            seed: 1,
        }
    }
}

impl SkipgramConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.dim == 0 {
            return bad("skip-gram dim must be >= 1");
        }
        if self.window == 0 {
            return bad("skip-gram window must be >= 1");
        }
        if self.negatives == 0 {
            return bad("skip-gram negatives must be >= 1");
        }
        if self.epochs == 0 {
            return bad("skip-gram epochs must be >= 1");
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return bad("skip-gram learning rate must be > 0");
        }
        Ok(())
    }
}

/// Skip-gram with negative sampling over token id sequences. Negatives are
/// drawn from the unigram distribution raised to the 0.75 power. Returns the
/// input (word) vectors.
pub fn train_skipgram(
    sequences: &[Vec<usize>],
    vocab_size: usize,
    config: &SkipgramConfig,
) -> Result<EmbeddingMatrix> {
    config.validate()?;
    let total_tokens: usize = sequences.iter().map(Vec::len).sum();
    if total_tokens == 0 {
        return Err(Error::EmptyInput("skip-gram needs at least one token"));
    }
    let mut counts = vec![0usize; vocab_size];
    for &id in sequences.iter().flatten() {
        if id >= vocab_size {
            return Err(Error::IdOutOfRange {
                id,
                size: vocab_size,
            });
        }
        counts[id] += 1;
    }
    let noise = WeightedIndex::new(counts.iter().map(|&c| (c as f64).powf(0.75)))
        .expect("at least one positive count");

    let dim = config.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut input = EmbeddingMatrix {
        dim,
        values: (0..dim * vocab_size)
            .map(|_| (rng.gen::<f64>() - 0.5) / dim as f64)
            .collect(),
    };
    let mut output = EmbeddingMatrix::zeros(dim, vocab_size);
    let mut grad = vec![0.0; dim];

    let schedule_len = (config.epochs * total_tokens) as f64;
    let mut processed = 0usize;
    for epoch in 0..config.epochs {
        for seq in sequences {
            for (pos, &center) in seq.iter().enumerate() {
                let lr = config.learning_rate * (1.0 - processed as f64 / schedule_len).max(1e-4);
                processed += 1;
                let lo = pos.saturating_sub(config.window);
                let hi = (pos + config.window).min(seq.len() - 1);
                for (ctx_pos, &context) in seq.iter().enumerate().take(hi + 1).skip(lo) {
                    if ctx_pos == pos {
                        continue;
                    }
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    for n in 0..=config.negatives {
                        let (target, label) = if n == 0 {
                            (context, 1.0)
                        } else {
                            let t = noise.sample(&mut rng);
                            if t == context {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let score = dot(input.column(center), output.column(target));
                        let g = lr * (label - sigmoid(score));
                        axpy(g, output.column(target), &mut grad);
                        let centre_vec = input.column(center).to_vec();
                        axpy(g, &centre_vec, output.column_mut(target));
                    }
                    crate::vector::add_assign(input.column_mut(center), &grad);
                }
            }
        }
        if !input.is_finite() {
            return Err(Error::NonFinite(format!("skip-gram epoch {}", epoch + 1)));
        }
    }
    Ok(input)
}

fn format_error(line: usize, message: impl Into<String>) -> Error {
    Error::EmbeddingFormat {
        line,
        message: message.into(),
    }
}

/// Reads a text vector file (`"<count> <dim>"` header, then `word v1 .. vd`
/// per line). Vocabulary words missing from the file get seeded uniform
/// values in `[-scale, scale]`; file words outside the vocabulary are ignored.
pub fn read_text_embeddings<R: BufRead>(
    reader: R,
    vocab: &Vocabulary,
    dim: usize,
    seed: u64,
    scale: f64,
) -> Result<EmbeddingMatrix> {
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| format_error(1, "missing header"))??;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let [count, file_dim] = fields[..] else {
        return Err(format_error(1, "header must be `<count> <dim>`"));
    };
    let count: usize = count
        .parse()
        .map_err(|_| format_error(1, "non-numeric word count"))?;
    let file_dim: usize = file_dim
        .parse()
        .map_err(|_| format_error(1, "non-numeric dimension"))?;
    if file_dim != dim {
        return Err(format_error(
            1,
            format!("file dimension {file_dim} does not match requested {dim}"),
        ));
    }

    let mut matrix = random_init(vocab.len(), dim, seed, scale)?;
    let mut seen = 0usize;
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        seen += 1;
        let mut parts = line.split_whitespace();
        let word = parts.next().expect("non-empty line");
        let vals = parts
            .map(|p| {
                p.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| format_error(lineno, format!("non-numeric value `{p}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if vals.len() != dim {
            return Err(format_error(
                lineno,
                format!("expected {dim} values, found {}", vals.len()),
            ));
        }
        if let Some(id) = vocab.get(word) {
            matrix.column_mut(id).copy_from_slice(&vals);
        }
    }
    if seen != count {
        return Err(format_error(
            1,
            format!("header declares {count} vectors, file has {seen}"),
        ));
    }
    Ok(matrix)
}

/// Re-indexes `source` onto `target`: shared words keep their vectors,
/// the rest get seeded uniform values in `[-scale, scale]`.
pub fn transfer_embeddings(
    source_vocab: &Vocabulary,
    source: &EmbeddingMatrix,
    target: &Vocabulary,
    seed: u64,
    scale: f64,
) -> Result<EmbeddingMatrix> {
    let mut matrix = random_init(target.len(), source.dim(), seed, scale)?;
    for (id, word) in target.words().iter().enumerate() {
        if let Some(src) = source_vocab.get(word) {
            matrix.column_mut(id).copy_from_slice(source.lookup(src)?);
        }
    }
    Ok(matrix)
}

pub fn load_embeddings(
    path: &Path,
    vocab: &Vocabulary,
    dim: usize,
    seed: u64,
    scale: f64,
) -> Result<EmbeddingMatrix> {
    read_text_embeddings(BufReader::new(File::open(path)?), vocab, dim, seed, scale)
}

/// Writes every vocabulary entry in text vector format. Values use the
/// shortest round-tripping decimal form, so re-reading is exact.
pub fn write_text_embeddings<W: Write>(
    matrix: &EmbeddingMatrix,
    vocab: &Vocabulary,
    out: W,
) -> Result<()> {
    if matrix.vocab_size() != vocab.len() {
        return Err(Error::DimensionMismatch {
            expected: vocab.len(),
            found: matrix.vocab_size(),
        });
    }
    let mut out = BufWriter::new(out);
    writeln!(out, "{} {}", vocab.len(), matrix.dim())?;
    for (id, word) in vocab.words().iter().enumerate() {
        write!(out, "{word}")?;
        for v in matrix.column(id) {
            write!(out, " {v}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_embeddings(path: &Path, matrix: &EmbeddingMatrix, vocab: &Vocabulary) -> Result<()> {
    write_text_embeddings(matrix, vocab, File::create(path)?)
}

/// Binary layout (little endian): magic, `u32` version, `u64` |V|, `u64` d,
/// the `d x |V|` matrix in row-major order as `f64`, then |V| words as
/// `u32` byte length + UTF-8 bytes.
pub fn write_binary_embeddings<W: Write>(
    matrix: &EmbeddingMatrix,
    vocab: &Vocabulary,
    out: W,
) -> Result<()> {
    if matrix.vocab_size() != vocab.len() {
        return Err(Error::DimensionMismatch {
            expected: vocab.len(),
            found: matrix.vocab_size(),
        });
    }
    let mut out = BufWriter::new(out);
    out.write_all(BINARY_MAGIC)?;
    out.write_all(&BINARY_VERSION.to_le_bytes())?;
    out.write_all(&(vocab.len() as u64).to_le_bytes())?;
    out.write_all(&(matrix.dim() as u64).to_le_bytes())?;
    for row in 0..matrix.dim() {
        for col in 0..vocab.len() {
            out.write_all(&matrix.column(col)[row].to_le_bytes())?;
        }
    }
    write_words(&mut out, vocab)?;
    out.flush()?;
    Ok(())
}

pub fn read_binary_embeddings<R: Read>(mut input: R) -> Result<(Vocabulary, EmbeddingMatrix)> {
    let mut magic = [0u8; 6];
    input.read_exact(&mut magic)?;
    if &magic != BINARY_MAGIC {
        return Err(Error::ModelFormat("not a binary embedding file".into()));
    }
    let version = read_u32(&mut input)?;
    if version != BINARY_VERSION {
        return Err(Error::ModelFormat(format!("unsupported version {version}")));
    }
    let size = read_u64(&mut input)? as usize;
    let dim = read_u64(&mut input)? as usize;
    let mut matrix = EmbeddingMatrix::zeros(dim, size);
    for row in 0..dim {
        for col in 0..size {
            matrix.column_mut(col)[row] = read_f64(&mut input)?;
        }
    }
    let vocab = read_words(&mut input, size)?;
    Ok((vocab, matrix))
}

pub(crate) fn write_words<W: Write>(out: &mut W, vocab: &Vocabulary) -> Result<()> {
    for w in vocab.words() {
        out.write_all(&(w.len() as u32).to_le_bytes())?;
        out.write_all(w.as_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_words<R: Read>(input: &mut R, size: usize) -> Result<Vocabulary> {
    let mut words = Vec::with_capacity(size);
    for _ in 0..size {
        let len = read_u32(input)? as usize;
        let mut buf = vec![0u8; len];
        input.read_exact(&mut buf)?;
        words.push(
            String::from_utf8(buf)
                .map_err(|_| Error::ModelFormat("vocabulary is not UTF-8".into()))?,
        );
    }
    if words.first().map(String::as_str) != Some(crate::corpus::OOV_TOKEN) {
        return Err(Error::ModelFormat(
            "vocabulary must start with the OOV entry".into(),
        ));
    }
    let vocab = Vocabulary::from_words(words.into_iter().skip(1));
    if vocab.len() != size {
        return Err(Error::ModelFormat("duplicate vocabulary entries".into()));
    }
    Ok(vocab)
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
