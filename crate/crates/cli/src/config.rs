//! Resolved experiment configuration and the run manifest.
//!
//! Precedence: built-in defaults, then `--config` file, then flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use memcause::corpus::{parse_corpus, Document, Vocabulary};
use memcause::embeddings::{load_embeddings, EmbeddingMatrix, SkipgramConfig};
use memcause::eval::EmbeddingSource;
use memcause::model::ModelKind;
use memcause::training::{DropoutPlacement, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    #[default]
    Random,
    Pretrained,
    Skipgram,
}

/// How word vectors are initialised before network training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingSpec {
    pub init: InitKind,
    /// Text vector file for `pretrained`.
    pub path: Option<PathBuf>,
    /// Uniform range for random vectors.
    pub scale: f64,
    pub skipgram: SkipgramConfig,
}

impl Default for EmbeddingSpec {
    fn default() -> Self {
        EmbeddingSpec {
            init: InitKind::Random,
            path: None,
            scale: 0.1,
            skipgram: SkipgramConfig::default(),
        }
    }
}

impl EmbeddingSpec {
    /// Loads pretrained vectors (if any) against the vocabulary of the file
    /// itself so each run can re-index them onto its own vocabulary.
    pub fn source(&self, dim: usize) -> Result<EmbeddingSource> {
        Ok(match self.init {
            InitKind::Random => EmbeddingSource::Random { scale: self.scale },
            InitKind::Skipgram => EmbeddingSource::Skipgram(self.skipgram.clone()),
            InitKind::Pretrained => {
                let path = self
                    .path
                    .as_ref()
                    .context("--init pretrained requires --embeddings PATH")?;
                let vocab = vocabulary_of_vector_file(path)?;
                let matrix = load_embeddings(path, &vocab, dim, 0, self.scale)
                    .with_context(|| format!("reading {}", path.display()))?;
                EmbeddingSource::Pretrained {
                    vocab,
                    matrix,
                    scale: self.scale,
                }
            }
        })
    }
}

fn vocabulary_of_vector_file(path: &Path) -> Result<Vocabulary> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Vocabulary::from_words(
        text.lines()
            .skip(1)
            .filter_map(|l| l.split_whitespace().next()),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub min_count: usize,
    pub embeddings: EmbeddingSpec,
}

/// Training flags, one per config field. Unset flags fall back to the config
/// file and then to defaults.
#[derive(Debug, Clone, Args, Default)]
pub struct TrainArgs {
    /// JSON config file, or a run manifest to replay
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Network: basic | convms
    #[arg(long = "model")]
    pub kind: Option<String>,
    #[arg(long)]
    pub hops: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// clause | clause-and-query
    #[arg(long)]
    pub dropout_placement: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub freeze_embeddings: bool,
    #[arg(long)]
    pub no_bias: bool,
    /// Loss weight for positive (cause) instances
    #[arg(long)]
    pub pos_weight: Option<f64>,
    #[arg(long)]
    pub head_scale: Option<f64>,
    /// Comma-separated epochs at which watched probabilities are recorded
    #[arg(long, value_delimiter = ',')]
    pub checkpoints: Option<Vec<usize>>,
    #[arg(long)]
    pub min_count: Option<usize>,
    /// Word vector initialisation
    #[arg(long, value_enum)]
    pub init: Option<InitKind>,
    /// Pretrained text vector file (implies --init pretrained)
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Range of uniform random word vectors
    #[arg(long)]
    pub init_scale: Option<f64>,
}

impl TrainArgs {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => read_config_file(p)?,
            None => ExperimentConfig {
                min_count: 1,
                ..ExperimentConfig::default()
            },
        };
        let t = &mut cfg.train;
        if let Some(k) = &self.kind {
            t.kind = k.parse::<ModelKind>()?;
        }
        if let Some(v) = self.hops {
            t.hops = v;
        }
        if let Some(v) = self.dim {
            t.dim = v;
        }
        if let Some(v) = self.dropout {
            t.dropout = v;
        }
        if let Some(p) = &self.dropout_placement {
            t.dropout_placement = match p.as_str() {
                "clause" => DropoutPlacement::Clause,
                "clause-and-query" => DropoutPlacement::ClauseAndQuery,
                other => bail!("unknown dropout placement `{other}`"),
            };
        }
        if let Some(v) = self.epochs {
            t.epochs = v;
        }
        if let Some(v) = self.lr {
            t.learning_rate = v;
        }
        if let Some(v) = self.seed {
            t.seed = v;
        }
        if self.freeze_embeddings {
            t.freeze_embeddings = true;
        }
        if self.no_bias {
            t.use_bias = false;
        }
        if let Some(v) = self.pos_weight {
            t.positive_weight = v;
        }
        if let Some(v) = self.head_scale {
            t.head_scale = v;
        }
        if let Some(v) = &self.checkpoints {
            t.checkpoints = v.clone();
        }
        if let Some(v) = self.min_count {
            cfg.min_count = v;
        }
        if let Some(p) = &self.embeddings {
            cfg.embeddings.path = Some(p.clone());
            cfg.embeddings.init = InitKind::Pretrained;
        }
        if let Some(i) = self.init {
            cfg.embeddings.init = i;
        }
        if let Some(v) = self.init_scale {
            cfg.embeddings.scale = v;
        }
        cfg.embeddings.skipgram.dim = cfg.train.dim;
        cfg.train.validate()?;
        if cfg.min_count == 0 {
            bail!("--min-count must be at least 1");
        }
        if cfg.embeddings.init == InitKind::Pretrained && cfg.embeddings.path.is_none() {
            bail!("--init pretrained requires --embeddings PATH");
        }
        Ok(cfg)
    }
}

fn read_config_file(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    // a manifest nests the config under "config"
    let inner = match value.get("config") {
        Some(c) if value.get("tool_version").is_some() => c.clone(),
        _ => value,
    };
    serde_json::from_value(inner).with_context(|| format!("invalid config in {}", path.display()))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to re-run a command bit-identically.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub config: ExperimentConfig,
    pub master_seed: u64,
    pub inputs: Vec<InputDigest>,
    pub artifacts: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(
        command: &str,
        config: &ExperimentConfig,
        inputs: &[&Path],
        artifacts: Vec<PathBuf>,
    ) -> Result<Self> {
        let mut digests = Vec::new();
        for p in inputs {
            digests.push(InputDigest {
                path: p.to_path_buf(),
                sha256: file_digest(p)?,
            });
        }
        if let Some(p) = &config.embeddings.path {
            if config.embeddings.init == InitKind::Pretrained {
                digests.push(InputDigest {
                    path: p.clone(),
                    sha256: file_digest(p)?,
                });
            }
        }
        Ok(RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config: config.clone(),
            master_seed: config.train.seed,
            inputs: digests,
            artifacts,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn read_corpus(path: &Path) -> Result<Vec<Document>> {
    let file =
        fs::File::open(path).with_context(|| format!("opening corpus {}", path.display()))?;
    parse_corpus(std::io::BufReader::new(file))
        .with_context(|| format!("parsing corpus {}", path.display()))
}

pub fn build_embeddings(
    cfg: &ExperimentConfig,
    vocab: &Vocabulary,
    train_docs: &[Document],
) -> Result<EmbeddingMatrix> {
    let source = cfg.embeddings.source(cfg.train.dim)?;
    Ok(source.build(vocab, train_docs, cfg.train.dim, cfg.train.seed)?)
}
