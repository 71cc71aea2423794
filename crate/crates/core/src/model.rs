//! Trainable model: shared embeddings, a network body (basic or slot) and a
//! logistic head over `[final outputs ; distance]`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Instance, Vocabulary};
use crate::embeddings::{read_f64, read_u32, read_u64, read_words, write_words, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::memnet::AttentionTrace;
use crate::training::{bce_grad, bce_loss};
use crate::vector::{all_finite, dot, sigmoid};
use crate::{convms, memnet};

const MODEL_MAGIC: &[u8; 8] = b"MCMODEL\0";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Basic,
    ConvMs,
}

impl ModelKind {
    /// Number of output vectors the network concatenates into the head.
    pub fn slots(self) -> usize {
        match self {
            ModelKind::Basic => 1,
            ModelKind::ConvMs => 3,
        }
    }

    fn tag(self) -> u8 {
        match self {
            ModelKind::Basic => 1,
            ModelKind::ConvMs => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            1 => Ok(ModelKind::Basic),
            2 => Ok(ModelKind::ConvMs),
            t => Err(Error::ModelFormat(format!("unknown model kind tag {t}"))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Basic => "basic",
            ModelKind::ConvMs => "convms",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "basic" | "memnet" => Ok(ModelKind::Basic),
            "convms" | "convms-memnet" => Ok(ModelKind::ConvMs),
            other => Err(Error::InvalidConfig(format!(
                "unknown model kind `{other}`"
            ))),
        }
    }
}

/// Output of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probability: f64,
    pub logit: f64,
    pub trace: AttentionTrace,
}

/// Gradients of the per-instance loss. Embedding gradients are sparse: only
/// columns touched by the instance appear.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub head: Vec<f64>,
    pub bias: f64,
    pub embeddings: BTreeMap<usize, Vec<f64>>,
}

/// Gradients with respect to the looked-up vectors rather than the matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct InputGradients {
    pub clause: Vec<Vec<f64>>,
    pub emotion: Vec<f64>,
    pub head: Vec<f64>,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub kind: ModelKind,
    pub hops: usize,
    pub vocab: Vocabulary,
    pub embeddings: EmbeddingMatrix,
    /// `slots * d` output weights followed by the distance weight.
    pub head: Vec<f64>,
    pub bias: f64,
    pub use_bias: bool,
}

impl Model {
    /// Head weights drawn uniformly from `[-head_scale, head_scale]`, bias 0.
    pub fn new(
        kind: ModelKind,
        hops: usize,
        vocab: Vocabulary,
        embeddings: EmbeddingMatrix,
        head_scale: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = kind.slots() * embeddings.dim() + 1;
        let head = (0..n)
            .map(|_| (2.0 * rng.gen::<f64>() - 1.0) * head_scale)
            .collect();
        let model = Model {
            kind,
            hops,
            vocab,
            embeddings,
            head,
            bias: 0.0,
            use_bias: true,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hops == 0 {
            return Err(Error::InvalidConfig("hop count must be >= 1".into()));
        }
        if self.embeddings.vocab_size() != self.vocab.len() {
            return Err(Error::DimensionMismatch {
                expected: self.vocab.len(),
                found: self.embeddings.vocab_size(),
            });
        }
        if self.head.len() != self.head_input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.head_input_dim(),
                found: self.head.len(),
            });
        }
        if !all_finite(&self.head) || !self.bias.is_finite() || !self.embeddings.is_finite() {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.embeddings.dim()
    }

    /// `slots * d + 1`
    pub fn head_input_dim(&self) -> usize {
        self.kind.slots() * self.dim() + 1
    }

    /// Looks up the clause word vectors and the emotion vector.
    pub fn gather(&self, inst: &Instance) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        if inst.token_ids.is_empty() {
            return Err(Error::EmptyInput("clause has no words"));
        }
        let clause = inst
            .token_ids
            .iter()
            .map(|&id| self.embeddings.lookup(id).map(<[f64]>::to_vec))
            .collect::<Result<Vec<_>>>()?;
        let emotion = self.embeddings.lookup(inst.emotion_word_id)?.to_vec();
        Ok((clause, emotion))
    }

    pub fn run_body(&self, clause: &[Vec<f64>], emotion: &[f64]) -> Result<AttentionTrace> {
        match self.kind {
            ModelKind::Basic => memnet::forward(clause, emotion, self.hops),
            ModelKind::ConvMs => convms::forward(clause, emotion, self.hops),
        }
    }

    fn logit(&self, features: &[f64], distance: i64) -> f64 {
        let n = features.len();
        let mut z = dot(&self.head[..n], features) + self.head[n] * distance as f64;
        if self.use_bias {
            z += self.bias;
        }
        z
    }

    pub fn forward_embedded(
        &self,
        clause: &[Vec<f64>],
        emotion: &[f64],
        distance: i64,
    ) -> Result<Prediction> {
        let trace = self.run_body(clause, emotion)?;
        let logit = self.logit(&trace.final_features(), distance);
        Ok(Prediction {
            probability: sigmoid(logit),
            logit,
            trace,
        })
    }

    pub fn forward(&self, inst: &Instance) -> Result<Prediction> {
        let (clause, emotion) = self.gather(inst)?;
        self.forward_embedded(&clause, &emotion, inst.distance)
    }

    pub fn probability(&self, inst: &Instance) -> Result<f64> {
        self.forward(inst).map(|p| p.probability)
    }

    /// Loss and gradients w.r.t. the given input vectors.
    /// `positive_weight` scales the loss of positive instances.
    pub fn backward_embedded(
        &self,
        clause: &[Vec<f64>],
        emotion: &[f64],
        distance: i64,
        label: bool,
        positive_weight: f64,
    ) -> Result<(f64, Prediction, InputGradients)> {
        let pred = self.forward_embedded(clause, emotion, distance)?;
        let loss = weighted_loss(pred.probability, label, positive_weight);
        let dz = bce_grad(pred.probability, label, positive_weight);
        let features = pred.trace.final_features();
        let n = features.len();
        let mut head: Vec<f64> = features.iter().map(|f| dz * f).collect();
        head.push(dz * distance as f64);
        let grad_features: Vec<f64> = self.head[..n].iter().map(|w| dz * w).collect();
        let (grad_clause, grad_emotion) = match self.kind {
            ModelKind::Basic => memnet::backward(clause, emotion, &pred.trace, &grad_features),
            ModelKind::ConvMs => convms::backward(clause, emotion, &pred.trace, &grad_features),
        };
        let grads = InputGradients {
            clause: grad_clause,
            emotion: grad_emotion,
            head,
            bias: if self.use_bias { dz } else { 0.0 },
        };
        Ok((loss, pred, grads))
    }

    /// Loss and parameter gradients for one instance without dropout.
    pub fn loss_and_gradients(
        &self,
        inst: &Instance,
        freeze_embeddings: bool,
        positive_weight: f64,
    ) -> Result<(f64, Gradients)> {
        let (clause, emotion) = self.gather(inst)?;
        let (loss, _, g) = self.backward_embedded(
            &clause,
            &emotion,
            inst.distance,
            inst.label,
            positive_weight,
        )?;
        Ok((loss, self.scatter(inst, g, None, freeze_embeddings)))
    }

    /// Maps input-vector gradients onto embedding columns. `dropout_scale`
    /// holds the per-element multipliers applied to clause vectors.
    pub fn scatter(
        &self,
        inst: &Instance,
        g: InputGradients,
        dropout_scale: Option<&[Vec<f64>]>,
        freeze_embeddings: bool,
    ) -> Gradients {
        let mut embeddings: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        if !freeze_embeddings {
            let d = self.dim();
            for (pos, (&id, gv)) in inst.token_ids.iter().zip(&g.clause).enumerate() {
                let col = embeddings.entry(id).or_insert_with(|| vec![0.0; d]);
                match dropout_scale {
                    Some(s) => {
                        for ((c, gi), si) in col.iter_mut().zip(gv).zip(&s[pos]) {
                            *c += gi * si;
                        }
                    }
                    None => crate::vector::add_assign(col, gv),
                }
            }
            let col = embeddings
                .entry(inst.emotion_word_id)
                .or_insert_with(|| vec![0.0; d]);
            crate::vector::add_assign(col, &g.emotion);
        }
        Gradients {
            head: g.head,
            bias: g.bias,
            embeddings,
        }
    }

    pub fn write_to<W: Write>(&self, out: W) -> Result<()> {
        let mut out = BufWriter::new(out);
        out.write_all(MODEL_MAGIC)?;
        out.write_all(&MODEL_VERSION.to_le_bytes())?;
        out.write_all(&[self.kind.tag(), self.use_bias as u8])?;
        out.write_all(&(self.dim() as u64).to_le_bytes())?;
        out.write_all(&(self.hops as u64).to_le_bytes())?;
        out.write_all(&(self.vocab.len() as u64).to_le_bytes())?;
        write_words(&mut out, &self.vocab)?;
        for v in self.embeddings.as_slice() {
            out.write_all(&v.to_le_bytes())?;
        }
        out.write_all(&(self.head.len() as u64).to_le_bytes())?;
        for v in &self.head {
            out.write_all(&v.to_le_bytes())?;
        }
        out.write_all(&self.bias.to_le_bytes())?;
        out.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let mut input = BufReader::new(input);
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(Error::ModelFormat("not a model file".into()));
        }
        let version = read_u32(&mut input)?;
        if version != MODEL_VERSION {
            return Err(Error::ModelFormat(format!("unsupported version {version}")));
        }
        let mut flags = [0u8; 2];
        input.read_exact(&mut flags)?;
        let kind = ModelKind::from_tag(flags[0])?;
        let dim = read_u64(&mut input)? as usize;
        let hops = read_u64(&mut input)? as usize;
        let size = read_u64(&mut input)? as usize;
        let vocab = read_words(&mut input, size)?;
        let values = (0..dim * size)
            .map(|_| read_f64(&mut input))
            .collect::<Result<Vec<_>>>()?;
        let embeddings = EmbeddingMatrix::from_columns(dim, values)?;
        let head_len = read_u64(&mut input)? as usize;
        let head = (0..head_len)
            .map(|_| read_f64(&mut input))
            .collect::<Result<Vec<_>>>()?;
        let bias = read_f64(&mut input)?;
        let model = Model {
            kind,
            hops,
            vocab,
            embeddings,
            head,
            bias,
            use_bias: flags[1] != 0,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(File::open(path)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)
            .expect("writing to memory cannot fail");
        buf
    }
}

fn weighted_loss(p: f64, label: bool, positive_weight: f64) -> f64 {
    let l = bce_loss(p, label);
    if label {
        positive_weight * l
    } else {
        l
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::random_init;

    fn toy(kind: ModelKind, hops: usize) -> (Model, Instance) {
        let vocab = Vocabulary::from_words(["a", "b", "c", "sad"]);
        let emb = random_init(vocab.len(), 4, 3, 0.5).unwrap();
        let m = Model::new(kind, hops, vocab, emb, 0.3, 5).unwrap();
        let inst = Instance {
            doc_id: "t".into(),
            annotation_index: 0,
            clause_index: 0,
            token_ids: vec![1, 2, 3, 1],
            emotion_word_id: 4,
            distance: -2,
            label: true,
        };
        (m, inst)
    }

    #[test]
    fn zero_head_gives_half() {
        for kind in [ModelKind::Basic, ModelKind::ConvMs] {
            let (mut m, inst) = toy(kind, 3);
            m.head.iter_mut().for_each(|w| *w = 0.0);
            m.bias = 0.0;
            assert_eq!(m.probability(&inst).unwrap(), 0.5);
        }
    }

    #[test]
    fn head_has_expected_width() {
        assert_eq!(toy(ModelKind::Basic, 1).0.head.len(), 5);
        assert_eq!(toy(ModelKind::ConvMs, 1).0.head.len(), 13);
    }

    #[test]
    fn distance_weight_gradient_is_residual_times_distance() {
        for kind in [ModelKind::Basic, ModelKind::ConvMs] {
            let (m, inst) = toy(kind, 2);
            let p = m.probability(&inst).unwrap();
            let (_, g) = m.loss_and_gradients(&inst, false, 1.0).unwrap();
            let y = 1.0;
            assert!((g.head.last().unwrap() - (p - y) * inst.distance as f64).abs() < 1e-15);
            assert!((g.bias - (p - y)).abs() < 1e-15);
        }
    }

    #[test]
    fn bias_gradient_vanishes_at_half() {
        let (mut m, mut inst) = toy(ModelKind::Basic, 1);
        m.head.iter_mut().for_each(|w| *w = 0.0);
        inst.label = true;
        let (_, g) = m.loss_and_gradients(&inst, false, 1.0).unwrap();
        assert_eq!(g.bias, -0.5);
        // symmetric pair: one positive and one negative copy cancel
        inst.label = false;
        let (_, g2) = m.loss_and_gradients(&inst, false, 1.0).unwrap();
        assert_eq!(g.bias + g2.bias, 0.0);
    }

    #[test]
    fn frozen_embeddings_report_no_gradient() {
        let (m, inst) = toy(ModelKind::ConvMs, 2);
        let (_, g) = m.loss_and_gradients(&inst, true, 1.0).unwrap();
        assert!(g.embeddings.is_empty());
        let (_, g) = m.loss_and_gradients(&inst, false, 1.0).unwrap();
        assert_eq!(
            g.embeddings.keys().copied().collect::<Vec<_>>(),
            vec![1, 2, 3, 4]
        );
    }

    #[test]
    fn empty_clause_is_an_error() {
        let (m, mut inst) = toy(ModelKind::Basic, 1);
        inst.token_ids.clear();
        assert!(m.forward(&inst).is_err());
    }

    #[test]
    fn model_file_round_trip() {
        for kind in [ModelKind::Basic, ModelKind::ConvMs] {
            let (mut m, _) = toy(kind, 3);
            m.bias = -0.123;
            let bytes = m.to_bytes();
            let back = Model::read_from(bytes.as_slice()).unwrap();
            assert_eq!(back, m);
            assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn corrupt_model_file_rejected() {
        let (m, _) = toy(ModelKind::Basic, 1);
        let mut bytes = m.to_bytes();
        bytes[0] = b'X';
        assert!(Model::read_from(bytes.as_slice()).is_err());
        let bytes = m.to_bytes();
        assert!(Model::read_from(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn kind_parses() {
        assert_eq!("convms".parse::<ModelKind>().unwrap(), ModelKind::ConvMs);
        assert_eq!("Basic".parse::<ModelKind>().unwrap(), ModelKind::Basic);
        assert!("lstm".parse::<ModelKind>().is_err());
    }
}
