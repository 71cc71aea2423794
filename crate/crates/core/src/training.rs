//! Per-instance SGD training with inverted dropout, plus the finite
//! difference gradient check.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Instance, Vocabulary};
use crate::embeddings::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::model::{Gradients, Model, ModelKind};

const PROB_CLAMP: f64 = 1e-12;

/// Binary cross-entropy with the probability clamped to `[1e-12, 1 - 1e-12]`.
pub fn bce_loss(p: f64, label: bool) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if label {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Derivative of the (weighted) loss w.r.t. the logit.
pub(crate) fn bce_grad(p: f64, label: bool, positive_weight: f64) -> f64 {
    if label {
        positive_weight * (p - 1.0)
    } else {
        p
    }
}

/// Inverted dropout: each entry is zeroed with probability `rate` and the
/// survivors scaled by `1 / (1 - rate)`. Returns the output and the
/// per-entry multipliers. Draws nothing from `rng` when `rate == 0`.
pub fn apply_dropout<R: Rng>(v: &[f64], rate: f64, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    if rate == 0.0 {
        return (v.to_vec(), vec![1.0; v.len()]);
    }
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = v
        .iter()
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect();
    (v.iter().zip(&mask).map(|(x, m)| x * m).collect(), mask)
}

/// `p <- p - lr * g` for the head, bias and every touched embedding column.
pub fn sgd_step(model: &mut Model, grads: &Gradients, lr: f64) -> Result<()> {
    if grads.head.len() != model.head.len() {
        return Err(Error::DimensionMismatch {
            expected: model.head.len(),
            found: grads.head.len(),
        });
    }
    let d = model.dim();
    for (&id, g) in &grads.embeddings {
        if g.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: g.len(),
            });
        }
        model.embeddings.lookup(id)?;
    }
    for (w, g) in model.head.iter_mut().zip(&grads.head) {
        *w -= lr * g;
    }
    if model.use_bias {
        model.bias -= lr * grads.bias;
    }
    for (&id, g) in &grads.embeddings {
        for (w, gi) in model.embeddings.column_mut(id).iter_mut().zip(g) {
            *w -= lr * gi;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DropoutPlacement {
    /// Clause word vectors only.
    #[default]
    Clause,
    /// Clause word vectors and the emotion query vector.
    ClauseAndQuery,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub kind: ModelKind,
    pub hops: usize,
    pub dim: usize,
    pub dropout: f64,
    pub dropout_placement: DropoutPlacement,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub freeze_embeddings: bool,
    pub use_bias: bool,
    /// Loss multiplier for positive instances; 1 means no reweighting.
    pub positive_weight: f64,
    /// Head weights start uniform in `[-head_scale, head_scale]`.
    pub head_scale: f64,
    /// Epochs (1-based) at which watched probabilities are recorded.
    pub checkpoints: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            kind: ModelKind::ConvMs,
            hops: 3,
            dim: crate::embeddings::DEFAULT_DIM,
            dropout: 0.4,
            dropout_placement: DropoutPlacement::Clause,
            epochs: 20,
            learning_rate: 0.01,
            seed: 1,
            freeze_embeddings: false,
            use_bias: true,
            positive_weight: 1.0,
            head_scale: 0.1,
            checkpoints: vec![5, 10, 15, 20],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.hops == 0 {
            return bad("hops must be >= 1".into());
        }
        if self.dim == 0 {
            return bad("dim must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return bad(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            ));
        }
        if self.positive_weight.is_nan() || self.positive_weight <= 0.0 {
            return bad("positive weight must be > 0".into());
        }
        Ok(())
    }

    /// Fresh model for this configuration over the given embeddings.
    pub fn init_model(&self, vocab: Vocabulary, embeddings: EmbeddingMatrix) -> Result<Model> {
        self.validate()?;
        if embeddings.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: embeddings.dim(),
            });
        }
        let mut model = Model::new(
            self.kind,
            self.hops,
            vocab,
            embeddings,
            self.head_scale,
            self.seed.wrapping_add(0x5eed),
        )?;
        model.use_bias = self.use_bias;
        Ok(model)
    }
}

/// The clauses of one annotation whose probabilities are recorded at
/// checkpoints.
#[derive(Debug, Clone)]
pub struct WatchedAnnotation {
    pub doc_id: String,
    pub annotation_index: usize,
    pub instances: Vec<Instance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochProbabilities {
    pub epoch: usize,
    pub doc_id: String,
    pub annotation_index: usize,
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean training loss per epoch, dropout included.
    pub epoch_losses: Vec<f64>,
    pub watched: Vec<EpochProbabilities>,
}

pub fn train(
    instances: &[Instance],
    model: Model,
    config: &TrainConfig,
) -> Result<(Model, TrainHistory)> {
    train_with(instances, model, config, &[], |_, _| Ok(()))
}

/// Trains `model` in place-order: every epoch shuffles the instances with
/// the seeded generator and applies one SGD update per instance.
/// `on_epoch` runs after each epoch with the 1-based epoch number.
pub fn train_with<F>(
    instances: &[Instance],
    mut model: Model,
    config: &TrainConfig,
    watched: &[WatchedAnnotation],
    mut on_epoch: F,
) -> Result<(Model, TrainHistory)>
where
    F: FnMut(usize, &Model) -> Result<()>,
{
    config.validate()?;
    if instances.is_empty() {
        return Err(Error::EmptyInput("no training instances"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..instances.len()).collect();
    let mut history = TrainHistory::default();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let inst = &instances[i];
            let (clause, emotion) = model.gather(inst)?;
            let (clause, scales): (Vec<_>, Vec<_>) = clause
                .iter()
                .map(|e| apply_dropout(e, config.dropout, &mut rng))
                .unzip();
            let (emotion, emotion_scale) = match config.dropout_placement {
                DropoutPlacement::ClauseAndQuery => {
                    apply_dropout(&emotion, config.dropout, &mut rng)
                }
                DropoutPlacement::Clause => {
                    let n = emotion.len();
                    (emotion, vec![1.0; n])
                }
            };
            let (loss, _, mut g) = model.backward_embedded(
                &clause,
                &emotion,
                inst.distance,
                inst.label,
                config.positive_weight,
            )?;
            for (gi, s) in g.emotion.iter_mut().zip(&emotion_scale) {
                *gi *= s;
            }
            total += loss;
            let grads = model.scatter(inst, g, Some(&scales), config.freeze_embeddings);
            sgd_step(&mut model, &grads, config.learning_rate)?;
        }
        let mean = total / instances.len() as f64;
        if !mean.is_finite() || model.validate().is_err() {
            return Err(Error::NonFinite(format!(
                "training diverged at epoch {epoch}"
            )));
        }
        history.epoch_losses.push(mean);
        if config.checkpoints.contains(&epoch) {
            for w in watched {
                history.watched.push(EpochProbabilities {
                    epoch,
                    doc_id: w.doc_id.clone(),
                    annotation_index: w.annotation_index,
                    probabilities: w
                        .instances
                        .iter()
                        .map(|inst| model.probability(inst))
                        .collect::<Result<_>>()?,
                });
            }
        }
        on_epoch(epoch, &model)?;
    }
    Ok((model, history))
}

/// Mean inference-mode loss over `instances`.
pub fn mean_loss(model: &Model, instances: &[Instance]) -> Result<f64> {
    let mut total = 0.0;
    for inst in instances {
        total += bce_loss(model.probability(inst)?, inst.label);
    }
    Ok(total / instances.len().max(1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockReport {
    pub block: String,
    pub entries: usize,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub kind: ModelKind,
    pub hops: usize,
    pub tolerance: f64,
    pub blocks: Vec<BlockReport>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.max_rel_error)
            .fold(0.0, f64::max)
    }
}

/// Magnitude below which errors are measured absolutely rather than
/// relative to the gradient size.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Analytic gradients (dropout off) compared with central differences.
pub fn gradient_check(
    model: &Model,
    inst: &Instance,
    eps: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let (_, analytic) = model.loss_and_gradients(inst, false, 1.0)?;
    compare_gradients(model, inst, &analytic, eps, tolerance)
}

/// Compares a supplied gradient against central differences of the loss,
/// block by block: head output weights, distance weight, bias, embeddings.
pub fn compare_gradients(
    model: &Model,
    inst: &Instance,
    analytic: &Gradients,
    eps: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let loss_at = |m: &Model| -> Result<f64> { Ok(bce_loss(m.probability(inst)?, inst.label)) };
    let central = |perturb: &dyn Fn(&mut Model, f64)| -> Result<f64> {
        let mut plus = model.clone();
        perturb(&mut plus, eps);
        let mut minus = model.clone();
        perturb(&mut minus, -eps);
        Ok((loss_at(&plus)? - loss_at(&minus)?) / (2.0 * eps))
    };

    let mut blocks = Vec::new();
    let mut push = |name: &str, pairs: Vec<(f64, f64)>| {
        let max_abs = pairs.iter().map(|(a, n)| (a - n).abs()).fold(0.0, f64::max);
        let max_rel = pairs
            .iter()
            .map(|&(a, n)| relative_error(a, n))
            .fold(0.0, f64::max);
        blocks.push(BlockReport {
            block: name.to_string(),
            entries: pairs.len(),
            max_abs_error: max_abs,
            max_rel_error: max_rel,
            passed: max_rel < tolerance,
        });
    };

    let n = model.head.len() - 1;
    let mut head = Vec::with_capacity(n);
    for j in 0..n {
        head.push((analytic.head[j], central(&|m, h| m.head[j] += h)?));
    }
    push("head", head);
    push(
        "distance",
        vec![(analytic.head[n], central(&|m, h| m.head[n] += h)?)],
    );
    if model.use_bias {
        push("bias", vec![(analytic.bias, central(&|m, h| m.bias += h)?)]);
    }

    let mut touched: Vec<usize> = inst.token_ids.clone();
    touched.push(inst.emotion_word_id);
    touched.sort_unstable();
    touched.dedup();
    let d = model.dim();
    let zeros = vec![0.0; d];
    let mut emb = Vec::with_capacity(touched.len() * d);
    for &id in &touched {
        let a = analytic.embeddings.get(&id).unwrap_or(&zeros);
        for (r, &ar) in a.iter().enumerate() {
            emb.push((ar, central(&|m, h| m.embeddings.column_mut(id)[r] += h)?));
        }
    }
    push("embeddings", emb);

    Ok(GradCheckReport {
        kind: model.kind,
        hops: model.hops,
        tolerance,
        blocks,
    })
}
