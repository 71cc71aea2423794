//! End-to-end training on the synthetic trigger corpus.

use memcause::corpus::{build_all_instances, build_vocabulary, split_documents, Document};
use memcause::embeddings::random_init;
use memcause::eval::{
    epoch_probability_trace, evaluate, run_protocol, EmbeddingSource, ProtocolConfig,
};
use memcause::model::{Model, ModelKind};
use memcause::synthetic::trigger_corpus;
use memcause::training::{mean_loss, train, train_with, TrainConfig, WatchedAnnotation};

fn overfit_config(seed: u64) -> TrainConfig {
    TrainConfig {
        kind: ModelKind::ConvMs,
        hops: 1,
        dim: 8,
        epochs: 200,
        seed,
        ..TrainConfig::default()
    }
}

fn fresh_model(docs: &[Document], cfg: &TrainConfig) -> Model {
    let vocab = build_vocabulary(docs, 1).unwrap();
    let emb = random_init(vocab.len(), cfg.dim, cfg.seed, 0.1).unwrap();
    cfg.init_model(vocab, emb).unwrap()
}

#[test]
fn convms_overfits_trigger_corpus() {
    for seed in 1..=3 {
        let docs = trigger_corpus(20, seed);
        let (train_docs, test_docs) = split_documents(&docs, 0.9, seed).unwrap();
        let cfg = overfit_config(seed);
        let model = fresh_model(&train_docs, &cfg);
        let instances = build_all_instances(&train_docs, &model.vocab);
        let initial = mean_loss(&model, &instances).unwrap();
        let (model, history) = train(&instances, model, &cfg).unwrap();
        assert_eq!(history.epoch_losses.len(), 200);
        let final_loss = mean_loss(&model, &instances).unwrap();
        assert!(
            final_loss < 0.05 * initial,
            "seed {seed}: {final_loss} vs {initial}"
        );
        assert_eq!(evaluate(&model, &train_docs).unwrap().clause.f1, 1.0);
        assert_eq!(evaluate(&model, &test_docs).unwrap().clause.f1, 1.0);
    }
}

#[test]
fn basic_network_also_fits_trigger_corpus() {
    let docs = trigger_corpus(20, 4);
    let cfg = TrainConfig {
        kind: ModelKind::Basic,
        ..overfit_config(4)
    };
    let model = fresh_model(&docs, &cfg);
    let instances = build_all_instances(&docs, &model.vocab);
    let (model, _) = train(&instances, model, &cfg).unwrap();
    let ev = evaluate(&model, &docs).unwrap();
    assert_eq!(ev.clause.f1, 1.0);
}

#[test]
fn training_is_deterministic() {
    let docs = trigger_corpus(10, 2);
    let cfg = TrainConfig {
        epochs: 5,
        hops: 2,
        dim: 6,
        ..overfit_config(11)
    };
    let run = || {
        let model = fresh_model(&docs, &cfg);
        let instances = build_all_instances(&docs, &model.vocab);
        train(&instances, model, &cfg).unwrap()
    };
    let (a, ha) = run();
    let (b, hb) = run();
    assert_eq!(a.to_bytes(), b.to_bytes());
    assert_eq!(ha, hb);
}

#[test]
fn zero_dropout_training_forward_equals_inference() {
    // dropout 0: the training forward pass is the inference pass
    let docs = trigger_corpus(4, 5);
    let cfg = TrainConfig {
        dropout: 0.0,
        ..overfit_config(5)
    };
    let model = fresh_model(&docs, &cfg);
    let inst = &build_all_instances(&docs, &model.vocab)[0];
    let (clause, emotion) = model.gather(inst).unwrap();
    let (_, train_pred, _) = model
        .backward_embedded(&clause, &emotion, inst.distance, inst.label, 1.0)
        .unwrap();
    assert_eq!(train_pred, model.forward(inst).unwrap());
}

#[test]
fn watched_cause_probability_rises() {
    let docs = trigger_corpus(20, 6);
    let cfg = TrainConfig {
        epochs: 20,
        dropout: 0.0,
        learning_rate: 0.05,
        ..overfit_config(6)
    };
    let model = fresh_model(&docs, &cfg);
    let instances = build_all_instances(&docs, &model.vocab);
    let watched_doc = &docs[0];
    let cause = watched_doc.annotations[0].cause_clauses[0];
    let watch = WatchedAnnotation {
        doc_id: watched_doc.doc_id.clone(),
        annotation_index: 0,
        instances: memcause::corpus::annotation_instances(watched_doc, 0, &model.vocab),
    };
    let mut seen = Vec::new();
    let (_, history) = train_with(&instances, model, &cfg, &[watch], |epoch, _| {
        seen.push(epoch);
        Ok(())
    })
    .unwrap();
    assert_eq!(seen, (1..=20).collect::<Vec<_>>());
    let rows = epoch_probability_trace(&history);
    assert_eq!(rows.len(), watched_doc.clauses.len() * 4);
    assert!(rows
        .iter()
        .all(|r| r.probability > 0.0 && r.probability < 1.0));
    let cause_probs: Vec<f64> = history
        .watched
        .iter()
        .map(|e| e.probabilities[cause])
        .collect();
    assert_eq!(
        history.watched.iter().map(|e| e.epoch).collect::<Vec<_>>(),
        vec![5, 10, 15, 20]
    );
    for w in cause_probs.windows(2) {
        assert!(w[1] >= w[0], "{cause_probs:?}");
    }
    let last = history.watched.last().unwrap();
    assert_eq!(memcause::eval::argmax(&last.probabilities), cause);
}

#[test]
fn protocol_single_run_on_separable_corpus() {
    let docs = trigger_corpus(20, 7);
    let cfg = ProtocolConfig {
        train: overfit_config(0),
        runs: 1,
        master_seed: 7,
        embeddings: EmbeddingSource::Random { scale: 0.1 },
        ..ProtocolConfig::default()
    };
    let rep = run_protocol(&docs, &cfg).unwrap();
    assert_eq!(rep.runs.len(), 1);
    assert_eq!(rep.runs[0].train_documents, 18);
    assert_eq!(rep.clause.mean_f1, 1.0);
}

#[test]
fn protocol_is_reproducible_and_parallel_safe() {
    let docs = trigger_corpus(12, 8);
    let cfg = ProtocolConfig {
        train: TrainConfig {
            epochs: 3,
            dim: 6,
            ..overfit_config(0)
        },
        runs: 3,
        master_seed: 21,
        ..ProtocolConfig::default()
    };
    let a = run_protocol(&docs, &cfg).unwrap();
    let b = run_protocol(
        &docs,
        &ProtocolConfig {
            jobs: 3,
            ..cfg.clone()
        },
    )
    .unwrap();
    assert_eq!(a, b);
    let mean = a.runs.iter().map(|r| r.clause.f1).sum::<f64>() / 3.0;
    assert!((mean - a.clause.mean_f1).abs() < 1e-12);
}

#[test]
fn skipgram_embeddings_feed_protocol() {
    let docs = trigger_corpus(10, 9);
    let cfg = ProtocolConfig {
        train: TrainConfig {
            epochs: 2,
            dim: 6,
            ..overfit_config(0)
        },
        runs: 2,
        embeddings: EmbeddingSource::Skipgram(Default::default()),
        ..ProtocolConfig::default()
    };
    let rep = run_protocol(&docs, &cfg).unwrap();
    assert_eq!(rep.clause.runs.len(), 2);
}
