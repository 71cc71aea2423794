//! Seeded synthetic data: a trigger-token corpus every model should be able
//! to fit, and random small model/instance pairs for gradient checks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Document, EmotionAnnotation, Instance, KeywordSpan, Vocabulary};
use crate::embeddings::random_init;
use crate::model::{Model, ModelKind};

pub const TRIGGER: &str = "TRIGGER";
pub const EMOTION_WORDS: [&str; 3] = ["happy", "sad", "angry"];
const FILLER_WORDS: usize = 30;

/// Documents of 3-6 clauses built from filler words. One clause holds an
/// emotion word; a different clause is the sole cause and is the only one
/// containing [`TRIGGER`], which is also its annotated keyword.
pub fn trigger_corpus(documents: usize, seed: u64) -> Vec<Document> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let filler = |rng: &mut ChaCha8Rng| format!("w{}", rng.gen_range(0..FILLER_WORDS));
    (0..documents)
        .map(|n| {
            let clause_count = rng.gen_range(3..=6);
            let mut clauses: Vec<Vec<String>> = (0..clause_count)
                .map(|_| {
                    (0..rng.gen_range(2..=5))
                        .map(|_| filler(&mut rng))
                        .collect()
                })
                .collect();
            let emotion_clause = rng.gen_range(0..clause_count);
            let cause = loop {
                let c = rng.gen_range(0..clause_count);
                if c != emotion_clause {
                    break c;
                }
            };
            let emotion_word = *EMOTION_WORDS.choose(&mut rng).expect("non-empty");
            let et = rng.gen_range(0..=clauses[emotion_clause].len());
            clauses[emotion_clause].insert(et, emotion_word.to_string());
            let tt = rng.gen_range(0..=clauses[cause].len());
            clauses[cause].insert(tt, TRIGGER.to_string());
            Document::new(
                format!("syn{n:03}"),
                clauses,
                vec![EmotionAnnotation {
                    emotion_word: emotion_word.to_string(),
                    emotion_clause,
                    emotion_token: et,
                    cause_clauses: vec![cause],
                    keyword_spans: vec![KeywordSpan {
                        clause: cause,
                        start: tt,
                        end: tt,
                    }],
                }],
            )
            .expect("synthetic documents are valid")
        })
        .collect()
}

/// A model over a small vocabulary with every parameter drawn from
/// `U[-scale, scale]`, and an instance of `clause_len` words (ids may repeat).
pub fn random_model_and_instance(
    kind: ModelKind,
    hops: usize,
    dim: usize,
    clause_len: usize,
    seed: u64,
    scale: f64,
) -> (Model, Instance) {
    let vocab = Vocabulary::from_words((0..clause_len + 2).map(|i| format!("v{i}")));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let embeddings = random_init(vocab.len(), dim, rng.gen(), scale).expect("dim >= 1");
    let size = vocab.len();
    let mut model =
        Model::new(kind, hops, vocab, embeddings, scale, rng.gen()).expect("valid model");
    model.bias = (2.0 * rng.gen::<f64>() - 1.0) * scale;
    let inst = Instance {
        doc_id: format!("rand{seed}"),
        annotation_index: 0,
        clause_index: 0,
        token_ids: (0..clause_len).map(|_| rng.gen_range(0..size)).collect(),
        emotion_word_id: rng.gen_range(0..size),
        distance: rng.gen_range(-3..=3),
        label: rng.gen(),
    };
    (model, inst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::corpus_stats;

    #[test]
    fn trigger_corpus_is_valid_and_deterministic() {
        let a = trigger_corpus(20, 3);
        assert_eq!(a, trigger_corpus(20, 3));
        let s = corpus_stats(&a);
        assert_eq!(s.documents, 20);
        assert_eq!(s.cause_clauses, 20);
        for d in &a {
            let ann = &d.annotations[0];
            for c in &d.clauses {
                let has = c.tokens.iter().any(|t| t == TRIGGER);
                assert_eq!(has, ann.is_cause(c.index));
            }
            let span = ann.keyword_spans[0];
            assert_eq!(d.clauses[span.clause].tokens[span.start], TRIGGER);
        }
    }
}
