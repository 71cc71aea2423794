//! Forward passes against independently computed values and structural
//! properties of the two networks.

use memcause::corpus::{Instance, Vocabulary};
use memcause::embeddings::EmbeddingMatrix;
use memcause::model::{Model, ModelKind};
use memcause::synthetic::random_model_and_instance;
use memcause::{convms, memnet};
use proptest::prelude::*;

/// Vocabulary `<unk>, w1.., emo` with the given word columns and emotion column.
fn fixed_model(
    kind: ModelKind,
    hops: usize,
    words: &[[f64; 2]],
    emotion: [f64; 2],
    head: Vec<f64>,
    bias: f64,
) -> (Model, Instance) {
    let vocab = Vocabulary::from_words(
        (1..=words.len())
            .map(|i| format!("w{i}"))
            .chain(["emo".to_string()]),
    );
    let mut cols = vec![0.0, 0.0];
    for w in words {
        cols.extend_from_slice(w);
    }
    cols.extend_from_slice(&emotion);
    let embeddings = EmbeddingMatrix::from_columns(2, cols).unwrap();
    let model = Model {
        kind,
        hops,
        vocab,
        embeddings,
        head,
        bias,
        use_bias: true,
    };
    model.validate().unwrap();
    let inst = Instance {
        doc_id: "oracle".into(),
        annotation_index: 0,
        clause_index: 0,
        token_ids: (1..=words.len()).collect(),
        emotion_word_id: words.len() + 1,
        distance: -1,
        label: true,
    };
    (model, inst)
}

// Expected probabilities below were computed scalar by scalar outside this
// crate (plain float arithmetic, no shared code).

#[test]
fn basic_single_hop_matches_scalar_oracle() {
    let (m, inst) = fixed_model(
        ModelKind::Basic,
        1,
        &[[0.1, 0.2], [-0.3, 0.4]],
        [0.5, -0.1],
        vec![0.7, -0.2, 0.05],
        0.1,
    );
    let p = m.probability(&inst).unwrap();
    assert!((p - 0.5762820905010373).abs() < 1e-14, "{p}");
}

#[test]
fn convms_single_hop_matches_scalar_oracle() {
    let (m, inst) = fixed_model(
        ModelKind::ConvMs,
        1,
        &[[0.1, 0.2], [-0.3, 0.4]],
        [0.5, -0.1],
        vec![0.3, -0.4, 0.7, -0.2, 0.25, 0.6, 0.05],
        0.1,
    );
    let p = m.probability(&inst).unwrap();
    assert!((p - 0.6462280583309002).abs() < 1e-14, "{p}");
}

#[test]
fn convms_two_hops_matches_scalar_oracle() {
    let (m, mut inst) = fixed_model(
        ModelKind::ConvMs,
        2,
        &[[0.1, 0.2], [-0.3, 0.4], [0.25, -0.15]],
        [0.5, -0.1],
        vec![0.3, -0.4, 0.7, -0.2, 0.25, 0.6, 0.05],
        -0.3,
    );
    inst.distance = 2;
    let pred = m.forward(&inst).unwrap();
    assert!((pred.probability - 0.5629436914691546).abs() < 1e-14);
    let hop1 = [0.3061332071268671, 0.3521370071181678, 0.34172978575496515];
    let hop2 = [0.3015763322492202, 0.354010964147109, 0.34441270360367077];
    for (got, want) in pred.trace.hops[0].attention.iter().zip(hop1) {
        assert!((got - want).abs() < 1e-14);
    }
    for (got, want) in pred.trace.hops[1].attention.iter().zip(hop2) {
        assert!((got - want).abs() < 1e-14);
    }
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head);
            out.push(p);
        }
    }
    out
}

#[test]
fn basic_network_ignores_word_order() {
    for k in 1..=5 {
        for seed in 0..3 {
            let (m, inst) = random_model_and_instance(ModelKind::Basic, 3, 6, k, seed, 0.8);
            let base = m.probability(&inst).unwrap();
            for perm in permutations(&inst.token_ids) {
                let p = m
                    .probability(&Instance {
                        token_ids: perm,
                        ..inst.clone()
                    })
                    .unwrap();
                assert!((p - base).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn convms_is_order_sensitive() {
    let mut sensitive = 0;
    for seed in 0..100 {
        let (m, mut inst) = random_model_and_instance(ModelKind::ConvMs, 1, 6, 3, seed, 0.8);
        // distinct words so some permutation is a genuine reordering
        inst.token_ids = vec![1, 2, 3];
        let base = m.probability(&inst).unwrap();
        if permutations(&inst.token_ids).into_iter().any(|perm| {
            (m.probability(&Instance {
                token_ids: perm,
                ..inst.clone()
            })
            .unwrap()
                - base)
                .abs()
                > 1e-12
        }) {
            sensitive += 1;
        }
    }
    assert_eq!(sensitive, 100);
}

#[test]
fn single_word_convms_equals_constructed_basic_model() {
    for seed in 0..20 {
        let (conv, inst) = random_model_and_instance(ModelKind::ConvMs, 1, 5, 1, seed, 0.7);
        let d = conv.dim();
        let emotion = conv.embeddings.column(inst.emotion_word_id).to_vec();
        // previous/following slots read only padding, leaving the emotion vector
        let dot = |w: &[f64]| w.iter().zip(&emotion).map(|(a, b)| a * b).sum::<f64>();
        let mut head = conv.head[d..2 * d].to_vec();
        head.push(conv.head[3 * d]);
        let basic = Model {
            kind: ModelKind::Basic,
            head,
            bias: conv.bias + dot(&conv.head[..d]) + dot(&conv.head[2 * d..3 * d]),
            ..conv.clone()
        };
        let a = conv.probability(&inst).unwrap();
        let b = basic.probability(&inst).unwrap();
        assert!((a - b).abs() < 1e-12, "seed {seed}: {a} vs {b}");
    }
}

proptest! {
    #[test]
    fn first_hop_trace_is_independent_of_depth(seed in 0u64..1000, k in 1usize..6) {
        for kind in [ModelKind::Basic, ModelKind::ConvMs] {
            let (deep, inst) = random_model_and_instance(kind, 3, 4, k, seed, 0.6);
            let shallow = Model { hops: 1, ..deep.clone() };
            let a = deep.forward(&inst).unwrap();
            let b = shallow.forward(&inst).unwrap();
            prop_assert_eq!(&a.trace.hops[0], &b.trace.hops[0]);
        }
    }

    #[test]
    fn position_attention_is_normalised(seed in 0u64..1000, k in 1usize..8, hops in 1usize..4) {
        let (m, inst) = random_model_and_instance(ModelKind::ConvMs, hops, 4, k, seed, 2.0);
        let (clause, emotion) = m.gather(&inst).unwrap();
        let trace = convms::forward(&clause, &emotion, hops).unwrap();
        for h in &trace.hops {
            prop_assert!((h.attention.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(h.attention.iter().all(|a| (0.0..=1.0).contains(a)));
        }
        let trace = memnet::forward(&clause, &emotion, hops).unwrap();
        prop_assert_eq!(trace.hops.len(), hops);
    }
}
