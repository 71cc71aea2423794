//! Analytic gradients against central finite differences.

use memcause::model::ModelKind;
use memcause::synthetic::random_model_and_instance;
use memcause::training::{compare_gradients, gradient_check};

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn sweep(kind: ModelKind) -> f64 {
    let mut worst: f64 = 0.0;
    for hops in 1..=3 {
        for dim in [4, 20] {
            for k in [1, 2, 5] {
                for seed in 0..10 {
                    let (m, inst) = random_model_and_instance(kind, hops, dim, k, seed, 0.5);
                    let r = gradient_check(&m, &inst, EPS, TOL).unwrap();
                    assert!(
                        r.passed(),
                        "{kind} H={hops} d={dim} k={k} seed={seed}: {:#?}",
                        r.blocks
                    );
                    worst = worst.max(r.max_rel_error());
                }
            }
        }
    }
    worst
}

#[test]
fn basic_gradients_match_finite_differences() {
    let worst = sweep(ModelKind::Basic);
    eprintln!("basic worst relative error {worst:e}");
}

#[test]
fn convms_gradients_match_finite_differences() {
    let worst = sweep(ModelKind::ConvMs);
    eprintln!("convms worst relative error {worst:e}");
}

#[test]
fn linear_head_passes_tight_tolerance() {
    for kind in [ModelKind::Basic, ModelKind::ConvMs] {
        let (m, inst) = random_model_and_instance(kind, 3, 8, 4, 42, 0.5);
        let r = gradient_check(&m, &inst, EPS, 1e-6).unwrap();
        for b in r
            .blocks
            .iter()
            .filter(|b| ["head", "distance", "bias"].contains(&b.block.as_str()))
        {
            assert!(b.passed, "{kind} {b:?}");
        }
    }
}

#[test]
fn corrupted_gradient_is_flagged() {
    let (m, inst) = random_model_and_instance(ModelKind::ConvMs, 3, 20, 5, 7, 0.5);
    let (_, mut g) = m.loss_and_gradients(&inst, false, 1.0).unwrap();
    let id = *g.embeddings.keys().next().unwrap();
    g.embeddings.get_mut(&id).unwrap()[0] += 1.0;
    let r = compare_gradients(&m, &inst, &g, EPS, TOL).unwrap();
    assert!(!r.passed());
    let bad: Vec<_> = r
        .blocks
        .iter()
        .filter(|b| !b.passed)
        .map(|b| b.block.as_str())
        .collect();
    assert_eq!(bad, vec!["embeddings"]);
}
