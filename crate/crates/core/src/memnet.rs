//! Basic deep memory network over one clause.
//!
//! Each hop scores every word against the query by inner product,
//! normalises the scores with a softmax and reads the memory as the
//! attention-weighted sum of word vectors plus the query. The first hop is
//! queried with the emotion word; later hops with the previous hop's output.

use crate::error::{Error, Result};
use crate::vector::{add_assign, axpy, dot};

/// Everything one hop computed. `outputs` holds one vector for the basic
/// network and three (previous, current, following) for the slot network.
#[derive(Debug, Clone, PartialEq)]
pub struct HopTrace {
    pub scores: Vec<f64>,
    pub attention: Vec<f64>,
    pub outputs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AttentionTrace {
    pub hops: Vec<HopTrace>,
}

impl AttentionTrace {
    pub fn last(&self) -> &HopTrace {
        self.hops.last().expect("trace has at least one hop")
    }

    /// Final-hop outputs concatenated in slot order.
    pub fn final_features(&self) -> Vec<f64> {
        self.last().outputs.concat()
    }
}

pub(crate) fn check_dims(clause: &[Vec<f64>], query: &[f64]) -> Result<()> {
    if clause.is_empty() {
        return Err(Error::EmptyInput("clause has no words"));
    }
    match clause.iter().find(|e| e.len() != query.len()) {
        Some(e) => Err(Error::DimensionMismatch {
            expected: query.len(),
            found: e.len(),
        }),
        None => Ok(()),
    }
}

/// `m_i = e_i . query`
pub fn attention_scores(clause: &[Vec<f64>], query: &[f64]) -> Result<Vec<f64>> {
    check_dims(clause, query)?;
    Ok(clause.iter().map(|e| dot(e, query)).collect())
}

/// Numerically stable softmax.
pub fn softmax_norm(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&m| (m - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|x| x / total).collect()
}

/// Gradient of a softmax input given the gradient of its output.
pub(crate) fn softmax_backward(attention: &[f64], grad_attention: &[f64]) -> Vec<f64> {
    let inner = dot(attention, grad_attention);
    attention
        .iter()
        .zip(grad_attention)
        .map(|(a, g)| a * (g - inner))
        .collect()
}

/// `o = sum_i alpha_i e_i + query`
pub fn memory_read(clause: &[Vec<f64>], attention: &[f64], query: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; query.len()];
    for (e, &a) in clause.iter().zip(attention) {
        axpy(a, e, &mut out);
    }
    add_assign(&mut out, query);
    out
}

/// Runs `hops` hops starting from the emotion word embedding.
pub fn forward(clause: &[Vec<f64>], emotion: &[f64], hops: usize) -> Result<AttentionTrace> {
    if hops == 0 {
        return Err(Error::InvalidConfig("hop count must be >= 1".into()));
    }
    let mut trace = AttentionTrace::default();
    let mut query = emotion.to_vec();
    for _ in 0..hops {
        let scores = attention_scores(clause, &query)?;
        let attention = softmax_norm(&scores);
        let out = memory_read(clause, &attention, &query);
        query = out.clone();
        trace.hops.push(HopTrace {
            scores,
            attention,
            outputs: vec![out],
        });
    }
    Ok(trace)
}

/// Back-propagates `grad_output` (gradient w.r.t. the final hop output)
/// through every hop. Returns gradients w.r.t. each clause word vector and
/// w.r.t. the emotion word vector.
pub fn backward(
    clause: &[Vec<f64>],
    emotion: &[f64],
    trace: &AttentionTrace,
    grad_output: &[f64],
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let d = emotion.len();
    let mut grad_clause = vec![vec![0.0; d]; clause.len()];
    let mut grad_out = grad_output.to_vec();
    for h in (0..trace.hops.len()).rev() {
        let hop = &trace.hops[h];
        let query: &[f64] = if h == 0 {
            emotion
        } else {
            &trace.hops[h - 1].outputs[0]
        };
        // o = sum a_i e_i + q
        let mut grad_query = grad_out.clone();
        let grad_attention: Vec<f64> = clause.iter().map(|e| dot(e, &grad_out)).collect();
        for (g, &a) in grad_clause.iter_mut().zip(&hop.attention) {
            axpy(a, &grad_out, g);
        }
        // m_i = e_i . q
        let grad_scores = softmax_backward(&hop.attention, &grad_attention);
        for ((g, e), &gm) in grad_clause.iter_mut().zip(clause).zip(&grad_scores) {
            axpy(gm, query, g);
            axpy(gm, e, &mut grad_query);
        }
        grad_out = grad_query;
    }
    (grad_clause, grad_out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn scores_hand_computed() {
        let clause = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        assert_eq!(
            attention_scores(&clause, &[1.0, 1.0]).unwrap(),
            vec![3.0, 7.0]
        );
    }

    #[test]
    fn orthogonal_word_scores_zero() {
        let clause = vec![vec![1.0, 0.0]];
        assert_eq!(attention_scores(&clause, &[0.0, 5.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn scores_scale_with_query() {
        let clause = vec![vec![0.3, -1.2], vec![2.0, 0.5]];
        let s1 = attention_scores(&clause, &[0.7, 0.1]).unwrap();
        let s4 = attention_scores(&clause, &[2.8, 0.4]).unwrap();
        for (a, b) in s1.iter().zip(&s4) {
            assert!((4.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn scores_reject_dimension_mismatch() {
        let clause = vec![vec![1.0, 2.0, 3.0]];
        assert!(matches!(
            attention_scores(&clause, &[1.0, 1.0]),
            Err(Error::DimensionMismatch {
                expected: 2,
                found: 3
            })
        ));
    }

    #[test]
    fn softmax_closed_forms() {
        assert_eq!(softmax_norm(&[2.0; 4]), vec![0.25; 4]);
        let a = softmax_norm(&[0.0, 3f64.ln()]);
        assert!((a[0] - 0.25).abs() < 1e-15 && (a[1] - 0.75).abs() < 1e-15);
        assert_eq!(softmax_norm(&[1000.0, 1000.0]), vec![0.5, 0.5]);
    }

    #[test]
    fn memory_read_cases() {
        let e1 = vec![1.0, -2.0];
        let q = vec![0.5, 0.5];
        assert_eq!(
            memory_read(std::slice::from_ref(&e1), &[1.0], &q),
            vec![1.5, -1.5]
        );
        let clause = vec![vec![9.0, 9.0], e1.clone(), vec![-3.0, 1.0]];
        assert_eq!(memory_read(&clause, &[0.0, 1.0, 0.0], &q), vec![1.5, -1.5]);
        let same = vec![e1.clone(); 4];
        assert_eq!(memory_read(&same, &[0.25; 4], &q), vec![1.5, -1.5]);
    }

    #[test]
    fn empty_clause_rejected() {
        assert!(forward(&[], &[1.0], 1).is_err());
        assert!(forward(&[vec![1.0]], &[1.0], 0).is_err());
    }

    #[test]
    fn first_hop_matches_single_hop_model() {
        let clause = vec![vec![0.1, 0.4, -0.2], vec![0.3, -0.5, 0.9]];
        let e = [0.2, 0.1, -0.7];
        let deep = forward(&clause, &e, 3).unwrap();
        let shallow = forward(&clause, &e, 1).unwrap();
        assert_eq!(deep.hops[0], shallow.hops[0]);
        assert_eq!(deep.hops.len(), 3);
    }

    proptest! {
        #[test]
        fn softmax_is_normalised(scores in prop::collection::vec(-50.0f64..50.0, 1..20)) {
            let a = softmax_norm(&scores);
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(a.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }

        #[test]
        fn softmax_shift_invariant(
            scores in prop::collection::vec(-50.0f64..50.0, 1..20),
            shift in -100.0f64..100.0,
        ) {
            let a = softmax_norm(&scores);
            let shifted: Vec<f64> = scores.iter().map(|m| m + shift).collect();
            let b = softmax_norm(&shifted);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
