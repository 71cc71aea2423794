//! Convolutional multiple-slot memory network.
//!
//! Attention is computed per position from a width-3 window (zero padded at
//! both clause ends), then shared by three slot reads over the left-shifted,
//! centred and right-shifted word sequences. Deeper hops score each window
//! member against its own slot's previous output.

use crate::error::Result;
use crate::memnet::{check_dims, softmax_backward, softmax_norm, AttentionTrace, HopTrace};
use crate::vector::{add_assign, axpy, dot};

/// The three slot outputs of one hop.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotOutputs {
    pub previous: Vec<f64>,
    pub current: Vec<f64>,
    pub following: Vec<f64>,
}

impl SlotOutputs {
    /// The same vector in all three slots, as used by the first hop.
    pub fn uniform(query: &[f64]) -> Self {
        SlotOutputs {
            previous: query.to_vec(),
            current: query.to_vec(),
            following: query.to_vec(),
        }
    }

    pub fn from_hop(hop: &HopTrace) -> Self {
        let [previous, current, following] =
            <[Vec<f64>; 3]>::try_from(hop.outputs.clone()).expect("slot hop has three outputs");
        SlotOutputs {
            previous,
            current,
            following,
        }
    }

    pub fn into_vec(self) -> Vec<Vec<f64>> {
        vec![self.previous, self.current, self.following]
    }

    /// `[previous ; current ; following]`
    pub fn concat(&self) -> Vec<f64> {
        [&self.previous[..], &self.current, &self.following].concat()
    }
}

/// Word at `pos - 1` for the previous slot, `pos` for current, `pos + 1` for
/// following; `None` means the zero padding vector.
fn neighbour(clause: &[Vec<f64>], pos: usize, offset: isize) -> Option<&[f64]> {
    let j = pos as isize + offset;
    if j < 0 {
        None
    } else {
        clause.get(j as usize).map(Vec::as_slice)
    }
}

const OFFSETS: [isize; 3] = [-1, 0, 1];

/// `m'_i = e_{i-1}.E + e_i.E + e_{i+1}.E` with zero padding.
pub fn conv_scores_first_hop(clause: &[Vec<f64>], emotion: &[f64]) -> Result<Vec<f64>> {
    check_dims(clause, emotion)?;
    Ok((0..clause.len())
        .map(|i| {
            let mut m = 0.0;
            for off in OFFSETS {
                if let Some(e) = neighbour(clause, i, off) {
                    m += dot(e, emotion);
                }
            }
            m
        })
        .collect())
}

/// `m'_i = e_{i-1}.o_prev + e_i.o_cur + e_{i+1}.o_fol` with zero padding.
pub fn conv_scores_multi_query(clause: &[Vec<f64>], queries: &SlotOutputs) -> Result<Vec<f64>> {
    check_dims(clause, &queries.previous)?;
    check_dims(clause, &queries.current)?;
    check_dims(clause, &queries.following)?;
    let qs = [&queries.previous, &queries.current, &queries.following];
    Ok((0..clause.len())
        .map(|i| {
            let mut m = 0.0;
            for (off, q) in OFFSETS.into_iter().zip(qs) {
                if let Some(e) = neighbour(clause, i, off) {
                    m += dot(e, q);
                }
            }
            m
        })
        .collect())
}

/// Position-attention-weighted reads of the three shifted sequences, each
/// plus its slot query.
pub fn slot_read(clause: &[Vec<f64>], attention: &[f64], queries: &SlotOutputs) -> SlotOutputs {
    let d = queries.current.len();
    let read = |off: isize, q: &[f64]| {
        let mut out = vec![0.0; d];
        for (i, &a) in attention.iter().enumerate() {
            if let Some(e) = neighbour(clause, i, off) {
                axpy(a, e, &mut out);
            }
        }
        add_assign(&mut out, q);
        out
    };
    SlotOutputs {
        previous: read(-1, &queries.previous),
        current: read(0, &queries.current),
        following: read(1, &queries.following),
    }
}

pub fn forward(clause: &[Vec<f64>], emotion: &[f64], hops: usize) -> Result<AttentionTrace> {
    if hops == 0 {
        return Err(crate::Error::InvalidConfig("hop count must be >= 1".into()));
    }
    let mut trace = AttentionTrace::default();
    let mut queries = SlotOutputs::uniform(emotion);
    for h in 0..hops {
        let scores = if h == 0 {
            conv_scores_first_hop(clause, emotion)?
        } else {
            conv_scores_multi_query(clause, &queries)?
        };
        let attention = softmax_norm(&scores);
        let outputs = slot_read(clause, &attention, &queries);
        queries = outputs.clone();
        trace.hops.push(HopTrace {
            scores,
            attention,
            outputs: outputs.into_vec(),
        });
    }
    Ok(trace)
}

/// Back-propagates `grad_output` (length `3d`, gradient w.r.t. the
/// concatenated final slot outputs). Returns gradients w.r.t. each clause
/// word vector and w.r.t. the emotion word vector.
pub fn backward(
    clause: &[Vec<f64>],
    emotion: &[f64],
    trace: &AttentionTrace,
    grad_output: &[f64],
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let d = emotion.len();
    let k = clause.len();
    let mut grad_clause = vec![vec![0.0; d]; k];
    let mut grad_slots: Vec<Vec<f64>> = grad_output.chunks(d).map(<[f64]>::to_vec).collect();
    let uniform = vec![emotion.to_vec(); 3];

    for h in (0..trace.hops.len()).rev() {
        let hop = &trace.hops[h];
        let queries: &[Vec<f64>] = if h == 0 {
            &uniform
        } else {
            &trace.hops[h - 1].outputs
        };
        // o_s = sum_i a_i e_{i+off_s} + q_s
        let mut grad_queries = grad_slots.clone();
        let mut grad_attention = vec![0.0; k];
        for (s, off) in OFFSETS.into_iter().enumerate() {
            for (i, ga) in grad_attention.iter_mut().enumerate() {
                if let Some(e) = neighbour(clause, i, off) {
                    let j = (i as isize + off) as usize;
                    *ga += dot(e, &grad_slots[s]);
                    axpy(hop.attention[i], &grad_slots[s], &mut grad_clause[j]);
                }
            }
        }
        // m_i = sum_s e_{i+off_s} . q_s
        let grad_scores = softmax_backward(&hop.attention, &grad_attention);
        for (s, off) in OFFSETS.into_iter().enumerate() {
            for (i, &gm) in grad_scores.iter().enumerate() {
                if let Some(e) = neighbour(clause, i, off) {
                    let j = (i as isize + off) as usize;
                    axpy(gm, &queries[s], &mut grad_clause[j]);
                    axpy(gm, e, &mut grad_queries[s]);
                }
            }
        }
        grad_slots = grad_queries;
    }
    // all three first-hop queries are the emotion vector
    let mut grad_emotion = vec![0.0; d];
    for g in &grad_slots {
        add_assign(&mut grad_emotion, g);
    }
    (grad_clause, grad_emotion)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_word_first_hop_sees_only_itself() {
        let clause = vec![vec![0.5, -1.0]];
        let e = [2.0, 1.0];
        assert_eq!(conv_scores_first_hop(&clause, &e).unwrap(), vec![0.0]);
        let clause = vec![vec![0.5, 1.0]];
        assert_eq!(conv_scores_first_hop(&clause, &e).unwrap(), vec![2.0]);
    }

    #[test]
    fn padding_gives_three_to_two_ratio() {
        let clause = vec![vec![0.5, 0.25]; 5];
        let e = [1.0, 2.0];
        let x = 1.0; // 0.5 + 0.5
        let s = conv_scores_first_hop(&clause, &e).unwrap();
        assert_eq!(s, vec![2.0 * x, 3.0 * x, 3.0 * x, 3.0 * x, 2.0 * x]);
    }

    #[test]
    fn hand_computed_first_hop() {
        // d=2, k=3
        let clause = vec![vec![1.0, 0.0], vec![0.0, 2.0], vec![-1.0, 1.0]];
        let e = [0.5, 0.25];
        // e.E per word: 0.5, 0.5, -0.25
        let s = conv_scores_first_hop(&clause, &e).unwrap();
        assert_eq!(s, vec![1.0, 0.75, 0.25]);
    }

    #[test]
    fn equal_queries_reduce_to_first_hop_bitwise() {
        let clause = vec![
            vec![0.13, -0.7, 0.3],
            vec![0.9, 0.11, -0.27],
            vec![0.01, 0.4, 0.77],
        ];
        let e = [0.31, -0.17, 0.59];
        let a = conv_scores_first_hop(&clause, &e).unwrap();
        let b = conv_scores_multi_query(&clause, &SlotOutputs::uniform(&e)).unwrap();
        assert_eq!(
            a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn current_only_query_is_basic_score() {
        let clause = vec![vec![0.2, 0.4], vec![-0.6, 0.1], vec![0.3, 0.3]];
        let q = SlotOutputs {
            previous: vec![0.0, 0.0],
            current: vec![1.5, -0.5],
            following: vec![0.0, 0.0],
        };
        let s = conv_scores_multi_query(&clause, &q).unwrap();
        let basic = crate::memnet::attention_scores(&clause, &q.current).unwrap();
        for (x, y) in s.iter().zip(&basic) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn slot_read_single_word() {
        let clause = vec![vec![1.0, 2.0]];
        let q = SlotOutputs::uniform(&[0.5, 0.5]);
        let o = slot_read(&clause, &[1.0], &q);
        assert_eq!(o.previous, vec![0.5, 0.5]);
        assert_eq!(o.current, vec![1.5, 2.5]);
        assert_eq!(o.following, vec![0.5, 0.5]);
    }

    #[test]
    fn slot_read_one_hot() {
        let clause = vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![2.0, 2.0],
            vec![3.0, -3.0],
        ];
        let q = SlotOutputs::uniform(&[0.0, 0.0]);
        let o = slot_read(&clause, &[0.0, 0.0, 1.0, 0.0], &q);
        assert_eq!(o.previous, clause[1]);
        assert_eq!(o.current, clause[2]);
        assert_eq!(o.following, clause[3]);
    }

    #[test]
    fn slot_read_uniform_attention_loses_one_padded_term() {
        let k = 8;
        let e = vec![0.5, -0.25];
        let clause = vec![e.clone(); k];
        let q = SlotOutputs::uniform(&[0.0, 0.0]);
        let o = slot_read(&clause, &vec![1.0 / k as f64; k], &q);
        let frac = (k - 1) as f64 / k as f64;
        for (j, &ej) in e.iter().enumerate() {
            assert!((o.current[j] - ej).abs() < 1e-15);
            assert!((o.previous[j] - ej * frac).abs() < 1e-15);
            assert!((o.following[j] - ej * frac).abs() < 1e-15);
        }
    }

    #[test]
    fn trace_has_three_outputs_per_hop() {
        let clause = vec![vec![0.1, 0.2], vec![0.3, -0.4]];
        let t = forward(&clause, &[0.5, 0.5], 3).unwrap();
        assert_eq!(t.hops.len(), 3);
        assert!(t.hops.iter().all(|h| h.outputs.len() == 3));
        assert_eq!(t.final_features().len(), 6);
    }

    #[test]
    fn padded_positions_get_no_gradient() {
        // The backward pass only ever writes to real positions; a one-word
        // clause has exactly one gradient row.
        let clause = vec![vec![0.4, -0.1]];
        let e = [0.3, 0.2];
        let t = forward(&clause, &e, 2).unwrap();
        let (gc, ge) = backward(&clause, &e, &t, &[1.0; 6]);
        assert_eq!(gc.len(), 1);
        assert!(ge.iter().all(|x| x.is_finite()));
    }
}
