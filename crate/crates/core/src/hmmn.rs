//! The holistic cell, hop stacking, affinity scoring and the single-memory
//! end-to-end baseline.
//!
//! For answer choice `k` and hop `t` the cell computes
//!
//! ```text
//! q*  = u_{t-1} + a_k + λ q           (a_k dropped without answer attention)
//! δ   = softmax(Sᵀ q*),   S* = S diag(δ)
//! ε   = Vᵀ S*,            V* = S* εᵀ
//! ζ   = softmax(V*ᵀ q*),  u_t = V* ζ
//! ```
//!
//! starting from `u_0 = 0`, and scores the choice with `f_k = (q + u_T)ᵀ a_k`.

use serde::{Deserialize, Serialize};

use crate::attention::{
    coattend, query_to_context, summarize_with_weights, CoAttention, ReweightedMemory,
};
use crate::encodings::{EncodedInstance, ModelParams};
use crate::error::{Error, Result};
use crate::numerics::{argmax, dot, softmax, Mat};

/// Weights recorded for one hop of one answer choice.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HopTrace {
    /// Subtitle weights, length `m`.
    pub delta: Vec<f64>,
    /// Raw frame/subtitle coattention, `n x m`.
    pub epsilon: Mat,
    /// Frame weights, length `n`.
    pub zeta: Vec<f64>,
}

/// Per-call attention record.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AttentionTrace {
    /// `hops[k][t]` is hop `t + 1` for answer choice `k`.
    Hmmn { hops: Vec<Vec<HopTrace>> },
    /// Baseline read-out weights `α`, one vector per hop.
    Memory { alpha: Vec<Vec<f64>> },
}

/// Affinities, their softmax, and the chosen answer.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Prediction {
    pub scores: Vec<f64>,
    pub probs: Vec<f64>,
    pub argmax: usize,
    pub trace: Option<AttentionTrace>,
}

impl Prediction {
    pub fn from_scores(scores: Vec<f64>, trace: Option<AttentionTrace>) -> Result<Self> {
        let probs = softmax(&scores)?;
        let argmax = argmax(&probs);
        Ok(Prediction {
            scores,
            probs,
            argmax,
            trace,
        })
    }
}

/// How the cell forms its retrieval query and what it keeps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellOptions {
    pub lambda: f64,
    pub answer_attention: bool,
    pub normalize_coattention: bool,
}

impl CellOptions {
    pub fn from_params(params: &ModelParams, answer_attention: bool) -> Self {
        CellOptions {
            lambda: params.lambda,
            answer_attention,
            normalize_coattention: params.normalize_coattention,
        }
    }
}

/// Every intermediate of one hop; the backward pass consumes this.
#[derive(Clone, Debug)]
pub struct HopOutput {
    pub q_star: Vec<f64>,
    pub reweighted: ReweightedMemory,
    pub coattention: CoAttention,
    pub zeta: Vec<f64>,
    pub u: Vec<f64>,
}

impl HopOutput {
    pub fn trace(&self) -> HopTrace {
        HopTrace {
            delta: self.reweighted.weights.clone(),
            epsilon: self.coattention.raw.clone(),
            zeta: self.zeta.clone(),
        }
    }
}

pub(crate) fn hop_full(
    q: &[f64],
    a_k: &[f64],
    u_prev: &[f64],
    s: &Mat,
    v: &Mat,
    opts: CellOptions,
) -> Result<HopOutput> {
    let d = q.len();
    if a_k.len() != d || u_prev.len() != d || s.rows() != d || v.rows() != d {
        return Err(Error::dim(
            "hmmn_hop",
            format!(
                "q: {}, a_k: {}, u_prev: {}, S: {:?}, V: {:?}",
                d,
                a_k.len(),
                u_prev.len(),
                s.shape(),
                v.shape()
            ),
        ));
    }
    let q_star: Vec<f64> = (0..d)
        .map(|r| {
            if opts.answer_attention {
                u_prev[r] + a_k[r] + opts.lambda * q[r]
            } else {
                u_prev[r] + opts.lambda * q[r]
            }
        })
        .collect();
    let reweighted = query_to_context(&q_star, s)?;
    let coattention = coattend(v, &reweighted.memory, opts.normalize_coattention)?;
    let summary = summarize_with_weights(&q_star, &coattention.output)?;
    Ok(HopOutput {
        q_star,
        reweighted,
        coattention,
        zeta: summary.weights,
        u: summary.output,
    })
}

/// One hop with answer attention: returns `u_t` and the recorded weights.
pub fn hmmn_hop(
    q: &[f64],
    a_k: &[f64],
    u_prev: &[f64],
    s: &Mat,
    v: &Mat,
    lambda: f64,
) -> Result<(Vec<f64>, HopTrace)> {
    if lambda < 0.0 {
        return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
    }
    let opts = CellOptions {
        lambda,
        answer_attention: true,
        normalize_coattention: false,
    };
    let out = hop_full(q, a_k, u_prev, s, v, opts)?;
    let trace = out.trace();
    Ok((out.u, trace))
}

/// All hops for answer choice `k`, first to last.
pub(crate) fn answer_chain(
    enc: &EncodedInstance,
    k: usize,
    hops: usize,
    opts: CellOptions,
) -> Result<Vec<HopOutput>> {
    let d = enc.q.len();
    let a_k = enc.a.col(k);
    let mut outs: Vec<HopOutput> = Vec::with_capacity(hops);
    for _ in 0..hops {
        let zero;
        let u_prev = match outs.last() {
            Some(prev) => prev.u.as_slice(),
            None => {
                zero = vec![0.0; d];
                zero.as_slice()
            }
        };
        let out = hop_full(&enc.q, a_k, u_prev, &enc.s, &enc.v, opts)?;
        outs.push(out);
    }
    Ok(outs)
}

pub(crate) fn affinity(q: &[f64], u: &[f64], a_k: &[f64]) -> f64 {
    let qu: Vec<f64> = q.iter().zip(u).map(|(x, y)| x + y).collect();
    dot(&qu, a_k)
}

/// Stacked cells for every answer choice followed by the affinity softmax.
pub fn hmmn_forward_with(
    enc: &EncodedInstance,
    hops: usize,
    opts: CellOptions,
    keep_trace: bool,
) -> Result<Prediction> {
    if hops == 0 {
        return Err(Error::Config("hop count must be >= 1".into()));
    }
    if enc.a.rows() != enc.q.len() {
        return Err(Error::dim(
            "hmmn_forward",
            "answer matrix and question differ in d",
        ));
    }
    let mut scores = Vec::with_capacity(enc.a.cols());
    let mut traces = Vec::new();
    for k in 0..enc.a.cols() {
        let chain = answer_chain(enc, k, hops, opts)?;
        let u_t = &chain.last().expect("hops >= 1").u;
        scores.push(affinity(&enc.q, u_t, enc.a.col(k)));
        if keep_trace {
            traces.push(chain.iter().map(HopOutput::trace).collect());
        }
    }
    let trace = keep_trace.then_some(AttentionTrace::Hmmn { hops: traces });
    Prediction::from_scores(scores, trace)
}

/// HMMN prediction with the parameters' `λ`, hop count and coattention mode.
pub fn hmmn_forward(
    enc: &EncodedInstance,
    params: &ModelParams,
    answer_attention: bool,
    keep_trace: bool,
) -> Result<Prediction> {
    hmmn_forward_with(
        enc,
        params.hops,
        CellOptions::from_params(params, answer_attention),
        keep_trace,
    )
}

/// Intermediates of the baseline read-out, one entry per hop.
#[derive(Clone, Debug)]
pub(crate) struct MemoryHop {
    pub query: Vec<f64>,
    pub alpha: Vec<f64>,
    pub u: Vec<f64>,
}

pub(crate) fn memory_chain(
    q: &[f64],
    memory: &Mat,
    hops: usize,
    query_scale: f64,
) -> Result<Vec<MemoryHop>> {
    let d = q.len();
    let mut out: Vec<MemoryHop> = Vec::with_capacity(hops);
    for _ in 0..hops {
        let query: Vec<f64> = match out.last() {
            Some(prev) => (0..d).map(|r| prev.u[r] + query_scale * q[r]).collect(),
            None => (0..d).map(|r| 0.0 + query_scale * q[r]).collect(),
        };
        let summary = summarize_with_weights(&query, memory)?;
        out.push(MemoryHop {
            query,
            alpha: summary.weights,
            u: summary.output,
        });
    }
    Ok(out)
}

/// Baseline with a retrieval query that starts from `query_scale · q`.
///
/// `query_scale = 1` is the plain end-to-end memory network; with
/// `query_scale = λ` the one-hop read-out coincides with a one-hop cell
/// that has no answer attention.
pub fn e2emn_forward_scaled(
    q: &[f64],
    memory: &Mat,
    a: &Mat,
    hops: usize,
    query_scale: f64,
    keep_trace: bool,
) -> Result<Prediction> {
    if hops == 0 {
        return Err(Error::Config("hop count must be >= 1".into()));
    }
    if memory.rows() != q.len() || a.rows() != q.len() {
        return Err(Error::dim(
            "e2emn_forward",
            format!(
                "q: {}, memory: {:?}, A: {:?}",
                q.len(),
                memory.shape(),
                a.shape()
            ),
        ));
    }
    let chain = memory_chain(q, memory, hops, query_scale)?;
    let u = &chain.last().expect("hops >= 1").u;
    let qu: Vec<f64> = q.iter().zip(u).map(|(x, y)| x + y).collect();
    let scores = a.tr_mul_vec(&qu)?;
    let trace = keep_trace.then(|| AttentionTrace::Memory {
        alpha: chain.into_iter().map(|h| h.alpha).collect(),
    });
    Prediction::from_scores(scores, trace)
}

/// `u = summarize(query, M)` iterated with `query ← q + u`; `p = softmax((q + u)ᵀ A)`.
pub fn e2emn_forward(q: &[f64], memory: &Mat, a: &Mat, hops: usize) -> Result<Prediction> {
    e2emn_forward_scaled(q, memory, a, hops, 1.0, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use hmmn_oracle as oracle;

    fn rand_mat(rng: &mut oracle::Lcg, rows: usize, cols: usize) -> Mat {
        Mat::from_fn(rows, cols, |_, _| rng.uniform(-1.0, 1.0))
    }

    fn rand_vec(rng: &mut oracle::Lcg, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()
    }

    fn cols(m: &Mat) -> oracle::Cols {
        m.columns().map(|c| c.to_vec()).collect()
    }

    fn random_encoded(seed: u64, d: usize, m: usize, n: usize) -> EncodedInstance {
        let mut rng = oracle::Lcg::new(seed);
        EncodedInstance {
            s: rand_mat(&mut rng, d, m),
            v: rand_mat(&mut rng, d, n),
            q: rand_vec(&mut rng, d),
            a: rand_mat(&mut rng, d, 5),
            gold: 0,
        }
    }

    #[test]
    fn single_slot_chain() {
        let s = Mat::from_columns(3, &[vec![1.0, 0.5, -0.5]]).unwrap();
        let v = Mat::from_columns(3, &[vec![0.2, -1.0, 2.0]]).unwrap();
        let (u, trace) =
            hmmn_hop(&[0.1, 0.2, 0.3], &[1.0, 1.0, 1.0], &[0.0; 3], &s, &v, 0.45).unwrap();
        assert_eq!(trace.delta, vec![1.0]);
        assert_eq!(trace.zeta, vec![1.0]);
        let e = dot(v.col(0), s.col(0));
        for (r, &ur) in u.iter().enumerate() {
            assert!((ur - e * s.get(r, 0)).abs() < 1e-15);
        }
        assert!((trace.epsilon.get(0, 0) - e).abs() < 1e-15);
    }

    #[test]
    fn null_query_gives_uniform_weights() {
        let enc = random_encoded(4, 4, 3, 2);
        let (_, trace) = hmmn_hop(&enc.q, &[0.0; 4], &[0.0; 4], &enc.s, &enc.v, 0.0).unwrap();
        assert!(trace.delta.iter().all(|&w| (w - 1.0 / 3.0).abs() < 1e-15));
        assert!(trace.zeta.iter().all(|&w| (w - 0.5).abs() < 1e-15));
    }

    #[test]
    fn hop_matches_oracle() {
        let enc = random_encoded(17, 4, 3, 2);
        let mut rng = oracle::Lcg::new(99);
        let u_prev = rand_vec(&mut rng, 4);
        let (u, trace) = hmmn_hop(&enc.q, enc.a.col(1), &u_prev, &enc.s, &enc.v, 0.45).unwrap();
        let (ou, od, oe, oz) = oracle::hmmn_hop(
            &enc.q,
            enc.a.col(1),
            &u_prev,
            &cols(&enc.s),
            &cols(&enc.v),
            0.45,
            true,
            false,
        );
        for (a, b) in u.iter().zip(&ou) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in trace.delta.iter().zip(&od) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in trace.zeta.iter().zip(&oz) {
            assert!((a - b).abs() < 1e-12);
        }
        for (i, row) in oe.iter().enumerate() {
            for (j, e) in row.iter().enumerate() {
                assert!((trace.epsilon.get(i, j) - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hop_rejects_bad_input() {
        let enc = random_encoded(1, 4, 3, 2);
        assert!(hmmn_hop(&enc.q, &[0.0; 3], &[0.0; 4], &enc.s, &enc.v, 0.45).is_err());
        assert!(hmmn_hop(&enc.q, &[0.0; 4], &[0.0; 4], &enc.s, &enc.v, -1.0).is_err());
    }

    fn opts(answer_attention: bool) -> CellOptions {
        CellOptions {
            lambda: 0.45,
            answer_attention,
            normalize_coattention: false,
        }
    }

    #[test]
    fn identical_answers_give_uniform_probabilities() {
        let mut enc = random_encoded(3, 5, 4, 3);
        let a0 = enc.a.col(0).to_vec();
        for k in 1..5 {
            enc.a.col_mut(k).copy_from_slice(&a0);
        }
        let p = hmmn_forward_with(&enc, 2, opts(true), false).unwrap();
        assert!(p.probs.iter().all(|&x| x == 0.2));
        assert_eq!(p.argmax, 0);
    }

    #[test]
    fn zero_answer_scores_zero() {
        let mut enc = random_encoded(8, 5, 4, 3);
        enc.a.col_mut(3).iter_mut().for_each(|x| *x = 0.0);
        for aa in [true, false] {
            let p = hmmn_forward_with(&enc, 2, opts(aa), false).unwrap();
            assert_eq!(p.scores[3], 0.0);
        }
    }

    #[test]
    fn forward_matches_oracle() {
        for seed in 0..10 {
            let enc = random_encoded(seed, 6, 4, 3);
            for aa in [true, false] {
                for normalize in [false, true] {
                    let o = CellOptions {
                        normalize_coattention: normalize,
                        ..opts(aa)
                    };
                    let p = hmmn_forward_with(&enc, 2, o, false).unwrap();
                    let oe = oracle::Encoded {
                        s: cols(&enc.s),
                        v: cols(&enc.v),
                        q: enc.q.clone(),
                        a: cols(&enc.a),
                    };
                    let (f, probs) = oracle::hmmn_forward(&oe, 0.45, 2, aa, normalize);
                    for k in 0..5 {
                        assert!((p.scores[k] - f[k]).abs() < 1e-10);
                        assert!((p.probs[k] - probs[k]).abs() < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn zero_video_reduces_to_question_scores() {
        let mut enc = random_encoded(12, 4, 3, 2);
        enc.v = Mat::zeros(4, 2);
        let p = hmmn_forward_with(&enc, 3, opts(true), true).unwrap();
        for k in 0..5 {
            assert_eq!(p.scores[k], dot(&enc.q, enc.a.col(k)));
        }
    }

    #[test]
    fn trace_shapes() {
        let enc = random_encoded(2, 4, 3, 2);
        let p = hmmn_forward_with(&enc, 2, opts(true), true).unwrap();
        match p.trace.unwrap() {
            AttentionTrace::Hmmn { hops } => {
                assert_eq!(hops.len(), 5);
                for per_answer in hops {
                    assert_eq!(per_answer.len(), 2);
                    for h in per_answer {
                        assert_eq!(h.delta.len(), 3);
                        assert_eq!(h.zeta.len(), 2);
                        assert_eq!(h.epsilon.shape(), (2, 3));
                    }
                }
            }
            other => panic!("unexpected trace {other:?}"),
        }
    }

    #[test]
    fn e2emn_identical_columns() {
        let c = vec![0.5, -1.0, 2.0];
        let m = Mat::from_columns(3, &[c.clone(), c.clone()]).unwrap();
        let chain = memory_chain(&[1.0, 1.0, 1.0], &m, 1, 1.0).unwrap();
        assert_eq!(chain[0].u, c);
    }

    #[test]
    fn e2emn_alignment_picks_choice() {
        let d = 5;
        let a = Mat::from_fn(d, 5, |r, c| if r == c { 1.0 } else { 0.0 });
        let q = vec![0.0, 0.0, 3.0, 0.0, 0.0];
        let m = Mat::from_columns(
            d,
            &[vec![0.0, 0.0, 1.0, 0.0, 0.0], vec![0.1, 0.0, 0.0, 0.0, 0.0]],
        )
        .unwrap();
        let p = e2emn_forward(&q, &m, &a, 1).unwrap();
        assert_eq!(p.argmax, 2);
    }

    #[test]
    fn e2emn_matches_oracle() {
        for seed in 0..5 {
            let enc = random_encoded(seed + 40, 4, 5, 2);
            for hops in [1, 2] {
                let p = e2emn_forward(&enc.q, &enc.s, &enc.a, hops).unwrap();
                let (f, probs) =
                    oracle::e2emn_forward(&enc.q, &cols(&enc.s), &cols(&enc.a), hops, 1.0);
                for k in 0..5 {
                    assert!((p.scores[k] - f[k]).abs() < 1e-12);
                    assert!((p.probs[k] - probs[k]).abs() < 1e-12);
                }
            }
        }
    }
}
