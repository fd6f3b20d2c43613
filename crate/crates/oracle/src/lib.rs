//! Scalar-loop reference implementations of the memory-network forward pass.
//!
//! Everything here is written with explicit index loops over nested `Vec`s
//! and shares no code with `hmmn-core`. Matrices are lists of columns
//! (`m[j]` is slot `j`); projection matrices are row-major (`w[r][c]`).
//! Used only from tests.

#![allow(clippy::needless_range_loop)]

pub type Cols = Vec<Vec<f64>>;

/// Minimal 64-bit LCG so test fixtures do not depend on the production RNG.
pub struct Lcg(u64);

impl Lcg {
    pub fn new(seed: u64) -> Self {
        Lcg(seed
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407)
            | 1)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self
            .0
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        let mut x = self.0;
        x ^= x >> 33;
        x = x.wrapping_mul(0xff51afd7ed558ccd);
        x ^ (x >> 33)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u = (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        lo + (hi - lo) * u
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let mut max = x[0];
    for i in 1..x.len() {
        if x[i] > max {
            max = x[i];
        }
    }
    let mut e = vec![0.0; x.len()];
    let mut z = 0.0;
    for i in 0..x.len() {
        e[i] = (x[i] - max).exp();
        z += e[i];
    }
    for i in 0..x.len() {
        e[i] /= z;
    }
    e
}

pub fn weighted_sum(w: &[f64], m: &Cols) -> Vec<f64> {
    let d = m[0].len();
    let mut out = vec![0.0; d];
    for j in 0..m.len() {
        for r in 0..d {
            out[r] += w[j] * m[j][r];
        }
    }
    out
}

pub fn query_to_context(q: &[f64], m: &Cols) -> (Vec<f64>, Cols) {
    let mut scores = vec![0.0; m.len()];
    for j in 0..m.len() {
        scores[j] = dot(q, &m[j]);
    }
    let w = softmax(&scores);
    let mut out = m.clone();
    for j in 0..m.len() {
        for r in 0..out[j].len() {
            out[j][r] = w[j] * m[j][r];
        }
    }
    (w, out)
}

pub fn summarize(q: &[f64], m: &Cols) -> Vec<f64> {
    let (w, _) = query_to_context(q, m);
    weighted_sum(&w, m)
}

/// Raw coattention `x[i]ᵀ y[j]`, optionally row-softmaxed.
pub fn coattention(x: &Cols, y: &Cols, normalize: bool) -> Vec<Vec<f64>> {
    let mut b = vec![vec![0.0; y.len()]; x.len()];
    for i in 0..x.len() {
        for j in 0..y.len() {
            b[i][j] = dot(&x[i], &y[j]);
        }
        if normalize {
            b[i] = softmax(&b[i]);
        }
    }
    b
}

pub fn inter_modal_with(x: &Cols, y: &Cols, normalize: bool) -> Cols {
    let b = coattention(x, y, normalize);
    let d = y[0].len();
    let mut out = vec![vec![0.0; d]; x.len()];
    for i in 0..x.len() {
        for j in 0..y.len() {
            for r in 0..d {
                out[i][r] += b[i][j] * y[j][r];
            }
        }
    }
    out
}

pub fn inter_modal(x: &Cols, y: &Cols) -> Cols {
    inter_modal_with(x, y, false)
}

pub fn self_attention(m: &Cols) -> Cols {
    let d = m[0].len();
    let mut out = vec![vec![0.0; d]; m.len()];
    for i in 0..m.len() {
        for j in 0..m.len() {
            if i == j {
                continue;
            }
            let g = dot(&m[i], &m[j]);
            for r in 0..d {
                out[i][r] += g * m[j][r];
            }
        }
    }
    out
}

/// `Wᵀ x` for row-major `w` (`w.len() == x.len()`).
pub fn project(w: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    let cols = w[0].len();
    let mut out = vec![0.0; cols];
    for r in 0..w.len() {
        for c in 0..cols {
            out[c] += w[r][c] * x[r];
        }
    }
    out
}

/// Vocabulary as `(token, vector)` pairs; linear lookup.
pub type Vocab = Vec<(String, Vec<f64>)>;

fn lookup<'a>(vocab: &'a Vocab, tok: &str) -> Option<&'a Vec<f64>> {
    for (t, v) in vocab {
        if t == tok {
            return Some(v);
        }
    }
    None
}

pub fn encode_sentence(tokens: &[String], vocab: &Vocab, w1: &[Vec<f64>]) -> Vec<f64> {
    let d = w1[0].len();
    let mut out = vec![0.0; d];
    for tok in tokens {
        if let Some(v) = lookup(vocab, tok) {
            let p = project(w1, v);
            for c in 0..d {
                out[c] += p[c];
            }
        }
    }
    for c in 0..d {
        out[c] /= tokens.len() as f64;
    }
    out
}

pub fn encode_frame(
    regions: &[Vec<f64>],
    vocab: &Vocab,
    w2: &[Vec<f64>],
    w1: &[Vec<f64>],
) -> Vec<f64> {
    let d_w = w2[0].len();
    let mut pooled = vec![0.0; d_w];
    for region in regions {
        let z = project(w2, region);
        let mut scores = vec![0.0; vocab.len()];
        for (j, (_, v)) in vocab.iter().enumerate() {
            scores[j] = dot(&z, v);
        }
        let a = softmax(&scores);
        for (j, (_, v)) in vocab.iter().enumerate() {
            for r in 0..d_w {
                pooled[r] += a[j] * v[r] / regions.len() as f64;
            }
        }
    }
    project(w1, &pooled)
}

/// An instance in oracle form.
#[derive(Clone, Debug)]
pub struct Instance {
    pub question: Vec<String>,
    pub answers: Vec<Vec<String>>,
    pub subtitles: Vec<Vec<String>>,
    pub frames: Vec<Vec<Vec<f64>>>,
    pub gold: usize,
}

/// `(S, V, q, A)` as column lists.
pub struct Encoded {
    pub s: Cols,
    pub v: Cols,
    pub q: Vec<f64>,
    pub a: Cols,
}

pub fn encode_instance(
    inst: &Instance,
    vocab: &Vocab,
    w1: &[Vec<f64>],
    w2: &[Vec<f64>],
) -> Encoded {
    Encoded {
        s: inst
            .subtitles
            .iter()
            .map(|t| encode_sentence(t, vocab, w1))
            .collect(),
        v: inst
            .frames
            .iter()
            .map(|f| encode_frame(f, vocab, w2, w1))
            .collect(),
        q: encode_sentence(&inst.question, vocab, w1),
        a: inst
            .answers
            .iter()
            .map(|t| encode_sentence(t, vocab, w1))
            .collect(),
    }
}

/// One hop: returns `(u_next, delta, epsilon (n x m), zeta)`.
#[allow(clippy::too_many_arguments)]
pub fn hmmn_hop(
    q: &[f64],
    a_k: &[f64],
    u_prev: &[f64],
    s: &Cols,
    v: &Cols,
    lambda: f64,
    answer_attention: bool,
    normalize: bool,
) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>, Vec<f64>) {
    let d = q.len();
    let mut q_star = vec![0.0; d];
    for r in 0..d {
        q_star[r] = u_prev[r] + if answer_attention { a_k[r] } else { 0.0 } + lambda * q[r];
    }
    let (delta, s_star) = query_to_context(&q_star, s);
    let eps = coattention(v, &s_star, false);
    let v_star = inter_modal_with(v, &s_star, normalize);
    let mut scores = vec![0.0; v_star.len()];
    for i in 0..v_star.len() {
        scores[i] = dot(&q_star, &v_star[i]);
    }
    let zeta = softmax(&scores);
    let u = weighted_sum(&zeta, &v_star);
    (u, delta, eps, zeta)
}

/// Affinity scores and probabilities of the stacked cell.
pub fn hmmn_forward(
    enc: &Encoded,
    lambda: f64,
    hops: usize,
    answer_attention: bool,
    normalize: bool,
) -> (Vec<f64>, Vec<f64>) {
    let d = enc.q.len();
    let mut f = vec![0.0; enc.a.len()];
    for k in 0..enc.a.len() {
        let mut u = vec![0.0; d];
        for _ in 0..hops {
            u = hmmn_hop(
                &enc.q,
                &enc.a[k],
                &u,
                &enc.s,
                &enc.v,
                lambda,
                answer_attention,
                normalize,
            )
            .0;
        }
        let mut qu = vec![0.0; d];
        for r in 0..d {
            qu[r] = enc.q[r] + u[r];
        }
        f[k] = dot(&qu, &enc.a[k]);
    }
    let p = softmax(&f);
    (f, p)
}

/// Single-memory baseline; retrieval queries start from `query_scale · q`.
pub fn e2emn_forward(
    q: &[f64],
    memory: &Cols,
    a: &Cols,
    hops: usize,
    query_scale: f64,
) -> (Vec<f64>, Vec<f64>) {
    let d = q.len();
    let mut u = vec![0.0; d];
    for _ in 0..hops {
        let mut query = vec![0.0; d];
        for r in 0..d {
            query[r] = u[r] + query_scale * q[r];
        }
        u = summarize(&query, memory);
    }
    let mut f = vec![0.0; a.len()];
    for k in 0..a.len() {
        let mut s = 0.0;
        for r in 0..d {
            s += (q[r] + u[r]) * a[k][r];
        }
        f[k] = s;
    }
    let p = softmax(&f);
    (f, p)
}

pub fn cross_entropy(f: &[f64], gold: usize) -> f64 {
    let mut max = f[0];
    for &x in f {
        if x > max {
            max = x;
        }
    }
    let mut z = 0.0;
    for &x in f {
        z += (x - max).exp();
    }
    -(f[gold] - max - z.ln())
}

/// Mean HMMN cross-entropy over `batch`, recomputed from scratch.
pub fn hmmn_batch_loss(
    batch: &[Instance],
    vocab: &Vocab,
    w1: &[Vec<f64>],
    w2: &[Vec<f64>],
    lambda: f64,
    hops: usize,
    answer_attention: bool,
) -> f64 {
    let mut total = 0.0;
    for inst in batch {
        let enc = encode_instance(inst, vocab, w1, w2);
        let (f, _) = hmmn_forward(&enc, lambda, hops, answer_attention, false);
        total += cross_entropy(&f, inst.gold);
    }
    total / batch.len() as f64
}
