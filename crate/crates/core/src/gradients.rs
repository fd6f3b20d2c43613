//! Reverse-mode gradients of the mean cross-entropy with respect to `W1` and
//! `W2`, and a central finite-difference check.
//!
//! The backward pass walks the fixed graph
//! `prepare → encode → cell/baseline → affinity → softmax → loss`
//! using the vector-Jacobian products of each attention primitive below.

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::Serialize;

use crate::ablation::{Modality, Operand, RepresentationSpec, Transform};
use crate::attention::{coattend, query_to_context, self_affinity, CoAttention};
use crate::encodings::{FramePooling, ModelParams, PreparedInstance, RawInstance, Vocabulary};
use crate::error::{Error, Result};
use crate::hmmn::{answer_chain, memory_chain, CellOptions, HopOutput, Prediction};
use crate::model::{predict, Variant};
use crate::numerics::{axpy, dot, rng_for, softmax, softmax_backward, Mat};

/// `-log p_gold`, evaluated from the scores by log-sum-exp.
pub fn loss(pred: &Prediction, gold: usize) -> f64 {
    cross_entropy(&pred.scores, gold)
}

pub fn cross_entropy(scores: &[f64], gold: usize) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
    max + z.ln() - scores[gold]
}

/// Gradients of the mean batch loss.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub dw1: Mat,
    pub dw2: Mat,
    pub loss: f64,
}

impl Gradients {
    fn zeros(params: &ModelParams) -> Self {
        Gradients {
            dw1: Mat::zeros(params.w1.rows(), params.w1.cols()),
            dw2: Mat::zeros(params.w2.rows(), params.w2.cols()),
            loss: 0.0,
        }
    }

    pub fn norm(&self) -> f64 {
        let a = self.dw1.frobenius_norm();
        let b = self.dw2.frobenius_norm();
        (a * a + b * b).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.loss.is_finite() && self.dw1.is_finite() && self.dw2.is_finite()
    }
}

// ---------------------------------------------------------------------------
// vector-Jacobian products of the primitives

/// Adds `x yᵀ` to `out`.
fn add_outer(out: &mut Mat, x: &[f64], y: &[f64]) {
    out.add_outer(1.0, x, y);
}

fn add(out: &mut Mat, m: &Mat) {
    out.add_scaled(1.0, m).expect("matching shapes");
}

/// `u = M softmax(Mᵀ q)`. Accumulates into `dq`, `dm`.
fn summarize_backward(
    q: &[f64],
    m: &Mat,
    weights: &[f64],
    du: &[f64],
    dq: &mut [f64],
    dm: &mut Mat,
) {
    add_outer(dm, du, weights);
    let dw = m.tr_mul_vec(du).expect("shapes");
    let dh = softmax_backward(weights, &dw);
    add_outer(dm, q, &dh);
    axpy(1.0, &m.mul_vec(&dh).expect("shapes"), dq);
}

/// `M' = M diag(softmax(Mᵀ q))`.
fn reweight_backward(
    q: &[f64],
    m: &Mat,
    weights: &[f64],
    dout: &Mat,
    dq: &mut [f64],
    dm: &mut Mat,
) {
    add(dm, &dout.scale_columns(weights).expect("shapes"));
    let dw: Vec<f64> = (0..m.cols()).map(|j| dot(m.col(j), dout.col(j))).collect();
    let dh = softmax_backward(weights, &dw);
    add_outer(dm, q, &dh);
    axpy(1.0, &m.mul_vec(&dh).expect("shapes"), dq);
}

/// `out = Y Wᵀ` with `W = Xᵀ Y` or its row softmax.
fn coattend_backward(
    x: &Mat,
    y: &Mat,
    co: &CoAttention,
    normalize: bool,
    dout: &Mat,
    dx: &mut Mat,
    dy: &mut Mat,
) {
    add(dy, &dout.mul(&co.weights).expect("shapes"));
    let dw = dout.tr_mul(y).expect("shapes");
    let draw = if normalize {
        let mut g = Mat::zeros(dw.rows(), dw.cols());
        for r in 0..dw.rows() {
            let w: Vec<f64> = (0..dw.cols()).map(|c| co.weights.get(r, c)).collect();
            let d: Vec<f64> = (0..dw.cols()).map(|c| dw.get(r, c)).collect();
            for (c, v) in softmax_backward(&w, &d).into_iter().enumerate() {
                g.set(r, c, v);
            }
        }
        g
    } else {
        dw
    };
    add(dx, &y.mul_tr(&draw).expect("shapes"));
    add(dy, &x.mul(&draw).expect("shapes"));
}

/// `out = M γᵀ`, `γ = MᵀM` with zero diagonal.
fn self_attention_backward(m: &Mat, gamma: &Mat, dout: &Mat, dm: &mut Mat) {
    add(dm, &dout.mul(gamma).expect("shapes"));
    let mut dg = m.tr_mul(dout).expect("shapes");
    for i in 0..dg.rows() {
        dg.set(i, i, 0.0);
    }
    let sym = Mat::from_fn(dg.rows(), dg.cols(), |i, j| dg.get(i, j) + dg.get(j, i));
    add(dm, &m.mul(&sym).expect("shapes"));
}

// ---------------------------------------------------------------------------
// model graphs

/// Gradients with respect to the encoded inputs.
struct EncodedGrads {
    ds: Mat,
    dv: Mat,
    dq: Vec<f64>,
    da: Mat,
}

impl EncodedGrads {
    fn zeros(d: usize, m: usize, n: usize, choices: usize) -> Self {
        EncodedGrads {
            ds: Mat::zeros(d, m),
            dv: Mat::zeros(d, n),
            dq: vec![0.0; d],
            da: Mat::zeros(d, choices),
        }
    }
}

/// One cell hop; returns `d q*`.
fn hop_backward(
    out: &HopOutput,
    s: &Mat,
    v: &Mat,
    normalize: bool,
    du: &[f64],
    g: &mut EncodedGrads,
) -> Vec<f64> {
    let mut dq_star = vec![0.0; du.len()];
    let v_star = &out.coattention.output;
    let mut dv_star = Mat::zeros(v_star.rows(), v_star.cols());
    summarize_backward(
        &out.q_star,
        v_star,
        &out.zeta,
        du,
        &mut dq_star,
        &mut dv_star,
    );
    let s_star = &out.reweighted.memory;
    let mut ds_star = Mat::zeros(s_star.rows(), s_star.cols());
    coattend_backward(
        v,
        s_star,
        &out.coattention,
        normalize,
        &dv_star,
        &mut g.dv,
        &mut ds_star,
    );
    reweight_backward(
        &out.q_star,
        s,
        &out.reweighted.weights,
        &ds_star,
        &mut dq_star,
        &mut g.ds,
    );
    dq_star
}

fn hmmn_backward(
    enc: &crate::encodings::EncodedInstance,
    hops: usize,
    opts: CellOptions,
) -> Result<(f64, EncodedGrads)> {
    let choices = enc.a.cols();
    let chains = (0..choices)
        .map(|k| answer_chain(enc, k, hops, opts))
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<f64> = chains
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let u = &c.last().expect("hops >= 1").u;
            enc.q
                .iter()
                .zip(u)
                .zip(enc.a.col(k))
                .map(|((q, u), a)| (q + u) * a)
                .sum()
        })
        .collect();
    let loss = cross_entropy(&scores, enc.gold);
    let mut df = softmax(&scores)?;
    df[enc.gold] -= 1.0;

    let d = enc.q.len();
    let mut g = EncodedGrads::zeros(d, enc.s.cols(), enc.v.cols(), choices);
    for (k, chain) in chains.iter().enumerate() {
        let a_k = enc.a.col(k).to_vec();
        let u_t = &chain.last().expect("hops >= 1").u;
        axpy(df[k], &a_k, &mut g.dq);
        let qu: Vec<f64> = enc.q.iter().zip(u_t).map(|(q, u)| q + u).collect();
        axpy(df[k], &qu, g.da.col_mut(k));
        let mut du: Vec<f64> = a_k.iter().map(|x| df[k] * x).collect();
        for out in chain.iter().rev() {
            let dq_star =
                hop_backward(out, &enc.s, &enc.v, opts.normalize_coattention, &du, &mut g);
            if opts.answer_attention {
                axpy(1.0, &dq_star, g.da.col_mut(k));
            }
            axpy(opts.lambda, &dq_star, &mut g.dq);
            du = dq_star;
        }
    }
    Ok((loss, g))
}

enum OperandCache {
    Identity,
    Reweight(crate::attention::ReweightedMemory),
    Inter(CoAttention),
    SelfAttn(Mat),
}

fn modality(enc: &crate::encodings::EncodedInstance, m: Modality) -> &Mat {
    match m {
        Modality::Subtitles => &enc.s,
        Modality::Video => &enc.v,
    }
}

fn operand_forward(
    op: Operand,
    enc: &crate::encodings::EncodedInstance,
    query: &[f64],
    normalize: bool,
) -> Result<(Mat, OperandCache)> {
    let x = modality(enc, op.base);
    Ok(match op.transform {
        Transform::Identity => (x.clone(), OperandCache::Identity),
        Transform::QueryToContext => {
            let r = query_to_context(query, x)?;
            (r.memory.clone(), OperandCache::Reweight(r))
        }
        Transform::InterModal => {
            let c = coattend(x, modality(enc, op.base.other()), normalize)?;
            (c.output.clone(), OperandCache::Inter(c))
        }
        Transform::SelfAttention => {
            let gamma = self_affinity(x);
            (x.mul_tr(&gamma)?, OperandCache::SelfAttn(gamma))
        }
    })
}

fn grad_of(g: &mut EncodedGrads, m: Modality) -> &mut Mat {
    match m {
        Modality::Subtitles => &mut g.ds,
        Modality::Video => &mut g.dv,
    }
}

/// Back through one operand; `dquery` receives the query gradient.
#[allow(clippy::too_many_arguments)]
fn operand_backward(
    op: Operand,
    cache: &OperandCache,
    enc: &crate::encodings::EncodedInstance,
    query: &[f64],
    normalize: bool,
    dout: &Mat,
    dquery: &mut [f64],
    g: &mut EncodedGrads,
) {
    let x = modality(enc, op.base);
    match cache {
        OperandCache::Identity => add(grad_of(g, op.base), dout),
        OperandCache::Reweight(r) => {
            let dx = grad_of(g, op.base);
            reweight_backward(query, x, &r.weights, dout, dquery, dx);
        }
        OperandCache::Inter(c) => {
            let y = modality(enc, op.base.other());
            let mut dx = Mat::zeros(x.rows(), x.cols());
            let mut dy = Mat::zeros(y.rows(), y.cols());
            coattend_backward(x, y, c, normalize, dout, &mut dx, &mut dy);
            add(grad_of(g, op.base), &dx);
            add(grad_of(g, op.base.other()), &dy);
        }
        OperandCache::SelfAttn(gamma) => {
            self_attention_backward(x, gamma, dout, grad_of(g, op.base));
        }
    }
}

fn baseline_backward(
    spec: &RepresentationSpec,
    enc: &crate::encodings::EncodedInstance,
    hops: usize,
    query_scale: f64,
    normalize: bool,
) -> Result<(f64, EncodedGrads)> {
    spec.validate()?;
    let query: Vec<f64> = enc.q.iter().map(|x| query_scale * x).collect();
    let operands: Vec<Operand> = match spec {
        RepresentationSpec::Single(op) => vec![*op],
        RepresentationSpec::Pair { left, right } => vec![*left, *right],
    };
    let forwards = operands
        .iter()
        .map(|&op| operand_forward(op, enc, &query, normalize))
        .collect::<Result<Vec<_>>>()?;
    let pair = match spec {
        RepresentationSpec::Pair { .. } => {
            Some(coattend(&forwards[0].0, &forwards[1].0, normalize)?)
        }
        RepresentationSpec::Single(_) => None,
    };
    let memory = match &pair {
        Some(c) => &c.output,
        None => &forwards[0].0,
    };

    let chain = memory_chain(&enc.q, memory, hops, query_scale)?;
    let u_t = &chain.last().expect("hops >= 1").u;
    let qu: Vec<f64> = enc.q.iter().zip(u_t).map(|(q, u)| q + u).collect();
    let scores = enc.a.tr_mul_vec(&qu)?;
    let loss = cross_entropy(&scores, enc.gold);
    let mut df = softmax(&scores)?;
    df[enc.gold] -= 1.0;

    let d = enc.q.len();
    let mut g = EncodedGrads::zeros(d, enc.s.cols(), enc.v.cols(), enc.a.cols());
    for (k, &dfk) in df.iter().enumerate() {
        axpy(dfk, &qu, g.da.col_mut(k));
    }
    let dqu = enc.a.mul_vec(&df)?;
    axpy(1.0, &dqu, &mut g.dq);

    let mut dmemory = Mat::zeros(memory.rows(), memory.cols());
    let mut du = dqu;
    for hop in chain.iter().rev() {
        let mut dquery = vec![0.0; d];
        summarize_backward(
            &hop.query,
            memory,
            &hop.alpha,
            &du,
            &mut dquery,
            &mut dmemory,
        );
        axpy(query_scale, &dquery, &mut g.dq);
        du = dquery;
    }

    let mut dquery = vec![0.0; d];
    match &pair {
        None => operand_backward(
            operands[0],
            &forwards[0].1,
            enc,
            &query,
            normalize,
            &dmemory,
            &mut dquery,
            &mut g,
        ),
        Some(c) => {
            let (l, r) = (&forwards[0].0, &forwards[1].0);
            let mut dl = Mat::zeros(l.rows(), l.cols());
            let mut dr = Mat::zeros(r.rows(), r.cols());
            coattend_backward(l, r, c, normalize, &dmemory, &mut dl, &mut dr);
            operand_backward(
                operands[0],
                &forwards[0].1,
                enc,
                &query,
                normalize,
                &dl,
                &mut dquery,
                &mut g,
            );
            operand_backward(
                operands[1],
                &forwards[1].1,
                enc,
                &query,
                normalize,
                &dr,
                &mut dquery,
                &mut g,
            );
        }
    }
    axpy(query_scale, &dquery, &mut g.dq);
    Ok((loss, g))
}

/// Back through `x = W1ᵀ x̄` for every column.
fn project_backward(dw1: &mut Mat, xbar: &Mat, dx: &Mat) {
    for j in 0..xbar.cols() {
        dw1.add_outer(1.0, xbar.col(j), dx.col(j));
    }
}

/// Back through the vocabulary-attention pooling of one frame.
fn frame_backward(
    regions: &Mat,
    pooling: &FramePooling,
    vocab: &Vocabulary,
    dpooled: &[f64],
    dw2: &mut Mat,
) {
    let emb = vocab.embeddings();
    let inv = 1.0 / regions.cols() as f64;
    // every region receives the same upstream gradient dpooled / R
    let da: Vec<f64> = emb
        .tr_mul_vec(dpooled)
        .expect("shapes")
        .iter()
        .map(|x| x * inv)
        .collect();
    for r in 0..regions.cols() {
        let dscores = softmax_backward(pooling.attention.col(r), &da);
        let dz = emb.mul_vec(&dscores).expect("shapes");
        dw2.add_outer(1.0, regions.col(r), &dz);
    }
}

fn instance_backward(
    prep: &PreparedInstance,
    vocab: &Vocabulary,
    params: &ModelParams,
    variant: Variant,
) -> Result<Gradients> {
    let (enc, poolings, pooled) = prep.encode_with_cache(vocab, params)?;
    let (loss, g) = match variant {
        Variant::Hmmn => hmmn_backward(&enc, params.hops, CellOptions::from_params(params, true))?,
        Variant::HmmnNoAnswer => {
            hmmn_backward(&enc, params.hops, CellOptions::from_params(params, false))?
        }
        Variant::Baseline(spec) => {
            baseline_backward(&spec, &enc, params.hops, 1.0, params.normalize_coattention)?
        }
    };
    let mut out = Gradients::zeros(params);
    out.loss = loss;
    project_backward(&mut out.dw1, &prep.subtitles, &g.ds);
    project_backward(&mut out.dw1, &prep.answers, &g.da);
    out.dw1.add_outer(1.0, &prep.question, &g.dq);
    project_backward(&mut out.dw1, &pooled, &g.dv);
    let dpooled = params.w1.mul(&g.dv)?;
    for (i, frame) in prep.frames.iter().enumerate() {
        frame_backward(frame, &poolings[i], vocab, dpooled.col(i), &mut out.dw2);
    }
    Ok(out)
}

/// Gradients of the mean loss over a prepared batch. Instances are processed
/// in parallel and summed in batch order.
pub fn backward_prepared(
    batch: &[&PreparedInstance],
    vocab: &Vocabulary,
    params: &ModelParams,
    variant: Variant,
) -> Result<Gradients> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let parts = batch
        .par_iter()
        .map(|p| instance_backward(p, vocab, params, variant))
        .collect::<Result<Vec<_>>>()?;
    let mut total = Gradients::zeros(params);
    for p in &parts {
        add(&mut total.dw1, &p.dw1);
        add(&mut total.dw2, &p.dw2);
        total.loss += p.loss;
    }
    let inv = 1.0 / batch.len() as f64;
    total.dw1.scale(inv);
    total.dw2.scale(inv);
    total.loss *= inv;
    Ok(total)
}

pub fn prepare_batch(
    batch: &[RawInstance],
    vocab: &Vocabulary,
    params: &ModelParams,
) -> Result<Vec<PreparedInstance>> {
    let d_r = params.dims().d_r;
    batch
        .iter()
        .map(|r| PreparedInstance::new(r, vocab, d_r))
        .collect()
}

/// Mean-loss gradients for a batch of raw instances.
pub fn backward(
    batch: &[RawInstance],
    vocab: &Vocabulary,
    params: &ModelParams,
    variant: Variant,
) -> Result<Gradients> {
    let prepared = prepare_batch(batch, vocab, params)?;
    let refs: Vec<&PreparedInstance> = prepared.iter().collect();
    backward_prepared(&refs, vocab, params, variant)
}

/// Mean loss of the forward pass, summed in batch order.
pub fn batch_loss(
    batch: &[&PreparedInstance],
    vocab: &Vocabulary,
    params: &ModelParams,
    variant: Variant,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let losses = batch
        .par_iter()
        .map(|p| {
            let enc = p.encode(vocab, params)?;
            Ok(loss(&predict(&enc, params, variant, false)?, p.gold))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / batch.len() as f64)
}

/// Which parameter matrix an entry belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Param {
    W1,
    W2,
}

fn param_mut(params: &mut ModelParams, which: Param) -> &mut Mat {
    match which {
        Param::W1 => &mut params.w1,
        Param::W2 => &mut params.w2,
    }
}

/// Central difference of `f` along one entry.
pub fn central_difference(
    f: &mut impl FnMut(&ModelParams) -> Result<f64>,
    params: &ModelParams,
    which: Param,
    index: usize,
    h: f64,
) -> Result<f64> {
    let mut p = params.clone();
    let orig = param_mut(&mut p, which).as_slice()[index];
    param_mut(&mut p, which).as_mut_slice()[index] = orig + h;
    let plus = f(&p)?;
    param_mut(&mut p, which).as_mut_slice()[index] = orig - h;
    let minus = f(&p)?;
    Ok((plus - minus) / (2.0 * h))
}

/// Finite-difference gradients of every entry of `W1` and `W2`.
pub fn finite_diff_grad(
    batch: &[RawInstance],
    vocab: &Vocabulary,
    params: &ModelParams,
    variant: Variant,
    h: f64,
) -> Result<Gradients> {
    if h.is_nan() || h <= 0.0 {
        return Err(Error::Config(format!("step must be > 0, got {h}")));
    }
    let prepared = prepare_batch(batch, vocab, params)?;
    let refs: Vec<&PreparedInstance> = prepared.iter().collect();
    let mut f = |p: &ModelParams| batch_loss(&refs, vocab, p, variant);
    let mut out = Gradients::zeros(params);
    out.loss = f(params)?;
    for which in [Param::W1, Param::W2] {
        let len = match which {
            Param::W1 => params.w1.as_slice().len(),
            Param::W2 => params.w2.as_slice().len(),
        };
        for i in 0..len {
            let g = central_difference(&mut f, params, which, i, h)?;
            let target = match which {
                Param::W1 => &mut out.dw1,
                Param::W2 => &mut out.dw2,
            };
            target.as_mut_slice()[i] = g;
        }
    }
    Ok(out)
}

/// `|a - b| / max(1e-8, |a| + |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

#[derive(Clone, Debug, Serialize)]
pub struct MatrixCheck {
    pub entries_checked: usize,
    pub max_rel_error: f64,
    pub median_rel_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub w1: MatrixCheck,
    pub w2: MatrixCheck,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub h: f64,
    pub tolerance: f64,
    /// Larger matrices are checked on this many seeded random entries.
    pub max_entries: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            h: 1e-5,
            tolerance: 1e-4,
            max_entries: 500,
            seed: 0,
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Compares [`backward`] with central differences entry by entry.
pub fn check_gradients(
    batch: &[RawInstance],
    vocab: &Vocabulary,
    params: &ModelParams,
    variant: Variant,
    config: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let analytic = backward(batch, vocab, params, variant)?;
    let prepared = prepare_batch(batch, vocab, params)?;
    let refs: Vec<&PreparedInstance> = prepared.iter().collect();
    let mut f = |p: &ModelParams| batch_loss(&refs, vocab, p, variant);
    let mut check = |which: Param, grad: &Mat| -> Result<MatrixCheck> {
        let len = grad.as_slice().len();
        let entries: Vec<usize> = if len <= config.max_entries {
            (0..len).collect()
        } else {
            let label = if which == Param::W1 {
                "gradcheck/w1"
            } else {
                "gradcheck/w2"
            };
            let mut idx =
                sample(&mut rng_for(config.seed, label), len, config.max_entries).into_vec();
            idx.sort_unstable();
            idx
        };
        let mut errs = Vec::with_capacity(entries.len());
        for &i in &entries {
            let fd = central_difference(&mut f, params, which, i, config.h)?;
            errs.push(relative_error(grad.as_slice()[i], fd));
        }
        Ok(MatrixCheck {
            entries_checked: entries.len(),
            max_rel_error: errs.iter().copied().fold(0.0, f64::max),
            median_rel_error: median(errs),
        })
    };
    let w1 = check(Param::W1, &analytic.dw1)?;
    let w2 = check(Param::W2, &analytic.dw2)?;
    let passed = w1.max_rel_error < config.tolerance && w2.max_rel_error < config.tolerance;
    Ok(GradCheckReport {
        w1,
        w2,
        tolerance: config.tolerance,
        passed,
    })
}
