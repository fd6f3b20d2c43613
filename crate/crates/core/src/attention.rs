//! Parameter-free attention primitives over encoded memory banks.
//!
//! * query-to-context: softmax relevance of each slot to a query, used to
//!   rescale the slots;
//! * summarize: the same relevance used to read out one convex combination;
//! * inter-modal: each slot of `X` becomes a sum of the slots of `Y`
//!   weighted by raw inner products (no softmax);
//! * self attention: the same within one modality, with the diagonal masked.

use crate::error::{Error, Result};
use crate::numerics::{dot, softmax, weighted_sum, Mat};

/// Slot weights and the memory rescaled by them.
#[derive(Clone, Debug, PartialEq)]
pub struct ReweightedMemory {
    pub weights: Vec<f64>,
    pub memory: Mat,
}

fn check_query(op: &'static str, query: &[f64], m: &Mat) -> Result<()> {
    if query.len() != m.rows() {
        return Err(Error::dim(
            op,
            format!(
                "query of length {} against memory with d = {}",
                query.len(),
                m.rows()
            ),
        ));
    }
    if m.cols() == 0 {
        return Err(Error::dim(op, "memory has no slots"));
    }
    Ok(())
}

/// `weights = softmax_i(queryᵀ M_:i)`, `M'_:i = weights_i · M_:i`.
pub fn query_to_context(query: &[f64], m: &Mat) -> Result<ReweightedMemory> {
    check_query("query_to_context", query, m)?;
    let weights = softmax(&m.tr_mul_vec(query)?)?;
    let memory = m.scale_columns(&weights)?;
    Ok(ReweightedMemory { weights, memory })
}

/// Read-out weights together with the summarized vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub weights: Vec<f64>,
    pub output: Vec<f64>,
}

pub fn summarize_with_weights(query: &[f64], m: &Mat) -> Result<Summary> {
    check_query("summarize", query, m)?;
    let weights = softmax(&m.tr_mul_vec(query)?)?;
    let output = weighted_sum(&weights, m)?;
    Ok(Summary { weights, output })
}

/// `u = Σ_i softmax_i(queryᵀ M_:i) · M_:i`.
pub fn summarize(query: &[f64], m: &Mat) -> Result<Vec<f64>> {
    Ok(summarize_with_weights(query, m)?.output)
}

/// Coattention between two memories and the resulting representation of
/// `X` in terms of `Y`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoAttention {
    /// `p x r` raw inner products `X_:iᵀ Y_:j`.
    pub raw: Mat,
    /// Weights actually applied: `raw`, or its row-wise softmax when
    /// normalisation is switched on.
    pub weights: Mat,
    /// `d x p`.
    pub output: Mat,
}

pub fn coattend(x: &Mat, y: &Mat, normalize: bool) -> Result<CoAttention> {
    if x.rows() != y.rows() {
        return Err(Error::dim(
            "inter_modal",
            format!("feature dimensions differ: {} vs {}", x.rows(), y.rows()),
        ));
    }
    let raw = x.tr_mul(y)?;
    let weights = if normalize {
        row_softmax(&raw)?
    } else {
        raw.clone()
    };
    let output = y.mul_tr(&weights)?;
    Ok(CoAttention {
        raw,
        weights,
        output,
    })
}

pub(crate) fn row_softmax(m: &Mat) -> Result<Mat> {
    let mut out = Mat::zeros(m.rows(), m.cols());
    for r in 0..m.rows() {
        let row: Vec<f64> = (0..m.cols()).map(|c| m.get(r, c)).collect();
        for (c, v) in softmax(&row)?.into_iter().enumerate() {
            out.set(r, c, v);
        }
    }
    Ok(out)
}

/// `out_:i = Σ_j (X_:iᵀ Y_:j) · Y_:j`: X attends to Y.
pub fn inter_modal(x: &Mat, y: &Mat) -> Result<Mat> {
    Ok(coattend(x, y, false)?.output)
}

/// `γ_ij = [i ≠ j] · M_:iᵀ M_:j`.
pub fn self_affinity(m: &Mat) -> Mat {
    Mat::from_fn(m.cols(), m.cols(), |i, j| {
        if i == j {
            0.0
        } else {
            dot(m.col(i), m.col(j))
        }
    })
}

/// `out_:i = Σ_{j ≠ i} (M_:iᵀ M_:j) · M_:j`.
pub fn self_attention(m: &Mat) -> Result<Mat> {
    if m.cols() == 0 {
        return Err(Error::dim("self_attention", "memory has no slots"));
    }
    m.mul_tr(&self_affinity(m))
}
