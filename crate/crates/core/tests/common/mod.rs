//! Conversions from core types to the scalar oracle's nested-`Vec` form.

#![allow(dead_code)]

use hmmn_core::{EncodedInstance, Mat, ModelParams, RawInstance, Vocabulary};
use hmmn_oracle as oracle;

pub fn vocab(v: &Vocabulary) -> oracle::Vocab {
    v.tokens()
        .iter()
        .map(|t| (t.clone(), v.vector(t).unwrap().to_vec()))
        .collect()
}

pub fn instance(raw: &RawInstance) -> oracle::Instance {
    oracle::Instance {
        question: raw.question.clone(),
        answers: raw.answers.clone(),
        subtitles: raw.subtitles.clone(),
        frames: raw
            .frames
            .iter()
            .map(|f| {
                f.iter()
                    .map(|r| r.iter().map(|&x| x as f64).collect())
                    .collect()
            })
            .collect(),
        gold: raw.gold,
    }
}

pub fn columns(m: &Mat) -> oracle::Cols {
    m.columns().map(|c| c.to_vec()).collect()
}

pub fn encoded(enc: &EncodedInstance) -> oracle::Encoded {
    oracle::Encoded {
        s: columns(&enc.s),
        v: columns(&enc.v),
        q: enc.q.clone(),
        a: columns(&enc.a),
    }
}

/// Encodes `raw` entirely inside the oracle.
pub fn oracle_encode(raw: &RawInstance, v: &Vocabulary, params: &ModelParams) -> oracle::Encoded {
    oracle::encode_instance(
        &instance(raw),
        &vocab(v),
        &params.w1.to_rows(),
        &params.w2.to_rows(),
    )
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
