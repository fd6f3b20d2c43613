//! Model variants: the full cell, the cell without answer attention, and the
//! single-memory baselines over any ablation representation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ablation::{predict_baseline, Modality, RepresentationSpec, Transform};
use crate::encodings::{EncodedInstance, ModelParams};
use crate::error::{Error, Result};
use crate::hmmn::{hmmn_forward, Prediction};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Variant {
    #[default]
    Hmmn,
    HmmnNoAnswer,
    Baseline(RepresentationSpec),
}

impl Variant {
    pub fn subtitles_only() -> Self {
        Variant::Baseline(RepresentationSpec::single(
            Modality::Subtitles,
            Transform::Identity,
        ))
    }

    pub fn video_only() -> Self {
        Variant::Baseline(RepresentationSpec::single(
            Modality::Video,
            Transform::Identity,
        ))
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Hmmn => f.write_str("hmmn"),
            Variant::HmmnNoAnswer => f.write_str("hmmn-no-answer"),
            Variant::Baseline(spec) => write!(f, "e2emn-{spec}"),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    /// Accepts `hmmn`, `hmmn-no-answer`, `e2emn-S`, `e2emn-V`, and any
    /// representation spec with or without the `e2emn-` prefix.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "hmmn" => Ok(Variant::Hmmn),
            "hmmn-no-answer" => Ok(Variant::HmmnNoAnswer),
            other => {
                let spec = other.strip_prefix("e2emn-").unwrap_or(other);
                Ok(Variant::Baseline(spec.parse()?))
            }
        }
    }
}

impl Serialize for Variant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// Forward pass for `variant`. Baselines use `params.hops` read-outs and an
/// unscaled question as query.
pub fn predict(
    enc: &EncodedInstance,
    params: &ModelParams,
    variant: Variant,
    keep_trace: bool,
) -> Result<Prediction> {
    match variant {
        Variant::Hmmn => hmmn_forward(enc, params, true, keep_trace),
        Variant::HmmnNoAnswer => hmmn_forward(enc, params, false, keep_trace),
        Variant::Baseline(spec) => predict_baseline(
            &spec,
            enc,
            params.hops,
            1.0,
            params.normalize_coattention,
            keep_trace,
        ),
    }
}
