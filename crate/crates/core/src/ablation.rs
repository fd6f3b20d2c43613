//! Baseline memory representations built from the attention primitives.
//!
//! Eight single-stage representations (`S`, `V` and their query-to-context,
//! inter-modal and self-attended variants) and 32 two-stage ones where a
//! transformed video representation attends to a transformed subtitle
//! representation or the other way round. Each result is treated as the
//! memory of a single-modality end-to-end memory network.
//!
//! Spec strings use ASCII: `S`, `S'`, `Sbar`, `Shat` (likewise for `V`), and
//! `X->Y` for the second stage. `′`, `→`, `S̄`/`Ŝ` style input is accepted too.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::{coattend, query_to_context, self_attention};
use crate::encodings::EncodedInstance;
use crate::error::{Error, Result};
use crate::hmmn::{e2emn_forward_scaled, Prediction};
use crate::numerics::Mat;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Subtitles,
    Video,
}

impl Modality {
    pub fn symbol(self) -> char {
        match self {
            Modality::Subtitles => 'S',
            Modality::Video => 'V',
        }
    }

    pub fn other(self) -> Modality {
        match self {
            Modality::Subtitles => Modality::Video,
            Modality::Video => Modality::Subtitles,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Transform {
    Identity,
    /// `X'`: rescaled by question relevance.
    QueryToContext,
    /// `X̄`: X attends to the other modality.
    InterModal,
    /// `X̂`: X attends to itself, diagonal masked.
    SelfAttention,
}

impl Transform {
    pub const ALL: [Transform; 4] = [
        Transform::Identity,
        Transform::QueryToContext,
        Transform::InterModal,
        Transform::SelfAttention,
    ];

    fn suffix(self) -> &'static str {
        match self {
            Transform::Identity => "",
            Transform::QueryToContext => "'",
            Transform::InterModal => "bar",
            Transform::SelfAttention => "hat",
        }
    }
}

/// One transformed modality.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Operand {
    pub base: Modality,
    pub transform: Transform,
}

impl Operand {
    pub const fn new(base: Modality, transform: Transform) -> Self {
        Operand { base, transform }
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.base.symbol(), self.transform.suffix())
    }
}

impl FromStr for Operand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let mut chars = s.chars();
        let base = match chars.next() {
            Some('S') | Some('s') => Modality::Subtitles,
            Some('V') | Some('v') => Modality::Video,
            _ => return Err(Error::InvalidSpec(s.to_string())),
        };
        let rest: String = chars.collect();
        let transform = match rest.as_str() {
            "" => Transform::Identity,
            "'" | "′" | "prime" => Transform::QueryToContext,
            "bar" | "\u{0304}" | "_bar" => Transform::InterModal,
            "hat" | "\u{0302}" | "_hat" => Transform::SelfAttention,
            _ => return Err(Error::InvalidSpec(s.to_string())),
        };
        Ok(Operand { base, transform })
    }
}

/// A baseline memory: one operand, or one operand attending to another of
/// the opposite modality.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RepresentationSpec {
    Single(Operand),
    Pair { left: Operand, right: Operand },
}

impl RepresentationSpec {
    pub fn single(base: Modality, transform: Transform) -> Self {
        RepresentationSpec::Single(Operand::new(base, transform))
    }

    pub fn pair(left: Operand, right: Operand) -> Result<Self> {
        let spec = RepresentationSpec::Pair { left, right };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            RepresentationSpec::Single(_) => Ok(()),
            RepresentationSpec::Pair { left, right } if left.base != right.base => Ok(()),
            _ => Err(Error::InvalidSpec(format!(
                "{self}: both stages draw from the same modality"
            ))),
        }
    }

    /// The modality whose slots the output keeps.
    pub fn output_modality(&self) -> Modality {
        match self {
            RepresentationSpec::Single(op) => op.base,
            RepresentationSpec::Pair { left, .. } => left.base,
        }
    }
}

impl fmt::Display for RepresentationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RepresentationSpec::Single(op) => write!(f, "{op}"),
            RepresentationSpec::Pair { left, right } => write!(f, "{left}->{right}"),
        }
    }
}

impl FromStr for RepresentationSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let normalized = s.replace('→', "->");
        let spec = match normalized.split_once("->") {
            None => RepresentationSpec::Single(normalized.parse()?),
            Some((l, r)) => RepresentationSpec::Pair {
                left: l.parse()?,
                right: r.parse()?,
            },
        };
        spec.validate()
            .map_err(|_| Error::InvalidSpec(s.to_string()))?;
        Ok(spec)
    }
}

impl Serialize for RepresentationSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RepresentationSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Where a spec sits in the published result tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct TablePosition {
    /// 3 for single-stage baselines, 4 for two-stage ones.
    pub table: u8,
    /// Zero-based row.
    pub row: usize,
    /// Zero-based column: 0 is the video-attends-subtitles side.
    pub column: usize,
}

/// All 40 baselines: the 8 single-stage ones, then the 32 two-stage ones in
/// row-major order (video variant outer, subtitle variant inner, `V→S`
/// column before `S→V`).
pub fn enumerate_specs() -> Vec<RepresentationSpec> {
    let mut specs = Vec::with_capacity(40);
    for t in Transform::ALL {
        specs.push(RepresentationSpec::single(Modality::Video, t));
        specs.push(RepresentationSpec::single(Modality::Subtitles, t));
    }
    for vt in Transform::ALL {
        for st in Transform::ALL {
            let v = Operand::new(Modality::Video, vt);
            let s = Operand::new(Modality::Subtitles, st);
            specs.push(RepresentationSpec::Pair { left: v, right: s });
            specs.push(RepresentationSpec::Pair { left: s, right: v });
        }
    }
    specs
}

pub fn table_position(spec: &RepresentationSpec) -> TablePosition {
    let idx = |t: Transform| Transform::ALL.iter().position(|&x| x == t).unwrap();
    match spec {
        RepresentationSpec::Single(op) => TablePosition {
            table: 3,
            row: 2 * idx(op.transform) + usize::from(op.base == Modality::Subtitles),
            column: 0,
        },
        RepresentationSpec::Pair { left, right } => {
            let (v, s) = if left.base == Modality::Video {
                (left, right)
            } else {
                (right, left)
            };
            TablePosition {
                table: 4,
                row: 4 * idx(v.transform) + idx(s.transform),
                column: usize::from(left.base == Modality::Subtitles),
            }
        }
    }
}

fn base(enc: &EncodedInstance, m: Modality) -> &Mat {
    match m {
        Modality::Subtitles => &enc.s,
        Modality::Video => &enc.v,
    }
}

/// A transformed modality; `query` drives the query-to-context variant.
pub fn build_operand(
    op: Operand,
    enc: &EncodedInstance,
    query: &[f64],
    normalize_coattention: bool,
) -> Result<Mat> {
    let x = base(enc, op.base);
    match op.transform {
        Transform::Identity => Ok(x.clone()),
        Transform::QueryToContext => Ok(query_to_context(query, x)?.memory),
        Transform::InterModal => {
            Ok(coattend(x, base(enc, op.base.other()), normalize_coattention)?.output)
        }
        Transform::SelfAttention => self_attention(x),
    }
}

pub fn build_representation_with(
    spec: &RepresentationSpec,
    enc: &EncodedInstance,
    query: &[f64],
    normalize_coattention: bool,
) -> Result<Mat> {
    spec.validate()?;
    match spec {
        RepresentationSpec::Single(op) => build_operand(*op, enc, query, normalize_coattention),
        RepresentationSpec::Pair { left, right } => {
            let l = build_operand(*left, enc, query, normalize_coattention)?;
            let r = build_operand(*right, enc, query, normalize_coattention)?;
            Ok(coattend(&l, &r, normalize_coattention)?.output)
        }
    }
}

/// Memory matrix for `spec`: `d x m` or `d x n` depending on the left
/// operand. `query` is used by every primed stage (normally `enc.q`).
pub fn build_representation(
    spec: &RepresentationSpec,
    enc: &EncodedInstance,
    query: &[f64],
) -> Result<Mat> {
    build_representation_with(spec, enc, query, false)
}

/// End-to-end memory network over the representation; primed stages and the
/// first retrieval query both use `query_scale · q`.
pub fn predict_baseline(
    spec: &RepresentationSpec,
    enc: &EncodedInstance,
    hops: usize,
    query_scale: f64,
    normalize_coattention: bool,
    keep_trace: bool,
) -> Result<Prediction> {
    let query: Vec<f64> = enc.q.iter().map(|x| query_scale * x).collect();
    let memory = build_representation_with(spec, enc, &query, normalize_coattention)?;
    e2emn_forward_scaled(&enc.q, &memory, &enc.a, hops, query_scale, keep_trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use hmmn_oracle as oracle;
    use std::collections::HashSet;

    fn random_encoded(seed: u64, d: usize, m: usize, n: usize) -> EncodedInstance {
        let mut rng = oracle::Lcg::new(seed);
        let mut mat = |r, c| Mat::from_fn(r, c, |_, _| rng.uniform(-1.0, 1.0));
        let s = mat(d, m);
        let v = mat(d, n);
        let a = mat(d, 5);
        let q = mat(d, 1).col(0).to_vec();
        EncodedInstance {
            s,
            v,
            q,
            a,
            gold: 0,
        }
    }

    fn cols(m: &Mat) -> oracle::Cols {
        m.columns().map(|c| c.to_vec()).collect()
    }

    #[test]
    fn forty_specs_in_table_order() {
        let specs = enumerate_specs();
        assert_eq!(specs.len(), 40);
        assert_eq!(specs[0].to_string(), "V");
        assert_eq!(specs[1].to_string(), "S");
        assert_eq!(specs[7].to_string(), "Shat");
        assert_eq!(specs[8].to_string(), "V->S");
        assert_eq!(specs[9].to_string(), "S->V");
        assert_eq!(specs[10].to_string(), "V->S'");
        assert_eq!(specs[39].to_string(), "Shat->Vhat");
        let unique: HashSet<_> = specs.iter().collect();
        assert_eq!(unique.len(), 40);
        assert_eq!(
            specs
                .iter()
                .filter(|s| matches!(s, RepresentationSpec::Single(_)))
                .count(),
            8
        );
    }

    #[test]
    fn table_positions_are_a_grid() {
        let specs = enumerate_specs();
        let mut seen = HashSet::new();
        for s in &specs {
            let p = table_position(s);
            match p.table {
                3 => assert!(p.row < 8 && p.column == 0),
                4 => assert!(p.row < 16 && p.column < 2),
                _ => panic!(),
            }
            assert!(seen.insert((p.table, p.row, p.column)));
        }
        let pos = table_position(&"S'->Vhat".parse().unwrap());
        assert_eq!((pos.table, pos.row, pos.column), (4, 13, 1));
    }

    #[test]
    fn spec_strings_round_trip() {
        for s in enumerate_specs() {
            let parsed: RepresentationSpec = s.to_string().parse().unwrap();
            assert_eq!(parsed, s);
        }
        assert_eq!(
            "V→S′".parse::<RepresentationSpec>().unwrap(),
            "V->S'".parse().unwrap()
        );
        assert!("S->S'".parse::<RepresentationSpec>().is_err());
        assert!("X".parse::<RepresentationSpec>().is_err());
        assert!("Vtilde".parse::<RepresentationSpec>().is_err());
        let json = serde_json::to_string(&enumerate_specs()[12]).unwrap();
        assert_eq!(json, "\"V->Sbar\"");
    }

    #[test]
    fn same_modality_pair_is_invalid() {
        let s = Operand::new(Modality::Subtitles, Transform::Identity);
        assert!(RepresentationSpec::pair(s, s).is_err());
        let enc = random_encoded(1, 3, 2, 2);
        let bad = RepresentationSpec::Pair { left: s, right: s };
        assert!(build_representation(&bad, &enc, &enc.q).is_err());
    }

    #[test]
    fn identity_returns_input() {
        let enc = random_encoded(2, 4, 3, 2);
        let out = build_representation(&"S".parse().unwrap(), &enc, &enc.q).unwrap();
        assert_eq!(out, enc.s);
    }

    #[test]
    fn self_attention_on_orthogonal_columns() {
        let mut enc = random_encoded(2, 3, 2, 2);
        enc.s = Mat::from_columns(3, &[vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 2.0]]).unwrap();
        let out = build_representation(&"Shat".parse().unwrap(), &enc, &enc.q).unwrap();
        assert!(out.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn video_to_reweighted_subtitles_matches_manual_composition() {
        let enc = random_encoded(5, 4, 3, 2);
        let out = build_representation(&"V->S'".parse().unwrap(), &enc, &enc.q).unwrap();
        let (_, s_prime) = oracle::query_to_context(&enc.q, &cols(&enc.s));
        let expected = oracle::inter_modal(&cols(&enc.v), &s_prime);
        for (i, col) in expected.iter().enumerate() {
            for (a, b) in out.col(i).iter().zip(col) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn output_shapes_follow_left_operand() {
        let (d, m, n) = (4, 5, 3);
        let enc = random_encoded(9, d, m, n);
        for spec in enumerate_specs() {
            let out = build_representation(&spec, &enc, &enc.q).unwrap();
            let cols = match spec.output_modality() {
                Modality::Subtitles => m,
                Modality::Video => n,
            };
            assert_eq!(out.shape(), (d, cols), "{spec}");
        }
    }
}
