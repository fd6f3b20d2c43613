mod common;

use common::{encoded, max_abs_diff, oracle_encode};
use hmmn_core::data::{random_instances, RandomSpec};
use hmmn_core::encodings::encode_instance;
use hmmn_core::model::predict;
use hmmn_core::{Dims, ModelParams, RepresentationSpec, Variant};
use hmmn_oracle as oracle;

const TOL: f64 = 1e-10;

fn spec() -> RandomSpec {
    RandomSpec {
        dims: Dims::new(8, 6, 5),
        vocab: 12,
        m: 5,
        n: 4,
        regions: 3,
        max_sentence: 4,
    }
}

#[test]
fn encodings_match_oracle() {
    let (vocab, raws) = random_instances(&spec(), 20, 11).unwrap();
    let params = ModelParams::init(spec().dims, 0.45, 2, 11).unwrap();
    for raw in &raws {
        let ours = encode_instance(raw, &vocab, &params).unwrap();
        let theirs = oracle_encode(raw, &vocab, &params);
        let ours = encoded(&ours);
        for (a, b) in ours
            .s
            .iter()
            .zip(&theirs.s)
            .chain(ours.v.iter().zip(&theirs.v))
        {
            assert!(max_abs_diff(a, b) < TOL);
        }
        for (a, b) in ours.a.iter().zip(&theirs.a) {
            assert!(max_abs_diff(a, b) < TOL);
        }
        assert!(max_abs_diff(&ours.q, &theirs.q) < TOL);
    }
}

#[test]
fn two_hop_cell_matches_oracle_on_100_instances() {
    let (vocab, raws) = random_instances(&spec(), 100, 3).unwrap();
    let params = ModelParams::init(spec().dims, 0.45, 2, 3).unwrap();
    for (variant, aa) in [(Variant::Hmmn, true), (Variant::HmmnNoAnswer, false)] {
        for raw in &raws {
            let enc = encode_instance(raw, &vocab, &params).unwrap();
            let pred = predict(&enc, &params, variant, false).unwrap();
            let (f, p) =
                oracle::hmmn_forward(&oracle_encode(raw, &vocab, &params), 0.45, 2, aa, false);
            assert!(
                max_abs_diff(&pred.scores, &f) < TOL,
                "{variant}: {:?} vs {f:?}",
                pred.scores
            );
            assert!(max_abs_diff(&pred.probs, &p) < TOL);
        }
    }
}

#[test]
fn normalized_coattention_matches_oracle() {
    let (vocab, raws) = random_instances(&spec(), 30, 5).unwrap();
    let mut params = ModelParams::init(spec().dims, 0.3, 3, 5).unwrap();
    params.normalize_coattention = true;
    for raw in &raws {
        let enc = encode_instance(raw, &vocab, &params).unwrap();
        let pred = predict(&enc, &params, Variant::Hmmn, false).unwrap();
        let (f, _) = oracle::hmmn_forward(&oracle_encode(raw, &vocab, &params), 0.3, 3, true, true);
        assert!(max_abs_diff(&pred.scores, &f) < TOL);
    }
}

#[test]
fn one_hop_cell_without_answers_equals_subtitle_reweighted_baseline() {
    let spec_vs: RepresentationSpec = "V->S'".parse().unwrap();
    let (vocab, raws) = random_instances(&spec(), 100, 9).unwrap();
    for lambda in [0.45, 1.0] {
        let params = ModelParams::init(spec().dims, lambda, 1, 9).unwrap();
        for raw in &raws {
            let enc = encode_instance(raw, &vocab, &params).unwrap();
            let cell = predict(&enc, &params, Variant::HmmnNoAnswer, false).unwrap();
            let base =
                hmmn_core::ablation::predict_baseline(&spec_vs, &enc, 1, lambda, false, false)
                    .unwrap();
            assert!(max_abs_diff(&cell.scores, &base.scores) < TOL);
            assert!(max_abs_diff(&cell.probs, &base.probs) < TOL);
            assert_eq!(cell.argmax, base.argmax);
        }
    }
}

#[test]
fn baseline_memory_matches_oracle_composition() {
    let (vocab, raws) = random_instances(&spec(), 20, 21).unwrap();
    let params = ModelParams::init(spec().dims, 0.45, 2, 21).unwrap();
    for raw in &raws {
        let enc = encode_instance(raw, &vocab, &params).unwrap();
        let o = encoded(&enc);
        let (_, s_prime) = oracle::query_to_context(&o.q, &o.s);
        let memory = oracle::inter_modal(&o.v, &s_prime);
        let (f, _) = oracle::e2emn_forward(&o.q, &memory, &o.a, 2, 1.0);
        let pred = predict(
            &enc,
            &params,
            Variant::Baseline("V->S'".parse().unwrap()),
            false,
        )
        .unwrap();
        assert!(max_abs_diff(&pred.scores, &f) < TOL);

        let (f, _) = oracle::e2emn_forward(&o.q, &oracle::self_attention(&o.s), &o.a, 2, 1.0);
        let pred = predict(
            &enc,
            &params,
            Variant::Baseline("Shat".parse().unwrap()),
            false,
        )
        .unwrap();
        assert!(max_abs_diff(&pred.scores, &f) < TOL);
    }
}
