//! Analytic gradients against central differences of the oracle's loss.

mod common;

use hmmn_core::data::{random_instances, RandomSpec};
use hmmn_core::gradients::{backward, check_gradients, relative_error, GradCheckConfig};
use hmmn_core::{Mat, ModelParams, Variant};
use hmmn_oracle as oracle;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn oracle_loss(
    batch: &[oracle::Instance],
    vocab: &oracle::Vocab,
    w1: &Mat,
    w2: &Mat,
    lambda: f64,
    hops: usize,
    aa: bool,
) -> f64 {
    oracle::hmmn_batch_loss(batch, vocab, &w1.to_rows(), &w2.to_rows(), lambda, hops, aa)
}

/// Max relative error over every entry of `analytic` against the oracle's
/// central difference in that entry.
fn worst_entry(analytic: &Mat, perturb: impl Fn(usize, f64) -> f64) -> f64 {
    (0..analytic.as_slice().len())
        .map(|i| {
            let fd = (perturb(i, H) - perturb(i, -H)) / (2.0 * H);
            relative_error(analytic.as_slice()[i], fd)
        })
        .fold(0.0, f64::max)
}

#[test]
fn toy_gradients_match_oracle_differences_over_20_seeds() {
    let spec = RandomSpec::toy();
    for seed in 0..20u64 {
        let (vocab, raws) = random_instances(&spec, 3, seed).unwrap();
        let params = ModelParams::init(spec.dims, 0.45, 2, seed).unwrap();
        let ovocab = common::vocab(&vocab);
        let obatch: Vec<_> = raws.iter().map(common::instance).collect();
        for (variant, aa) in [(Variant::Hmmn, true), (Variant::HmmnNoAnswer, false)] {
            let g = backward(&raws, &vocab, &params, variant).unwrap();
            let l = oracle_loss(&obatch, &ovocab, &params.w1, &params.w2, 0.45, 2, aa);
            assert!((g.loss - l).abs() < 1e-10);

            let e1 = worst_entry(&g.dw1, |i, h| {
                let mut w1 = params.w1.clone();
                w1.as_mut_slice()[i] += h;
                oracle_loss(&obatch, &ovocab, &w1, &params.w2, 0.45, 2, aa)
            });
            let e2 = worst_entry(&g.dw2, |i, h| {
                let mut w2 = params.w2.clone();
                w2.as_mut_slice()[i] += h;
                oracle_loss(&obatch, &ovocab, &params.w1, &w2, 0.45, 2, aa)
            });
            assert!(
                e1 < TOL && e2 < TOL,
                "seed {seed} {variant}: dW1 {e1:e}, dW2 {e2:e}"
            );
        }
    }
}

#[test]
fn built_in_check_agrees() {
    let spec = RandomSpec::toy();
    let (vocab, raws) = random_instances(&spec, 4, 99).unwrap();
    let params = ModelParams::init(spec.dims, 0.45, 2, 99).unwrap();
    let report = check_gradients(
        &raws,
        &vocab,
        &params,
        Variant::Hmmn,
        &GradCheckConfig::default(),
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
    assert_eq!(report.w1.entries_checked, 48);
    assert_eq!(report.w2.entries_checked, 30);
}
