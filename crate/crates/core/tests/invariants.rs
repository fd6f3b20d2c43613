use hmmn_core::ablation::enumerate_specs;
use hmmn_core::attention::{self_affinity, self_attention, summarize};
use hmmn_core::data::{random_instances, RandomSpec};
use hmmn_core::encodings::encode_instance;
use hmmn_core::gradients::cross_entropy;
use hmmn_core::model::predict;
use hmmn_core::numerics::softmax;
use hmmn_core::{Mat, ModelParams, RawInstance, Variant, Vocabulary};
use proptest::prelude::*;

fn variants() -> Vec<Variant> {
    let mut v = vec![Variant::Hmmn, Variant::HmmnNoAnswer];
    v.extend(enumerate_specs().into_iter().map(Variant::Baseline));
    v
}

fn fixture(seed: u64, hops: usize) -> (Vocabulary, RawInstance, ModelParams) {
    let spec = RandomSpec::toy();
    let (vocab, mut raws) = random_instances(&spec, 1, seed).unwrap();
    let params = ModelParams::init(spec.dims, 0.45, hops, seed).unwrap();
    (vocab, raws.remove(0), params)
}

fn mat(rows: usize, max_cols: usize) -> impl Strategy<Value = Mat> {
    (1..=max_cols).prop_flat_map(move |cols| {
        prop::collection::vec(-3.0f64..3.0, rows * cols)
            .prop_map(move |d| Mat::from_col_major(rows, cols, d).unwrap())
    })
}

proptest! {
    #[test]
    fn softmax_lies_on_simplex_and_ignores_shifts(
        x in prop::collection::vec(-50.0f64..50.0, 1..12),
        c in -100.0f64..100.0,
    ) {
        let p = softmax(&x).unwrap();
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
        let q = softmax(&shifted).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn summary_is_in_hull_and_order_free(
        m in mat(3, 7),
        q in prop::collection::vec(-2.0f64..2.0, 3),
        rot in 0usize..7,
    ) {
        let u = summarize(&q, &m).unwrap();
        for (r, &ur) in u.iter().enumerate() {
            let row: Vec<f64> = (0..m.cols()).map(|c| m.get(r, c)).collect();
            let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(ur >= lo - 1e-12 && ur <= hi + 1e-12);
        }
        let k = m.cols();
        let cols: Vec<&[f64]> = (0..k).map(|i| m.col((i + rot) % k)).collect();
        let v = summarize(&q, &Mat::from_columns(3, &cols).unwrap()).unwrap();
        for (a, b) in u.iter().zip(&v) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn self_attention_skips_own_slot(m in mat(4, 6), c in -3.0f64..3.0) {
        let g = self_affinity(&m);
        for i in 0..m.cols() {
            prop_assert_eq!(g.get(i, i), 0.0);
        }
        // without a self term, slot 0's output is linear in slot 0
        let mut scaled = m.clone();
        for x in scaled.col_mut(0) {
            *x *= c;
        }
        let a = self_attention(&m).unwrap();
        let b = self_attention(&scaled).unwrap();
        for r in 0..4 {
            prop_assert!((b.get(r, 0) - c * a.get(r, 0)).abs() < 1e-9 * (1.0 + a.get(r, 0).abs()));
        }
        let lone = Mat::from_columns(4, &[m.col(0)]).unwrap();
        prop_assert!(self_attention(&lone).unwrap().as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn answer_permutation_is_equivariant(seed in 0u64..10_000, rot in 1usize..5, swap in any::<bool>()) {
        let (vocab, raw, params) = fixture(seed, 2);
        let mut perm: Vec<usize> = (0..5).map(|k| (k + rot) % 5).collect();
        if swap {
            perm.swap(0, 1);
        }
        let mut permuted = raw.clone();
        permuted.answers = perm.iter().map(|&p| raw.answers[p].clone()).collect();
        permuted.gold = perm.iter().position(|&p| p == raw.gold).unwrap();
        let enc = encode_instance(&raw, &vocab, &params).unwrap();
        let enc_p = encode_instance(&permuted, &vocab, &params).unwrap();
        for variant in variants() {
            let a = predict(&enc, &params, variant, false).unwrap();
            let b = predict(&enc_p, &params, variant, false).unwrap();
            for (k, &p) in perm.iter().enumerate() {
                prop_assert!((b.scores[k] - a.scores[p]).abs() < 1e-10, "{}", variant);
                prop_assert!((b.probs[k] - a.probs[p]).abs() < 1e-12);
            }
            // equal to the original choice unless the maximum is tied
            let best = a.probs[a.argmax];
            prop_assert_eq!(a.probs[perm[b.argmax]], best);
            if a.probs.iter().filter(|&&p| p == best).count() == 1 {
                prop_assert_eq!(perm[b.argmax], a.argmax);
            }
        }
    }

    #[test]
    fn identical_answers_are_uniform(seed in 0u64..10_000, hops in 1usize..4) {
        let (vocab, mut raw, params) = fixture(seed, hops);
        let first = raw.answers[0].clone();
        raw.answers = vec![first; 5];
        let enc = encode_instance(&raw, &vocab, &params).unwrap();
        for variant in variants() {
            let pred = predict(&enc, &params, variant, false).unwrap();
            for &p in &pred.probs {
                prop_assert!((p - 0.2).abs() < 1e-12, "{}: {:?}", variant, pred.probs);
            }
            let loss = cross_entropy(&pred.scores, raw.gold);
            prop_assert!((loss - 5f64.ln()).abs() < 1e-12);
        }
    }
}

#[test]
fn uniform_scores_cost_ln_five() {
    for gold in 0..5 {
        assert!((cross_entropy(&[0.7; 5], gold) - 5f64.ln()).abs() < 1e-12);
    }
}
