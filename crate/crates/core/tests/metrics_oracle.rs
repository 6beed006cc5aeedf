mod common;

use proptest::prelude::*;
use rand::Rng;

use retina_rag::metrics::{
    binary_auc, bleu4, lcs_len, macro_auc_ovr, rouge_l, rouge_n, tokenize, weighted_prf, ConfusionMatrix,
    TokenSequence,
};

use common::{bleu4_oracle, lcs_oracle, macro_pair_auc, pair_auc, random_prob_rows};

fn t(s: &str) -> TokenSequence {
    tokenize(s)
}

fn random_tokens(rng: &mut impl Rng, max_len: usize, vocab: u8) -> Vec<String> {
    let len = rng.random_range(1..=max_len);
    (0..len).map(|_| ((b'a' + rng.random_range(0..vocab)) as char).to_string()).collect()
}

#[test]
fn bleu_fixture() {
    // p1 = 5/7, p2 = 3/6, p3 = 1/5, p4 floored; no brevity penalty.
    let s = bleu4(&t("the cat the cat on the mat"), &[t("the cat is on the mat")]).unwrap();
    assert!((s - 0.002_907_153_684_841_097).abs() < 1e-9);
    let c: Vec<String> = "the cat the cat on the mat".split(' ').map(String::from).collect();
    let r: Vec<String> = "the cat is on the mat".split(' ').map(String::from).collect();
    assert!((s - bleu4_oracle(&c, &[r])).abs() < 1e-12);
}

#[test]
fn rouge_fixtures() {
    let r1 = rouge_n(&t("a b c"), &t("a c d"), 1).unwrap();
    assert!((r1.f1 - 2.0 / 3.0).abs() < 1e-9);
    let l = rouge_l(&t("a b c d"), &t("a c b d")).unwrap();
    assert!((l.f1 - 0.75).abs() < 1e-9);
    let l = rouge_l(&t("a b c d"), &t("e a f g")).unwrap();
    assert!((l.f1 - 0.25).abs() < 1e-9);
}

#[test]
fn weighted_prf_fixture() {
    let cm = ConfusionMatrix::from_rows(&[vec![50, 10], vec![5, 35]]).unwrap();
    let s = weighted_prf(&cm).unwrap();
    // Hand computation in exact fractions.
    let p = 0.6 * (10.0 / 11.0) + 0.4 * (7.0 / 9.0);
    let r = 0.6 * (5.0 / 6.0) + 0.4 * (7.0 / 8.0);
    let f = 0.6 * (2.0 * (10.0 / 11.0) * (5.0 / 6.0) / (10.0 / 11.0 + 5.0 / 6.0))
        + 0.4 * (2.0 * (7.0 / 9.0) * (7.0 / 8.0) / (7.0 / 9.0 + 7.0 / 8.0));
    assert!((s.precision - p).abs() < 1e-9);
    assert!((s.recall - r).abs() < 1e-9);
    assert!((s.recall - 0.85).abs() < 1e-9);
    assert!((s.f1 - f).abs() < 1e-9);
}

#[test]
fn six_sample_auc_fixture() {
    // Positives score 0.8, 0.4, 0.9 against negatives 0.1, 0.4, 0.35:
    // 3 + (2 + 0.5) + 3 = 8.5 of 9 pairs for either class.
    let p1 = [0.1, 0.4, 0.35, 0.8, 0.4, 0.9];
    let probs: Vec<Vec<f64>> = p1.iter().map(|&p| vec![1.0 - p, p]).collect();
    let labels = [0, 0, 0, 1, 1, 1];
    let r = macro_auc_ovr(&labels, &probs).unwrap();
    assert!((r.macro_auc - 8.5 / 9.0).abs() < 1e-9);
    assert_eq!(Some(r.macro_auc), macro_pair_auc(&labels, &probs));
}

#[test]
fn bleu_matches_oracle_on_random_pairs() {
    let mut rng = common::rng(11);
    for _ in 0..1000 {
        let c = random_tokens(&mut rng, 12, 5);
        let refs: Vec<Vec<String>> = (0..rng.random_range(1..=3)).map(|_| random_tokens(&mut rng, 12, 5)).collect();
        let seqs: Vec<TokenSequence> = refs.iter().map(|r| TokenSequence::from_tokens(r.iter())).collect();
        let got = bleu4(&TokenSequence::from_tokens(c.iter()), &seqs).unwrap();
        let want = bleu4_oracle(&c, &refs);
        assert!((got - want).abs() <= 1e-6 * want.max(1e-12), "{c:?} {refs:?}: {got} vs {want}");
        assert!((0.0..=1.0).contains(&got));
    }
}

#[test]
fn rouge_matches_oracle_on_random_pairs() {
    let mut rng = common::rng(12);
    for _ in 0..1000 {
        let a = random_tokens(&mut rng, 15, 4);
        let b = random_tokens(&mut rng, 15, 4);
        let lcs = lcs_oracle(&a, &b);
        assert_eq!(lcs_len(&a, &b), lcs);
        let (sa, sb) = (TokenSequence::from_tokens(a.iter()), TokenSequence::from_tokens(b.iter()));
        let l = rouge_l(&sa, &sb).unwrap();
        assert_eq!(l.precision, lcs as f64 / a.len() as f64);
        assert_eq!(l.recall, lcs as f64 / b.len() as f64);

        let overlap: usize = {
            let mut pool = b.clone();
            a.iter()
                .filter(|w| match pool.iter().position(|x| x == *w) {
                    Some(i) => {
                        pool.swap_remove(i);
                        true
                    }
                    None => false,
                })
                .count()
        };
        let r1 = rouge_n(&sa, &sb, 1).unwrap();
        assert_eq!(r1.precision, overlap as f64 / a.len() as f64);
        assert_eq!(r1.recall, overlap as f64 / b.len() as f64);
        for s in [l, r1] {
            assert!((0.0..=1.0).contains(&s.f1));
            assert!(s.f1 <= s.precision.max(s.recall) + 1e-15);
        }
    }
}

#[test]
fn auc_equals_pair_counting() {
    let mut rng = common::rng(13);
    let mut checked = 0;
    while checked < 1000 {
        let n = rng.random_range(2..=200);
        let c = rng.random_range(2..=5);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let probs = random_prob_rows(&mut rng, n, c);
        let Some(want) = macro_pair_auc(&labels, &probs) else {
            continue;
        };
        let got = macro_auc_ovr(&labels, &probs).unwrap();
        assert!((got.macro_auc - want).abs() < 1e-12, "{} vs {want}", got.macro_auc);
        assert!((0.0..=1.0).contains(&got.macro_auc));
        for (k, auc) in got.per_class.iter().enumerate() {
            let s: Vec<f64> = probs.iter().map(|r| r[k]).collect();
            let pos: Vec<bool> = labels.iter().map(|&l| l == k).collect();
            assert_eq!(auc.map(|a| (a * 1e12).round()), pair_auc(&s, &pos).map(|a| (a * 1e12).round()));
        }
        checked += 1;
    }
}

#[test]
fn weighted_prf_properties() {
    let mut rng = common::rng(14);
    for _ in 0..1000 {
        let c = rng.random_range(2..=5);
        let n = rng.random_range(1..=300);
        let pairs: Vec<(usize, usize)> = (0..n).map(|_| (rng.random_range(0..c), rng.random_range(0..c))).collect();
        let cm = ConfusionMatrix::from_pairs(c, pairs.iter().copied()).unwrap();
        let s = weighted_prf(&cm).unwrap();
        for v in [s.precision, s.recall, s.f1] {
            assert!((0.0..=1.0 + 1e-12).contains(&v));
        }
        // Support-weighted recall is accuracy.
        assert!((s.recall - cm.accuracy()).abs() < 1e-12);

        // Relabeling classes permutes rows and columns together.
        let shift = rng.random_range(1..c);
        let relabeled = ConfusionMatrix::from_pairs(c, pairs.iter().map(|&(a, b)| ((a + shift) % c, (b + shift) % c))).unwrap();
        let r = weighted_prf(&relabeled).unwrap();
        assert!((r.precision - s.precision).abs() < 1e-12);
        assert!((r.f1 - s.f1).abs() < 1e-12);

        let diag = ConfusionMatrix::from_pairs(c, pairs.iter().map(|&(a, _)| (a, a))).unwrap();
        let d = weighted_prf(&diag).unwrap();
        for v in [d.precision, d.recall, d.f1] {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn binary_auc_inverts_with_scores() {
    let mut rng = common::rng(15);
    for _ in 0..200 {
        let n = rng.random_range(2..=60);
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(0..5) as f64).collect();
        let pos: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        let neg: Vec<f64> = s.iter().map(|x| -x).collect();
        match (binary_auc(&s, &pos), binary_auc(&neg, &pos)) {
            (Some(a), Some(b)) => assert!((a + b - 1.0).abs() < 1e-12),
            (None, None) => {}
            other => panic!("{other:?}"),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn identical_texts_score_one(words in prop::collection::vec("[a-z]{1,6}", 1..20)) {
        let text = words.join(" ");
        let s = t(&text);
        prop_assert_eq!(bleu4(&s, std::slice::from_ref(&s)).unwrap(), 1.0);
        prop_assert_eq!(rouge_l(&s, &s).unwrap().f1, 1.0);
        prop_assert_eq!(rouge_n(&s, &s, 1).unwrap().f1, 1.0);
    }

    #[test]
    fn scores_stay_in_unit_interval(a in "[a-d ,.]{1,40}", b in "[a-d ,.]{1,40}") {
        let (sa, sb) = (t(&a), t(&b));
        prop_assume!(!sa.is_empty() && !sb.is_empty());
        let bleu = bleu4(&sa, std::slice::from_ref(&sb)).unwrap();
        prop_assert!((0.0..=1.0).contains(&bleu));
        let l = rouge_l(&sa, &sb).unwrap();
        prop_assert!((0.0..=1.0).contains(&l.f1));
        // Swapping candidate and reference swaps precision and recall.
        let back = rouge_l(&sb, &sa).unwrap();
        prop_assert_eq!((l.precision, l.recall), (back.recall, back.precision));
    }
}
