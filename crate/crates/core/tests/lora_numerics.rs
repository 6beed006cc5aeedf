use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use retina_rag::train::{
    counts_from_fractions, inverse_frequency_weights, lora_forward, lora_grad, merge_weights, sft_loss, LoraAdapter,
    SftBatch,
};

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn random_adapter(rng: &mut ChaCha8Rng, max_side: usize) -> LoraAdapter {
    let m = rng.random_range(1..=max_side);
    let n = rng.random_range(1..=max_side);
    let r = rng.random_range(1..=m.min(n).min(4));
    let alpha = rng.random_range(0.5..32.0);
    LoraAdapter::new(
        random_matrix(rng, m, n),
        random_matrix(rng, r, n),
        random_matrix(rng, m, r),
        alpha,
    )
    .unwrap()
}

fn objective(ad: &LoraAdapter, x: &DVector<f64>, up: &DVector<f64>) -> f64 {
    up.dot(&lora_forward(ad, x).unwrap())
}

#[test]
fn factored_matches_merged() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..1000 {
        let ad = random_adapter(&mut rng, 32);
        let x = DVector::from_fn(ad.base().ncols(), |_, _| rng.random_range(-1.0..1.0));
        let factored = lora_forward(&ad, &x).unwrap();
        // Dense oracle: build W' entry by entry.
        let (m, n) = ad.base().shape();
        let merged_oracle = DMatrix::from_fn(m, n, |i, j| {
            ad.base()[(i, j)] + ad.scale() * (0..ad.rank()).map(|k| ad.b()[(i, k)] * ad.a()[(k, j)]).sum::<f64>()
        });
        assert!((merge_weights(&ad) - &merged_oracle).amax() <= 1e-12 * merged_oracle.amax().max(1.0));
        let dense = &merged_oracle * &x;
        let rel = (&factored - &dense).amax() / dense.amax().max(1e-300);
        assert!(rel <= 1e-10, "relative error {rel}");
    }
}

#[test]
fn gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let h = 1e-5;
    for _ in 0..100 {
        let ad = random_adapter(&mut rng, 16);
        let (m, n) = ad.base().shape();
        let x = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let up = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        let g = lora_grad(&ad, &x, &up).unwrap();

        let mut fd_a = DMatrix::zeros(ad.rank(), n);
        for idx in 0..fd_a.len() {
            let (mut plus, mut minus) = (ad.a().clone(), ad.a().clone());
            plus[idx] += h;
            minus[idx] -= h;
            let mut p = ad.clone();
            p.set_factors(plus, ad.b().clone()).unwrap();
            let mut q = ad.clone();
            q.set_factors(minus, ad.b().clone()).unwrap();
            fd_a[idx] = (objective(&p, &x, &up) - objective(&q, &x, &up)) / (2.0 * h);
        }
        let mut fd_b = DMatrix::zeros(m, ad.rank());
        for idx in 0..fd_b.len() {
            let (mut plus, mut minus) = (ad.b().clone(), ad.b().clone());
            plus[idx] += h;
            minus[idx] -= h;
            let mut p = ad.clone();
            p.set_factors(ad.a().clone(), plus).unwrap();
            let mut q = ad.clone();
            q.set_factors(ad.a().clone(), minus).unwrap();
            fd_b[idx] = (objective(&p, &x, &up) - objective(&q, &x, &up)) / (2.0 * h);
        }
        for (analytic, numeric) in [(&g.a, &fd_a), (&g.b, &fd_b)] {
            let rel = (analytic - numeric).amax() / numeric.amax().max(analytic.amax()).max(1e-12);
            assert!(rel < 1e-4, "relative error {rel}");
        }
    }
}

#[test]
fn uniform_logits_give_ln_vocab() {
    for vocab in [2usize, 3, 17, 1000, 32_000] {
        for &level in &[0.0, -3.5, 12.25] {
            let t = 5;
            let batch = SftBatch {
                logits: DMatrix::from_element(t, vocab, level),
                target_ids: (0..t).map(|i| (i * 7) % vocab).collect(),
                assistant_mask: SftBatch::response_mask(2, t),
            };
            let loss = sft_loss(&batch).unwrap();
            assert!((loss - (vocab as f64).ln()).abs() < 1e-12, "V={vocab}: {loss}");
        }
    }
}

#[test]
fn mixed_fixture_matches_hand_softmax() {
    let logits = DMatrix::from_row_slice(
        4,
        3,
        &[1.0, 2.0, 0.5, 0.0, 0.0, 3.0, -1.0, 0.5, 0.25, 2.0, -2.0, 0.0],
    );
    let batch = SftBatch {
        logits,
        target_ids: vec![1, 2, 0, 0],
        assistant_mask: vec![false, true, true, true],
    };
    let ce = |row: [f64; 3], t: usize| -> f64 {
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        -(row[t].exp() / z).ln()
    };
    let want = (ce([0.0, 0.0, 3.0], 2) + ce([-1.0, 0.5, 0.25], 0) + ce([2.0, -2.0, 0.0], 0)) / 3.0;
    assert!((sft_loss(&batch).unwrap() - want).abs() < 1e-10);
}

#[test]
fn fixture_distribution_weights() {
    let counts = counts_from_fractions(2254, &[0.526, 0.130, 0.227, 0.074, 0.043]).unwrap();
    assert_eq!(counts, [1185, 293, 512, 167, 97]);
    let w = inverse_frequency_weights(&counts).unwrap();
    for (got, want) in w.weights.iter().zip([0.380, 1.539, 0.880, 2.700, 4.648]) {
        assert!((got - want).abs() < 1e-3, "{got} vs {want}");
    }
    let weighted: f64 = w.weights.iter().zip(&counts).map(|(w, &n)| w * n as f64).sum();
    assert!((weighted - 2254.0).abs() < 1e-9);

    let two = inverse_frequency_weights(&[1, 9]).unwrap();
    assert!((two.weights[0] - 5.0).abs() < 1e-12);
    assert!((two.weights[1] - 5.0 / 9.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn weighted_count_is_total(counts in prop::collection::vec(1u64..100_000, 1..12)) {
        let w = inverse_frequency_weights(&counts).unwrap();
        let total: u64 = counts.iter().sum();
        let weighted: f64 = w.weights.iter().zip(&counts).map(|(w, &n)| w * n as f64).sum();
        prop_assert!((weighted - total as f64).abs() <= 1e-9 * (total as f64).max(1.0));
    }

    #[test]
    fn apportioned_counts_sum_to_total(total in 0u64..1_000_000, raw in prop::collection::vec(0.0f64..1.0, 1..8)) {
        let s: f64 = raw.iter().sum();
        prop_assume!(s > 1e-6);
        let fractions: Vec<f64> = raw.iter().map(|r| r / s).collect();
        let counts = counts_from_fractions(total, &fractions).unwrap();
        prop_assert_eq!(counts.iter().sum::<u64>(), total);
        for (c, f) in counts.iter().zip(&fractions) {
            prop_assert!((*c as f64 - f * total as f64).abs() < 1.0 + 1e-6);
        }
    }

    #[test]
    fn unmasked_logits_do_not_matter(seed in any::<u64>(), t in 2usize..10, v in 2usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prompt = rng.random_range(1..t);
        let logits = random_matrix(&mut rng, t, v) * 5.0;
        let targets: Vec<usize> = (0..t).map(|_| rng.random_range(0..v)).collect();
        let mask = SftBatch::response_mask(prompt, t);
        let base = sft_loss(&SftBatch { logits: logits.clone(), target_ids: targets.clone(), assistant_mask: mask.clone() }).unwrap();
        let mut perturbed = logits;
        for r in 0..prompt {
            for c in 0..v {
                perturbed[(r, c)] = rng.random_range(-1e6..1e6);
            }
        }
        let mut targets2 = targets;
        for tgt in targets2.iter_mut().take(prompt) {
            *tgt = rng.random_range(0..v);
        }
        let again = sft_loss(&SftBatch { logits: perturbed, target_ids: targets2, assistant_mask: mask }).unwrap();
        prop_assert_eq!(base.to_bits(), again.to_bits());
    }
}
