//! Generators and brute-force reference implementations shared by the
//! integration suites and the acceptance runner. Nothing here calls the
//! code under test except to construct inputs.

#![allow(dead_code)]

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use retina_rag::imaging::{GrayImage, Raster, StructuringElement};
use retina_rag::kb::{KnowledgeEntry, VectorIndex};
use retina_rag::prediction::{DiagnosticPrediction, DrGrade};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- retrieval

pub fn random_tags(rng: &mut ChaCha8Rng) -> (Option<DrGrade>, Option<bool>) {
    let grade = rng
        .random_bool(0.85)
        .then(|| DrGrade::new(rng.random_range(0..5)).unwrap());
    let me = rng.random_bool(0.85).then(|| rng.random_bool(0.5));
    (grade, me)
}

/// Random index; about one in ten entries duplicates an earlier vector so
/// score ties are exercised.
pub fn random_index(rng: &mut ChaCha8Rng, n: usize, d: usize) -> VectorIndex {
    let mut entries = Vec::with_capacity(n);
    let mut vectors: Vec<Vec<f32>> = Vec::with_capacity(n);
    for i in 0..n {
        let (dr_grade, me_label) = random_tags(rng);
        entries.push(KnowledgeEntry {
            id: format!("e{:04}-{}", rng.random_range(0..10_000u32), i),
            dr_grade,
            me_label,
            text: format!("snippet {i}"),
        });
        let v = if i > 0 && rng.random_bool(0.1) {
            vectors[rng.random_range(0..i)].clone()
        } else {
            loop {
                let v: Vec<f32> = (0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
                if v.iter().any(|x| x.abs() > 1e-3) {
                    break v;
                }
            }
        };
        vectors.push(v);
    }
    VectorIndex::from_vectors(entries, vectors).expect("random index is valid")
}

pub fn random_prediction(rng: &mut ChaCha8Rng) -> DiagnosticPrediction {
    let grade = DrGrade::new(rng.random_range(0..5)).unwrap();
    let s_g = rng.random_range(0.3..1.0);
    let s_e = rng.random_range(0.5..1.0);
    DiagnosticPrediction::from_summary(grade, rng.random_bool(0.5), s_g, s_e).unwrap()
}

pub fn random_query(rng: &mut ChaCha8Rng, d: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        if v.iter().any(|x| x.abs() > 1e-3) {
            return v;
        }
    }
}

pub fn class_matches(entry: &KnowledgeEntry, p: &DiagnosticPrediction) -> bool {
    entry.dr_grade.is_none_or(|g| g == p.grade()) && entry.me_label.is_none_or(|m| m == p.me_present())
}

/// Exhaustive scan: score every candidate, full sort, take k. Returns the
/// ids in rank order and whether the class filter was empty.
pub fn exhaustive_top_k(index: &VectorIndex, q: &[f32], p: &DiagnosticPrediction, k: usize) -> (Vec<String>, bool) {
    let norm = q.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    let qn: Vec<f32> = q.iter().map(|&x| (x as f64 / norm) as f32).collect();
    let matched: Vec<_> = index.entries().iter().filter(|e| class_matches(&e.entry, p)).collect();
    let fallback = matched.is_empty();
    let pool: Vec<_> = if fallback { index.entries().iter().collect() } else { matched };
    let mut scored: Vec<(f64, String)> = pool
        .iter()
        .map(|e| {
            let mut dot = 0.0f64;
            for i in 0..qn.len() {
                dot += qn[i] as f64 * e.vector[i] as f64;
            }
            (dot.clamp(-1.0, 1.0), e.entry.id.clone())
        })
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(&b.1)));
    (scored.into_iter().take(k).map(|s| s.1).collect(), fallback)
}

// ------------------------------------------------------------------ metrics

fn ngrams(tokens: &[String], n: usize) -> HashMap<Vec<String>, usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    out
}

/// Sentence BLEU-4 with clipped counts, eps-floored precisions, orders
/// without candidate n-grams dropped, closest-reference brevity penalty.
pub fn bleu4_oracle(c: &[String], refs: &[Vec<String>]) -> f64 {
    let mut logs = Vec::new();
    for n in 1..=4 {
        let total = c.len().saturating_sub(n - 1);
        if total == 0 {
            continue;
        }
        let cg = ngrams(c, n);
        let mut clipped = 0;
        for (g, k) in &cg {
            let max_ref = refs.iter().map(|r| ngrams(r, n).get(g).copied().unwrap_or(0)).max().unwrap_or(0);
            clipped += (*k).min(max_ref);
        }
        let p = clipped as f64 / total as f64;
        logs.push(p.max(1e-9).ln());
    }
    let r = refs
        .iter()
        .map(|r| r.len())
        .min_by_key(|&l| (l.abs_diff(c.len()), l))
        .unwrap();
    let bp = if c.len() >= r { 1.0 } else { (1.0 - r as f64 / c.len() as f64).exp() };
    bp * (logs.iter().sum::<f64>() / logs.len() as f64).exp()
}

pub fn lcs_oracle(a: &[String], b: &[String]) -> usize {
    // Recursive with memo, unlike the iterative table under test.
    fn go(a: &[String], b: &[String], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() || j == b.len() {
            return 0;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let v = if a[i] == b[j] {
            1 + go(a, b, i + 1, j + 1, memo)
        } else {
            go(a, b, i + 1, j, memo).max(go(a, b, i, j + 1, memo))
        };
        memo.insert((i, j), v);
        v
    }
    go(a, b, 0, 0, &mut HashMap::new())
}

/// Pair-counting AUC for one class: concordant pairs plus half the ties.
pub fn pair_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let (mut num, mut n_pos, mut n_neg) = (0.0f64, 0usize, 0usize);
    for i in 0..scores.len() {
        if positive[i] {
            n_pos += 1;
        } else {
            n_neg += 1;
        }
    }
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if positive[i] && !positive[j] {
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    Some(num / (n_pos * n_neg) as f64)
}

pub fn macro_pair_auc(labels: &[usize], probs: &[Vec<f64>]) -> Option<f64> {
    let c = probs[0].len();
    let per: Vec<f64> = (0..c)
        .filter_map(|k| {
            let s: Vec<f64> = probs.iter().map(|r| r[k]).collect();
            let pos: Vec<bool> = labels.iter().map(|&l| l == k).collect();
            pair_auc(&s, &pos)
        })
        .collect();
    let mut distinct = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    (distinct.len() >= 2).then(|| per.iter().sum::<f64>() / per.len() as f64)
}

/// Rows of small-integer weights, normalized; ties are frequent.
pub fn random_prob_rows(rng: &mut ChaCha8Rng, n: usize, c: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let w: Vec<f64> = (0..c).map(|_| rng.random_range(1..=4) as f64).collect();
            let s: f64 = w.iter().sum();
            w.iter().map(|x| x / s).collect()
        })
        .collect()
}

// --------------------------------------------------------------- morphology

fn at(img: &GrayImage, x: isize, y: isize) -> u8 {
    let cx = x.max(0).min(img.width() as isize - 1) as usize;
    let cy = y.max(0).min(img.height() as isize - 1) as usize;
    img.get(cx, cy)
}

/// Naive erosion: min of f(p + b) over active cells, edge-replicated.
pub fn erode_oracle(img: &GrayImage, se: &StructuringElement) -> Vec<u8> {
    let (w, h) = (img.width(), img.height());
    let (ax, ay) = se.anchor();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let mut m = u8::MAX;
            for sy in 0..se.height() {
                for sx in 0..se.width() {
                    if se.contains(sx, sy) {
                        let v = at(img, x as isize + sx as isize - ax as isize, y as isize + sy as isize - ay as isize);
                        m = m.min(v);
                    }
                }
            }
            out.push(m);
        }
    }
    out
}

/// Naive dilation: max of f(p - b) over active cells, edge-replicated.
pub fn dilate_oracle(img: &GrayImage, se: &StructuringElement) -> Vec<u8> {
    let (w, h) = (img.width(), img.height());
    let (ax, ay) = se.anchor();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let mut m = u8::MIN;
            for sy in 0..se.height() {
                for sx in 0..se.width() {
                    if se.contains(sx, sy) {
                        let v = at(img, x as isize - sx as isize + ax as isize, y as isize - sy as isize + ay as isize);
                        m = m.max(v);
                    }
                }
            }
            out.push(m);
        }
    }
    out
}

pub fn gray(w: usize, h: usize, data: Vec<u8>) -> GrayImage {
    GrayImage::new(w, h, data).unwrap()
}

pub fn top_hat_oracle(img: &GrayImage, se: &StructuringElement) -> Vec<u8> {
    let (w, h) = (img.width(), img.height());
    let opened = dilate_oracle(&gray(w, h, erode_oracle(img, se)), se);
    img.pixels().iter().zip(&opened).map(|(a, b)| a.saturating_sub(*b)).collect()
}

pub fn black_hat_oracle(img: &GrayImage, se: &StructuringElement) -> Vec<u8> {
    let (w, h) = (img.width(), img.height());
    let closed = erode_oracle(&gray(w, h, dilate_oracle(img, se)), se);
    closed.iter().zip(img.pixels()).map(|(a, b)| a.saturating_sub(*b)).collect()
}

pub fn random_element(rng: &mut ChaCha8Rng, max_side: usize) -> StructuringElement {
    let w = 2 * rng.random_range(0..=(max_side - 1) / 2) + 1;
    let h = 2 * rng.random_range(0..=(max_side - 1) / 2) + 1;
    loop {
        let mask: Vec<bool> = (0..w * h).map(|_| rng.random_bool(0.5)).collect();
        if let Ok(se) = StructuringElement::from_mask(w, h, mask) {
            return se;
        }
    }
}

/// Random mask with central symmetry (cell b active iff -b active).
pub fn random_symmetric_element(rng: &mut ChaCha8Rng, max_side: usize) -> StructuringElement {
    let w = 2 * rng.random_range(0..=(max_side - 1) / 2) + 1;
    let h = 2 * rng.random_range(0..=(max_side - 1) / 2) + 1;
    let mut mask = vec![false; w * h];
    for i in 0..=(w * h) / 2 {
        let on = i == (w * h) / 2 || rng.random_bool(0.5);
        mask[i] = on;
        mask[w * h - 1 - i] = on;
    }
    StructuringElement::from_mask(w, h, mask).unwrap()
}

pub fn random_gray(rng: &mut ChaCha8Rng, min_w: usize, min_h: usize, max_side: usize) -> GrayImage {
    let w = rng.random_range(min_w..=max_side);
    let h = rng.random_range(min_h..=max_side);
    let data = (0..w * h).map(|_| rng.random()).collect();
    gray(w, h, data)
}

// --------------------------------------------------------------- resampling

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x)
    }
}

fn kernel(x: f64) -> f64 {
    if x.abs() < 3.0 {
        sinc(x) * sinc(x / 3.0)
    } else {
        0.0
    }
}

fn axis_weights(in_len: usize, out_len: usize, o: usize) -> Vec<(usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    let stretch = if scale > 1.0 { scale } else { 1.0 };
    let centre = (o as f64 + 0.5) * scale - 0.5;
    let reach = (3.0 * stretch).ceil() as isize + 1;
    let base = centre.floor() as isize;
    let mut taps = Vec::new();
    for j in base - reach..=base + reach {
        let w = kernel((j as f64 - centre) / stretch);
        if w != 0.0 {
            taps.push((j.max(0).min(in_len as isize - 1) as usize, w));
        }
    }
    let s: f64 = taps.iter().map(|t| t.1).sum();
    taps.into_iter().map(|(i, w)| (i, w / s)).collect()
}

/// Direct 2-D convolution from the kernel formula, no separable pass.
pub fn lanczos_oracle(data: &[u8], w: usize, h: usize, ch: usize, ow: usize, oh: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(ow * oh * ch);
    for oy in 0..oh {
        let wy = axis_weights(h, oh, oy);
        for ox in 0..ow {
            let wx = axis_weights(w, ow, ox);
            for c in 0..ch {
                let mut acc = 0.0;
                for &(sy, a) in &wy {
                    for &(sx, b) in &wx {
                        acc += a * b * data[(sy * w + sx) * ch + c] as f64;
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}
