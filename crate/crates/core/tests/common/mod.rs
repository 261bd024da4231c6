//! Helpers shared by the integration tests and the acceptance run: brute-force
//! metric oracles written from the formulas, a finite-difference gradient
//! checker, and small fixtures.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use speechvqa_core::data::{generate_dataset, BBox, Dataset, DatasetConfig};
use speechvqa_core::metrics::{stem, tokenize};
use speechvqa_core::model::{Component, Trainable};
use speechvqa_core::nn::Grads;
use speechvqa_core::training::{batch_loss, prepare_response, prepare_transcription, Prepared, TrainConfig};
use speechvqa_core::{AdapterKind, ModelBundle, ModelConfig};

// ---------------------------------------------------------------- oracles

fn count_of(tokens: &[String], t: &str) -> usize {
    tokens.iter().filter(|x| x.as_str() == t).count()
}

/// Clipped unigram precision times the brevity penalty, by direct counting.
pub fn oracle_bleu1(cand: &str, refs: &[&str]) -> f64 {
    let c = tokenize(cand);
    if c.is_empty() {
        return 0.0;
    }
    let rs: Vec<Vec<String>> = refs.iter().map(|r| tokenize(r)).collect();
    let mut distinct: Vec<&String> = c.iter().collect();
    distinct.sort();
    distinct.dedup();
    let mut clipped = 0;
    for t in distinct {
        let max_ref = rs.iter().map(|r| count_of(r, t)).max().unwrap_or(0);
        clipped += count_of(&c, t).min(max_ref);
    }
    // closest reference length, shorter on ties
    let mut best = usize::MAX;
    for r in &rs {
        let d = r.len().abs_diff(c.len());
        if best == usize::MAX || d < best.abs_diff(c.len()) || (d == best.abs_diff(c.len()) && r.len() < best) {
            best = r.len();
        }
    }
    let bp = (1.0 - best as f64 / c.len() as f64).exp().min(1.0);
    bp * clipped as f64 / c.len() as f64
}

/// Overlap by greedily striking matched reference tokens one at a time.
pub fn oracle_rouge1_f(cand: &str, refr: &str) -> f64 {
    let c = tokenize(cand);
    let mut r = tokenize(refr);
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    let r_len = r.len();
    let mut overlap = 0;
    for t in &c {
        if let Some(k) = r.iter().position(|x| x == t) {
            r.remove(k);
            overlap += 1;
        }
    }
    let p = overlap as f64 / c.len() as f64;
    let rec = overlap as f64 / r_len as f64;
    if p + rec == 0.0 {
        0.0
    } else {
        2.0 * p * rec / (p + rec)
    }
}

/// Enumerates every alignment (each candidate token unaligned or aligned to
/// an unused reference token with the same stem); keeps the most matches,
/// then the fewest chunks.
pub fn oracle_meteor(cand: &str, refr: &str) -> f64 {
    let c: Vec<String> = tokenize(cand).iter().map(|t| stem(t).to_string()).collect();
    let r: Vec<String> = tokenize(refr).iter().map(|t| stem(t).to_string()).collect();
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    let mut best = (0usize, usize::MAX);
    let mut assign: Vec<Option<usize>> = vec![None; c.len()];
    fn rec(
        i: usize,
        c: &[String],
        r: &[String],
        used: &mut Vec<bool>,
        assign: &mut Vec<Option<usize>>,
        best: &mut (usize, usize),
    ) {
        if i == c.len() {
            let pairs: Vec<(usize, usize)> = assign
                .iter()
                .enumerate()
                .filter_map(|(i, a)| a.map(|j| (i, j)))
                .collect();
            let m = pairs.len();
            let mut chunks = 0;
            for (k, &(ci, rj)) in pairs.iter().enumerate() {
                let continues = k > 0 && pairs[k - 1] == (ci.wrapping_sub(1), rj.wrapping_sub(1));
                if !continues {
                    chunks += 1;
                }
            }
            if m > best.0 || (m == best.0 && chunks < best.1) {
                *best = (m, chunks);
            }
            return;
        }
        assign[i] = None;
        rec(i + 1, c, r, used, assign, best);
        for j in 0..r.len() {
            if !used[j] && r[j] == c[i] {
                used[j] = true;
                assign[i] = Some(j);
                rec(i + 1, c, r, used, assign, best);
                assign[i] = None;
                used[j] = false;
            }
        }
    }
    rec(0, &c, &r, &mut vec![false; r.len()], &mut assign, &mut best);
    let (m, chunks) = best;
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / c.len() as f64;
    let rc = m as f64 / r.len() as f64;
    let fmean = 10.0 * p * rc / (rc + 9.0 * p);
    fmean * (1.0 - 0.5 * (chunks as f64 / m as f64).powi(3))
}

fn oracle_ngrams(tokens: &[String], n: usize) -> Vec<Vec<String>> {
    if tokens.len() < n {
        return Vec::new();
    }
    (0..=tokens.len() - n).map(|i| tokens[i..i + n].to_vec()).collect()
}

/// TF-IDF cosine per n, with every vector materialised over the union of
/// all n-grams seen anywhere.
pub fn oracle_cider(cands: &BTreeMap<String, String>, refs: &BTreeMap<String, Vec<String>>) -> f64 {
    let ids: Vec<&String> = cands.keys().collect();
    let n_docs = ids.len() as f64;
    let mut total = 0.0;
    for id in &ids {
        let c = tokenize(&cands[*id]);
        let rs: Vec<Vec<String>> = refs[*id].iter().map(|r| tokenize(r)).collect();
        let mut score = 0.0;
        for n in 1..=4 {
            let mut vocab: Vec<Vec<String>> = Vec::new();
            for other in &ids {
                vocab.extend(oracle_ngrams(&tokenize(&cands[*other]), n));
                for r in &refs[*other] {
                    vocab.extend(oracle_ngrams(&tokenize(r), n));
                }
            }
            vocab.sort();
            vocab.dedup();
            let idf: Vec<f64> = vocab
                .iter()
                .map(|g| {
                    let df = ids
                        .iter()
                        .filter(|other| {
                            refs[**other]
                                .iter()
                                .any(|r| oracle_ngrams(&tokenize(r), n).contains(g))
                        })
                        .count();
                    (n_docs / df.max(1) as f64).ln()
                })
                .collect();
            let vec_of = |toks: &[String]| -> Vec<f64> {
                let grams = oracle_ngrams(toks, n);
                vocab
                    .iter()
                    .zip(&idf)
                    .map(|(g, w)| grams.iter().filter(|x| *x == g).count() as f64 * w)
                    .collect()
            };
            let cv = vec_of(&c);
            let mut sim = 0.0;
            for r in &rs {
                let rv = vec_of(r);
                let dot: f64 = cv.iter().zip(&rv).map(|(a, b)| a * b).sum();
                let na = cv.iter().map(|a| a * a).sum::<f64>().sqrt();
                let nb = rv.iter().map(|b| b * b).sum::<f64>().sqrt();
                if na > 0.0 && nb > 0.0 {
                    sim += dot / (na * nb);
                }
            }
            score += sim / rs.len() as f64;
        }
        total += 10.0 * score / 4.0;
    }
    total / n_docs
}

/// Counts covered unit cells on the integer grid.
pub fn oracle_iou(a: &BBox, b: &BBox) -> f64 {
    let (x0, y0) = (a.x1.min(b.x1), a.y1.min(b.y1));
    let (x1, y1) = (a.x2.max(b.x2), a.y2.max(b.y2));
    let inside = |bx: &BBox, x: u32, y: u32| x >= bx.x1 && x < bx.x2 && y >= bx.y1 && y < bx.y2;
    let (mut inter, mut union) = (0u64, 0u64);
    for y in y0..y1 {
        for x in x0..x1 {
            let (ia, ib) = (inside(a, x, y), inside(b, x, y));
            inter += u64::from(ia && ib);
            union += u64::from(ia || ib);
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

// ---------------------------------------------------------------- fuzz text

const WORDS: &[&str] = &[
    "the", "a", "cat", "cats", "sat", "sitting", "red", "blue", "circle", "circles", "is", "at", "left",
    "of", "boxed", "box", "quickly", "quick", "mat", "on",
];

/// A short random sentence, sometimes with a box and punctuation.
pub fn random_sentence(rng: &mut ChaCha8Rng, max_words: usize) -> String {
    let n = rng.random_range(1..=max_words);
    let mut words: Vec<String> = (0..n).map(|_| WORDS.choose(rng).unwrap().to_string()).collect();
    if rng.random_bool(0.3) {
        let x = rng.random_range(0..50);
        let y = rng.random_range(0..50);
        let k = rng.random_range(0..words.len() + 1);
        words.insert(k, format!("{{{x}, {y}, {}, {}}}", x + 5, y + 7));
    }
    let mut s = words.join(" ");
    if rng.random_bool(0.5) {
        s.push('.');
    }
    if rng.random_bool(0.3) {
        s = s.to_uppercase();
    }
    s
}

pub fn random_box(rng: &mut ChaCha8Rng, max: u32) -> BBox {
    loop {
        let x1 = rng.random_range(0..max);
        let y1 = rng.random_range(0..max);
        let x2 = rng.random_range(0..=max);
        let y2 = rng.random_range(0..=max);
        if let Some(b) = BBox::new(x1, y1, x2, y2) {
            return b;
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- gradcheck

/// Relative error `|a - n| / max(|a|, |n|)` (Euclidean norms) between the
/// analytic and central-difference gradients of one component, over a
/// sample of its scalar parameters.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub label: String,
    pub rel_error: f64,
    pub checked: usize,
    pub analytic_norm: f64,
}

/// A mixed batch: one speech response, one text response and one
/// transcription, so every component is on the loss path.
pub fn gradcheck_batch(bundle: &ModelBundle, seed: u64) -> Vec<Prepared> {
    let ds = generate_dataset(&DatasetConfig::new(3, seed, bundle.config.audio_encoder.d_audio)).unwrap();
    vec![
        prepare_response(bundle, &ds.samples[0], true).unwrap(),
        prepare_response(bundle, &ds.samples[1], false).unwrap(),
        prepare_transcription(&ds.samples[2]).unwrap(),
    ]
}

pub fn gradcheck_component(
    bundle: &ModelBundle,
    batch: &[Prepared],
    component: Component,
    label: &str,
    per_component: usize,
    seed: u64,
) -> GradCheck {
    let items: Vec<&Prepared> = batch.iter().collect();
    let mut grads = Grads::zeros_like(&bundle.params);
    batch_loss(bundle, &bundle.params, &items, Some((&mut grads, &Trainable::ALL))).unwrap();

    // candidate coordinates: (param index, flat index, analytic value)
    let mut coords: Vec<(usize, usize, f64)> = Vec::new();
    for (pi, id) in bundle.params.ids().enumerate() {
        if Component::of_param(bundle.params.name(id)) != Some(component) {
            continue;
        }
        for (k, v) in grads.get(id).iter().enumerate() {
            coords.push((pi, k, *v));
        }
    }
    assert!(!coords.is_empty(), "no parameters for {label}");
    coords.sort_by(|a, b| b.2.abs().total_cmp(&a.2.abs()));
    let half = per_component / 2;
    let mut chosen: Vec<(usize, usize, f64)> = coords.iter().take(half).copied().collect();
    let mut r = rng(seed);
    let rest = &coords[half.min(coords.len())..];
    for _ in 0..(per_component - half).min(rest.len()) {
        chosen.push(rest[r.random_range(0..rest.len())]);
    }

    let h = 1e-5;
    let mut params = bundle.params.clone();
    let ids: Vec<_> = bundle.params.ids().collect();
    let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
    for &(pi, k, analytic) in &chosen {
        let id = ids[pi];
        let orig = params.get(id).as_slice().unwrap()[k];
        params.get_mut(id).as_slice_mut().unwrap()[k] = orig + h;
        let lp = batch_loss(bundle, &params, &items, None).unwrap();
        params.get_mut(id).as_slice_mut().unwrap()[k] = orig - h;
        let lm = batch_loss(bundle, &params, &items, None).unwrap();
        params.get_mut(id).as_slice_mut().unwrap()[k] = orig;
        let numeric = (lp - lm) / (2.0 * h);
        diff2 += (analytic - numeric).powi(2);
        a2 += analytic * analytic;
        n2 += numeric * numeric;
    }
    let denom = a2.sqrt().max(n2.sqrt());
    GradCheck {
        label: label.to_string(),
        rel_error: if denom == 0.0 { diff2.sqrt() } else { diff2.sqrt() / denom },
        checked: chosen.len(),
        analytic_norm: a2.sqrt(),
    }
}

/// Every component of a linear-adapter bundle, plus the audio adapter of
/// the other two kinds.
pub fn gradcheck_all(per_component: usize, seed: u64) -> Vec<GradCheck> {
    let mut out = Vec::new();
    for kind in AdapterKind::ALL {
        let bundle = ModelBundle::new(ModelConfig::tiny(kind), seed).unwrap();
        let batch = gradcheck_batch(&bundle, seed);
        let comps: &[Component] = if kind == AdapterKind::Linear {
            &Component::ALL
        } else {
            &[Component::AudioAdapter]
        };
        for &c in comps {
            let label = match c {
                Component::AudioAdapter => format!("audio adapter ({kind})"),
                other => format!("{other:?}"),
            };
            out.push(gradcheck_component(&bundle, &batch, c, &label, per_component, seed));
        }
    }
    out
}

// ---------------------------------------------------------------- fixtures

pub fn tiny_dataset(n: usize, seed: u64) -> Dataset {
    generate_dataset(&DatasetConfig::new(n, seed, 64)).unwrap()
}

/// Short constant-rate run used by the determinism and resume checks.
pub fn quick_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        init_lr: 3e-3,
        min_lr: 3e-4,
        warmup_lr: 3e-4,
        warmup_steps: 0,
        weight_decay: 0.01,
        epochs,
        batch_size: 4,
        seed: 11,
        ..TrainConfig::default()
    }
}
