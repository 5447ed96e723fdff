//! Reference implementations shared by the integration tests. Each one is
//! written from the definitions, not from the library code.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use labelfact_core::featurize::docs_from_texts;
use labelfact_core::{build_vocab, encode, squared_error_gradient, FactorModel, ObservationStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Walks characters and flushes the current token on anything non-alphanumeric.
pub fn naive_tokens(raw: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in raw.chars() {
        if ch.is_alphanumeric() {
            cur.push(ch);
        } else if !cur.is_empty() {
            out.push(cur.to_lowercase());
            cur.clear();
        }
    }
    if !cur.is_empty() {
        out.push(cur.to_lowercase());
    }
    out
}

pub fn naive_grams(tokens: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    for start in 0..tokens.len() {
        for len in 1..=3 {
            if start + len <= tokens.len() {
                out.push(tokens[start..start + len].join(" "));
            }
        }
    }
    out
}

pub fn naive_vocab(texts: &[String], min_count: u64) -> BTreeSet<String> {
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for t in texts {
        for g in naive_grams(&naive_tokens(t)) {
            *counts.entry(g).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .filter(|&(_, c)| c >= min_count)
        .map(|(g, _)| g)
        .collect()
}

pub fn random_corpus(rng: &mut ChaCha8Rng) -> Vec<String> {
    const WORDS: &[&str] = &["a", "b", "C", "d4", "Ee", "f", "gg", "4G"];
    const SEPS: &[&str] = &[" ", "  ", "-", ", ", "!", "?? ", "\t"];
    let docs = rng.gen_range(0..8);
    (0..docs)
        .map(|_| {
            let words = rng.gen_range(0..7);
            let mut s = String::new();
            for w in 0..words {
                if w > 0 || rng.gen_bool(0.2) {
                    s.push_str(SEPS[rng.gen_range(0..SEPS.len())]);
                }
                s.push_str(WORDS[rng.gen_range(0..WORDS.len())]);
            }
            s
        })
        .collect()
}

/// Checks vocabulary and encodings of `corpora` random corpora against the
/// enumeration oracle. Returns the first mismatch.
pub fn featurizer_agrees(corpora: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..corpora {
        let texts = random_corpus(&mut rng);
        let min_count = rng.gen_range(1..4);
        let docs = docs_from_texts(0, texts.iter().cloned());
        let vocab = build_vocab(&docs, min_count).map_err(|e| e.to_string())?;

        let expected = naive_vocab(&texts, min_count);
        let got: BTreeSet<String> = vocab.terms().iter().cloned().collect();
        if got != expected {
            return Err(format!(
                "vocab of {texts:?} (min {min_count}): {got:?} != {expected:?}"
            ));
        }
        let ordered: Vec<&String> = expected.iter().collect();
        for (id, term) in ordered.iter().enumerate() {
            if vocab.id(term) != Some(id as u32) {
                return Err(format!(
                    "id of {term:?} is {:?}, expected {id}",
                    vocab.id(term)
                ));
            }
        }
        for (doc, raw) in docs.iter().zip(&texts) {
            let expected: BTreeSet<u32> = naive_grams(&naive_tokens(raw))
                .iter()
                .filter_map(|g| ordered.iter().position(|t| *t == g).map(|p| p as u32))
                .collect();
            let got: BTreeSet<u32> = encode(doc, &vocab).into_iter().collect();
            if got != expected {
                return Err(format!("encoding of {raw:?}: {got:?} != {expected:?}"));
            }
        }
    }
    Ok(())
}

/// Balanced error straight from the definition: for each row, count the four
/// outcomes by hand and average the two error rates.
pub fn brute_force_ber(truth: &[(u32, u8)], scores: &[f64], threshold: f64) -> f64 {
    let mut rows: Vec<u32> = truth.iter().map(|t| t.0).collect();
    rows.sort_unstable();
    rows.dedup();
    let mut total = 0.0;
    for &r in &rows {
        let (mut tp, mut tn, mut fp, mut fneg) = (0u64, 0u64, 0u64, 0u64);
        for (idx, &(row, y)) in truth.iter().enumerate() {
            if row != r {
                continue;
            }
            let yhat = scores[idx] >= threshold;
            match (y == 1, yhat) {
                (true, true) => tp += 1,
                (false, false) => tn += 1,
                (false, true) => fp += 1,
                (true, false) => fneg += 1,
            }
        }
        let fpr = if fp + tn == 0 {
            0.0
        } else {
            fp as f64 / (fp + tn) as f64
        };
        let fnr = if fneg + tp == 0 {
            0.0
        } else {
            fneg as f64 / (fneg + tp) as f64
        };
        total += (fpr + fnr) / 2.0;
    }
    total / rows.len() as f64
}

/// A random scored instance. A third of the rows are forced to a single
/// truth value so both degenerate denominators occur.
pub fn random_ber_instance(rng: &mut ChaCha8Rng) -> (Vec<(u32, u8)>, Vec<f64>, f64) {
    let rows = rng.gen_range(1..12u32);
    let cells = rng.gen_range(1..80);
    let forced: Vec<Option<u8>> = (0..rows)
        .map(|_| match rng.gen_range(0..6) {
            0 => Some(0),
            1 => Some(1),
            _ => None,
        })
        .collect();
    let truth: Vec<(u32, u8)> = (0..cells)
        .map(|_| {
            let r = rng.gen_range(0..rows);
            (
                r,
                forced[r as usize].unwrap_or_else(|| rng.gen_range(0..=1)),
            )
        })
        .collect();
    // coarse grid so scores land exactly on the threshold now and then
    let scores: Vec<f64> = (0..cells)
        .map(|_| f64::from(rng.gen_range(0..=10u8)) / 10.0)
        .collect();
    let threshold = [0.5, 0.3, 0.7][rng.gen_range(0..3)];
    (truth, scores, threshold)
}

fn sq_err(model: &FactorModel, i: usize, j: usize, x: f64) -> f64 {
    (x - model.predict(i, j)).powi(2)
}

/// Compares the analytic gradient of the squared error with central
/// differences on `cells` random cells (k ≤ 4). Returns the worst relative
/// deviation, each measured against `max(|analytic|, 1e-3)`.
pub fn worst_gradient_deviation(cells: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..cells {
        let k = rng.gen_range(1..=4);
        let (m, n) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let mut model = FactorModel::init(m, n, k, rng.gen(), 1.0);
        let (i, j) = (rng.gen_range(0..m), rng.gen_range(0..n));
        let x = f64::from(rng.gen_range(0..=1u8));
        let (gp, gq) = squared_error_gradient(&model, i, j, x);
        for w in 0..k {
            let orig = model.row(i)[w];
            model.row_mut(i)[w] = orig + h;
            let up = sq_err(&model, i, j, x);
            model.row_mut(i)[w] = orig - h;
            let down = sq_err(&model, i, j, x);
            model.row_mut(i)[w] = orig;
            let fd = (up - down) / (2.0 * h);
            worst = worst.max((fd - gp[w]).abs() / gp[w].abs().max(1e-3));

            let orig = model.col(j)[w];
            model.col_mut(j)[w] = orig + h;
            let up = sq_err(&model, i, j, x);
            model.col_mut(j)[w] = orig - h;
            let down = sq_err(&model, i, j, x);
            model.col_mut(j)[w] = orig;
            let fd = (up - down) / (2.0 * h);
            worst = worst.max((fd - gq[w]).abs() / gq[w].abs().max(1e-3));
        }
    }
    worst
}

/// Rows with 1–5 random features and roughly 30% of label cells observed.
pub fn sparse_text_store(rows: usize, n1: usize, labels: usize, seed: u64) -> ObservationStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ObservationStore::new(rows, n1, labels);
    for r in 0..rows {
        let feats: Vec<u32> = (0..rng.gen_range(1..6))
            .map(|_| rng.gen_range(0..n1 as u32))
            .collect();
        store.set_features(r, feats).unwrap();
        for l in 0..labels {
            if rng.gen_bool(0.3) {
                store.set_label(r, l, rng.gen_range(0..=1)).unwrap();
            }
        }
    }
    store
}
