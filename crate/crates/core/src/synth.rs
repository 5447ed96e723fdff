//! Seeded synthetic data for tests and benchmarks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::eval::{Rating, RatingsDataset};
use crate::store::CellRef;

/// A dense 0/1 matrix obtained by thresholding a planted low-rank product at
/// its median.
#[derive(Debug, Clone)]
pub struct PlantedMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<u8>,
}

impl PlantedMatrix {
    /// Factors drawn uniformly from `[-0.5, 0.5]^rank`.
    pub fn generate(rows: usize, cols: usize, rank: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw =
            |len: usize| -> Vec<f64> { (0..len).map(|_| rng.gen_range(-0.5..=0.5)).collect() };
        let u = draw(rows * rank);
        let v = draw(cols * rank);
        let product: Vec<f64> = (0..rows * cols)
            .map(|idx| {
                let (i, j) = (idx / cols, idx % cols);
                (0..rank).map(|w| u[i * rank + w] * v[j * rank + w]).sum()
            })
            .collect();
        let mut sorted = product.clone();
        sorted.sort_unstable_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len().is_multiple_of(2) {
            0.5 * (sorted[mid - 1] + sorted[mid])
        } else {
            sorted[mid]
        };
        PlantedMatrix {
            rows,
            cols,
            values: product.iter().map(|&x| (x > median) as u8).collect(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.values[i * self.cols + j]
    }

    /// Splits every cell into an observed set of `round(fraction · rows · cols)`
    /// cells and the held-out rest. Columns are label-block columns starting
    /// at `col_offset`.
    pub fn observe(
        &self,
        fraction: f64,
        col_offset: usize,
        seed: u64,
    ) -> (Vec<CellRef>, Vec<CellRef>) {
        let mut idx: Vec<usize> = (0..self.values.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let take = (fraction * idx.len() as f64).round() as usize;
        let cell =
            |k: usize| CellRef::new(k / self.cols, col_offset + k % self.cols, self.values[k]);
        let mut observed: Vec<CellRef> = idx[..take].iter().map(|&k| cell(k)).collect();
        let mut held: Vec<CellRef> = idx[take..].iter().map(|&k| cell(k)).collect();
        observed.sort_unstable();
        held.sort_unstable();
        (observed, held)
    }
}

/// Star ratings (1–5) from a planted low-rank preference model, each cell
/// observed with probability `density`.
pub fn planted_ratings(
    rows: usize,
    cols: usize,
    rank: usize,
    density: f64,
    seed: u64,
) -> RatingsDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u: Vec<f64> = (0..rows * rank)
        .map(|_| rng.gen_range(-1.0..=1.0))
        .collect();
    let v: Vec<f64> = (0..cols * rank)
        .map(|_| rng.gen_range(-1.0..=1.0))
        .collect();
    let mut ratings = Vec::new();
    for i in 0..rows {
        for j in 0..cols {
            if rng.gen::<f64>() >= density {
                continue;
            }
            let affinity: f64 = (0..rank)
                .map(|w| u[i * rank + w] * v[j * rank + w])
                .sum::<f64>()
                / (rank as f64).sqrt();
            let noisy = 3.0 + 2.0 * affinity + rng.gen_range(-0.5..=0.5);
            ratings.push(Rating {
                row: i as u32,
                col: j as u32,
                value: noisy.round().clamp(1.0, 5.0),
            });
        }
    }
    RatingsDataset {
        name: format!("planted-{rows}x{cols}"),
        rows,
        cols,
        ratings,
    }
}

/// A short-text corpus in which the first `cluster` texts contain the
/// trigram `"quantum flux capacitor"`. Every text has six filler words drawn
/// from a pool of `4 · texts` words, so filler n-grams are shared only
/// sporadically. Returns the raw texts.
pub fn trigram_cluster_corpus(texts: usize, cluster: usize, seed: u64) -> Vec<String> {
    const STEMS: &[&str] = &[
        "network", "price", "signal", "customer", "service", "phone", "bill", "store", "delivery",
        "speed", "coverage", "contract", "support", "offer", "battery", "screen", "app", "update",
        "plan", "data", "roaming", "fiber", "router", "install",
    ];
    let pool: Vec<String> = (0..4 * texts.max(1))
        .map(|i| format!("{}{}", STEMS[i % STEMS.len()], i / STEMS.len()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..texts)
        .map(|i| {
            let mut words: Vec<&str> = (0..6)
                .map(|_| pool.choose(&mut rng).unwrap().as_str())
                .collect();
            if i < cluster {
                let at = rng.gen_range(0..=words.len());
                words.splice(at..at, ["quantum", "flux", "capacitor"]);
            }
            words.join(" ")
        })
        .collect()
}
