//! Cross-validated benchmark: binarization, folds, BER and RMSE.

pub mod load;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::{build_vocab, encode, DEFAULT_MIN_COUNT};
use crate::model::{FactorModel, HyperParams};
use crate::par::Execution;
use crate::store::{CellRef, ObservationStore};
use crate::train::train;

pub use load::{LabeledCorpus, Rating, RatingsDataset};

/// Recodes ratings to 1 when strictly above the global mean rating, else 0.
/// Cell positions are preserved; the column of each cell is its item index.
pub fn binarize_ratings(ds: &RatingsDataset) -> Result<Vec<CellRef>> {
    if ds.ratings.is_empty() {
        return Err(Error::Empty("cannot binarize an empty ratings set"));
    }
    let mean = ds.ratings.iter().map(|r| r.value).sum::<f64>() / ds.ratings.len() as f64;
    Ok(ds
        .ratings
        .iter()
        .map(|r| CellRef::new(r.row as usize, r.col as usize, (r.value > mean) as u8))
        .collect())
}

/// Fold index of each of `n_cells` cells: a seeded shuffle dealt round-robin,
/// so fold sizes differ by at most one.
pub fn kfold_split(n_cells: usize, folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::InvalidValue(format!(
            "folds must be at least 2, got {folds}"
        )));
    }
    if n_cells < folds {
        return Err(Error::InvalidValue(format!(
            "{n_cells} cells cannot fill {folds} folds"
        )));
    }
    let mut order: Vec<usize> = (0..n_cells).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![0; n_cells];
    for (pos, cell) in order.into_iter().enumerate() {
        assignment[cell] = pos % folds;
    }
    Ok(assignment)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn record(&mut self, truth: u8, predicted: u8) {
        match (truth, predicted) {
            (1, 1) => self.tp += 1,
            (0, 0) => self.tn += 1,
            (0, _) => self.fp += 1,
            _ => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// `½·(FP/(FP+TN) + FN/(FN+TP))`, an empty denominator contributing 0.
    pub fn balanced_error(&self) -> f64 {
        let rate = |num: u64, den: u64| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        0.5 * (rate(self.fp, self.fp + self.tn) + rate(self.fn_, self.fn_ + self.tp))
    }
}

/// Mean balanced error over rows.
pub fn ber(confusions: &[ConfusionCounts]) -> Result<f64> {
    if confusions.is_empty() {
        return Err(Error::Empty("ber over zero rows"));
    }
    Ok(confusions
        .iter()
        .map(ConfusionCounts::balanced_error)
        .sum::<f64>()
        / confusions.len() as f64)
}

#[inline]
pub fn binarize_score(score: f64, threshold: f64) -> u8 {
    (score >= threshold) as u8
}

pub fn binarize_scores(scores: &[f64], threshold: f64) -> Vec<u8> {
    scores
        .iter()
        .map(|&s| binarize_score(s, threshold))
        .collect()
}

/// Per-row confusion counts, ascending by row, for rows with at least one cell.
pub fn row_confusions(cells: &[CellRef], predicted: &[u8]) -> Vec<ConfusionCounts> {
    let mut by_row: BTreeMap<u32, ConfusionCounts> = BTreeMap::new();
    for (cell, &p) in cells.iter().zip(predicted) {
        by_row.entry(cell.row).or_default().record(cell.value, p);
    }
    by_row.into_values().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Movielens,
    Csv,
    Text,
}

impl FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "movielens" => Ok(DatasetFormat::Movielens),
            "csv" => Ok(DatasetFormat::Csv),
            "text" => Ok(DatasetFormat::Text),
            other => Err(Error::InvalidValue(format!(
                "unknown dataset format {other:?} (movielens | csv | text)"
            ))),
        }
    }
}

/// What a benchmark trains on: a store holding every cell that is always
/// visible (the feature block, if any) and the explicit 0/1 target cells
/// that are dealt into folds.
#[derive(Debug, Clone)]
pub struct BenchmarkData {
    pub name: String,
    pub template: ObservationStore,
    pub targets: Vec<CellRef>,
}

impl BenchmarkData {
    /// Rating matrices have no feature block: every binarized rating is an
    /// explicit target in the label block (`n1 = 0`).
    pub fn from_ratings(ds: &RatingsDataset) -> Result<Self> {
        Ok(BenchmarkData {
            name: ds.name.clone(),
            template: ObservationStore::new(ds.rows, 0, ds.cols),
            targets: binarize_ratings(ds)?,
        })
    }

    /// Text corpora use the full layout: n-gram features are always visible
    /// and every (text, label) pair is a target.
    pub fn from_labeled_text(corpus: &LabeledCorpus, min_count: u64) -> Result<Self> {
        let vocab = build_vocab(&corpus.docs, min_count)?;
        let n1 = vocab.n1();
        let n2 = corpus.label_names.len();
        let mut template = ObservationStore::new(corpus.docs.len(), n1, n2);
        let mut targets = Vec::with_capacity(corpus.docs.len() * n2);
        for (row, doc) in corpus.docs.iter().enumerate() {
            template.set_features(row, encode(doc, &vocab))?;
            for label in 0..n2 {
                let value = corpus.positives[row].binary_search(&label).is_ok() as u8;
                targets.push(CellRef::new(row, n1 + label, value));
            }
        }
        Ok(BenchmarkData {
            name: corpus.name.clone(),
            template,
            targets,
        })
    }

    pub fn load(path: &Path, format: DatasetFormat) -> Result<Self> {
        match format {
            DatasetFormat::Movielens => Self::from_ratings(&load::load_movielens(path)?),
            DatasetFormat::Csv => Self::from_ratings(&load::load_csv_ratings(path)?),
            DatasetFormat::Text => {
                Self::from_labeled_text(&load::load_labeled_text(path)?, DEFAULT_MIN_COUNT)
            }
        }
    }

    /// Keeps a seeded uniform sample of `count` target cells.
    pub fn subsample(mut self, count: usize, seed: u64) -> Self {
        if count < self.targets.len() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            self.targets.shuffle(&mut rng);
            self.targets.truncate(count);
            self.targets.sort_unstable();
        }
        self
    }

    fn store_with(&self, cells: impl Iterator<Item = CellRef>) -> Result<ObservationStore> {
        let mut store = self.template.clone();
        let n1 = store.n1();
        for c in cells {
            store.set_label(c.row(), c.col() - n1, c.value)?;
        }
        Ok(store)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub hp: HyperParams,
    pub folds: usize,
    pub seed: u64,
    pub threshold: f64,
    #[serde(skip)]
    pub exec: Execution,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            hp: HyperParams::default(),
            folds: 10,
            seed: 42,
            threshold: 0.5,
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub test_cells: usize,
    pub test_rows: usize,
    pub ber: f64,
    pub rmse: f64,
    pub passes: usize,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub m: usize,
    pub n: usize,
    pub nnz: usize,
    pub zero_rate: f64,
    pub ber_mean: f64,
    pub ber_std: f64,
    pub rmse_mean: f64,
    pub passes: Vec<usize>,
    pub folds: Vec<FoldReport>,
    pub threshold: f64,
    pub seed: u64,
    pub hyperparameters: HyperParams,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Fold seed: distinct per fold, fixed by the run seed.
fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(fold as u64 + 1)
}

fn run_fold(
    data: &BenchmarkData,
    assignment: &[usize],
    fold: usize,
    cfg: &BenchmarkConfig,
) -> Result<FoldReport> {
    let in_fold = |idx: &usize| assignment[*idx] == fold;
    let store = data.store_with(
        (0..data.targets.len())
            .filter(|i| !in_fold(i))
            .map(|i| data.targets[i]),
    )?;
    let test: Vec<CellRef> = (0..data.targets.len())
        .filter(in_fold)
        .map(|i| data.targets[i])
        .collect();

    let hp = HyperParams {
        seed: fold_seed(cfg.seed, fold),
        ..cfg.hp
    };
    let mut model = FactorModel::init(store.m(), store.n(), hp.k, hp.seed, hp.init_scale);
    let report = train(&mut model, &store, &hp)?;

    let scores: Vec<f64> = test
        .iter()
        .map(|c| model.predict(c.row(), c.col()))
        .collect();
    let predicted = binarize_scores(&scores, cfg.threshold);
    let confusions = row_confusions(&test, &predicted);
    let sse: f64 = test
        .iter()
        .zip(&scores)
        .map(|(c, s)| (c.target() - s).powi(2))
        .sum();
    Ok(FoldReport {
        fold,
        test_cells: test.len(),
        test_rows: confusions.len(),
        ber: ber(&confusions)?,
        rmse: (sse / test.len() as f64).sqrt(),
        passes: report.passes_run,
        stopped_early: report.stopped_early,
    })
}

/// k-fold cross-validation over the target cells.
///
/// Each fold trains a fresh model on the other folds (with early stopping on
/// an internal validation split), scores its held-out cells, thresholds them
/// and computes BER over the rows that have held-out cells. Folds are
/// independent and may run in parallel; the report is identical either way.
pub fn run_benchmark(data: &BenchmarkData, cfg: &BenchmarkConfig) -> Result<EvalReport> {
    cfg.hp.validate()?;
    let assignment = kfold_split(data.targets.len(), cfg.folds, cfg.seed)?;
    let folds: Vec<FoldReport> = cfg
        .exec
        .map_range(cfg.folds, |f| run_fold(data, &assignment, f, cfg))
        .into_iter()
        .collect::<Result<_>>()?;

    let bers: Vec<f64> = folds.iter().map(|f| f.ber).collect();
    let (ber_mean, ber_std) = mean_std(&bers);
    let rmse_mean = folds.iter().map(|f| f.rmse).sum::<f64>() / folds.len() as f64;
    let full = data.store_with(data.targets.iter().copied())?;
    let stats = full.stats();
    Ok(EvalReport {
        dataset: data.name.clone(),
        m: stats.m,
        n: stats.n,
        nnz: stats.observed,
        zero_rate: stats.zero_rate,
        ber_mean,
        ber_std,
        rmse_mean,
        passes: folds.iter().map(|f| f.passes).collect(),
        folds,
        threshold: cfg.threshold,
        seed: cfg.seed,
        hyperparameters: cfg.hp,
    })
}

pub fn run_benchmark_path(
    path: &Path,
    format: DatasetFormat,
    cfg: &BenchmarkConfig,
) -> Result<EvalReport> {
    run_benchmark(&BenchmarkData::load(path, format)?, cfg)
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Human-readable summary in the shape of a results table row.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let hp = &self.hyperparameters;
        let _ = writeln!(
            out,
            "{:<16} {:>8} {:>8} {:>12} {:>9} {:>16} {:>10}",
            "dataset", "rows", "columns", "non-zero", "zero rate", "BER", "RMSE"
        );
        let _ = writeln!(
            out,
            "{:<16} {:>8} {:>8} {:>12} {:>8.3}% {:>8.2}% ±{:>5.2}% {:>10.4}",
            self.dataset,
            self.m,
            self.n,
            self.nnz,
            100.0 * self.zero_rate,
            100.0 * self.ber_mean,
            100.0 * self.ber_std,
            self.rmse_mean
        );
        let _ = writeln!(
            out,
            "alpha={} gamma={} k={} decay={:?} folds={} threshold={} seed={}",
            hp.alpha,
            hp.gamma,
            hp.k,
            hp.decay,
            self.folds.len(),
            self.threshold,
            self.seed
        );
        for f in &self.folds {
            let _ = writeln!(
                out,
                "  fold {:>2}: BER {:>6.2}%  RMSE {:.4}  passes {:>3}{}  ({} cells, {} rows)",
                f.fold,
                100.0 * f.ber,
                f.rmse,
                f.passes,
                if f.stopped_early { "" } else { " (cap)" },
                f.test_cells,
                f.test_rows
            );
        }
        out
    }
}
