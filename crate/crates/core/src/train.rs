//! Stochastic gradient descent over the observed cells.
//!
//! For a cell with target `x` the error is `e = x − x̂` and both factor
//! vectors move against the gradient of `e²`, using the same `e` and the
//! pre-update partner values:
//!
//! ```text
//! p'[w] = clip(p[w] + α·e·q[w] − γ·p[w])
//! q'[w] = clip(q[w] + α·e·p[w] − γ·q[w])
//! ```
//!
//! with `clip` onto `[-1, 1]`. Every observed feature cell is followed by
//! `negatives` steps toward 0 on empty feature cells of the same row.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{dot, FactorModel, HyperParams};
use crate::store::{CellRef, ObservationStore};

/// Bound applied to every factor entry after an update.
pub const FACTOR_BOUND: f64 = 1.0;

/// One regularized, clipped update on cell `(i, j)` toward `target`.
/// Returns the error `target − x̂` measured before the update.
#[inline]
pub fn sgd_step(
    model: &mut FactorModel,
    i: usize,
    j: usize,
    target: f64,
    alpha: f64,
    gamma: f64,
) -> f64 {
    let (p, q) = model.pair_mut(i, j);
    let e = target - dot(p, q);
    let ae = alpha * e;
    for (pw, qw) in p.iter_mut().zip(q.iter_mut()) {
        let (p0, q0) = (*pw, *qw);
        *pw = (p0 + ae * q0 - gamma * p0).clamp(-FACTOR_BOUND, FACTOR_BOUND);
        *qw = (q0 + ae * p0 - gamma * q0).clamp(-FACTOR_BOUND, FACTOR_BOUND);
    }
    e
}

/// Gradient of `e² = (target − x̂_ij)²` with respect to row factor `i` and
/// column factor `j`: `−2·e·q` and `−2·e·p`.
pub fn squared_error_gradient(
    model: &FactorModel,
    i: usize,
    j: usize,
    target: f64,
) -> (Vec<f64>, Vec<f64>) {
    let (p, q) = (model.row(i), model.col(j));
    let e = target - dot(p, q);
    (
        q.iter().map(|qw| -2.0 * e * qw).collect(),
        p.iter().map(|pw| -2.0 * e * pw).collect(),
    )
}

/// Step counts of one sweep.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PassStats {
    pub positive_steps: usize,
    pub negative_steps: usize,
    pub label_steps: usize,
    /// Sum of squared pre-update errors over all steps.
    pub sse: f64,
}

impl PassStats {
    pub fn steps(&self) -> usize {
        self.positive_steps + self.negative_steps + self.label_steps
    }

    fn merge(&mut self, other: &PassStats) {
        self.positive_steps += other.positive_steps;
        self.negative_steps += other.negative_steps;
        self.label_steps += other.label_steps;
        self.sse += other.sse;
    }
}

#[inline]
fn visit(
    model: &mut FactorModel,
    store: &ObservationStore,
    cell: CellRef,
    hp: &HyperParams,
    gamma: f64,
    rng: &mut ChaCha8Rng,
    stats: &mut PassStats,
) {
    let row = cell.row();
    let e = sgd_step(model, row, cell.col(), cell.target(), hp.alpha, gamma);
    stats.sse += e * e;
    if cell.is_feature(store.n1()) {
        stats.positive_steps += 1;
        for _ in 0..hp.negatives {
            if let Some(neg) = store.sample_empty_f_cell(row, rng) {
                let e = sgd_step(model, row, neg as usize, 0.0, hp.alpha, gamma);
                stats.sse += e * e;
                stats.negative_steps += 1;
            }
        }
    } else {
        stats.label_steps += 1;
    }
}

fn check_dims(model: &FactorModel, store: &ObservationStore) -> Result<()> {
    if model.m() != store.m() || model.n() != store.n() {
        return Err(Error::InvalidValue(format!(
            "model is {}x{} but store is {}x{}",
            model.m(),
            model.n(),
            store.m(),
            store.n()
        )));
    }
    Ok(())
}

/// One shuffled sweep over `cells`. The store supplies the feature block used
/// for negative sampling.
pub fn train_pass(
    model: &mut FactorModel,
    store: &ObservationStore,
    cells: &mut [CellRef],
    hp: &HyperParams,
    rng: &mut ChaCha8Rng,
) -> Result<PassStats> {
    check_dims(model, store)?;
    cells.shuffle(rng);
    let gamma = hp.step_gamma();
    let mut stats = PassStats::default();
    for &cell in cells.iter() {
        visit(model, store, cell, hp, gamma, rng, &mut stats);
    }
    Ok(stats)
}

pub fn rmse(model: &FactorModel, cells: &[CellRef]) -> Result<f64> {
    if cells.is_empty() {
        return Err(Error::Empty("rmse over zero cells"));
    }
    let sse: f64 = cells
        .iter()
        .map(|c| {
            let e = c.target() - model.predict(c.row(), c.col());
            e * e
        })
        .sum();
    Ok((sse / cells.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub passes_run: usize,
    pub val_rmse_history: Vec<f64>,
    pub stopped_early: bool,
    pub best_val_rmse: f64,
    pub final_train_rmse: f64,
    pub steps_per_pass: Vec<usize>,
}

/// Outcome of one completed pass of a [`TrainingRun`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassSummary {
    pub pass: usize,
    pub val_rmse: f64,
    pub improved: bool,
    pub stats: PassStats,
}

/// Resumable early-stopped training.
///
/// Observed cells are split once (seeded) into training and validation
/// cells. Each validation feature cell is paired with one fixed empty cell of
/// the same row as a zero target, so validation error is not minimized by
/// predicting 1 everywhere. When the split leaves no validation cell the
/// training cells double as validation cells.
///
/// Work can be fed in chunks with [`TrainingRun::advance`], which lets a
/// caller interleave other mutations between chunks.
#[derive(Debug, Clone)]
pub struct TrainingRun {
    hp: HyperParams,
    train: Vec<CellRef>,
    val: Vec<CellRef>,
    rng: ChaCha8Rng,
    cursor: usize,
    pass_stats: PassStats,
    history: Vec<f64>,
    steps: Vec<usize>,
    best: f64,
    best_model: Option<FactorModel>,
    since_best: usize,
}

impl TrainingRun {
    pub fn new(store: &ObservationStore, hp: &HyperParams) -> Result<Self> {
        hp.validate()?;
        if store.observed_count() == 0 {
            return Err(Error::Empty("no observed cells to train on"));
        }
        let mut cells = store.shuffled_observed(hp.seed);
        let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
        rng.set_stream(1);

        let n_val = (hp.val_fraction * cells.len() as f64).floor() as usize;
        let train = cells.split_off(n_val);
        let mut val = cells;
        if val.is_empty() {
            val = train.clone();
        } else {
            let n1 = store.n1();
            let negatives: Vec<CellRef> = val
                .iter()
                .filter(|c| c.is_feature(n1))
                .filter_map(|c| {
                    store
                        .sample_empty_f_cell(c.row(), &mut rng)
                        .map(|col| CellRef::new(c.row(), col as usize, 0))
                })
                .collect();
            val.extend(negatives);
        }
        Ok(TrainingRun {
            hp: *hp,
            train,
            val,
            rng,
            cursor: 0,
            pass_stats: PassStats::default(),
            history: Vec::new(),
            steps: Vec::new(),
            best: f64::INFINITY,
            best_model: None,
            since_best: 0,
        })
    }

    pub fn train_cells(&self) -> &[CellRef] {
        &self.train
    }

    pub fn val_cells(&self) -> &[CellRef] {
        &self.val
    }

    pub fn passes(&self) -> usize {
        self.history.len()
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }

    pub fn best_val_rmse(&self) -> f64 {
        self.best
    }

    /// True once validation error has not improved for `patience` passes or
    /// the pass cap is reached.
    pub fn should_stop(&self) -> bool {
        self.stopped_by_patience() || self.history.len() >= self.hp.max_passes
    }

    fn stopped_by_patience(&self) -> bool {
        !self.history.is_empty() && self.since_best >= self.hp.patience
    }

    /// Processes up to `budget` training cells. Returns a summary when this
    /// call completes a pass.
    pub fn advance(
        &mut self,
        model: &mut FactorModel,
        store: &ObservationStore,
        budget: usize,
    ) -> Result<Option<PassSummary>> {
        check_dims(model, store)?;
        if self.cursor == 0 {
            self.train.shuffle(&mut self.rng);
            self.pass_stats = PassStats::default();
        }
        let end = self.cursor.saturating_add(budget).min(self.train.len());
        let gamma = self.hp.step_gamma();
        let mut stats = PassStats::default();
        for &cell in &self.train[self.cursor..end] {
            visit(
                model,
                store,
                cell,
                &self.hp,
                gamma,
                &mut self.rng,
                &mut stats,
            );
        }
        self.pass_stats.merge(&stats);
        self.cursor = end;
        if self.cursor < self.train.len() {
            return Ok(None);
        }
        self.cursor = 0;

        let val_rmse = rmse(model, &self.val)?;
        self.history.push(val_rmse);
        self.steps.push(self.pass_stats.steps());
        let improved = val_rmse < self.best;
        if improved {
            self.best = val_rmse;
            self.since_best = 0;
            self.best_model = Some(model.clone());
        } else {
            self.since_best += 1;
        }
        Ok(Some(PassSummary {
            pass: self.history.len(),
            val_rmse,
            improved,
            stats: self.pass_stats,
        }))
    }

    /// Runs one full pass (or finishes the current partial one).
    pub fn step_pass(
        &mut self,
        model: &mut FactorModel,
        store: &ObservationStore,
    ) -> Result<PassSummary> {
        loop {
            if let Some(summary) = self.advance(model, store, usize::MAX)? {
                return Ok(summary);
            }
        }
    }

    /// Restores the best-validation factors into `model` and reports.
    pub fn finish(self, model: &mut FactorModel) -> Result<TrainReport> {
        if let Some(best) = self.best_model {
            *model = best;
        }
        Ok(TrainReport {
            passes_run: self.history.len(),
            stopped_early: !self.history.is_empty() && self.since_best >= self.hp.patience,
            best_val_rmse: self.best,
            final_train_rmse: rmse(model, &self.train)?,
            val_rmse_history: self.history,
            steps_per_pass: self.steps,
        })
    }
}

/// Trains until validation error stalls for `patience` passes (or
/// `max_passes`), then restores the best-validation factors.
pub fn train(
    model: &mut FactorModel,
    store: &ObservationStore,
    hp: &HyperParams,
) -> Result<TrainReport> {
    check_dims(model, store)?;
    let mut run = TrainingRun::new(store, hp)?;
    while !run.should_stop() {
        run.step_pass(model, store)?;
    }
    run.finish(model)
}

/// Records a user correction and refreshes the affected row in place.
///
/// The label cell is written, then `correction_epochs` shuffled sweeps run
/// over that row's observed cells only (feature cells with their negative
/// samples, and label cells). Other rows' factors are never written. Returns
/// the previous value of the cell.
pub fn apply_correction(
    model: &mut FactorModel,
    store: &mut ObservationStore,
    row: usize,
    label: usize,
    value: u8,
    hp: &HyperParams,
    rng: &mut ChaCha8Rng,
) -> Result<Option<u8>> {
    check_dims(model, store)?;
    let prev = store.set_label(row, label, value)?;
    refresh_row(model, store, row, hp, rng)?;
    Ok(prev)
}

/// The local refresh used by [`apply_correction`].
pub fn refresh_row(
    model: &mut FactorModel,
    store: &ObservationStore,
    row: usize,
    hp: &HyperParams,
    rng: &mut ChaCha8Rng,
) -> Result<PassStats> {
    if row >= store.m() {
        return Err(Error::index("row", row, store.m()));
    }
    let mut cells = store.row_cells(row);
    let mut stats = PassStats::default();
    for _ in 0..hp.correction_epochs {
        stats.merge(&train_pass(model, store, &mut cells, hp, rng)?);
    }
    Ok(stats)
}

/// Measured cost of one sweep over every observed cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassCost {
    pub steps: usize,
    pub observed: usize,
    #[serde(with = "secs")]
    pub elapsed: Duration,
}

mod secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_secs_f64(f64::deserialize(d)?))
    }
}

/// Runs `passes` sweeps over every observed cell of `store` on a fresh model
/// and reports instrumented step counts and wall time per pass.
pub fn complexity_probe(
    store: &ObservationStore,
    hp: &HyperParams,
    passes: usize,
) -> Result<Vec<PassCost>> {
    hp.validate()?;
    let mut model = FactorModel::init(store.m(), store.n(), hp.k, hp.seed, hp.init_scale);
    let mut cells = store.observed();
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    (0..passes)
        .map(|_| {
            let start = Instant::now();
            let stats = train_pass(&mut model, store, &mut cells, hp, &mut rng)?;
            Ok(PassCost {
                steps: stats.steps(),
                observed: cells.len(),
                elapsed: start.elapsed(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scalar_model(p: f64, q: f64) -> FactorModel {
        FactorModel::from_parts(1, vec![p], vec![q]).unwrap()
    }

    #[test]
    fn scalar_update() {
        let mut m = scalar_model(0.5, 0.5);
        let e = sgd_step(&mut m, 0, 0, 1.0, 0.1, 0.0);
        assert_abs_diff_eq!(e, 0.75);
        assert_abs_diff_eq!(m.row(0)[0], 0.5375, epsilon = 1e-15);
        assert_abs_diff_eq!(m.col(0)[0], 0.5375, epsilon = 1e-15);
    }

    #[test]
    fn zero_error_is_pure_shrinkage() {
        // p=0.5, q=0.4 → x̂ = 0.2 = target
        let mut m = scalar_model(0.5, 0.4);
        let e = sgd_step(&mut m, 0, 0, 0.2, 0.3, 0.01);
        assert_abs_diff_eq!(e, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.row(0)[0], 0.99 * 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(m.col(0)[0], 0.99 * 0.4, epsilon = 1e-15);
    }

    #[test]
    fn clipping_hits_the_bound_exactly() {
        let mut m = scalar_model(0.999, 0.999);
        sgd_step(&mut m, 0, 0, 1.0, 50.0, 0.0);
        assert_eq!(m.row(0)[0], 1.0);
        let mut m = scalar_model(-0.999, 0.999);
        sgd_step(&mut m, 0, 0, 1.0, 50.0, 0.0);
        assert_eq!(m.row(0)[0], 1.0);
        assert_eq!(m.col(0)[0], -1.0);
    }

    #[test]
    fn rmse_cases() {
        let m = FactorModel::zeros(2, 2, 1);
        let cells = [CellRef::new(0, 0, 1), CellRef::new(1, 1, 1)];
        assert_eq!(rmse(&m, &cells).unwrap(), 1.0);
        assert!(rmse(&m, &[]).is_err());
        let m = FactorModel::from_parts(1, vec![1.0, 1.0], vec![0.7, 0.6]).unwrap();
        let cells = [CellRef::new(0, 0, 1), CellRef::new(1, 1, 1)];
        assert_abs_diff_eq!(
            rmse(&m, &cells).unwrap(),
            0.353_553_390_593_273_7,
            epsilon = 1e-12
        );
    }

    #[test]
    fn label_only_store_takes_one_step_per_cell() {
        let mut store = ObservationStore::new(3, 0, 2);
        store.set_label(0, 0, 1).unwrap();
        store.set_label(1, 1, 0).unwrap();
        store.set_label(2, 1, 1).unwrap();
        let hp = HyperParams::default();
        let mut model = FactorModel::init(3, 2, 4, 1, 0.1);
        let mut cells = store.observed();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let stats = train_pass(&mut model, &store, &mut cells, &hp, &mut rng).unwrap();
        assert_eq!(stats.steps(), 3);
        assert_eq!(stats.negative_steps, 0);
    }

    #[test]
    fn patience_zero_runs_one_pass() {
        let mut store = ObservationStore::new(4, 0, 3);
        for r in 0..4 {
            for l in 0..3 {
                store.set_label(r, l, ((r + l) % 2) as u8).unwrap();
            }
        }
        let hp = HyperParams {
            patience: 0,
            alpha: 0.05,
            ..Default::default()
        };
        let mut model = FactorModel::init(4, 3, 4, 1, 0.1);
        let report = train(&mut model, &store, &hp).unwrap();
        assert_eq!(report.passes_run, 1);
        assert!(report.stopped_early);
        assert_eq!(report.val_rmse_history.len(), 1);
    }

    #[test]
    fn empty_store_and_dimension_mismatch_are_errors() {
        let store = ObservationStore::new(2, 2, 2);
        let mut model = FactorModel::init(2, 4, 2, 1, 0.1);
        assert!(matches!(
            train(&mut model, &store, &HyperParams::default()),
            Err(Error::Empty(_))
        ));
        let mut other = FactorModel::init(3, 4, 2, 1, 0.1);
        assert!(train(&mut other, &store, &HyperParams::default()).is_err());
    }

    #[test]
    fn chunked_advance_matches_whole_passes() {
        let mut store = ObservationStore::new(20, 30, 2);
        for r in 0..20 {
            store
                .set_features(r, [(r % 30) as u32, ((r * 7) % 30) as u32, 5])
                .unwrap();
            store.set_label(r, r % 2, (r % 3 == 0) as u8).unwrap();
        }
        let hp = HyperParams {
            alpha: 0.05,
            k: 4,
            ..Default::default()
        };
        let mut a = FactorModel::init(20, 32, 4, 3, 0.1);
        let mut b = a.clone();
        let mut ra = TrainingRun::new(&store, &hp).unwrap();
        let mut rb = TrainingRun::new(&store, &hp).unwrap();
        for _ in 0..3 {
            ra.step_pass(&mut a, &store).unwrap();
            loop {
                if rb.advance(&mut b, &store, 7).unwrap().is_some() {
                    break;
                }
            }
        }
        assert_eq!(a, b);
        assert_eq!(ra.history(), rb.history());
    }

    #[test]
    fn correction_is_local() {
        let mut store = ObservationStore::new(3, 6, 1);
        for r in 0..3 {
            store.set_features(r, [r as u32, 4]).unwrap();
        }
        let hp = HyperParams {
            alpha: 0.1,
            gamma: 0.0,
            k: 3,
            ..Default::default()
        };
        let mut model = FactorModel::init(3, 7, 3, 8, 0.1);
        let before = model.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let prev = apply_correction(&mut model, &mut store, 1, 0, 1, &hp, &mut rng).unwrap();
        assert_eq!(prev, None);
        assert_eq!(model.row(0), before.row(0));
        assert_eq!(model.row(2), before.row(2));
        assert_ne!(model.row(1), before.row(1));
        assert!(apply_correction(&mut model, &mut store, 5, 0, 1, &hp, &mut rng).is_err());
    }

    #[test]
    fn probe_counts_steps() {
        let mut store = ObservationStore::new(5, 50, 1);
        for r in 0..5 {
            store.set_features(r, [1, 2, 3]).unwrap();
        }
        store.set_label(0, 0, 1).unwrap();
        let costs = complexity_probe(&store, &HyperParams::default(), 3).unwrap();
        assert_eq!(costs.len(), 3);
        for c in costs {
            assert_eq!(c.steps, 2 * 15 + 1);
            assert_eq!(c.observed, 16);
        }
    }
}
