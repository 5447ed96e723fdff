//! Ranked views over label scores.
//!
//! The score of label `j` for text `i` is the raw prediction at column
//! `n1 + j`. Lists are ordered by descending score, ties by ascending id.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::FactorModel;
use crate::par::Execution;
use crate::store::ObservationStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem {
    pub item_id: usize,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

fn by_score_then_id(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

fn rank_top(mut scored: Vec<(usize, f64)>, limit: usize) -> Vec<ScoredItem> {
    if limit < scored.len() {
        if limit > 0 {
            scored.select_nth_unstable_by(limit - 1, by_score_then_id);
        }
        scored.truncate(limit);
    }
    scored.sort_unstable_by(by_score_then_id);
    scored
        .into_iter()
        .enumerate()
        .map(|(pos, (item_id, score))| ScoredItem {
            item_id,
            score,
            rank: pos + 1,
        })
        .collect()
}

/// Texts ranked by their score for one label.
///
/// With `include_annotated = false` texts that already carry an observed
/// cell for this label are left out.
pub fn top_texts_for_label(
    model: &FactorModel,
    store: &ObservationStore,
    label: usize,
    limit: usize,
    include_annotated: bool,
) -> Result<Vec<ScoredItem>> {
    top_texts_for_label_with(
        Execution::default(),
        model,
        store,
        label,
        limit,
        include_annotated,
    )
}

pub fn top_texts_for_label_with(
    exec: Execution,
    model: &FactorModel,
    store: &ObservationStore,
    label: usize,
    limit: usize,
    include_annotated: bool,
) -> Result<Vec<ScoredItem>> {
    if label >= store.n2() {
        return Err(Error::index("label", label, store.n2()));
    }
    if limit == 0 {
        return Err(Error::InvalidValue("limit must be at least 1".into()));
    }
    let col = store.n1() + label;
    let rows = model.m().min(store.m());
    let scored: Vec<(usize, f64)> = exec
        .map_range(rows, |i| {
            if !include_annotated && store.label(i, label).is_some() {
                None
            } else {
                Some((i, model.predict(i, col)))
            }
        })
        .into_iter()
        .flatten()
        .collect();
    Ok(rank_top(scored, limit))
}

/// Labels ranked by score for one text.
pub fn top_labels_for_text(
    model: &FactorModel,
    store: &ObservationStore,
    row: usize,
    limit: usize,
) -> Result<Vec<ScoredItem>> {
    if row >= store.m() || row >= model.m() {
        return Err(Error::index("row", row, store.m()));
    }
    let n1 = store.n1();
    let scored = (0..store.n2())
        .map(|j| (j, model.predict(row, n1 + j)))
        .collect();
    Ok(rank_top(scored, limit))
}

/// Dense raw label scores for a set of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub rows: Vec<usize>,
    pub n2: usize,
    /// Row-major, `rows.len() × n2`.
    pub values: Vec<f64>,
}

impl ScoreTable {
    pub fn get(&self, pos: usize, label: usize) -> f64 {
        self.values[pos * self.n2 + label]
    }

    pub fn row(&self, pos: usize) -> &[f64] {
        &self.values[pos * self.n2..(pos + 1) * self.n2]
    }
}

pub fn full_label_block(
    model: &FactorModel,
    n1: usize,
    n2: usize,
    rows: &[usize],
) -> Result<ScoreTable> {
    full_label_block_with(Execution::default(), model, n1, n2, rows)
}

pub fn full_label_block_with(
    exec: Execution,
    model: &FactorModel,
    n1: usize,
    n2: usize,
    rows: &[usize],
) -> Result<ScoreTable> {
    if n1 + n2 > model.n() {
        return Err(Error::index("column", n1 + n2, model.n()));
    }
    if let Some(&bad) = rows.iter().find(|&&r| r >= model.m()) {
        return Err(Error::index("row", bad, model.m()));
    }
    let values = exec
        .map_slice(rows, |&i| {
            (0..n2)
                .map(|j| model.predict(i, n1 + j))
                .collect::<Vec<_>>()
        })
        .concat();
    Ok(ScoreTable {
        rows: rows.to_vec(),
        n2,
        values,
    })
}
