//! Observed cells of the block matrix `X = [F | L]`.
//!
//! Columns `0..n1` form the feature block `F` (n-gram presence, every stored
//! cell is an implicit 1). Columns `n1..n1+n2` form the label block `L`,
//! whose stored cells carry an explicit 0 or 1. Everything else is empty.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One observed cell. `col` is a global column id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellRef {
    pub row: u32,
    pub col: u32,
    pub value: u8,
}

impl CellRef {
    pub fn new(row: usize, col: usize, value: u8) -> Self {
        CellRef {
            row: row as u32,
            col: col as u32,
            value,
        }
    }

    #[inline]
    pub fn row(&self) -> usize {
        self.row as usize
    }

    #[inline]
    pub fn col(&self) -> usize {
        self.col as usize
    }

    #[inline]
    pub fn is_feature(&self, n1: usize) -> bool {
        (self.col as usize) < n1
    }

    #[inline]
    pub fn target(&self) -> f64 {
        f64::from(self.value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoreStats {
    pub m: usize,
    pub n: usize,
    pub n1: usize,
    pub n2: usize,
    pub observed: usize,
    pub zero_rate: f64,
    pub avg_row_entries: f64,
    pub avg_col_entries: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservationStore {
    n1: usize,
    n2: usize,
    f_rows: Vec<Vec<u32>>,
    l_rows: Vec<BTreeMap<u32, u8>>,
    f_count: usize,
    l_count: usize,
}

fn check_label_value(value: u8) -> Result<()> {
    if value > 1 {
        return Err(Error::InvalidValue(format!(
            "label value must be 0 or 1, got {value}"
        )));
    }
    Ok(())
}

impl ObservationStore {
    pub fn new(m: usize, n1: usize, n2: usize) -> Self {
        ObservationStore {
            n1,
            n2,
            f_rows: vec![Vec::new(); m],
            l_rows: vec![BTreeMap::new(); m],
            f_count: 0,
            l_count: 0,
        }
    }

    pub fn m(&self) -> usize {
        self.f_rows.len()
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    pub fn n(&self) -> usize {
        self.n1 + self.n2
    }

    pub fn f_count(&self) -> usize {
        self.f_count
    }

    pub fn l_count(&self) -> usize {
        self.l_count
    }

    /// `|Nz(X)|`: every stored F and L cell.
    pub fn observed_count(&self) -> usize {
        self.f_count + self.l_count
    }

    fn check_row(&self, row: usize) -> Result<()> {
        if row >= self.m() {
            return Err(Error::index("row", row, self.m()));
        }
        Ok(())
    }

    fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.n2 {
            return Err(Error::index("label", label, self.n2));
        }
        Ok(())
    }

    /// Stores `value` at `(row, label)` and returns what was there before.
    pub fn set_label(&mut self, row: usize, label: usize, value: u8) -> Result<Option<u8>> {
        self.check_row(row)?;
        self.check_label(label)?;
        check_label_value(value)?;
        let prev = self.l_rows[row].insert(label as u32, value);
        if prev.is_none() {
            self.l_count += 1;
        }
        Ok(prev)
    }

    /// Empties `(row, label)` and returns the removed value.
    pub fn clear_label(&mut self, row: usize, label: usize) -> Result<Option<u8>> {
        self.check_row(row)?;
        self.check_label(label)?;
        let prev = self.l_rows[row].remove(&(label as u32));
        if prev.is_some() {
            self.l_count -= 1;
        }
        Ok(prev)
    }

    pub fn label(&self, row: usize, label: usize) -> Option<u8> {
        self.l_rows.get(row)?.get(&(label as u32)).copied()
    }

    /// Observed `(label_index, value)` pairs of one row, ascending by label.
    pub fn row_labels(&self, row: usize) -> impl Iterator<Item = (usize, u8)> + '_ {
        self.l_rows[row].iter().map(|(&l, &v)| (l as usize, v))
    }

    /// Replaces the row's feature cells with `cols`.
    pub fn set_features<I>(&mut self, row: usize, cols: I) -> Result<()>
    where
        I: IntoIterator<Item = u32>,
    {
        self.check_row(row)?;
        let mut ids: Vec<u32> = cols.into_iter().collect();
        if let Some(&bad) = ids.iter().find(|&&c| c as usize >= self.n1) {
            return Err(Error::index("feature column", bad as usize, self.n1));
        }
        ids.sort_unstable();
        ids.dedup();
        self.f_count = self.f_count - self.f_rows[row].len() + ids.len();
        self.f_rows[row] = ids;
        Ok(())
    }

    /// Sorted feature column ids of one row.
    pub fn features(&self, row: usize) -> &[u32] {
        &self.f_rows[row]
    }

    pub fn has_feature(&self, row: usize, col: usize) -> bool {
        self.f_rows[row].binary_search(&(col as u32)).is_ok()
    }

    /// Appends `count` empty rows and returns the first new row index.
    pub fn push_rows(&mut self, count: usize) -> usize {
        let first = self.m();
        self.f_rows.resize_with(first + count, Vec::new);
        self.l_rows.resize_with(first + count, BTreeMap::new);
        first
    }

    /// Adds one label column and returns its label index.
    pub fn push_label(&mut self) -> usize {
        self.n2 += 1;
        self.n2 - 1
    }

    /// Widens the feature block. Label cells keep their label index, so their
    /// global column ids shift by the same amount.
    pub fn widen_features(&mut self, new_n1: usize) -> Result<()> {
        if new_n1 < self.n1 {
            return Err(Error::InvalidValue(format!(
                "feature block cannot shrink from {} to {new_n1}",
                self.n1
            )));
        }
        self.n1 = new_n1;
        Ok(())
    }

    /// Drops every observed cell of one label column. Returns how many.
    pub fn remove_label_cells(&mut self, label: usize) -> Result<usize> {
        self.check_label(label)?;
        let mut removed = 0;
        for row in &mut self.l_rows {
            if row.remove(&(label as u32)).is_some() {
                removed += 1;
            }
        }
        self.l_count -= removed;
        Ok(removed)
    }

    /// Observed cells of one row: feature cells, then label cells.
    pub fn row_cells(&self, row: usize) -> Vec<CellRef> {
        let mut out = Vec::with_capacity(self.f_rows[row].len() + self.l_rows[row].len());
        out.extend(
            self.f_rows[row]
                .iter()
                .map(|&c| CellRef::new(row, c as usize, 1)),
        );
        out.extend(
            self.l_rows[row]
                .iter()
                .map(|(&l, &v)| CellRef::new(row, self.n1 + l as usize, v)),
        );
        out
    }

    /// Every observed cell in row-major order (F before L within a row).
    pub fn observed(&self) -> Vec<CellRef> {
        let mut out = Vec::with_capacity(self.observed_count());
        for row in 0..self.m() {
            out.extend(self.row_cells(row));
        }
        out
    }

    /// Only the label-block cells, row-major.
    pub fn label_cells(&self) -> Vec<CellRef> {
        let mut out = Vec::with_capacity(self.l_count);
        for (row, labels) in self.l_rows.iter().enumerate() {
            out.extend(
                labels
                    .iter()
                    .map(|(&l, &v)| CellRef::new(row, self.n1 + l as usize, v)),
            );
        }
        out
    }

    /// A seeded uniform permutation of every observed cell.
    pub fn shuffled_observed(&self, seed: u64) -> Vec<CellRef> {
        let mut cells = self.observed();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        cells.shuffle(&mut rng);
        cells
    }

    /// A uniformly chosen empty feature column of `row`, or `None` when the
    /// row's feature block is full.
    pub fn sample_empty_f_cell<R: Rng + ?Sized>(&self, row: usize, rng: &mut R) -> Option<u32> {
        let filled = &self.f_rows[row];
        let empty = self.n1 - filled.len();
        if empty == 0 {
            return None;
        }
        if 2 * filled.len() <= self.n1 {
            // at least half the columns are empty: rejection terminates fast
            loop {
                let col = rng.gen_range(0..self.n1) as u32;
                if filled.binary_search(&col).is_err() {
                    return Some(col);
                }
            }
        }
        // dense row: pick the k-th empty column directly
        let mut k = rng.gen_range(0..empty) as u32;
        let mut prev = 0u32;
        for &c in filled {
            let gap = c - prev;
            if k < gap {
                return Some(prev + k);
            }
            k -= gap;
            prev = c + 1;
        }
        Some(prev + k)
    }

    pub fn stats(&self) -> StoreStats {
        let m = self.m();
        let n = self.n();
        let observed = self.observed_count();
        let cells = (m as f64) * (n as f64);
        StoreStats {
            m,
            n,
            n1: self.n1,
            n2: self.n2,
            observed,
            zero_rate: if cells > 0.0 {
                1.0 - observed as f64 / cells
            } else {
                1.0
            },
            avg_row_entries: if m > 0 {
                observed as f64 / m as f64
            } else {
                0.0
            },
            avg_col_entries: if n > 0 {
                observed as f64 / n as f64
            } else {
                0.0
            },
        }
    }
}
