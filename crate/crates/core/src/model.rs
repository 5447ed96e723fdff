//! Latent factors, hyperparameters and the binary model snapshot format.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the regularization rate enters the update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decay {
    /// `p ← p + α·e·q − γ·p`: every touch shrinks a factor by `(1 − γ)`.
    PerTouch,
    /// `p ← p + α·(e·q − γ·p)`: shrinkage scales with the learning rate.
    LearningRateScaled,
}

impl Decay {
    fn tag(self) -> u8 {
        match self {
            Decay::PerTouch => 0,
            Decay::LearningRateScaled => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Decay::PerTouch),
            1 => Ok(Decay::LearningRateScaled),
            t => Err(Error::Format(format!("unknown decay tag {t}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    pub alpha: f64,
    pub gamma: f64,
    pub k: usize,
    pub init_scale: f64,
    pub patience: usize,
    pub val_fraction: f64,
    pub max_passes: usize,
    /// Sampled empty feature cells trained toward 0 per observed feature cell.
    pub negatives: usize,
    /// Local epochs run over a corrected row.
    pub correction_epochs: usize,
    pub decay: Decay,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            alpha: 0.001,
            gamma: 0.008,
            k: 16,
            init_scale: 0.1,
            patience: 3,
            val_fraction: 0.05,
            max_passes: 200,
            negatives: 1,
            correction_epochs: 5,
            decay: Decay::LearningRateScaled,
            seed: 42,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidHyperParam(msg));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be > 0, got {}", self.alpha));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be >= 0, got {}", self.gamma));
        }
        if self.k == 0 {
            return bad("k must be >= 1".into());
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 0.5) {
            return bad(format!(
                "val_fraction must lie in (0, 0.5), got {}",
                self.val_fraction
            ));
        }
        if !(self.init_scale >= 0.0 && self.init_scale <= 1.0) {
            return bad(format!(
                "init_scale must lie in [0, 1], got {}",
                self.init_scale
            ));
        }
        if self.max_passes == 0 {
            return bad("max_passes must be >= 1".into());
        }
        Ok(())
    }

    /// The shrink coefficient handed to [`crate::sgd_step`].
    pub fn step_gamma(&self) -> f64 {
        match self.decay {
            Decay::PerTouch => self.gamma,
            Decay::LearningRateScaled => self.alpha * self.gamma,
        }
    }
}

/// Row factors (one k-vector per text) and column factors (one k-vector per
/// n-gram, then per label), stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    k: usize,
    rows: Vec<f64>,
    cols: Vec<f64>,
}

fn fill_uniform(rng: &mut ChaCha8Rng, out: &mut [f64], scale: f64) {
    if scale == 0.0 {
        out.fill(0.0);
        return;
    }
    for x in out {
        *x = rng.gen_range(-scale..=scale);
    }
}

impl FactorModel {
    pub fn zeros(m: usize, n: usize, k: usize) -> Self {
        FactorModel {
            k,
            rows: vec![0.0; m * k],
            cols: vec![0.0; n * k],
        }
    }

    /// Independent uniform draws in `[-init_scale, init_scale]`, rows first.
    pub fn init(m: usize, n: usize, k: usize, seed: u64, init_scale: f64) -> Self {
        let mut model = Self::zeros(m, n, k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        fill_uniform(&mut rng, &mut model.rows, init_scale);
        fill_uniform(&mut rng, &mut model.cols, init_scale);
        model
    }

    pub fn from_parts(k: usize, rows: Vec<f64>, cols: Vec<f64>) -> Result<Self> {
        if k == 0 || !rows.len().is_multiple_of(k) || !cols.len().is_multiple_of(k) {
            return Err(Error::Format(format!(
                "factor lengths {}/{} not divisible by k={k}",
                rows.len(),
                cols.len()
            )));
        }
        Ok(FactorModel { k, rows, cols })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.rows.len() / self.k
    }

    pub fn n(&self) -> usize {
        self.cols.len() / self.k
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.k..(i + 1) * self.k]
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[f64] {
        &self.cols[j * self.k..(j + 1) * self.k]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.rows[i * self.k..(i + 1) * self.k]
    }

    #[inline]
    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.cols[j * self.k..(j + 1) * self.k]
    }

    /// Mutable views of one row factor and one column factor at once.
    #[inline]
    pub fn pair_mut(&mut self, i: usize, j: usize) -> (&mut [f64], &mut [f64]) {
        let k = self.k;
        (
            &mut self.rows[i * k..(i + 1) * k],
            &mut self.cols[j * k..(j + 1) * k],
        )
    }

    pub fn row_factors(&self) -> &[f64] {
        &self.rows
    }

    pub fn col_factors(&self) -> &[f64] {
        &self.cols
    }

    /// `x̂_ij = Σ_w row[i][w] · col[j][w]`.
    #[inline]
    pub fn predict(&self, i: usize, j: usize) -> f64 {
        dot(self.row(i), self.col(j))
    }

    pub fn max_abs(&self) -> f64 {
        self.rows
            .iter()
            .chain(&self.cols)
            .fold(0.0f64, |acc, x| acc.max(x.abs()))
    }

    /// Appends `count` freshly initialized row factors.
    pub fn push_rows(&mut self, count: usize, rng: &mut ChaCha8Rng, init_scale: f64) {
        let start = self.rows.len();
        self.rows.resize(start + count * self.k, 0.0);
        fill_uniform(rng, &mut self.rows[start..], init_scale);
    }

    /// Inserts `count` freshly initialized column factors before column `at`.
    pub fn insert_cols(&mut self, at: usize, count: usize, rng: &mut ChaCha8Rng, init_scale: f64) {
        let mut fresh = vec![0.0; count * self.k];
        fill_uniform(rng, &mut fresh, init_scale);
        let pos = at * self.k;
        self.cols.splice(pos..pos, fresh);
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

const MAGIC: &[u8; 8] = b"LFMODEL\0";
pub const SNAPSHOT_VERSION: u32 = 1;

/// A model with the metadata needed to interpret it: block boundary and the
/// hyperparameters it was trained with.
///
/// Binary layout, little-endian: magic `LFMODEL\0`, `u32` version, `u64` m, n,
/// n1, k, the hyperparameters (`f64` alpha, gamma, init_scale, val_fraction;
/// `u64` patience, max_passes, negatives, correction_epochs, seed; `u8`
/// decay), `u64` pass count, then the row factors and the column factors as
/// `f64` in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSnapshot {
    pub n1: usize,
    pub hp: HyperParams,
    pub passes: u64,
    pub model: FactorModel,
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::Format("truncated model snapshot".into())
            } else {
                Error::Io(e)
            }
        })?;
        Ok(buf)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("size overflow".into()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn f64s(&mut self, len: usize) -> Result<Vec<f64>> {
        let mut raw = vec![0u8; len * 8];
        self.inner.read_exact(&mut raw).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::Format("truncated factor array".into())
            } else {
                Error::Io(e)
            }
        })?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

impl ModelSnapshot {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let hp = &self.hp;
        w.write_all(MAGIC)?;
        w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
        for v in [self.model.m(), self.model.n(), self.n1, self.model.k()] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        for v in [hp.alpha, hp.gamma, hp.init_scale, hp.val_fraction] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in [
            hp.patience as u64,
            hp.max_passes as u64,
            hp.negatives as u64,
            hp.correction_epochs as u64,
            hp.seed,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&[hp.decay.tag()])?;
        w.write_all(&self.passes.to_le_bytes())?;
        let mut buf = Vec::with_capacity((self.model.rows.len() + self.model.cols.len()) * 8);
        for x in self.model.rows.iter().chain(&self.model.cols) {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = Reader { inner: r };
        if &r.bytes::<8>()? != MAGIC {
            return Err(Error::Format("bad magic, not a model snapshot".into()));
        }
        let version = u32::from_le_bytes(r.bytes()?);
        if version != SNAPSHOT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: SNAPSHOT_VERSION,
            });
        }
        let m = r.usize()?;
        let n = r.usize()?;
        let n1 = r.usize()?;
        let k = r.usize()?;
        if k == 0 || n1 > n {
            return Err(Error::Format(format!(
                "inconsistent header k={k} n1={n1} n={n}"
            )));
        }
        let hp = HyperParams {
            alpha: r.f64()?,
            gamma: r.f64()?,
            init_scale: r.f64()?,
            val_fraction: r.f64()?,
            patience: r.usize()?,
            max_passes: r.usize()?,
            negatives: r.usize()?,
            correction_epochs: r.usize()?,
            seed: r.u64()?,
            decay: Decay::from_tag(r.bytes::<1>()?[0])?,
            k,
        };
        let passes = r.u64()?;
        let rows = r.f64s(m * k)?;
        let cols = r.f64s(n * k)?;
        Ok(ModelSnapshot {
            n1,
            hp,
            passes,
            model: FactorModel { k, rows, cols },
        })
    }
}
