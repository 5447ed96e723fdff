//! A single labelling session: corpus, vocabulary, observation store, model,
//! label definitions and the training lifecycle. Not thread-safe by itself;
//! [`crate::live::LiveSession`] wraps it for concurrent use.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use labelfact_core::featurize::{encode, NGramCounter, NGramVocab, TextDoc};
use labelfact_core::train::TrainingRun;
use labelfact_core::{
    apply_correction, Execution, FactorModel, HyperParams, ModelSnapshot, ObservationStore,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};
use crate::log::{now_millis, AnnotationLog};
use crate::snapshot::{LabelDef, Snapshot, TrainingState};

pub const SESSION_VERSION: u32 = 1;
pub const SESSION_FILE: &str = "session.json";
pub const MODEL_FILE: &str = "model.bin";
pub const LOG_FILE: &str = "annotations.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportSummary {
    pub added: usize,
    pub m: usize,
    /// Retained n-grams (feature columns).
    pub n1: usize,
    /// Distinct n-grams seen so far, retained or not.
    pub distinct_ngrams: usize,
    /// Feature columns created by this import.
    pub new_ngrams: usize,
    pub warnings: Vec<String>,
}

/// What one call to [`Session::train_step`] achieved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Progress {
    /// Nothing to train on, or already converged.
    Idle,
    /// Part of a pass was processed.
    Partial,
    Pass {
        pass: u64,
        val_rmse: f64,
    },
    Converged {
        pass: u64,
        best_val_rmse: f64,
    },
}

pub struct Session {
    hp: HyperParams,
    min_count: u64,
    texts: Arc<Vec<String>>,
    counter: NGramCounter,
    vocab: NGramVocab,
    store: ObservationStore,
    model: FactorModel,
    labels: Vec<LabelDef>,
    rng: ChaCha8Rng,
    run: Option<TrainingRun>,
    state: TrainingState,
    dirty: bool,
    passes: u64,
    val_rmse: Option<f64>,
    revision: u64,
}

#[derive(Serialize, Deserialize)]
struct SessionFile {
    version: u32,
    hp: HyperParams,
    min_count: u64,
    texts: Vec<String>,
    counter: NGramCounter,
    vocab: NGramVocab,
    labels: Vec<LabelDef>,
    label_cells: Vec<(usize, usize, u8)>,
    passes: u64,
    state: TrainingState,
    val_rmse: Option<f64>,
    rng: ChaCha8Rng,
}

impl Session {
    pub fn new(hp: HyperParams, min_count: u64) -> Result<Self> {
        hp.validate()?;
        let vocab = NGramCounter::new().build_vocab(min_count)?;
        let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
        rng.set_stream(2);
        Ok(Session {
            hp,
            min_count,
            texts: Arc::new(Vec::new()),
            counter: NGramCounter::new(),
            vocab,
            store: ObservationStore::new(0, 0, 0),
            model: FactorModel::zeros(0, 0, hp.k),
            labels: Vec::new(),
            rng,
            run: None,
            state: TrainingState::Idle,
            dirty: false,
            passes: 0,
            val_rmse: None,
            revision: 0,
        })
    }

    pub fn hp(&self) -> &HyperParams {
        &self.hp
    }

    /// Replaces the training hyperparameters for the next run. The rank
    /// can only change while the model is still empty.
    pub fn set_hp(&mut self, hp: HyperParams) -> Result<()> {
        hp.validate()?;
        if hp.k != self.model.k() {
            if self.model.m() > 0 || self.model.n() > 0 {
                return Err(ServiceError::BadRequest(format!(
                    "rank is fixed at k={} once texts are imported",
                    self.model.k()
                )));
            }
            self.model = FactorModel::zeros(0, 0, hp.k);
        }
        if hp != self.hp {
            self.hp = hp;
            self.touch();
        }
        Ok(())
    }

    pub fn store(&self) -> &ObservationStore {
        &self.store
    }

    pub fn model(&self) -> &FactorModel {
        &self.model
    }

    pub fn vocab(&self) -> &NGramVocab {
        &self.vocab
    }

    pub fn texts(&self) -> &[String] {
        &self.texts
    }

    pub fn state(&self) -> TrainingState {
        self.state
    }

    pub fn passes(&self) -> u64 {
        self.passes
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    /// No run in flight and nothing waiting to be trained.
    pub fn is_settled(&self) -> bool {
        self.run.is_none() && !(self.dirty && self.store.observed_count() > 0)
    }

    pub fn all_labels(&self) -> &[LabelDef] {
        &self.labels
    }

    /// Marks the model as needing (re)training and drops any run in flight,
    /// whose cell list no longer matches the store.
    fn touch(&mut self) {
        self.run = None;
        self.dirty = true;
        self.revision += 1;
        if self.state == TrainingState::Converged {
            self.state = TrainingState::Idle;
        }
    }

    /// Appends texts, extends the vocabulary with n-grams that now reach the
    /// threshold, and re-encodes every text against it.
    pub fn import_texts(&mut self, raw: Vec<String>) -> Result<ImportSummary> {
        if raw.is_empty() {
            return Err(ServiceError::BadRequest(
                "corpus payload contains no texts".into(),
            ));
        }
        let first = self.texts.len();
        let added = raw.len();
        let docs: Vec<TextDoc> = raw
            .iter()
            .enumerate()
            .map(|(i, t)| TextDoc::new(first + i, t.as_str()))
            .collect();
        self.counter.add_docs(&docs);

        let old_n1 = self.vocab.n1();
        let new_ngrams = self.counter.extend_vocab(&mut self.vocab);
        let init = self.hp.init_scale;
        self.store.widen_features(self.vocab.n1())?;
        self.model
            .insert_cols(old_n1, new_ngrams, &mut self.rng, init);
        self.store.push_rows(added);
        self.model.push_rows(added, &mut self.rng, init);
        Arc::make_mut(&mut self.texts).extend(raw);

        let vocab = &self.vocab;
        let texts = &self.texts;
        let rows: Vec<usize> = if new_ngrams > 0 {
            (0..texts.len()).collect()
        } else {
            (first..texts.len()).collect()
        };
        let encoded = Execution::default().map_slice(&rows, |&r| {
            encode(&TextDoc::new(r, texts[r].as_str()), vocab)
        });
        for (&row, ids) in rows.iter().zip(encoded) {
            self.store.set_features(row, ids)?;
        }

        let mut warnings = Vec::new();
        if self.vocab.n1() == 0 {
            warnings.push(format!(
                "no n-gram occurs at least {} times; the feature block is empty until more texts arrive",
                self.min_count
            ));
        }
        self.touch();
        Ok(ImportSummary {
            added,
            m: self.store.m(),
            n1: self.vocab.n1(),
            distinct_ngrams: self.counter.distinct(),
            new_ngrams,
            warnings,
        })
    }

    pub fn create_label(&mut self, name: &str, owner: &str) -> Result<LabelDef> {
        let name = name.trim();
        if name.is_empty() {
            return Err(ServiceError::BadRequest(
                "label name must not be empty".into(),
            ));
        }
        if self
            .labels
            .iter()
            .any(|l| !l.retired && l.owner == owner && l.name == name)
        {
            return Err(ServiceError::Conflict(format!(
                "label {name:?} already exists"
            )));
        }
        let label_id = self.store.push_label();
        self.model
            .insert_cols(self.store.n() - 1, 1, &mut self.rng, self.hp.init_scale);
        let def = LabelDef {
            label_id,
            name: name.to_string(),
            owner: owner.to_string(),
            created_at: now_millis(),
            retired: false,
        };
        self.labels.push(def.clone());
        self.revision += 1;
        Ok(def)
    }

    fn active_label(&self, id: usize, owner: Option<&str>) -> Result<&LabelDef> {
        self.labels
            .get(id)
            .filter(|l| !l.retired && owner.is_none_or(|o| l.owner == o))
            .ok_or_else(|| ServiceError::NotFound(format!("label {id} does not exist")))
    }

    /// Drops the label's cells and retires its column; the id is never reused.
    pub fn delete_label(&mut self, id: usize, owner: Option<&str>) -> Result<LabelDef> {
        self.active_label(id, owner)?;
        let removed = self.store.remove_label_cells(id)?;
        self.labels[id].retired = true;
        if removed > 0 {
            self.touch();
        } else {
            self.revision += 1;
        }
        Ok(self.labels[id].clone())
    }

    pub fn check_annotation(
        &self,
        row: usize,
        label: usize,
        value: u8,
        owner: Option<&str>,
    ) -> Result<()> {
        if value > 1 {
            return Err(ServiceError::BadRequest(format!(
                "annotation value must be 0 or 1, got {value}"
            )));
        }
        if row >= self.store.m() {
            return Err(ServiceError::NotFound(format!("text {row} does not exist")));
        }
        self.active_label(label, owner)?;
        Ok(())
    }

    /// Stores the annotation and refreshes the text's factors locally.
    /// Returns the previous value of the cell.
    pub fn annotate(&mut self, row: usize, label: usize, value: u8) -> Result<Option<u8>> {
        self.check_annotation(row, label, value, None)?;
        let prev = apply_correction(
            &mut self.model,
            &mut self.store,
            row,
            label,
            value,
            &self.hp,
            &mut self.rng,
        )?;
        self.touch();
        Ok(prev)
    }

    /// Brings the label block in line with the latest event per cell of
    /// `log`. Events for unknown texts or retired labels are skipped.
    /// Returns how many cells changed.
    pub fn replay(&mut self, log: &AnnotationLog) -> Result<usize> {
        let mut changed = 0;
        for ((row, label), value) in log.fold() {
            if self.check_annotation(row, label, value, None).is_err() {
                tracing::warn!(
                    row,
                    label,
                    "skipping annotation for an unknown text or label"
                );
                continue;
            }
            if self.store.label(row, label) != Some(value) {
                self.annotate(row, label, value)?;
                changed += 1;
            }
        }
        Ok(changed)
    }

    /// Processes up to `budget` training cells.
    pub fn train_step(&mut self, budget: usize) -> Result<Progress> {
        if self.run.is_none() {
            if !self.dirty || self.store.observed_count() == 0 {
                return Ok(Progress::Idle);
            }
            let hp = HyperParams {
                seed: self.hp.seed.wrapping_add(self.passes),
                ..self.hp
            };
            self.run = Some(TrainingRun::new(&self.store, &hp)?);
            self.dirty = false;
            self.state = TrainingState::Training;
        }
        let run = self.run.as_mut().expect("run was just ensured");
        let Some(summary) = run.advance(&mut self.model, &self.store, budget)? else {
            return Ok(Progress::Partial);
        };
        self.passes += 1;
        self.revision += 1;
        self.val_rmse = Some(summary.val_rmse);
        if !run.should_stop() {
            return Ok(Progress::Pass {
                pass: self.passes,
                val_rmse: summary.val_rmse,
            });
        }
        let report = self
            .run
            .take()
            .expect("run is active")
            .finish(&mut self.model)?;
        self.val_rmse = Some(report.best_val_rmse);
        self.state = TrainingState::Converged;
        Ok(Progress::Converged {
            pass: self.passes,
            best_val_rmse: report.best_val_rmse,
        })
    }

    /// Trains in the foreground until the current run stops.
    pub fn train_until_idle(&mut self) -> Result<u64> {
        let start = self.passes;
        while !matches!(
            self.train_step(usize::MAX)?,
            Progress::Idle | Progress::Converged { .. }
        ) {}
        Ok(self.passes - start)
    }

    pub fn snapshot(&self) -> Snapshot {
        let mut annotations =
            ObservationStore::new(self.store.m(), self.store.n1(), self.store.n2());
        for c in self.store.label_cells() {
            annotations
                .set_label(c.row(), c.col() - self.store.n1(), c.value)
                .expect("cell comes from a store of the same shape");
        }
        Snapshot {
            pass: self.passes,
            revision: self.revision,
            state: self.state,
            val_rmse: self.val_rmse,
            distinct_ngrams: self.counter.distinct(),
            model: self.model.clone(),
            annotations,
            labels: self.labels.clone(),
            texts: Arc::clone(&self.texts),
        }
    }

    /// Writes `session.json` and `model.bin` into `dir`. The annotation log is
    /// maintained separately and is already durable.
    pub fn persist(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let n1 = self.store.n1();
        let file = SessionFile {
            version: SESSION_VERSION,
            hp: self.hp,
            min_count: self.min_count,
            texts: self.texts.to_vec(),
            counter: self.counter.clone(),
            vocab: self.vocab.clone(),
            labels: self.labels.clone(),
            label_cells: self
                .store
                .label_cells()
                .iter()
                .map(|c| (c.row(), c.col() - n1, c.value))
                .collect(),
            passes: self.passes,
            state: self.state,
            val_rmse: self.val_rmse,
            rng: self.rng.clone(),
        };
        write_atomically(&dir.join(SESSION_FILE), |w| {
            Ok(serde_json::to_writer(w, &file)?)
        })?;
        let snapshot = ModelSnapshot {
            n1,
            hp: self.hp,
            passes: self.passes,
            model: self.model.clone(),
        };
        write_atomically(&dir.join(MODEL_FILE), |w| Ok(snapshot.write_to(w)?))
    }

    /// Reads a session written by [`Session::persist`].
    pub fn restore(dir: &Path) -> Result<Self> {
        let session_path = dir.join(SESSION_FILE);
        if !session_path.is_file() {
            return Err(ServiceError::NotFound(format!(
                "no session found in {}",
                dir.display()
            )));
        }
        let raw = fs::read(&session_path)?;
        let probe: serde_json::Value = serde_json::from_slice(&raw)?;
        let found = probe.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != SESSION_VERSION {
            return Err(ServiceError::Version {
                found,
                expected: SESSION_VERSION,
            });
        }
        let mut file: SessionFile = serde_json::from_slice(&raw)?;
        file.vocab.rebuild_index();
        let snapshot =
            ModelSnapshot::read_from(BufReader::new(fs::File::open(dir.join(MODEL_FILE))?))?;

        let n1 = file.vocab.n1();
        let mut store = ObservationStore::new(file.texts.len(), n1, file.labels.len());
        for (row, raw) in file.texts.iter().enumerate() {
            store.set_features(row, encode(&TextDoc::new(row, raw.as_str()), &file.vocab))?;
        }
        for &(row, label, value) in &file.label_cells {
            store.set_label(row, label, value)?;
        }
        if snapshot.n1 != n1 || snapshot.model.m() != store.m() || snapshot.model.n() != store.n() {
            return Err(ServiceError::Internal(format!(
                "model.bin is {}x{} (n1 {}) but the session describes {}x{} (n1 {n1})",
                snapshot.model.m(),
                snapshot.model.n(),
                snapshot.n1,
                store.m(),
                store.n()
            )));
        }
        let resume = file.state == TrainingState::Training;
        Ok(Session {
            hp: file.hp,
            min_count: file.min_count,
            texts: Arc::new(file.texts),
            counter: file.counter,
            vocab: file.vocab,
            store,
            model: snapshot.model,
            labels: file.labels,
            rng: file.rng,
            run: None,
            state: if resume {
                TrainingState::Idle
            } else {
                file.state
            },
            dirty: resume,
            passes: file.passes,
            val_rmse: file.val_rmse,
            revision: 0,
        })
    }
}

fn write_atomically(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<fs::File>) -> Result<()>,
) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut w = BufWriter::new(fs::File::create(&tmp)?);
    body(&mut w)?;
    w.flush()?;
    w.get_ref().sync_all()?;
    drop(w);
    fs::rename(&tmp, path)?;
    Ok(())
}
