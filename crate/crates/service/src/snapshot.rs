//! Immutable published views of a session. Every score in a response comes
//! from exactly one snapshot.

use std::io::{Read, Write};
use std::sync::Arc;

use labelfact_core::rank::{top_labels_for_text, top_texts_for_label};
use labelfact_core::{FactorModel, ObservationStore};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelDef {
    pub label_id: usize,
    pub name: String,
    /// Namespace that owns the label.
    pub owner: String,
    /// Milliseconds since the Unix epoch.
    pub created_at: u64,
    /// Deleted labels keep their column (and id) but hold no cells.
    #[serde(default)]
    pub retired: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainingState {
    Idle,
    Training,
    Converged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedText {
    pub text_id: usize,
    pub score: f64,
    pub rank: usize,
    pub raw_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopTexts {
    pub label_id: usize,
    pub snapshot_pass: u64,
    pub items: Vec<RankedText>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelScore {
    pub label_id: usize,
    pub name: String,
    pub score: f64,
    pub rank: usize,
    pub annotation: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextScores {
    pub text_id: usize,
    pub raw_text: String,
    pub snapshot_pass: u64,
    pub scores: Vec<LabelScore>,
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    /// Training passes completed when this snapshot was taken.
    pub pass: u64,
    /// Bumped by every change to the session.
    pub revision: u64,
    pub state: TrainingState,
    pub val_rmse: Option<f64>,
    pub distinct_ngrams: usize,
    pub(crate) model: FactorModel,
    /// Label block only; the feature rows are left empty.
    pub(crate) annotations: ObservationStore,
    pub(crate) labels: Vec<LabelDef>,
    pub(crate) texts: Arc<Vec<String>>,
}

impl Snapshot {
    pub fn m(&self) -> usize {
        self.annotations.m()
    }

    pub fn n1(&self) -> usize {
        self.annotations.n1()
    }

    pub fn model(&self) -> &FactorModel {
        &self.model
    }

    pub fn text(&self, row: usize) -> Result<&str> {
        self.texts
            .get(row)
            .map(String::as_str)
            .ok_or_else(|| ServiceError::NotFound(format!("text {row} does not exist")))
    }

    /// Active labels, optionally restricted to one namespace.
    pub fn labels(&self, owner: Option<&str>) -> Vec<LabelDef> {
        self.labels
            .iter()
            .filter(|l| !l.retired && owner.is_none_or(|o| l.owner == o))
            .cloned()
            .collect()
    }

    pub fn label(&self, id: usize, owner: Option<&str>) -> Result<&LabelDef> {
        self.labels
            .get(id)
            .filter(|l| !l.retired && owner.is_none_or(|o| l.owner == o))
            .ok_or_else(|| ServiceError::NotFound(format!("label {id} does not exist")))
    }

    /// Resolves a label by name within a namespace.
    pub fn label_named(&self, name: &str, owner: Option<&str>) -> Result<&LabelDef> {
        self.labels
            .iter()
            .find(|l| !l.retired && l.name == name && owner.is_none_or(|o| l.owner == o))
            .ok_or_else(|| ServiceError::NotFound(format!("label {name:?} does not exist")))
    }

    pub fn annotation(&self, row: usize, label: usize) -> Option<u8> {
        self.annotations.label(row, label)
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
        self.text(row)?;
        self.label(label, owner)?;
        Ok(())
    }

    pub fn score(&self, row: usize, label: usize) -> f64 {
        self.model.predict(row, self.n1() + label)
    }

    pub fn top_texts(
        &self,
        label: usize,
        owner: Option<&str>,
        limit: usize,
        include_annotated: bool,
    ) -> Result<TopTexts> {
        self.label(label, owner)?;
        let ranked = if self.m() == 0 {
            Vec::new()
        } else {
            top_texts_for_label(
                &self.model,
                &self.annotations,
                label,
                limit,
                include_annotated,
            )?
        };
        Ok(TopTexts {
            label_id: label,
            snapshot_pass: self.pass,
            items: ranked
                .into_iter()
                .map(|s| RankedText {
                    text_id: s.item_id,
                    score: s.score,
                    rank: s.rank,
                    raw_text: self.texts[s.item_id].clone(),
                })
                .collect(),
        })
    }

    /// Scores of every active label of the namespace for one text, best first.
    pub fn text_scores(&self, row: usize, owner: Option<&str>) -> Result<TextScores> {
        let raw_text = self.text(row)?.to_string();
        let mut scores = Vec::new();
        if self.annotations.n2() > 0 {
            for s in
                top_labels_for_text(&self.model, &self.annotations, row, self.annotations.n2())?
            {
                let Ok(def) = self.label(s.item_id, owner) else {
                    continue;
                };
                scores.push(LabelScore {
                    label_id: s.item_id,
                    name: def.name.clone(),
                    score: s.score,
                    rank: scores.len() + 1,
                    annotation: self.annotation(row, s.item_id),
                });
            }
        }
        Ok(TextScores {
            text_id: row,
            raw_text,
            snapshot_pass: self.pass,
            scores,
        })
    }

    /// CSV export: `text_id, raw_text`, one `score:<name>` column per label,
    /// then one `annotation:<name>` column per label (`1`, `0` or empty).
    pub fn write_export<W: Write>(
        &self,
        out: W,
        labels: &[usize],
        owner: Option<&str>,
    ) -> Result<()> {
        let defs: Vec<&LabelDef> = labels
            .iter()
            .map(|&id| self.label(id, owner))
            .collect::<Result<_>>()?;
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["text_id".to_string(), "raw_text".to_string()];
        header.extend(defs.iter().map(|d| format!("score:{}", d.name)));
        header.extend(defs.iter().map(|d| format!("annotation:{}", d.name)));
        w.write_record(&header).map_err(csv_err)?;
        for (row, raw) in self.texts.iter().enumerate() {
            let mut record = vec![row.to_string(), raw.clone()];
            record.extend(defs.iter().map(|d| self.score(row, d.label_id).to_string()));
            record.extend(defs.iter().map(|d| {
                self.annotation(row, d.label_id)
                    .map_or(String::new(), |v| v.to_string())
            }));
            w.write_record(&record).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> ServiceError {
    ServiceError::Core(labelfact_core::Error::Csv(e))
}

/// Reads the `annotation:<name>` columns of an export file back into
/// `(row, label, value)` triples. `resolve` maps a label name to its id.
pub fn parse_annotation_csv<R: Read>(
    input: R,
    resolve: impl Fn(&str) -> Result<usize>,
) -> Result<Vec<(usize, usize, u8)>> {
    let mut reader = csv::Reader::from_reader(input);
    let header = reader.headers().map_err(csv_err)?.clone();
    let id_col = header
        .iter()
        .position(|h| h == "text_id")
        .ok_or_else(|| ServiceError::BadRequest("annotation file has no text_id column".into()))?;
    let mut columns = Vec::new();
    for (idx, h) in header.iter().enumerate() {
        if let Some(name) = h.strip_prefix("annotation:") {
            columns.push((idx, resolve(name)?));
        }
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |msg: String| ServiceError::BadRequest(format!("line {line}: {msg}"));
        let row: usize = record
            .get(id_col)
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| bad("text_id is not a non-negative integer".into()))?;
        for &(idx, label) in &columns {
            match record.get(idx).map(str::trim) {
                None | Some("") => {}
                Some("0") => out.push((row, label, 0)),
                Some("1") => out.push((row, label, 1)),
                Some(other) => {
                    return Err(bad(format!("annotation {other:?} is not 0, 1 or empty")))
                }
            }
        }
    }
    Ok(out)
}
