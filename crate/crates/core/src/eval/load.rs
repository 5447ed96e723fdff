//! Dataset readers.
//!
//! * MovieLens `ratings.dat`: `user::item::rating::timestamp`
//! * generic ratings CSV: `row,col,rating` with an optional header line
//! * plain text corpora: one document per line
//! * CSV corpora: one document per record, text taken from a named column
//! * labeled text: `label1,label2<TAB>text` per line (for benchmarks)

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::{docs_from_texts, TextDoc};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rating {
    pub row: u32,
    pub col: u32,
    pub value: f64,
}

/// Explicit ratings with dense row/column indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingsDataset {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub ratings: Vec<Rating>,
}

struct RawRating {
    line: usize,
    row: String,
    col: String,
    value: f64,
}

/// Dense ids for raw keys: numeric order when every key is an integer,
/// lexicographic order otherwise.
fn dense_ids<'a>(keys: impl Iterator<Item = &'a str>) -> HashMap<String, u32> {
    let mut uniq: Vec<&str> = keys.collect();
    uniq.sort_unstable();
    uniq.dedup();
    if uniq.iter().all(|k| k.parse::<u64>().is_ok()) {
        uniq.sort_by_key(|k| k.parse::<u64>().unwrap());
    }
    uniq.into_iter()
        .enumerate()
        .map(|(i, k)| (k.to_string(), i as u32))
        .collect()
}

impl RatingsDataset {
    fn from_raw(name: String, path: &str, raw: Vec<RawRating>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::Empty("ratings file has no ratings"));
        }
        let row_ids = dense_ids(raw.iter().map(|r| r.row.as_str()));
        let col_ids = dense_ids(raw.iter().map(|r| r.col.as_str()));
        let mut seen: HashMap<(u32, u32), usize> = HashMap::with_capacity(raw.len());
        let mut ratings = Vec::with_capacity(raw.len());
        for r in raw {
            let row = row_ids[&r.row];
            let col = col_ids[&r.col];
            if let Some(first) = seen.insert((row, col), r.line) {
                return Err(Error::Parse {
                    path: path.to_string(),
                    line: r.line,
                    message: format!(
                        "duplicate rating for ({}, {}), first seen on line {first}",
                        r.row, r.col
                    ),
                });
            }
            ratings.push(Rating {
                row,
                col,
                value: r.value,
            });
        }
        Ok(RatingsDataset {
            name,
            rows: row_ids.len(),
            cols: col_ids.len(),
            ratings,
        })
    }

    pub fn len(&self) -> usize {
        self.ratings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratings.is_empty()
    }
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .or_else(|| path.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into())
}

fn read_to_string(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    Ok(fs::read_to_string(path)?)
}

fn parse_value(path: &str, line: usize, field: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Parse {
            path: path.to_string(),
            line,
            message: format!("rating {field:?} is not a finite number"),
        })
}

/// Parses MovieLens `::`-separated ratings text.
pub fn parse_movielens(name: &str, path: &str, text: &str) -> Result<RatingsDataset> {
    let mut raw = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split("::").collect();
        if fields.len() < 3 {
            return Err(Error::Parse {
                path: path.to_string(),
                line: line_no,
                message: format!("expected user::item::rating[::timestamp], got {line:?}"),
            });
        }
        raw.push(RawRating {
            line: line_no,
            row: fields[0].trim().to_string(),
            col: fields[1].trim().to_string(),
            value: parse_value(path, line_no, fields[2])?,
        });
    }
    RatingsDataset::from_raw(name.to_string(), path, raw)
}

/// Loads MovieLens ratings from a `ratings.dat` file or a directory holding one.
pub fn load_movielens(path: &Path) -> Result<RatingsDataset> {
    let (file, name) = if path.is_dir() {
        (path.join("ratings.dat"), dataset_name(path))
    } else {
        let parent = path.parent().filter(|p| !p.as_os_str().is_empty());
        (
            path.to_path_buf(),
            parent
                .map(dataset_name)
                .unwrap_or_else(|| dataset_name(path)),
        )
    };
    let text = read_to_string(&file)?;
    parse_movielens(&name, &file.display().to_string(), &text)
}

/// Parses `row,col,rating` records. A first record whose rating field is not
/// numeric is treated as a header.
pub fn parse_csv_ratings<R: Read>(name: &str, path: &str, reader: R) -> Result<RatingsDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut raw = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let record = record?;
        let line = record
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or(idx + 1);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() < 3 {
            return Err(Error::Parse {
                path: path.to_string(),
                line,
                message: format!("expected row,col,rating; got {} field(s)", record.len()),
            });
        }
        if idx == 0 && record[2].parse::<f64>().is_err() {
            continue;
        }
        raw.push(RawRating {
            line,
            row: record[0].to_string(),
            col: record[1].to_string(),
            value: parse_value(path, line, &record[2])?,
        });
    }
    RatingsDataset::from_raw(name.to_string(), path, raw)
}

pub fn load_csv_ratings(path: &Path) -> Result<RatingsDataset> {
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    let file = fs::File::open(path)?;
    parse_csv_ratings(&dataset_name(path), &path.display().to_string(), file)
}

/// One document per non-blank line, row ids from `first_row`.
pub fn parse_text_lines(text: &str, first_row: usize) -> Vec<TextDoc> {
    docs_from_texts(
        first_row,
        text.lines()
            .map(str::trim_end)
            .filter(|l| !l.trim().is_empty()),
    )
}

pub fn load_text_corpus(path: &Path) -> Result<Vec<TextDoc>> {
    Ok(parse_text_lines(&read_to_string(path)?, 0))
}

/// Texts from the named column of a CSV with a header row.
pub fn parse_csv_texts<R: Read>(path: &str, reader: R, column: &str) -> Result<Vec<String>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let idx = headers
        .iter()
        .position(|h| h.trim() == column)
        .ok_or_else(|| Error::Parse {
            path: path.to_string(),
            line: 1,
            message: format!("no column named {column:?} in header"),
        })?;
    let mut texts = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::Parse {
                path: path.to_string(),
                line,
                message: e.to_string(),
            }
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let text = record.get(idx).ok_or_else(|| Error::Parse {
            path: path.to_string(),
            line,
            message: format!("record has no field {idx} ({column:?})"),
        })?;
        texts.push(text.to_string());
    }
    Ok(texts)
}

/// A fully labeled multi-label text corpus: every listed label is a positive
/// cell, every other known label a negative one.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCorpus {
    pub name: String,
    pub docs: Vec<TextDoc>,
    pub label_names: Vec<String>,
    /// Positive label indices per document.
    pub positives: Vec<Vec<usize>>,
}

pub fn parse_labeled_text(name: &str, path: &str, text: &str) -> Result<LabeledCorpus> {
    let mut names: BTreeMap<String, usize> = BTreeMap::new();
    let mut rows: Vec<(Vec<String>, String)> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (labels, body) = line.split_once('\t').ok_or_else(|| Error::Parse {
            path: path.to_string(),
            line: idx + 1,
            message: "expected labels<TAB>text".into(),
        })?;
        let labels: Vec<String> = labels
            .split(',')
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        for l in &labels {
            names.entry(l.clone()).or_insert(0);
        }
        rows.push((labels, body.to_string()));
    }
    let label_names: Vec<String> = names.keys().cloned().collect();
    for (i, n) in label_names.iter().enumerate() {
        names.insert(n.clone(), i);
    }
    let positives = rows
        .iter()
        .map(|(labels, _)| {
            let mut ids: Vec<usize> = labels.iter().map(|l| names[l]).collect();
            ids.sort_unstable();
            ids.dedup();
            ids
        })
        .collect();
    let docs = docs_from_texts(0, rows.into_iter().map(|(_, body)| body));
    Ok(LabeledCorpus {
        name: name.to_string(),
        docs,
        label_names,
        positives,
    })
}

pub fn load_labeled_text(path: &Path) -> Result<LabeledCorpus> {
    let text = read_to_string(path)?;
    parse_labeled_text(&dataset_name(path), &path.display().to_string(), &text)
}
