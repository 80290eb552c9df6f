//! Response records, indexed datasets, feature matrices and splits.
//!
//! Responses are JSON lines, one observation per line:
//!
//! ```text
//! {"model_id": "m1", "question_id": "q1", "correct": 1, "benchmark": "gsm8k", "subject": null}
//! ```

pub(crate) mod features;
mod split;

pub use features::{load_features, save_features, FeatureManifest, FeatureMatrix, FEATURE_FORMAT};
pub use split::{make_split, make_split_with_mode, Split, SplitMode, SplitPart};

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One observed outcome of a model on a question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseRecord {
    pub model_id: String,
    pub question_id: String,
    #[serde(with = "binary_flag")]
    pub correct: bool,
    pub benchmark: String,
    #[serde(default)]
    pub subject: Option<String>,
}

impl ResponseRecord {
    pub fn new(model_id: &str, question_id: &str, correct: bool, benchmark: &str) -> Self {
        Self {
            model_id: model_id.to_owned(),
            question_id: question_id.to_owned(),
            correct,
            benchmark: benchmark.to_owned(),
            subject: None,
        }
    }

    pub fn with_subject(mut self, subject: &str) -> Self {
        self.subject = Some(subject.to_owned());
        self
    }
}

mod binary_flag {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*value))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(de::Error::custom(format!("correct must be 0 or 1, got {other}"))),
        }
    }
}

/// A record resolved to dense indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub model: usize,
    pub question: usize,
    pub correct: bool,
}

/// Deduplicated, indexed response data.
///
/// Model and question indices are assigned in order of first appearance.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    records: Vec<ResponseRecord>,
    cells: Vec<Cell>,
    models: Vec<String>,
    questions: Vec<String>,
    model_index: HashMap<String, usize>,
    question_index: HashMap<String, usize>,
    question_benchmark: Vec<String>,
    question_subject: Vec<Option<String>>,
}

impl Dataset {
    pub fn from_records(records: Vec<ResponseRecord>) -> Result<Self> {
        let mut ds = Dataset::default();
        let mut seen: HashMap<(usize, usize), usize> = HashMap::with_capacity(records.len());
        for (i, rec) in records.iter().enumerate() {
            if rec.model_id.is_empty() || rec.question_id.is_empty() {
                return Err(Error::Format(format!("record {i} has an empty id")));
            }
            let model = match ds.model_index.get(&rec.model_id) {
                Some(&m) => m,
                None => {
                    ds.models.push(rec.model_id.clone());
                    ds.model_index.insert(rec.model_id.clone(), ds.models.len() - 1);
                    ds.models.len() - 1
                }
            };
            let question = match ds.question_index.get(&rec.question_id) {
                Some(&q) => {
                    if ds.question_benchmark[q] != rec.benchmark {
                        return Err(Error::Conflict(format!(
                            "question {} tagged with benchmarks {:?} and {:?}",
                            rec.question_id, ds.question_benchmark[q], rec.benchmark
                        )));
                    }
                    if ds.question_subject[q].is_none() && rec.subject.is_some() {
                        ds.question_subject[q] = rec.subject.clone();
                    }
                    q
                }
                None => {
                    ds.questions.push(rec.question_id.clone());
                    ds.question_index
                        .insert(rec.question_id.clone(), ds.questions.len() - 1);
                    ds.question_benchmark.push(rec.benchmark.clone());
                    ds.question_subject.push(rec.subject.clone());
                    ds.questions.len() - 1
                }
            };
            if let Some(prev) = seen.insert((model, question), i) {
                return Err(Error::Conflict(format!(
                    "duplicate pair ({}, {}) at records {prev} and {i}",
                    rec.model_id, rec.question_id
                )));
            }
            ds.cells.push(Cell {
                model,
                question,
                correct: rec.correct,
            });
        }
        ds.records = records;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[ResponseRecord] {
        &self.records
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn models(&self) -> &[String] {
        &self.models
    }

    pub fn questions(&self) -> &[String] {
        &self.questions
    }

    pub fn model_index(&self, id: &str) -> Option<usize> {
        self.model_index.get(id).copied()
    }

    pub fn question_index(&self, id: &str) -> Option<usize> {
        self.question_index.get(id).copied()
    }

    pub fn question_benchmark(&self, question: usize) -> &str {
        &self.question_benchmark[question]
    }

    pub fn question_subject(&self, question: usize) -> Option<&str> {
        self.question_subject[question].as_deref()
    }

    /// question_id -> benchmark tag.
    pub fn benchmark_map(&self) -> BTreeMap<String, String> {
        self.questions
            .iter()
            .cloned()
            .zip(self.question_benchmark.iter().cloned())
            .collect()
    }

    /// question_id -> subject tag, for questions that have one.
    pub fn subject_map(&self) -> BTreeMap<String, String> {
        self.questions
            .iter()
            .zip(&self.question_subject)
            .filter_map(|(q, s)| s.as_ref().map(|s| (q.clone(), s.clone())))
            .collect()
    }

    /// A new dataset holding the given records (by index), re-indexed.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let records = indices.iter().map(|&i| self.records[i].clone()).collect();
        Dataset::from_records(records).expect("subset of a valid dataset is valid")
    }

    pub fn filter<F: Fn(&ResponseRecord) -> bool>(&self, keep: F) -> Dataset {
        let records = self.records.iter().filter(|r| keep(r)).cloned().collect();
        Dataset::from_records(records).expect("filter of a valid dataset is valid")
    }

    /// Overall accuracy of each model, in model-index order.
    pub fn model_accuracies(&self) -> Vec<f64> {
        let mut hits = vec![0usize; self.models.len()];
        let mut total = vec![0usize; self.models.len()];
        for c in &self.cells {
            total[c.model] += 1;
            hits[c.model] += usize::from(c.correct);
        }
        hits.iter()
            .zip(&total)
            .map(|(&h, &t)| if t == 0 { 0.0 } else { h as f64 / t as f64 })
            .collect()
    }
}

pub fn load_responses(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ResponseRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(rec);
    }
    Dataset::from_records(records)
}

pub fn save_responses(path: impl AsRef<Path>, records: &[ResponseRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for rec in records {
        let line = serde_json::to_string(rec).expect("records always serialize");
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
