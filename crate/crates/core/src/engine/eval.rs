use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::train::prepare_features;
use super::{logit, question_embedding, NORM_GUARD};
use crate::checkpoint::JeirtCheckpoint;
use crate::data::{Dataset, FeatureMatrix, Split, SplitPart};
use crate::error::{Error, Result};
use crate::math::{bce_from_logit, sigmoid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub records: usize,
    pub hits: usize,
    pub accuracy: f64,
}

impl GroupAccuracy {
    fn add(&mut self, hit: bool) {
        self.records += 1;
        self.hits += usize::from(hit);
        self.accuracy = self.hits as f64 / self.records as f64;
    }
}

impl Default for GroupAccuracy {
    fn default() -> Self {
        Self {
            records: 0,
            hits: 0,
            accuracy: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: usize,
    pub overall_accuracy: f64,
    pub mean_log_loss: f64,
    pub per_model: BTreeMap<String, GroupAccuracy>,
    pub per_benchmark: BTreeMap<String, GroupAccuracy>,
}

/// Accuracy and log-loss on one part of a split.
pub fn evaluate(
    ckpt: &JeirtCheckpoint,
    ds: &Dataset,
    split: &Split,
    part: SplitPart,
    feats: &FeatureMatrix,
) -> Result<EvalReport> {
    evaluate_indices(ckpt, ds, split.part(part), feats)
}

/// Predictions are thresholded at 0.5; a probability of exactly 0.5 counts
/// as a predicted correct answer.
pub fn evaluate_indices(
    ckpt: &JeirtCheckpoint,
    ds: &Dataset,
    indices: &[usize],
    feats: &FeatureMatrix,
) -> Result<EvalReport> {
    if indices.is_empty() {
        return Err(Error::Config("cannot evaluate an empty record set".into()));
    }
    if feats.dim() != ckpt.encoder_dim() {
        return Err(Error::Shape(format!(
            "features have dim {} but checkpoint expects {}",
            feats.dim(),
            ckpt.encoder_dim()
        )));
    }
    let prep = prepare_features(ds, feats, indices)?;
    let p = ckpt.encoder_dim();
    let mut embeddings = vec![Vec::new(); prep.feature_of_question.len()];
    for (_, &f) in prep.feature_of_question.iter() {
        embeddings[f] = question_embedding(ckpt.adapter(), &prep.features[f * p..(f + 1) * p])?;
    }
    let model_rows: Vec<Option<usize>> = ds.models().iter().map(|id| ckpt.table().index_of(id)).collect();

    let mut per_model: BTreeMap<String, GroupAccuracy> = BTreeMap::new();
    let mut per_benchmark: BTreeMap<String, GroupAccuracy> = BTreeMap::new();
    let mut hits = 0usize;
    let mut log_loss = 0.0;
    for &i in indices {
        let cell = ds.cells()[i];
        let row = model_rows[cell.model]
            .ok_or_else(|| Error::Lookup(format!("model {} not in checkpoint", ds.models()[cell.model])))?;
        let e_q = &embeddings[prep.feature_of_question[&cell.question]];
        let z = logit(ckpt.table().row(row), e_q, NORM_GUARD)?;
        let hit = (sigmoid(z) >= 0.5) == cell.correct;
        hits += usize::from(hit);
        log_loss += bce_from_logit(z, cell.correct);
        per_model.entry(ds.models()[cell.model].clone()).or_default().add(hit);
        per_benchmark
            .entry(ds.question_benchmark(cell.question).to_owned())
            .or_default()
            .add(hit);
    }
    let n = indices.len() as f64;
    Ok(EvalReport {
        records: indices.len(),
        overall_accuracy: hits as f64 / n,
        mean_log_loss: log_loss / n,
        per_model,
        per_benchmark,
    })
}
