use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::grad::{loss_and_grads_indexed, mean_loss, IndexedRecord};
use super::{question_embedding, quantize, AdamConfig, AdamState, AdapterParams, ModelTable, NORM_GUARD};
use crate::checkpoint::{JeirtCheckpoint, TrainMeta};
use crate::data::{Dataset, FeatureMatrix, Split};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Embedding dimension d.
    pub dim: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub norm_guard: f64,
    pub adam: AdamConfig,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Variance of the Gaussian initialization of model embeddings.
    pub init_table_variance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 8,
            batch_size: 256,
            max_epochs: 100,
            seed: 0,
            norm_guard: NORM_GUARD,
            adam: AdamConfig::default(),
            patience: 10,
            init_table_variance: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("dim must be at least 1".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(self.norm_guard > 0.0) {
            return Err(Error::Config("norm guard must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation loss seen.
    pub checkpoint: JeirtCheckpoint,
    pub init_val_loss: f64,
    pub history: Vec<EpochStats>,
}

/// Records and features resolved to compact indices.
pub(crate) struct Prepared {
    pub features: Vec<f64>,
    pub feature_of_question: HashMap<usize, usize>,
}

/// Gathers the feature rows for every question referenced by `indices`,
/// failing with the full list of questions that have none.
pub(crate) fn prepare_features(ds: &Dataset, feats: &FeatureMatrix, indices: &[usize]) -> Result<Prepared> {
    let mut missing = BTreeSet::new();
    let mut features = Vec::new();
    let mut feature_of_question = HashMap::new();
    for &i in indices {
        let q = ds.cells()[i].question;
        if feature_of_question.contains_key(&q) {
            continue;
        }
        let qid = &ds.questions()[q];
        match feats.row_of(qid) {
            Some(row) => {
                feature_of_question.insert(q, feature_of_question.len());
                features.extend(row.iter().map(|&v| f64::from(v)));
            }
            None => {
                missing.insert(qid.clone());
            }
        }
    }
    if !missing.is_empty() {
        let list: Vec<String> = missing.into_iter().collect();
        return Err(Error::Coverage(format!("no feature row for questions: {}", list.join(", "))));
    }
    Ok(Prepared {
        features,
        feature_of_question,
    })
}

fn embed_rows(adapter: &AdapterParams, features: &[f64], rows: &[usize], out: &mut [Vec<f64>]) -> Result<()> {
    let p = adapter.encoder_dim;
    for &f in rows {
        out[f] = question_embedding(adapter, &features[f * p..(f + 1) * p])?;
    }
    Ok(())
}

/// Mini-batch Adam on mean binary cross-entropy, keeping the snapshot with the
/// lowest validation loss. Single-threaded and deterministic for a given seed.
pub fn train(ds: &Dataset, split: &Split, feats: &FeatureMatrix, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if split.val.is_empty() {
        return Err(Error::Config("validation part of the split is empty".into()));
    }
    if split.total() != ds.len() {
        return Err(Error::Config(format!(
            "split covers {} records but dataset has {}",
            split.total(),
            ds.len()
        )));
    }
    let used: Vec<usize> = split.train.iter().chain(&split.val).copied().collect();
    let prep = prepare_features(ds, feats, &used)?;
    let resolve = |idx: &[usize]| -> Vec<IndexedRecord> {
        idx.iter()
            .map(|&i| {
                let c = ds.cells()[i];
                IndexedRecord {
                    model: c.model,
                    feature: prep.feature_of_question[&c.question],
                    label: c.correct,
                }
            })
            .collect()
    };
    let train_set = resolve(&split.train);
    let val_set = resolve(&split.val);
    let val_rows: Vec<usize> = val_set
        .iter()
        .map(|r| r.feature)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let mut rng = rng::seeded(cfg.seed);
    let mut adapter = AdapterParams::glorot(feats.dim(), cfg.dim, &mut rng);
    let mut table = ModelTable::gaussian(cfg.dim, ds.models().to_vec(), cfg.init_table_variance, &mut rng);

    let n_rows = prep.feature_of_question.len();
    let mut embeddings = vec![Vec::new(); n_rows];
    let mut snapshot_loss = |adapter: &AdapterParams, table: &ModelTable| -> Result<(f64, AdapterParams, ModelTable)> {
        let mut a = adapter.clone();
        for seg in a.segments_mut() {
            quantize(seg);
        }
        let mut t = table.clone();
        quantize(t.rows_mut());
        embed_rows(&a, &prep.features, &val_rows, &mut embeddings)?;
        let loss = mean_loss(&embeddings, t.rows(), cfg.dim, &val_set, cfg.norm_guard)?;
        Ok((loss, a, t))
    };

    let (init_val_loss, a0, t0) = snapshot_loss(&adapter, &table)?;
    let mut best = (init_val_loss, a0, t0, 0usize);
    let mut history = Vec::new();
    let mut stale = 0;

    let mut states: Vec<AdamState> = adapter.segments().iter().map(|s| AdamState::new(s.len())).collect();
    let mut table_state = AdamState::new(table.rows().len());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut step: u64 = 0;
    let mut batch = Vec::with_capacity(cfg.batch_size);

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut train_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train_set[i]));
            let (loss, grads) = loss_and_grads_indexed(&adapter, table.rows(), &prep.features, &batch, cfg.norm_guard)?;
            train_loss += loss * batch.len() as f64;
            step += 1;
            for ((state, param), grad) in states.iter_mut().zip(adapter.segments_mut()).zip(grads.adapter.segments()) {
                state.step(&cfg.adam, step, param, grad);
            }
            table_state.step(&cfg.adam, step, table.rows_mut(), &grads.table);
        }
        train_loss /= train_set.len().max(1) as f64;
        let (val_loss, a, t) = snapshot_loss(&adapter, &table)?;
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best.0 {
            best = (val_loss, a, t, epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    let (val_loss, adapter, table, epoch) = best;
    let checkpoint = JeirtCheckpoint::new(
        adapter,
        table,
        TrainMeta {
            epoch,
            seed: cfg.seed,
            val_loss,
        },
    )?;
    Ok(TrainOutcome {
        checkpoint,
        init_val_loss,
        history,
    })
}
