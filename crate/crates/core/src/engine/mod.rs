//! The joint-embedding response model.
//!
//! A question's embedding is produced by a two-layer adapter over frozen
//! encoder features, `E_Q = W2 · relu(W1 · x + b1) + b2`, and each model owns a
//! row `E_M` of an embedding table. The probability that a model answers a
//! question correctly is `σ(u_Q · E_M − ‖E_Q‖)` with `u_Q = E_Q / ‖E_Q‖`: the
//! direction of a question picks out the ability that matters, its norm sets
//! the difficulty.

mod adam;
mod eval;
mod grad;
mod train;

pub use adam::{AdamConfig, AdamState};
pub use eval::{evaluate, evaluate_indices, EvalReport, GroupAccuracy};
pub use grad::{batch_loss_and_grads, Gradients, IndexedRecord, LossGrad};
pub use train::{train, EpochStats, TrainConfig, TrainOutcome};

use std::collections::HashMap;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{dot, norm, sigmoid};
use crate::rng::Rng;

/// Default guard below which a question embedding has no usable direction.
pub const NORM_GUARD: f64 = 1e-8;

/// Adapter weights. Matrices are row-major: `w1` is `hidden x encoder_dim`,
/// `w2` is `dim x hidden`, with `hidden = 2 * encoder_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterParams {
    pub encoder_dim: usize,
    pub dim: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl AdapterParams {
    pub fn zeros(encoder_dim: usize, dim: usize) -> Self {
        let hidden = 2 * encoder_dim;
        Self {
            encoder_dim,
            dim,
            w1: vec![0.0; hidden * encoder_dim],
            b1: vec![0.0; hidden],
            w2: vec![0.0; dim * hidden],
            b2: vec![0.0; dim],
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot(encoder_dim: usize, dim: usize, rng: &mut Rng) -> Self {
        let mut params = Self::zeros(encoder_dim, dim);
        let hidden = params.hidden();
        let lim1 = (6.0 / (encoder_dim + hidden) as f64).sqrt();
        let lim2 = (6.0 / (hidden + dim) as f64).sqrt();
        params.w1.iter_mut().for_each(|w| *w = rng.random_range(-lim1..lim1));
        params.w2.iter_mut().for_each(|w| *w = rng.random_range(-lim2..lim2));
        params
    }

    pub fn hidden(&self) -> usize {
        2 * self.encoder_dim
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.hidden();
        let shapes = [
            ("W1", self.w1.len(), h * self.encoder_dim),
            ("b1", self.b1.len(), h),
            ("W2", self.w2.len(), self.dim * h),
            ("b2", self.b2.len(), self.dim),
        ];
        for (name, got, want) in shapes {
            if got != want {
                return Err(Error::Shape(format!("{name} has {got} entries, expected {want}")));
            }
        }
        if self.dim == 0 || self.encoder_dim == 0 {
            return Err(Error::Shape("adapter dimensions must be positive".into()));
        }
        let all = self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "adapter".into(),
                row: 0,
            });
        }
        Ok(())
    }

    pub(crate) fn segments(&self) -> [&[f64]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub(crate) fn segments_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    /// Hidden pre-activations `W1 · x + b1`.
    pub(crate) fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        let p = self.encoder_dim;
        self.b1
            .iter()
            .enumerate()
            .map(|(i, b)| b + dot(&self.w1[i * p..(i + 1) * p], x))
            .collect()
    }

    pub(crate) fn output(&self, hidden: &[f64]) -> Vec<f64> {
        let h = self.hidden();
        self.b2
            .iter()
            .enumerate()
            .map(|(i, b)| b + dot(&self.w2[i * h..(i + 1) * h], hidden))
            .collect()
    }
}

/// Per-model embedding rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelTable {
    dim: usize,
    ids: Vec<String>,
    rows: Vec<f64>,
    index: HashMap<String, usize>,
}

impl ModelTable {
    pub fn new(dim: usize, ids: Vec<String>, rows: Vec<f64>) -> Result<Self> {
        if rows.len() != ids.len() * dim {
            return Err(Error::Shape(format!(
                "model table has {} values for {} models of dim {dim}",
                rows.len(),
                ids.len()
            )));
        }
        if let Some(pos) = rows.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "model table".into(),
                row: pos / dim.max(1),
            });
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::Conflict(format!("model {id} appears twice in the table")));
            }
        }
        Ok(Self { dim, ids, rows, index })
    }

    /// Rows drawn from `N(0, variance · I)`.
    pub fn gaussian(dim: usize, ids: Vec<String>, variance: f64, rng: &mut Rng) -> Self {
        let normal = Normal::new(0.0, variance.sqrt()).expect("finite variance");
        let rows = (0..ids.len() * dim).map(|_| normal.sample(rng)).collect();
        Self::new(dim, ids, rows).expect("consistent shapes")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_of(&self, id: &str) -> Option<&[f64]> {
        self.index_of(id).map(|i| self.row(i))
    }

    pub fn rows(&self) -> &[f64] {
        &self.rows
    }

    pub(crate) fn rows_mut(&mut self) -> &mut Vec<f64> {
        &mut self.rows
    }

    pub fn to_vectors(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn push(&mut self, id: &str, embedding: &[f64]) -> Result<()> {
        if embedding.len() != self.dim {
            return Err(Error::Shape(format!(
                "embedding of length {} for table of dim {}",
                embedding.len(),
                self.dim
            )));
        }
        if self.index.contains_key(id) {
            return Err(Error::Conflict(format!("model {id} already present")));
        }
        self.index.insert(id.to_owned(), self.ids.len());
        self.ids.push(id.to_owned());
        self.rows.extend_from_slice(embedding);
        Ok(())
    }
}

/// `E_Q = W2 · relu(W1 · x + b1) + b2`.
pub fn question_embedding(adapter: &AdapterParams, feature_row: &[f64]) -> Result<Vec<f64>> {
    if feature_row.len() != adapter.encoder_dim {
        return Err(Error::Shape(format!(
            "feature row of length {} for adapter with encoder dim {}",
            feature_row.len(),
            adapter.encoder_dim
        )));
    }
    let hidden: Vec<f64> = adapter
        .pre_activation(feature_row)
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();
    Ok(adapter.output(&hidden))
}

fn check_question(e_m: &[f64], e_q: &[f64], guard: f64) -> Result<f64> {
    if e_m.len() != e_q.len() {
        return Err(Error::Shape(format!(
            "model embedding length {} vs question embedding length {}",
            e_m.len(),
            e_q.len()
        )));
    }
    let r = norm(e_q);
    if r.is_nan() || r <= guard {
        return Err(Error::DegenerateQuestion { norm: r, guard });
    }
    Ok(r)
}

/// Projected ability `(E_Q · E_M) / ‖E_Q‖`.
pub fn ability(e_m: &[f64], e_q: &[f64], guard: f64) -> Result<f64> {
    let r = check_question(e_m, e_q, guard)?;
    Ok(dot(e_q, e_m) / r)
}

/// Logit `Θ − ‖E_Q‖`.
pub fn logit(e_m: &[f64], e_q: &[f64], guard: f64) -> Result<f64> {
    let r = check_question(e_m, e_q, guard)?;
    Ok(dot(e_q, e_m) / r - r)
}

pub fn predict_prob(e_m: &[f64], e_q: &[f64], guard: f64) -> Result<f64> {
    logit(e_m, e_q, guard).map(sigmoid)
}

/// Round every value to the nearest f32, the precision checkpoints persist.
pub(crate) fn quantize(values: &mut [f64]) {
    values.iter_mut().for_each(|v| *v = *v as f32 as f64);
}
