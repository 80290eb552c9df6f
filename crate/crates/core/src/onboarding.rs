//! Adding a model to a trained space. With the adapter and the other models
//! frozen, each question reduces to a cached pair `(u_Q, ‖E_Q‖)` and the new
//! embedding solves a strictly convex L2-regularized logistic regression:
//!
//! ```text
//! min_E  (1/N) Σ BCE(σ(E · u_i − r_i), y_i) + λ‖E‖²
//! ```

use std::collections::HashMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::JeirtCheckpoint;
use crate::data::{FeatureMatrix, ResponseRecord};
use crate::engine::{question_embedding, NORM_GUARD};
use crate::error::{Error, Result};
use crate::math::{bce_from_logit, dot, norm, sigmoid, solve_spd};
use crate::rng::{self, derive_seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OnboardConfig {
    /// Training fractions for the subsampling curve; ascending, each in (0, 1].
    pub fractions: Vec<f64>,
    pub seed: u64,
    /// Share of the new model's records held out for evaluation.
    pub test_fraction: f64,
    pub l2: f64,
    pub max_iters: usize,
    /// Stop when the gradient norm falls below this.
    pub tol: f64,
}

impl Default for OnboardConfig {
    fn default() -> Self {
        Self {
            fractions: vec![0.01, 0.05, 0.1, 0.25, 0.5, 1.0],
            seed: 0,
            test_fraction: 0.5,
            l2: 1e-4,
            max_iters: 100,
            tol: 1e-10,
        }
    }
}

impl OnboardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fractions.is_empty() {
            return Err(Error::Config("at least one fraction is required".into()));
        }
        if self.fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
            return Err(Error::Config("fractions must lie in (0, 1]".into()));
        }
        if self.fractions.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Config("fractions must be sorted ascending".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config("test fraction must lie in (0, 1)".into()));
        }
        if !(self.l2 > 0.0) {
            return Err(Error::Config("l2 weight must be positive".into()));
        }
        Ok(())
    }
}

/// One record reduced against the frozen adapter.
#[derive(Debug, Clone, PartialEq)]
pub struct Reduced {
    pub direction: Vec<f64>,
    pub norm: f64,
    pub label: bool,
}

/// The new model's records, reduced once.
#[derive(Debug, Clone)]
pub struct OnboardData {
    pub model_id: String,
    pub records: Vec<Reduced>,
}

/// Validates the records and embeds each distinct question once.
pub fn reduce_records(ckpt: &JeirtCheckpoint, records: &[ResponseRecord], feats: &FeatureMatrix) -> Result<OnboardData> {
    let first = records
        .first()
        .ok_or_else(|| Error::Config("no records for the new model".into()))?;
    let model_id = first.model_id.clone();
    if let Some(other) = records.iter().find(|r| r.model_id != model_id) {
        return Err(Error::Config(format!(
            "records mix models {model_id} and {}",
            other.model_id
        )));
    }
    if ckpt.table().index_of(&model_id).is_some() {
        return Err(Error::Conflict(format!("model {model_id} is already in the checkpoint")));
    }
    if feats.dim() != ckpt.encoder_dim() {
        return Err(Error::Shape(format!(
            "features have dim {} but checkpoint expects {}",
            feats.dim(),
            ckpt.encoder_dim()
        )));
    }
    let mut cache: HashMap<&str, (Vec<f64>, f64)> = HashMap::new();
    let mut out = Vec::with_capacity(records.len());
    for rec in records {
        if !cache.contains_key(rec.question_id.as_str()) {
            let row = feats
                .row_of(&rec.question_id)
                .ok_or_else(|| Error::Coverage(format!("no feature row for question {}", rec.question_id)))?;
            let row: Vec<f64> = row.iter().map(|&v| f64::from(v)).collect();
            let e = question_embedding(ckpt.adapter(), &row)?;
            let r = norm(&e);
            if !(r > NORM_GUARD) {
                return Err(Error::DegenerateQuestion { norm: r, guard: NORM_GUARD });
            }
            cache.insert(&rec.question_id, (e.iter().map(|x| x / r).collect(), r));
        }
        let (u, r) = &cache[rec.question_id.as_str()];
        out.push(Reduced {
            direction: u.clone(),
            norm: *r,
            label: rec.correct,
        });
    }
    Ok(OnboardData { model_id, records: out })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub embedding: Vec<f64>,
    /// Regularized objective at the solution.
    pub objective: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
}

pub fn objective(data: &[Reduced], e: &[f64], l2: f64) -> f64 {
    let n = data.len() as f64;
    data.iter()
        .map(|x| bce_from_logit(dot(e, &x.direction) - x.norm, x.label))
        .sum::<f64>()
        / n
        + l2 * dot(e, e)
}

/// Damped Newton with Armijo backtracking from `init`.
pub fn fit_embedding(data: &[Reduced], init: &[f64], l2: f64, max_iters: usize, tol: f64) -> Result<Fit> {
    if data.is_empty() {
        return Err(Error::Config("cannot fit an embedding to zero records".into()));
    }
    let d = init.len();
    let n = data.len() as f64;
    let mut e = init.to_vec();
    let mut f = objective(data, &e, l2);
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;
    while iterations < max_iters {
        let mut grad: Vec<f64> = e.iter().map(|v| 2.0 * l2 * v).collect();
        let mut hess = vec![vec![0.0; d]; d];
        for (i, row) in hess.iter_mut().enumerate() {
            row[i] = 2.0 * l2;
        }
        for x in data {
            let p = sigmoid(dot(&e, &x.direction) - x.norm);
            let r = (p - f64::from(u8::from(x.label))) / n;
            let w = p * (1.0 - p) / n;
            for i in 0..d {
                grad[i] += r * x.direction[i];
                for j in 0..=i {
                    hess[i][j] += w * x.direction[i] * x.direction[j];
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                hess[j][i] = hess[i][j];
            }
        }
        grad_norm = norm(&grad);
        if grad_norm <= tol {
            break;
        }
        iterations += 1;
        let step = solve_spd(&hess, &grad)
            .ok_or_else(|| Error::Degenerate("onboarding Hessian is not positive definite".into()))?;
        let slope = dot(&grad, &step);
        let mut t = 1.0;
        let accepted = loop {
            let cand: Vec<f64> = e.iter().zip(&step).map(|(v, s)| v - t * s).collect();
            let fc = objective(data, &cand, l2);
            if fc <= f - 1e-4 * t * slope {
                break Some((cand, fc));
            }
            if t < 1e-12 {
                break None;
            }
            t *= 0.5;
        };
        match accepted {
            Some((cand, fc)) => {
                e = cand;
                f = fc;
            }
            // no descent left at working precision
            None => break,
        }
    }
    Ok(Fit {
        embedding: e,
        objective: f,
        gradient_norm: grad_norm,
        iterations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOut {
    pub records: usize,
    pub accuracy: f64,
    pub log_loss: f64,
}

/// Accuracy (threshold 0.5, ties counted correct-predicted) and mean log-loss.
pub fn score(data: &[Reduced], e: &[f64]) -> HeldOut {
    let mut hits = 0usize;
    let mut loss = 0.0;
    for x in data {
        let z = dot(e, &x.direction) - x.norm;
        hits += usize::from((sigmoid(z) >= 0.5) == x.label);
        loss += bce_from_logit(z, x.label);
    }
    let n = data.len().max(1) as f64;
    HeldOut {
        records: data.len(),
        accuracy: hits as f64 / n,
        log_loss: loss / n,
    }
}

/// Seeded split of record positions into (train pool, test).
fn holdout_split(n: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let n_test = (n as f64 * test_fraction).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(Error::Config(format!(
            "{n} records cannot be split with test fraction {test_fraction}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::seeded(derive_seed(seed, 0)));
    let test = order[..n_test].to_vec();
    Ok((order[n_test..].to_vec(), test))
}

/// First `round(fraction · pool)` positions of a seeded shuffle of the pool,
/// so larger fractions extend smaller ones under the same seed.
fn subsample(pool: &[usize], fraction: f64, seed: u64) -> Result<Vec<usize>> {
    let k = (pool.len() as f64 * fraction).round() as usize;
    if k == 0 {
        return Err(Error::Config(format!(
            "fraction {fraction} of {} records selects none",
            pool.len()
        )));
    }
    let mut order = pool.to_vec();
    order.shuffle(&mut rng::seeded(derive_seed(seed, 1)));
    order.truncate(k);
    Ok(order)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Onboarded {
    pub model_id: String,
    /// Fitted embedding, rounded to the precision checkpoints store.
    pub embedding: Vec<f64>,
    pub fit: Fit,
    pub train_records: usize,
    pub test: HeldOut,
    /// The input checkpoint with the new row appended.
    pub checkpoint: JeirtCheckpoint,
}

pub fn onboard_model(
    ckpt: &JeirtCheckpoint,
    records: &[ResponseRecord],
    feats: &FeatureMatrix,
    fraction: f64,
    seed: u64,
) -> Result<Onboarded> {
    let cfg = OnboardConfig {
        fractions: vec![fraction],
        seed,
        ..OnboardConfig::default()
    };
    onboard_with(ckpt, records, feats, fraction, &cfg)
}

/// Fits on a `fraction` subsample of the training pool and scores on the
/// held-out part; solver settings and seed come from `cfg`.
pub fn onboard_with(
    ckpt: &JeirtCheckpoint,
    records: &[ResponseRecord],
    feats: &FeatureMatrix,
    fraction: f64,
    cfg: &OnboardConfig,
) -> Result<Onboarded> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("fraction {fraction} is outside (0, 1]")));
    }
    let data = reduce_records(ckpt, records, feats)?;
    let (pool, test) = holdout_split(data.records.len(), cfg.test_fraction, cfg.seed)?;
    onboard_reduced(ckpt, &data, &pool, &test, fraction, cfg)
}

fn onboard_reduced(
    ckpt: &JeirtCheckpoint,
    data: &OnboardData,
    pool: &[usize],
    test: &[usize],
    fraction: f64,
    cfg: &OnboardConfig,
) -> Result<Onboarded> {
    let pick = |idx: &[usize]| -> Vec<Reduced> { idx.iter().map(|&i| data.records[i].clone()).collect() };
    let train = pick(&subsample(pool, fraction, cfg.seed)?);
    let fit = fit_embedding(&train, &vec![0.0; ckpt.dim()], cfg.l2, cfg.max_iters, cfg.tol)?;
    let checkpoint = ckpt.with_model(&data.model_id, &fit.embedding)?;
    let embedding = checkpoint.table().row_of(&data.model_id).expect("just added").to_vec();
    Ok(Onboarded {
        model_id: data.model_id.clone(),
        test: score(&pick(test), &embedding),
        embedding,
        fit,
        train_records: train.len(),
        checkpoint,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub fraction: f64,
    pub train_records: usize,
    pub test_accuracy: f64,
    pub test_log_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsampleCurve {
    pub model_id: String,
    pub seed: u64,
    pub test_records: usize,
    pub rows: Vec<CurveRow>,
}

/// Onboards at every configured fraction against one fixed held-out split.
pub fn subsample_curve(
    ckpt: &JeirtCheckpoint,
    records: &[ResponseRecord],
    feats: &FeatureMatrix,
    cfg: &OnboardConfig,
) -> Result<SubsampleCurve> {
    cfg.validate()?;
    let data = reduce_records(ckpt, records, feats)?;
    let (pool, test) = holdout_split(data.records.len(), cfg.test_fraction, cfg.seed)?;
    let rows = cfg
        .fractions
        .iter()
        .map(|&fraction| {
            let o = onboard_reduced(ckpt, &data, &pool, &test, fraction, cfg)?;
            Ok(CurveRow {
                fraction,
                train_records: o.train_records,
                test_accuracy: o.test.accuracy,
                test_log_loss: o.test.log_loss,
            })
        })
        .collect::<Result<_>>()?;
    Ok(SubsampleCurve {
        model_id: data.model_id,
        seed: cfg.seed,
        test_records: test.len(),
        rows,
    })
}
