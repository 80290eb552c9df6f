//! Two-parameter logistic baseline, `P = σ(a_j (θ_i − b_j))`, fitted with
//! unconstrained discriminations, plus the diagnostics that show where a
//! single scalar ability breaks down: saturated item curves and correct-set
//! inclusion between weaker and stronger models.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::engine::{AdamConfig, AdamState};
use crate::error::{Error, Result};
use crate::math::{bce_from_logit, sigmoid};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Irt2plConfig {
    pub epochs: usize,
    pub lr: f64,
    /// L2 weight on every a_j and b_j, added to the summed negative log-likelihood.
    pub l2: f64,
    pub seed: u64,
}

impl Default for Irt2plConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            lr: 0.1,
            l2: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrtParams {
    pub model_ids: Vec<String>,
    pub theta: Vec<f64>,
    pub question_ids: Vec<String>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl IrtParams {
    pub fn theta_of(&self, model_id: &str) -> Option<f64> {
        self.model_ids.iter().position(|m| m == model_id).map(|i| self.theta[i])
    }

    pub fn item_of(&self, question_id: &str) -> Option<(f64, f64)> {
        self.question_ids
            .iter()
            .position(|q| q == question_id)
            .map(|j| (self.a[j], self.b[j]))
    }
}

/// Item characteristic curve.
pub fn icc(a: f64, b: f64, theta: f64) -> Result<f64> {
    if !(a.is_finite() && b.is_finite() && theta.is_finite()) {
        return Err(Error::NonFinite {
            what: "icc input".into(),
            row: 0,
        });
    }
    Ok(sigmoid(a * (theta - b)))
}

fn logit_clamped(p: f64) -> f64 {
    let p = p.clamp(0.02, 0.98);
    (p / (1.0 - p)).ln()
}

/// Full-batch Adam on the L2-regularized Bernoulli likelihood. Abilities are
/// parameterized as `θ = (φ − mean φ) / sd φ`, so every iterate has mean 0
/// and variance 1 exactly and gradients pass through the standardization.
pub fn fit_2pl(ds: &Dataset, cfg: &Irt2plConfig) -> Result<IrtParams> {
    if ds.is_empty() {
        return Err(Error::Coverage("cannot fit 2PL on an empty dataset".into()));
    }
    let (m, n) = (ds.models().len(), ds.questions().len());
    let cells = ds.cells();

    let mut phi: Vec<f64> = ds.model_accuracies().into_iter().map(logit_clamped).collect();
    let mut item_hits = vec![0usize; n];
    let mut item_total = vec![0usize; n];
    for c in cells {
        item_total[c.question] += 1;
        item_hits[c.question] += usize::from(c.correct);
    }
    let mut rng = rng::seeded(cfg.seed);
    let jitter = Normal::new(0.0, 0.01).expect("valid");
    // identical accuracies would leave sd φ = 0
    phi.iter_mut().for_each(|v| *v += jitter.sample(&mut rng));
    let mut a: Vec<f64> = (0..n).map(|_| 1.0 + jitter.sample(&mut rng)).collect();
    let mut b: Vec<f64> = (0..n)
        .map(|j| -logit_clamped(item_hits[j] as f64 / item_total[j] as f64))
        .collect();

    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let (mut s_phi, mut s_a, mut s_b) = (AdamState::new(m), AdamState::new(n), AdamState::new(n));
    let scale = 1.0 / cells.len() as f64;
    let mut theta = standardized(&phi).0;
    for epoch in 1..=cfg.epochs {
        let sd;
        (theta, sd) = standardized(&phi);
        let mut g_theta = vec![0.0; m];
        let mut g_a: Vec<f64> = a.iter().map(|v| 2.0 * cfg.l2 * v * scale).collect();
        let mut g_b: Vec<f64> = b.iter().map(|v| 2.0 * cfg.l2 * v * scale).collect();
        for c in cells {
            let (i, j) = (c.model, c.question);
            let gap = theta[i] - b[j];
            let r = (sigmoid(a[j] * gap) - f64::from(u8::from(c.correct))) * scale;
            g_theta[i] += r * a[j];
            g_a[j] += r * gap;
            g_b[j] -= r * a[j];
        }
        let k = m as f64;
        let mean_g = g_theta.iter().sum::<f64>() / k;
        let mean_gt = g_theta.iter().zip(&theta).map(|(g, t)| g * t).sum::<f64>() / k;
        let g_phi: Vec<f64> = g_theta
            .iter()
            .zip(&theta)
            .map(|(g, t)| (g - mean_g - t * mean_gt) / sd)
            .collect();
        let t = epoch as u64;
        s_phi.step(&adam, t, &mut phi, &g_phi);
        s_a.step(&adam, t, &mut a, &g_a);
        s_b.step(&adam, t, &mut b, &g_b);
    }
    if cfg.epochs > 0 {
        theta = standardized(&phi).0;
    }

    Ok(IrtParams {
        model_ids: ds.models().to_vec(),
        theta,
        question_ids: ds.questions().to_vec(),
        a,
        b,
    })
}

/// Population standardization and the standard deviation used. A single
/// model (or identical values) standardizes to zeros with unit scale.
fn standardized(phi: &[f64]) -> (Vec<f64>, f64) {
    let k = phi.len() as f64;
    let mean = phi.iter().sum::<f64>() / k;
    let var = phi.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / k;
    let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
    (phi.iter().map(|t| (t - mean) / sd).collect(), sd)
}

/// Mean negative log-likelihood of the data under fitted parameters.
pub fn mean_log_loss(params: &IrtParams, ds: &Dataset) -> Result<f64> {
    let lookup = ParamLookup::new(params, ds)?;
    let total: f64 = ds
        .cells()
        .iter()
        .map(|c| {
            let (a, b) = lookup.item(c.question);
            bce_from_logit(a * (lookup.theta(c.model) - b), c.correct)
        })
        .sum();
    Ok(total / ds.len().max(1) as f64)
}

/// Resolves dataset indices to parameter indices.
struct ParamLookup<'a> {
    params: &'a IrtParams,
    model: Vec<usize>,
    item: Vec<usize>,
}

impl<'a> ParamLookup<'a> {
    fn new(params: &'a IrtParams, ds: &Dataset) -> Result<Self> {
        let pos = |ids: &[String], id: &str, kind: &str| {
            ids.iter()
                .position(|x| x == id)
                .ok_or_else(|| Error::Coverage(format!("no fitted parameters for {kind} {id}")))
        };
        let model = ds
            .models()
            .iter()
            .map(|id| pos(&params.model_ids, id, "model"))
            .collect::<Result<_>>()?;
        let item = ds
            .questions()
            .iter()
            .map(|id| pos(&params.question_ids, id, "question"))
            .collect::<Result<_>>()?;
        Ok(Self { params, model, item })
    }

    fn theta(&self, model: usize) -> f64 {
        self.params.theta[self.model[model]]
    }

    fn item(&self, question: usize) -> (f64, f64) {
        let j = self.item[question];
        (self.params.a[j], self.params.b[j])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationReport {
    pub p_hi: f64,
    pub p_lo: f64,
    pub items: usize,
    pub predicted_unanimous_fraction: f64,
    pub actual_unanimous_fraction: f64,
    pub predicted_unanimous: Vec<String>,
    pub actual_unanimous: Vec<String>,
}

/// An item is predicted-unanimous when every fitted probability over the
/// models that answered it is above `p_hi` or every one is below `p_lo`, and
/// actually unanimous when all observed responses agree.
pub fn saturation_report(params: &IrtParams, ds: &Dataset, p_hi: f64, p_lo: f64) -> Result<SaturationReport> {
    let lookup = ParamLookup::new(params, ds)?;
    let n = ds.questions().len();
    let mut all_hi = vec![true; n];
    let mut all_lo = vec![true; n];
    let mut all_right = vec![true; n];
    let mut all_wrong = vec![true; n];
    for c in ds.cells() {
        let (a, b) = lookup.item(c.question);
        let p = sigmoid(a * (lookup.theta(c.model) - b));
        let q = c.question;
        all_hi[q] &= p > p_hi;
        all_lo[q] &= p < p_lo;
        all_right[q] &= c.correct;
        all_wrong[q] &= !c.correct;
    }
    let predicted: Vec<String> = (0..n)
        .filter(|&q| all_hi[q] || all_lo[q])
        .map(|q| ds.questions()[q].clone())
        .collect();
    let actual: Vec<String> = (0..n)
        .filter(|&q| all_right[q] || all_wrong[q])
        .map(|q| ds.questions()[q].clone())
        .collect();
    let frac = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    Ok(SaturationReport {
        p_hi,
        p_lo,
        items: n,
        predicted_unanimous_fraction: frac(predicted.len()),
        actual_unanimous_fraction: frac(actual.len()),
        predicted_unanimous: predicted,
        actual_unanimous: actual,
    })
}

/// `ratio[i][j] = |Q(M_i) \ Q(M_j)| / |Q(M_i)|` over models sorted by overall
/// accuracy (ascending, ties in dataset order), defined where `j ≠ i` and
/// `accuracy[j] ≥ accuracy[i]`. Rows whose model answered nothing correctly
/// are flagged in `empty_correct_set` and hold no values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InclusionMatrix {
    pub model_ids: Vec<String>,
    pub accuracy: Vec<f64>,
    pub correct_counts: Vec<usize>,
    pub empty_correct_set: Vec<bool>,
    pub ratio: Vec<Vec<Option<f64>>>,
}

impl InclusionMatrix {
    pub fn defined_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.ratio.iter().flatten().filter_map(|v| *v)
    }
}

pub fn correct_set_inclusion(ds: &Dataset) -> InclusionMatrix {
    let acc = ds.model_accuracies();
    let mut order: Vec<usize> = (0..ds.models().len()).collect();
    order.sort_by(|&x, &y| acc[x].total_cmp(&acc[y]).then(x.cmp(&y)));

    let n_q = ds.questions().len();
    let mut sets = vec![vec![false; n_q]; ds.models().len()];
    for c in ds.cells().iter().filter(|c| c.correct) {
        sets[c.model][c.question] = true;
    }
    let counts: Vec<usize> = sets.iter().map(|s| s.iter().filter(|&&x| x).count()).collect();

    let k = order.len();
    let mut ratio = vec![vec![None; k]; k];
    for (ri, &i) in order.iter().enumerate() {
        if counts[i] == 0 {
            continue;
        }
        for (rj, &j) in order.iter().enumerate() {
            if i == j || acc[j] < acc[i] {
                continue;
            }
            let missed = (0..n_q).filter(|&q| sets[i][q] && !sets[j][q]).count();
            ratio[ri][rj] = Some(missed as f64 / counts[i] as f64);
        }
    }
    InclusionMatrix {
        model_ids: order.iter().map(|&i| ds.models()[i].clone()).collect(),
        accuracy: order.iter().map(|&i| acc[i]).collect(),
        correct_counts: order.iter().map(|&i| counts[i]).collect(),
        empty_correct_set: order.iter().map(|&i| counts[i] == 0).collect(),
        ratio,
    }
}
