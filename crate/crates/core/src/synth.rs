//! Planted worlds: response data drawn from known embeddings, with synthetic
//! features an adapter can map back onto those embeddings exactly. Also
//! randomized checkers for the geometric bounds the model satisfies.

use std::fs;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{JeirtCheckpoint, TrainMeta};
use crate::data::{save_features, save_responses, Dataset, FeatureMatrix, ResponseRecord};
use crate::engine::{ability, AdapterParams, ModelTable};
use crate::error::{Error, Result};
use crate::geometry::QuestionGeometry;
use crate::math::{bce_from_logit, cosine, dot, norm, sigmoid};
use crate::rng::{self, Rng};

/// Smallest planted question norm.
pub const MIN_PLANTED_NORM: f64 = 1e-6;
const MAX_REJECTIONS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DifficultyProfile {
    /// Norms `exp(N(ln median, sigma_log²))`.
    LogNormal { median: f64, sigma_log: f64 },
    Constant { norm: f64 },
}

impl Default for DifficultyProfile {
    fn default() -> Self {
        DifficultyProfile::LogNormal {
            median: 1.0,
            sigma_log: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cone {
    /// Axis of the cone; drawn uniformly from the sphere when absent.
    #[serde(default)]
    pub center: Option<Vec<f64>>,
    /// Half-angle in radians; directions are uniform over the spherical cap.
    pub half_angle: f64,
    #[serde(default = "unit_weight")]
    pub weight: f64,
    /// Tag given to questions drawn from this cone.
    #[serde(default)]
    pub label: Option<String>,
}

fn unit_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DirectionProfile {
    #[default]
    UniformSphere,
    Cones { cones: Vec<Cone> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantedConfig {
    pub models: usize,
    pub questions: usize,
    pub dim: usize,
    pub seed: u64,
    pub difficulty: DifficultyProfile,
    pub direction: DirectionProfile,
    /// Standard deviation of the isotropic part of each model embedding.
    pub model_spread: f64,
    /// Mean planted probability the model shift is tuned to reach.
    pub target_mean_prob: f64,
    /// Added to both halves of every feature row so features stay positive.
    pub feature_offset: f64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            models: 50,
            questions: 2000,
            dim: 8,
            seed: 0,
            difficulty: DifficultyProfile::default(),
            direction: DirectionProfile::default(),
            model_spread: 1.0,
            target_mean_prob: 0.5,
            feature_offset: 1.0,
        }
    }
}

impl PlantedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.models == 0 || self.questions == 0 || self.dim == 0 {
            return Err(Error::Config("models, questions and dim must all be at least 1".into()));
        }
        if !(self.target_mean_prob > 0.3 && self.target_mean_prob < 0.7) {
            return Err(Error::Config("target mean probability must lie in (0.3, 0.7)".into()));
        }
        if !(self.model_spread >= 0.0) || !(self.feature_offset > 0.0) {
            return Err(Error::Config("model spread must be >= 0 and feature offset > 0".into()));
        }
        match &self.difficulty {
            DifficultyProfile::LogNormal { median, sigma_log } if !(*median > 0.0 && *sigma_log >= 0.0) => {
                return Err(Error::Config("log-normal profile needs median > 0 and sigma_log >= 0".into()));
            }
            DifficultyProfile::Constant { norm } if !(*norm > 0.0) => {
                return Err(Error::Config("constant norm must be positive".into()));
            }
            _ => {}
        }
        if let DirectionProfile::Cones { cones } = &self.direction {
            if cones.is_empty() {
                return Err(Error::Config("cone profile needs at least one cone".into()));
            }
            for c in cones {
                if !(c.weight > 0.0) || !(0.0..=std::f64::consts::PI).contains(&c.half_angle) {
                    return Err(Error::Config("cone weights must be positive, half-angles in [0, pi]".into()));
                }
                if let Some(center) = &c.center {
                    if center.len() != self.dim || norm(center) == 0.0 {
                        return Err(Error::Config("cone center must be a non-zero vector of length dim".into()));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Ground truth plus the responses sampled from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedWorld {
    pub seed: u64,
    pub model_ids: Vec<String>,
    pub question_ids: Vec<String>,
    /// Benchmark tag of each question: its cone label, or `planted`.
    pub question_tags: Vec<String>,
    pub model_embeddings: Vec<Vec<f64>>,
    pub question_embeddings: Vec<Vec<f64>>,
    /// Model embeddings are `shift · mean_direction + spread · g`, `g ~ N(0, I)`.
    pub shift: f64,
    pub spread: f64,
    pub mean_direction: Vec<f64>,
    pub feature_offset: f64,
    pub records: Vec<ResponseRecord>,
    /// Mean log-loss of the sampled responses under the planted probabilities.
    pub bayes_log_loss: f64,
}

fn std_normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn unit_gaussian(rng: &mut Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let r = norm(&v);
        if r > 1e-12 {
            return v.into_iter().map(|x| x / r).collect();
        }
    }
}

/// Uniform direction on the cap of half-angle `alpha` around unit `axis`.
fn cap_direction(rng: &mut Rng, axis: &[f64], alpha: f64) -> Vec<f64> {
    let d = axis.len();
    if d == 1 {
        return axis.to_vec();
    }
    // Polar angle by inverse transform of the cap density ∝ sin^(d-2).
    let t = if alpha == 0.0 {
        0.0
    } else {
        let grid = 512;
        let h = alpha / grid as f64;
        let density = |x: f64| x.sin().powi(d as i32 - 2);
        let mut cdf = vec![0.0; grid + 1];
        for i in 0..grid {
            let (a, b) = (i as f64 * h, (i + 1) as f64 * h);
            cdf[i + 1] = cdf[i] + 0.5 * h * (density(a) + density(b));
        }
        let u = rng.random::<f64>() * cdf[grid];
        let i = cdf.partition_point(|&c| c < u).clamp(1, grid);
        let (c0, c1) = (cdf[i - 1], cdf[i]);
        let frac = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.0 };
        (i as f64 - 1.0 + frac) * h
    };
    let mut perp = unit_gaussian(rng, d);
    let along = dot(&perp, axis);
    perp.iter_mut().zip(axis).for_each(|(p, a)| *p -= along * a);
    let Some(perp) = crate::math::normalized(&perp) else {
        return axis.to_vec();
    };
    axis.iter().zip(&perp).map(|(a, p)| t.cos() * a + t.sin() * p).collect()
}

fn planted_prob(e_m: &[f64], e_q: &[f64]) -> f64 {
    let r = norm(e_q);
    sigmoid(dot(e_m, e_q) / r - r)
}

fn mean_prob(models: &[Vec<f64>], questions: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for m in models {
        for q in questions {
            total += planted_prob(m, q);
        }
    }
    total / (models.len() * questions.len()) as f64
}

fn bisect(mut f: impl FnMut(f64) -> f64, target: f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn model_id(i: usize) -> String {
    format!("m{i:04}")
}

fn question_id(j: usize) -> String {
    format!("q{j:06}")
}

/// Draws a planted world. Question directions follow the direction profile,
/// norms the difficulty profile (redrawn if below [`MIN_PLANTED_NORM`]).
/// Model embeddings are shifted along the mean question direction, with the
/// shift bisected so the mean planted probability hits the target; if even a
/// large shift falls short, the isotropic spread is scaled instead.
pub fn generate_planted(cfg: &PlantedConfig) -> Result<PlantedWorld> {
    cfg.validate()?;
    let d = cfg.dim;
    let mut rng = rng::seeded(cfg.seed);

    let cones: Vec<(Vec<f64>, f64, f64, String)> = match &cfg.direction {
        DirectionProfile::UniformSphere => Vec::new(),
        DirectionProfile::Cones { cones } => cones
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let axis = match &c.center {
                    Some(v) => crate::math::normalized(v).expect("validated"),
                    None => unit_gaussian(&mut rng, d),
                };
                let label = c.label.clone().unwrap_or_else(|| format!("cone{k}"));
                (axis, c.half_angle, c.weight, label)
            })
            .collect(),
    };
    let total_weight: f64 = cones.iter().map(|c| c.2).sum();

    let mut question_embeddings = Vec::with_capacity(cfg.questions);
    let mut question_tags = Vec::with_capacity(cfg.questions);
    for _ in 0..cfg.questions {
        let (dir, tag) = if cones.is_empty() {
            (unit_gaussian(&mut rng, d), "planted".to_owned())
        } else {
            let mut u = rng.random::<f64>() * total_weight;
            let mut pick = cones.len() - 1;
            for (k, c) in cones.iter().enumerate() {
                if u < c.2 {
                    pick = k;
                    break;
                }
                u -= c.2;
            }
            let (axis, alpha, _, label) = &cones[pick];
            (cap_direction(&mut rng, axis, *alpha), label.clone())
        };
        let r = draw_norm(&cfg.difficulty, &mut rng)?;
        question_embeddings.push(dir.iter().map(|x| x * r).collect::<Vec<f64>>());
        question_tags.push(tag);
    }

    let dirs: Vec<Vec<f64>> = question_embeddings
        .iter()
        .map(|e| crate::math::normalized(e).expect("norm >= MIN_PLANTED_NORM"))
        .collect();
    let mean_direction = crate::math::normalized(&crate::math::mean_vector(&dirs)).unwrap_or_else(|| vec![0.0; d]);
    let noise: Vec<Vec<f64>> = (0..cfg.models)
        .map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let build = |shift: f64, spread: f64| -> Vec<Vec<f64>> {
        noise
            .iter()
            .map(|g| g.iter().zip(&mean_direction).map(|(z, u)| shift * u + spread * z).collect())
            .collect()
    };

    let target = cfg.target_mean_prob;
    let spread = cfg.model_spread;
    let shift_max = 64.0;
    let (shift, spread) = if mean_prob(&build(0.0, spread), &question_embeddings) >= target {
        (0.0, spread)
    } else if mean_prob(&build(shift_max, spread), &question_embeddings) >= target {
        (bisect(|s| mean_prob(&build(s, spread), &question_embeddings), target, 0.0, shift_max), spread)
    } else {
        let base = spread.max(1.0);
        let scale = bisect(
            |k| mean_prob(&build(shift_max, base * k), &question_embeddings),
            target,
            1.0,
            64.0,
        );
        (shift_max, base * scale)
    };
    let model_embeddings = build(shift, spread);
    let achieved = mean_prob(&model_embeddings, &question_embeddings);
    if !(0.3..=0.7).contains(&achieved) {
        return Err(Error::Degenerate(format!(
            "could not tune mean planted probability into [0.3, 0.7] (got {achieved:.3})"
        )));
    }

    let mut world = PlantedWorld {
        seed: cfg.seed,
        model_ids: (0..cfg.models).map(model_id).collect(),
        question_ids: (0..cfg.questions).map(question_id).collect(),
        question_tags,
        model_embeddings,
        question_embeddings,
        shift,
        spread,
        mean_direction,
        feature_offset: cfg.feature_offset,
        records: Vec::new(),
        bayes_log_loss: 0.0,
    };
    world.resample(&mut rng);
    Ok(world)
}

fn draw_norm(profile: &DifficultyProfile, rng: &mut Rng) -> Result<f64> {
    for _ in 0..MAX_REJECTIONS {
        let r = match *profile {
            DifficultyProfile::LogNormal { median, sigma_log } => LogNormal::new(median.ln(), sigma_log)
                .map_err(|e| Error::Config(e.to_string()))?
                .sample(rng),
            DifficultyProfile::Constant { norm } => norm,
        };
        if r >= MIN_PLANTED_NORM && r.is_finite() {
            return Ok(r);
        }
    }
    Err(Error::Degenerate(format!(
        "difficulty profile produced {MAX_REJECTIONS} norms below {MIN_PLANTED_NORM}"
    )))
}

/// Bernoulli draws for every model against every question, and the mean
/// log-loss of those draws under the planted probabilities.
fn sample_responses(
    rng: &mut Rng,
    ids: &[String],
    models: &[Vec<f64>],
    world: &PlantedWorld,
) -> (Vec<ResponseRecord>, f64) {
    let mut records = Vec::with_capacity(models.len() * world.question_ids.len());
    let mut loss = 0.0;
    for (id, e_m) in ids.iter().zip(models) {
        for (j, e_q) in world.question_embeddings.iter().enumerate() {
            let r = norm(e_q);
            let z = dot(e_m, e_q) / r - r;
            let correct = rng.random::<f64>() < sigmoid(z);
            loss += bce_from_logit(z, correct);
            records.push(ResponseRecord::new(id, &world.question_ids[j], correct, &world.question_tags[j]));
        }
    }
    let n = records.len().max(1) as f64;
    (records, loss / n)
}

impl PlantedWorld {
    /// A world with given embeddings and one response per (model, question).
    pub fn from_embeddings(models: Vec<Vec<f64>>, questions: Vec<Vec<f64>>, seed: u64) -> Result<Self> {
        let d = models.first().or(questions.first()).map_or(0, Vec::len);
        if models.is_empty() || questions.is_empty() || d == 0 {
            return Err(Error::Config("need at least one model, one question and dim >= 1".into()));
        }
        if models.iter().chain(&questions).any(|v| v.len() != d) {
            return Err(Error::Shape("all embeddings must share one length".into()));
        }
        if let Some(j) = questions.iter().position(|q| !(norm(q) >= MIN_PLANTED_NORM)) {
            return Err(Error::DegenerateQuestion {
                norm: norm(&questions[j]),
                guard: MIN_PLANTED_NORM,
            });
        }
        let mut world = PlantedWorld {
            seed,
            model_ids: (0..models.len()).map(model_id).collect(),
            question_ids: (0..questions.len()).map(question_id).collect(),
            question_tags: vec!["planted".into(); questions.len()],
            model_embeddings: models,
            question_embeddings: questions,
            shift: 0.0,
            spread: 1.0,
            mean_direction: vec![0.0; d],
            feature_offset: 1.0,
            records: Vec::new(),
            bayes_log_loss: 0.0,
        };
        world.resample(&mut rng::seeded(seed));
        Ok(world)
    }

    fn resample(&mut self, rng: &mut Rng) {
        let (records, loss) = sample_responses(rng, &self.model_ids, &self.model_embeddings, self);
        self.records = records;
        self.bayes_log_loss = loss;
    }

    pub fn dim(&self) -> usize {
        self.question_embeddings.first().map_or(0, Vec::len)
    }

    /// Planted probability that model `i` answers question `j` correctly.
    pub fn true_prob(&self, i: usize, j: usize) -> f64 {
        planted_prob(&self.model_embeddings[i], &self.question_embeddings[j])
    }

    pub fn mean_true_prob(&self) -> f64 {
        mean_prob(&self.model_embeddings, &self.question_embeddings)
    }

    pub fn dataset(&self) -> Result<Dataset> {
        Dataset::from_records(self.records.clone())
    }

    /// Rows `(max(E, 0) + c, max(-E, 0) + c)` of width `2d`.
    pub fn features(&self) -> FeatureMatrix {
        let d = self.dim();
        let c = self.feature_offset;
        let values: Vec<f32> = self
            .question_embeddings
            .iter()
            .flat_map(|e| {
                let pos = e.iter().map(move |&x| (x.max(0.0) + c) as f32);
                let neg = e.iter().map(move |&x| ((-x).max(0.0) + c) as f32);
                pos.chain(neg).collect::<Vec<_>>()
            })
            .collect();
        FeatureMatrix::new(self.question_ids.clone(), 2 * d, values).expect("planted features are valid")
    }

    /// Adapter with `W1 = [I; 0]`, `W2 = [I, -I, 0]` and zero biases. On the
    /// positive features it reproduces each planted embedding up to f32
    /// rounding of the features.
    pub fn planted_adapter(&self) -> AdapterParams {
        let d = self.dim();
        let p = 2 * d;
        let mut a = AdapterParams::zeros(p, d);
        let h = a.hidden();
        for i in 0..p {
            a.w1[i * p + i] = 1.0;
        }
        for i in 0..d {
            a.w2[i * h + i] = 1.0;
            a.w2[i * h + d + i] = -1.0;
        }
        a
    }

    /// The planted parameters as a checkpoint.
    pub fn oracle_checkpoint(&self) -> Result<JeirtCheckpoint> {
        let rows = self.model_embeddings.iter().flatten().copied().collect();
        let table = ModelTable::new(self.dim(), self.model_ids.clone(), rows)?;
        JeirtCheckpoint::new(
            self.planted_adapter(),
            table,
            TrainMeta {
                epoch: 0,
                seed: self.seed,
                val_loss: self.bayes_log_loss,
            },
        )
    }

    /// A fresh model from the same population with its responses to every
    /// planted question; also returns its embedding.
    pub fn sample_new_model(&self, id: &str, seed: u64) -> (Vec<f64>, Vec<ResponseRecord>) {
        let mut rng = rng::seeded(seed);
        let e: Vec<f64> = self
            .mean_direction
            .iter()
            .map(|u| {
                let z: f64 = StandardNormal.sample(&mut rng);
                self.shift * u + self.spread * z
            })
            .collect();
        let (records, _) = sample_responses(&mut rng, &[id.to_owned()], std::slice::from_ref(&e), self);
        (e, records)
    }

    pub fn geometry(&self) -> Vec<QuestionGeometry> {
        self.question_ids
            .iter()
            .zip(&self.question_embeddings)
            .zip(&self.question_tags)
            .map(|((id, e), tag)| {
                QuestionGeometry::new(id, e.clone(), tag)
                    .expect("planted norms are positive")
                    .with_subject(Some(tag))
            })
            .collect()
    }

    /// Writes `responses.jsonl`, `features.{manifest.json,f32}`,
    /// `oracle.{manifest.json,f32}` and `planted.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_responses(dir.join("responses.jsonl"), &self.records)?;
        let (m, b) = crate::checkpoint::prefixed_paths(dir.join("features"));
        save_features(&self.features(), m, b)?;
        let (m, b) = crate::checkpoint::prefixed_paths(dir.join("oracle"));
        crate::checkpoint::save_checkpoint(&self.oracle_checkpoint()?, m, b)?;
        crate::data::features::write_json(&dir.join("planted.json"), self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prop1Report {
    /// Abilities in the axis-aligned witness: `[Θ(M1,Q1), Θ(M2,Q1), Θ(M2,Q2), Θ(M1,Q2)]`.
    pub axis_example: [f64; 4],
    pub pairs: usize,
    pub checked: usize,
    pub skipped_parallel: usize,
    pub violations: usize,
    /// Smallest `Θ(M1,Q1) − Θ(M2,Q1)` over the random pairs.
    pub min_margin: f64,
}

impl Prop1Report {
    pub fn holds(&self) -> bool {
        self.violations == 0 && self.axis_example[0] > self.axis_example[1] && self.axis_example[2] > self.axis_example[3]
    }
}

/// Directions above this cosine count as parallel.
const PARALLEL_COS: f64 = 1.0 - 1e-12;

/// Witnesses that no single ordering of models fits every question: for
/// non-parallel `Q1`, `Q2`, the models `M1 = u(Q1)` and `M2 = u(Q2)` each win
/// on their own question.
pub fn prop1_witness(q1: &[f64], q2: &[f64]) -> Option<[f64; 4]> {
    let c = cosine(q1, q2)?;
    if c >= PARALLEL_COS {
        return None;
    }
    let m1 = crate::math::normalized(q1)?;
    let m2 = crate::math::normalized(q2)?;
    let th = |m: &[f64], q: &[f64]| ability(m, q, 0.0).expect("non-zero question");
    Some([th(&m1, q1), th(&m2, q1), th(&m2, q2), th(&m1, q2)])
}

pub fn check_prop1() -> Prop1Report {
    check_prop1_with(1000, 0)
}

pub fn check_prop1_with(pairs: usize, seed: u64) -> Prop1Report {
    let axis_example = prop1_witness(&[1.0, 0.0], &[0.0, 1.0]).expect("orthogonal");
    let mut rng = rng::seeded(seed);
    let (mut checked, mut skipped, mut violations) = (0, 0, 0);
    let mut min_margin = f64::INFINITY;
    for _ in 0..pairs {
        let d = rng.random_range(2..=16);
        let scale = |rng: &mut Rng| 10f64.powf(rng.random_range(-2.0..2.0));
        let (s1, s2) = (scale(&mut rng), scale(&mut rng));
        let q1: Vec<f64> = unit_gaussian(&mut rng, d).into_iter().map(|x| x * s1).collect();
        let q2: Vec<f64> = unit_gaussian(&mut rng, d).into_iter().map(|x| x * s2).collect();
        match prop1_witness(&q1, &q2) {
            None => skipped += 1,
            Some(t) => {
                checked += 1;
                if !(t[0] > t[1] && t[2] > t[3]) {
                    violations += 1;
                }
                min_margin = min_margin.min(t[0] - t[1]).min(t[2] - t[3]);
            }
        }
    }
    Prop1Report {
        axis_example,
        pairs,
        checked,
        skipped_parallel: skipped,
        violations,
        min_margin,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub trials: usize,
    pub seed: u64,
    /// Trials where the observed gap exceeded the bound by more than 1e-9.
    pub violations: usize,
    /// Largest `observed − bound`; non-positive when the bound holds.
    pub max_slack: f64,
    /// Same, for the equal-norm variant (`None` for the ability bound).
    pub equal_norm_violations: Option<usize>,
    pub equal_norm_max_slack: Option<f64>,
}

impl BoundReport {
    pub fn holds(&self) -> bool {
        self.violations == 0 && self.equal_norm_violations.unwrap_or(0) == 0
    }
}

pub const BOUND_TOLERANCE: f64 = 1e-9;

/// One random (E_M, E_Q1, E_Q2) triple. Q2 is either independent of Q1 or a
/// small perturbation of it, so both large and tiny angles are exercised.
fn random_triple(rng: &mut Rng) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = rng.random_range(1..=16);
    let scale = |rng: &mut Rng| 10f64.powf(rng.random_range(-1.5..1.5));
    let sm = scale(rng);
    let e_m: Vec<f64> = (0..d).map(|_| sm * std_normal(rng)).collect::<Vec<f64>>();
    let s1 = scale(rng);
    let q1: Vec<f64> = unit_gaussian(rng, d).into_iter().map(|x| x * s1).collect();
    let q2: Vec<f64> = if rng.random_bool(0.5) {
        let s2 = scale(rng);
        unit_gaussian(rng, d).into_iter().map(|x| x * s2).collect()
    } else {
        let eps = 10f64.powf(rng.random_range(-6.0..0.0));
        let stretch = 1.0 + rng.random_range(-0.5..0.5);
        q1.iter()
            .map(|&x| stretch * (x + eps * s1 * std_normal(rng)))
            .collect()
    };
    (e_m, q1, q2)
}

fn angle_gap(q1: &[f64], q2: &[f64]) -> f64 {
    // 1 − cos as ‖û1 − û2‖²/2; the direct form cancels for near-parallel pairs
    let (n1, n2) = (norm(q1), norm(q2));
    0.5 * q1.iter().zip(q2).map(|(a, b)| (a / n1 - b / n2).powi(2)).sum::<f64>()
}

/// Observed gaps and their bounds for one (E_M, E_Q1, E_Q2) triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityCase {
    /// `1 − cos(E_Q1, E_Q2)`.
    pub epsilon: f64,
    pub prob_gap: f64,
    /// `¼(√(2ε)‖E_M‖ + |‖E_Q1‖ − ‖E_Q2‖|)`.
    pub prob_bound: f64,
    pub ability_gap: f64,
    /// `√(2ε)‖E_M‖`.
    pub ability_bound: f64,
}

/// Both question embeddings must be non-zero and all three the same length.
pub fn stability_case(e_m: &[f64], q1: &[f64], q2: &[f64]) -> Result<StabilityCase> {
    let (r1, r2) = (norm(q1), norm(q2));
    if r1 == 0.0 || r2 == 0.0 {
        return Err(Error::DegenerateDirection("question embedding is zero".into()));
    }
    let (t1, t2) = (ability(e_m, q1, 0.0)?, ability(e_m, q2, 0.0)?);
    let epsilon = angle_gap(q1, q2);
    let ability_bound = (2.0 * epsilon).sqrt() * norm(e_m);
    Ok(StabilityCase {
        epsilon,
        prob_gap: (sigmoid(t1 - r1) - sigmoid(t2 - r2)).abs(),
        prob_bound: 0.25 * (ability_bound + (r1 - r2).abs()),
        ability_gap: (t1 - t2).abs(),
        ability_bound,
    })
}

/// `|P(M,Q1) − P(M,Q2)| ≤ ¼(√(2ε)‖E_M‖ + |‖E_Q1‖ − ‖E_Q2‖|)` with
/// `ε = 1 − cos(E_Q1, E_Q2)`, and the equal-norm case obtained by rescaling
/// Q2 to Q1's norm.
pub fn check_prob_stability(trials: usize, seed: u64) -> BoundReport {
    let mut rng = rng::seeded(seed);
    let mut report = BoundReport {
        trials,
        seed,
        violations: 0,
        max_slack: f64::NEG_INFINITY,
        equal_norm_violations: Some(0),
        equal_norm_max_slack: Some(f64::NEG_INFINITY),
    };
    for _ in 0..trials {
        let (e_m, q1, q2) = random_triple(&mut rng);
        let c = stability_case(&e_m, &q1, &q2).expect("random triples are non-degenerate");
        report.max_slack = report.max_slack.max(c.prob_gap - c.prob_bound);
        report.violations += usize::from(c.prob_gap > c.prob_bound + BOUND_TOLERANCE);

        let (r1, r2) = (norm(&q1), norm(&q2));
        let q2_eq: Vec<f64> = q2.iter().map(|x| x * r1 / r2).collect();
        let c = stability_case(&e_m, &q1, &q2_eq).expect("random triples are non-degenerate");
        // equal norms: the norm term of the bound vanishes
        let bound = 0.25 * c.ability_bound;
        let slack = report.equal_norm_max_slack.as_mut().expect("set");
        *slack = slack.max(c.prob_gap - bound);
        *report.equal_norm_violations.as_mut().expect("set") += usize::from(c.prob_gap > bound + BOUND_TOLERANCE);
    }
    report
}

/// `|Θ(M,Q1) − Θ(M,Q2)| ≤ √(2ε)‖E_M‖`.
pub fn check_ability_shift(trials: usize, seed: u64) -> BoundReport {
    let mut rng = rng::seeded(seed);
    let mut report = BoundReport {
        trials,
        seed,
        violations: 0,
        max_slack: f64::NEG_INFINITY,
        equal_norm_violations: None,
        equal_norm_max_slack: None,
    };
    for _ in 0..trials {
        let (e_m, q1, q2) = random_triple(&mut rng);
        let c = stability_case(&e_m, &q1, &q2).expect("random triples are non-degenerate");
        report.max_slack = report.max_slack.max(c.ability_gap - c.ability_bound);
        report.violations += usize::from(c.ability_gap > c.ability_bound + BOUND_TOLERANCE);
    }
    report
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpposedPair {
    pub first: String,
    pub second: String,
    pub cosine: f64,
    /// False when the pair came from random sampling rather than a full scan.
    pub exact: bool,
    pub pairs_examined: usize,
}

/// Largest question set scanned exhaustively by [`most_opposed_pair`].
pub const EXACT_PAIR_LIMIT: usize = 5000;
/// Pairs drawn when the set is too large to scan.
pub const SAMPLED_PAIRS: usize = 1_000_000;

/// The pair of questions whose directions have the smallest cosine,
/// optionally restricted to questions whose subject (or, lacking one,
/// benchmark) equals `within`.
pub fn most_opposed_pair(geom: &[QuestionGeometry], within: Option<&str>, seed: u64) -> Result<OpposedPair> {
    let pool: Vec<&QuestionGeometry> = geom
        .iter()
        .filter(|g| within.is_none_or(|w| g.subject.as_deref().unwrap_or(&g.benchmark) == w))
        .collect();
    let n = pool.len();
    if n < 2 {
        return Err(Error::Config(format!("need at least 2 questions, found {n}")));
    }
    let mut best = (f64::INFINITY, 0, 1);
    let mut consider = |i: usize, j: usize| {
        let c = dot(&pool[i].direction, &pool[j].direction);
        if c < best.0 {
            best = (c, i, j);
        }
    };
    let (exact, examined) = if n <= EXACT_PAIR_LIMIT {
        for i in 0..n {
            for j in (i + 1)..n {
                consider(i, j);
            }
        }
        (true, n * (n - 1) / 2)
    } else {
        let mut rng = rng::seeded(seed);
        for _ in 0..SAMPLED_PAIRS {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            consider(i.min(j), i.max(j));
        }
        (false, SAMPLED_PAIRS)
    };
    let (c, i, j) = best;
    Ok(OpposedPair {
        first: pool[i].question_id.clone(),
        second: pool[j].question_id.clone(),
        cosine: c.clamp(-1.0, 1.0),
        exact,
        pairs_examined: examined,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cell_world_has_ln2_bayes_loss() {
        let w = PlantedWorld::from_embeddings(vec![vec![3.0, 4.0]], vec![vec![3.0, 4.0]], 1).unwrap();
        assert_eq!(w.records.len(), 1);
        assert_eq!(w.true_prob(0, 0), 0.5);
        assert!((w.bayes_log_loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn sampler_matches_planted_probability() {
        // ‖E_Q‖ = 1, Θ = 2 → p = σ(1)
        let q = vec![vec![1.0, 0.0]; 100_000];
        let w = PlantedWorld::from_embeddings(vec![vec![2.0, 0.0]], q, 5).unwrap();
        let rate = w.records.iter().filter(|r| r.correct).count() as f64 / w.records.len() as f64;
        assert!((w.true_prob(0, 0) - 0.731_058_6).abs() < 1e-6);
        assert!((rate - 0.731).abs() < 0.005);
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = PlantedConfig {
            models: 5,
            questions: 40,
            dim: 3,
            seed: 9,
            ..Default::default()
        };
        assert_eq!(generate_planted(&cfg).unwrap(), generate_planted(&cfg).unwrap());
    }

    #[test]
    fn mean_probability_is_tuned() {
        for seed in 0..5 {
            let cfg = PlantedConfig {
                models: 20,
                questions: 200,
                dim: 6,
                seed,
                ..Default::default()
            };
            let w = generate_planted(&cfg).unwrap();
            assert!((w.mean_true_prob() - 0.5).abs() < 1e-3);
            assert!(w.question_embeddings.iter().all(|q| norm(q) >= MIN_PLANTED_NORM));
        }
    }

    #[test]
    fn planted_adapter_reproduces_embeddings() {
        let cfg = PlantedConfig {
            models: 3,
            questions: 30,
            dim: 4,
            seed: 2,
            ..Default::default()
        };
        let w = generate_planted(&cfg).unwrap();
        let feats = w.features();
        let adapter = w.planted_adapter();
        for (j, e) in w.question_embeddings.iter().enumerate() {
            let row: Vec<f64> = feats.row(j).iter().map(|&v| f64::from(v)).collect();
            assert!(row.iter().all(|&v| v > 0.0));
            let got = crate::engine::question_embedding(&adapter, &row).unwrap();
            for (a, b) in got.iter().zip(e) {
                assert!((a - b).abs() < 1e-5 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn stability_case_matches_hand_values() {
        let c = stability_case(&[2.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((c.epsilon - 1.0).abs() < 1e-15);
        assert!((c.ability_gap - 2.0).abs() < 1e-15);
        assert!((c.ability_bound - 2.0 * 2f64.sqrt()).abs() < 1e-12);
        assert!((c.prob_gap - (sigmoid(1.0) - sigmoid(-1.0))).abs() < 1e-15);
        assert!((c.prob_bound - 0.5 * 2f64.sqrt()).abs() < 1e-12);
        // parallel questions: only the norm term remains
        let c = stability_case(&[1.0, 1.0], &[1.0, 0.0], &[3.0, 0.0]).unwrap();
        assert_eq!(c.epsilon, 0.0);
        assert!((c.prob_bound - 0.5).abs() < 1e-15);
        assert!(stability_case(&[1.0], &[0.0], &[1.0]).is_err());
    }

    #[test]
    fn cone_directions_stay_inside_cap() {
        let mut rng = rng::seeded(3);
        let axis = [0.0, 1.0, 0.0, 0.0];
        for _ in 0..500 {
            let v = cap_direction(&mut rng, &axis, 0.3);
            assert!((norm(&v) - 1.0).abs() < 1e-12);
            assert!(dot(&v, &axis) >= 0.3f64.cos() - 1e-9);
        }
    }

    #[test]
    fn prop1_axis_and_random_pairs() {
        let r = check_prop1();
        assert_eq!(r.axis_example, [1.0, 0.0, 1.0, 0.0]);
        assert!(r.holds());
        assert_eq!(r.checked + r.skipped_parallel, 1000);
        assert!(prop1_witness(&[1.0, 2.0], &[2.0, 4.0]).is_none());
    }

    #[test]
    fn prop1_margin_is_one_minus_cosine() {
        let q1 = [1.0, 0.0];
        let q2 = [0.9, 0.19f64.sqrt()];
        let t = prop1_witness(&q1, &q2).unwrap();
        assert!((t[0] - t[1] - 0.1).abs() < 1e-12 && (t[2] - t[3] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn bounds_hold_on_sampled_triples() {
        assert!(check_prob_stability(5000, 1).holds());
        assert!(check_ability_shift(5000, 1).holds());
    }

    #[test]
    fn identical_questions_have_zero_gap() {
        let e_m = [0.3, -1.2, 2.0];
        let q = [1.0, 1.0, -0.5];
        let p1 = sigmoid(ability(&e_m, &q, 0.0).unwrap() - norm(&q));
        assert_eq!(p1, sigmoid(ability(&e_m, &q, 0.0).unwrap() - norm(&q)));
        let q2 = [2.0, 2.0, -1.0];
        assert!((ability(&e_m, &q, 0.0).unwrap() - ability(&e_m, &q2, 0.0).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_unit_questions_shift_by_one() {
        let (q1, q2) = ([1.0, 0.0], [0.0, 1.0]);
        let shift = (ability(&q1, &q1, 0.0).unwrap() - ability(&q1, &q2, 0.0).unwrap()).abs();
        assert_eq!(shift, 1.0);
        assert!(shift <= 2f64.sqrt());
    }

    #[test]
    fn equal_norm_example_bound() {
        let q1 = [1.0, 0.0];
        let q2 = [0.98, (1.0f64 - 0.98 * 0.98).sqrt()];
        let bound = 0.25 * (2.0 * (1.0 - 0.98f64)).sqrt();
        assert!((bound - 0.05).abs() < 1e-12);
        let mut rng = rng::seeded(0);
        for _ in 0..1000 {
            let e_m = unit_gaussian(&mut rng, 2);
            let p = |q: &[f64]| sigmoid(ability(&e_m, q, 0.0).unwrap() - norm(q));
            assert!((p(&q1) - p(&q2)).abs() <= bound + 1e-12);
        }
    }

    fn g(id: &str, e: &[f64]) -> QuestionGeometry {
        QuestionGeometry::new(id, e.to_vec(), "b").unwrap()
    }

    #[test]
    fn opposed_pair_cases() {
        let geom = [g("a", &[1.0, 0.0]), g("b", &[0.0, 1.0]), g("c", &[-1.0, 0.0])];
        let p = most_opposed_pair(&geom, None, 0).unwrap();
        assert_eq!((p.first.as_str(), p.second.as_str(), p.cosine), ("a", "c", -1.0));
        let same = [g("a", &[1.0, 1.0]), g("b", &[2.0, 2.0])];
        assert!((most_opposed_pair(&same, None, 0).unwrap().cosine - 1.0).abs() < 1e-12);
        assert!(most_opposed_pair(&same[..1], None, 0).unwrap_err().is_config());
        assert!(most_opposed_pair(&geom, Some("other"), 0).unwrap_err().is_config());
    }

    #[test]
    fn opposed_pair_matches_brute_force() {
        let mut rng = rng::seeded(12);
        let geom: Vec<_> = (0..100).map(|i| g(&format!("q{i}"), &unit_gaussian(&mut rng, 5))).collect();
        let p = most_opposed_pair(&geom, None, 0).unwrap();
        let mut best = f64::INFINITY;
        for i in 0..100 {
            for j in (i + 1)..100 {
                best = best.min(cosine(&geom[i].embedding, &geom[j].embedding).unwrap());
            }
        }
        assert!(p.exact && p.pairs_examined == 4950);
        assert!((p.cosine - best).abs() < 1e-12);
    }
}
