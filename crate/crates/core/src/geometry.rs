//! Diagnostics over learned question embeddings: how norm tracks difficulty,
//! how directions align across benchmarks, and how much of the space the
//! embeddings actually use.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::checkpoint::JeirtCheckpoint;
use crate::data::{Dataset, FeatureMatrix};
use crate::engine::{question_embedding, NORM_GUARD};
use crate::error::{Error, Result};
use crate::math::{cosine, covariance, dot, mean_vector, norm, symmetric_eigen};

/// Tolerance for every eigen-decomposition in this module.
pub const EIGEN_TOL: f64 = 1e-10;
/// Largest question set accepted by [`kernel_pca_cosine_2d`] by default.
pub const KPCA_DEFAULT_CAP: usize = 20_000;

/// A question embedding split into unit direction and norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionGeometry {
    pub question_id: String,
    pub embedding: Vec<f64>,
    /// `embedding / norm`; unit length.
    pub direction: Vec<f64>,
    /// Strictly positive.
    pub norm: f64,
    pub benchmark: String,
    pub subject: Option<String>,
}

impl QuestionGeometry {
    pub fn new(question_id: &str, embedding: Vec<f64>, benchmark: &str) -> Result<Self> {
        let r = norm(&embedding);
        if !(r > NORM_GUARD) || !r.is_finite() {
            return Err(Error::DegenerateQuestion { norm: r, guard: NORM_GUARD });
        }
        Ok(Self {
            question_id: question_id.to_owned(),
            direction: embedding.iter().map(|x| x / r).collect(),
            embedding,
            norm: r,
            benchmark: benchmark.to_owned(),
            subject: None,
        })
    }

    pub fn with_subject(mut self, subject: Option<&str>) -> Self {
        self.subject = subject.map(str::to_owned);
        self
    }
}

/// Embeds every question of `ds` through the checkpoint's adapter, in
/// dataset question order, carrying benchmark and subject tags.
pub fn question_geometry(ckpt: &JeirtCheckpoint, feats: &FeatureMatrix, ds: &Dataset) -> Result<Vec<QuestionGeometry>> {
    let missing: Vec<&str> = ds
        .questions()
        .iter()
        .filter(|q| feats.row_of(q).is_none())
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        return Err(Error::Coverage(format!("no feature row for questions: {}", missing.join(", "))));
    }
    ds.questions()
        .iter()
        .enumerate()
        .map(|(q, id)| {
            let row: Vec<f64> = feats.row_of(id).expect("checked").iter().map(|&v| f64::from(v)).collect();
            let e = question_embedding(ckpt.adapter(), &row)?;
            Ok(QuestionGeometry::new(id, e, ds.question_benchmark(q))?.with_subject(ds.question_subject(q)))
        })
        .collect()
}

fn geometry_lookup(geom: &[QuestionGeometry]) -> HashMap<&str, usize> {
    geom.iter().enumerate().map(|(i, g)| (g.question_id.as_str(), i)).collect()
}

/// `(question index in geom, correct)` for every record, or a coverage error
/// naming the first question without geometry.
fn scored_records(geom: &[QuestionGeometry], ds: &Dataset) -> Result<Vec<(usize, bool)>> {
    let lookup = geometry_lookup(geom);
    let by_question: Vec<Option<usize>> = ds.questions().iter().map(|q| lookup.get(q.as_str()).copied()).collect();
    ds.cells()
        .iter()
        .map(|c| {
            by_question[c.question]
                .map(|g| (g, c.correct))
                .ok_or_else(|| Error::Coverage(format!("question {} has no geometry", ds.questions()[c.question])))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormBin {
    pub index: usize,
    /// Largest norm assigned to this bin by rank.
    pub upper_edge: f64,
    /// First bin of the group of bins sharing this edge.
    pub group: usize,
    /// Questions, records and hits pooled over the group.
    pub questions: usize,
    pub records: usize,
    pub hits: usize,
    pub accuracy: Option<f64>,
}

/// Accuracy by norm quantile. With questions sorted by norm (ties in input
/// order), bin `k` has upper edge `s[ceil((k+1)n/B) - 1]`. A question goes to
/// the first bin whose edge is at least its norm, so tied norms never
/// straddle bins; bins with equal edges form one group and all report the
/// pooled group statistics.
pub fn norm_quantile_accuracy(geom: &[QuestionGeometry], ds: &Dataset, bins: usize) -> Result<Vec<NormBin>> {
    if bins == 0 || geom.len() < bins {
        return Err(Error::Config(format!("{} questions cannot fill {bins} bins", geom.len())));
    }
    let n = geom.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| geom[a].norm.total_cmp(&geom[b].norm).then(a.cmp(&b)));
    let edges: Vec<f64> = (0..bins).map(|k| geom[order[((k + 1) * n).div_ceil(bins) - 1]].norm).collect();
    let group_of_bin: Vec<usize> = (0..bins)
        .map(|k| edges.iter().position(|&e| e == edges[k]).expect("present"))
        .collect();

    let group_of_question: Vec<usize> = geom
        .iter()
        .map(|g| edges.iter().position(|&e| e >= g.norm).expect("last edge is the max"))
        .collect();
    let mut questions = vec![0usize; bins];
    for &k in &group_of_question {
        questions[k] += 1;
    }
    let mut records = vec![0usize; bins];
    let mut hits = vec![0usize; bins];
    for (g, correct) in scored_records(geom, ds)? {
        let k = group_of_question[g];
        records[k] += 1;
        hits[k] += usize::from(correct);
    }
    Ok((0..bins)
        .map(|k| {
            let g = group_of_bin[k];
            NormBin {
                index: k,
                upper_edge: edges[k],
                group: g,
                questions: questions[g],
                records: records[g],
                hits: hits[g],
                accuracy: (records[g] > 0).then(|| hits[g] as f64 / records[g] as f64),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(false-positive rate, true-positive rate)` for each threshold.
    pub points: Vec<(f64, f64)>,
    /// Flag a record positive when its score is at least the threshold.
    /// Starts at `+inf` and ends at `-inf`; JSON writes the sentinels as null.
    pub thresholds: Vec<f64>,
    /// Rank statistic with average ranks for ties.
    pub auc: f64,
    /// Trapezoid area under `points`.
    pub auc_sweep: f64,
    pub positives: usize,
    pub negatives: usize,
}

/// ROC of `score` against `positive` labels. Both areas are exact rationals
/// over the same denominator, so they agree to rounding.
pub fn roc_curve(scores: &[f64], positive: &[bool]) -> Result<RocCurve> {
    assert_eq!(scores.len(), positive.len());
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite { what: "ROC scores".into(), row: i });
    }
    let n_pos = positive.iter().filter(|&&p| p).count() as u64;
    let n_neg = positive.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuc(format!("{n_pos} positive and {n_neg} negative records")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![(0.0, 0.0)];
    let mut thresholds = vec![f64::INFINITY];
    let (mut tp, mut fp) = (0u64, 0u64);
    // 2U = Σ Δfp · (tp_prev + tp), the doubled trapezoid area in count units.
    let mut twice_area: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        twice_area += u128::from(fp - fp0) * u128::from(tp + tp0);
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
        thresholds.push(s);
    }
    points.push((1.0, 1.0));
    thresholds.push(f64::NEG_INFINITY);

    let denom = 2.0 * n_pos as f64 * n_neg as f64;
    Ok(RocCurve {
        points,
        thresholds,
        auc: mann_whitney_twice_u(scores, positive) as f64 / denom,
        auc_sweep: twice_area as f64 / denom,
        positives: n_pos as usize,
        negatives: n_neg as usize,
    })
}

/// `2U` where `U` counts (positive, negative) pairs with the positive scored
/// higher, ties counting one half. Computed from doubled average ranks so
/// the result is an exact integer.
fn mann_whitney_twice_u(scores: &[f64], positive: &[bool]) -> u128 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j average to (i + 1 + j) / 2
        let twice_avg = (i + 1 + j) as u128;
        let pos_in_run = order[i..j].iter().filter(|&&k| positive[k]).count() as u128;
        twice_rank_sum += twice_avg * pos_in_run;
        i = j;
    }
    let p = positive.iter().filter(|&&x| x).count() as u128;
    twice_rank_sum - p * (p + 1)
}

/// Scores each record by its question's norm; incorrect answers are the
/// positive class.
pub fn roc_from_norms(geom: &[QuestionGeometry], ds: &Dataset) -> Result<RocCurve> {
    let scored = scored_records(geom, ds)?;
    let scores: Vec<f64> = scored.iter().map(|&(g, _)| geom[g].norm).collect();
    let positive: Vec<bool> = scored.iter().map(|&(_, c)| !c).collect();
    roc_curve(&scores, &positive)
}

fn mean_direction(geom: &[&QuestionGeometry]) -> Vec<f64> {
    let d = geom.first().map_or(0, |g| g.direction.len());
    let mut mean = vec![0.0; d];
    for g in geom {
        for (m, x) in mean.iter_mut().zip(&g.direction) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= geom.len() as f64);
    mean
}

/// Below this norm a mean of unit vectors has no direction.
const MEAN_GUARD: f64 = 1e-12;

fn directed_mean(geom: &[&QuestionGeometry], what: &str) -> Result<Vec<f64>> {
    let mean = mean_direction(geom);
    if norm(&mean) <= MEAN_GUARD {
        return Err(Error::DegenerateDirection(format!("mean direction of {what} is zero")));
    }
    Ok(mean)
}

/// Cosine between the mean unit direction of questions tagged `benchmark` and
/// the mean over all other questions.
pub fn directional_alignment(geom: &[QuestionGeometry], benchmark: &str) -> Result<f64> {
    let (inside, outside): (Vec<&QuestionGeometry>, Vec<&QuestionGeometry>) =
        geom.iter().partition(|g| g.benchmark == benchmark);
    if inside.is_empty() || outside.is_empty() {
        return Err(Error::Config(format!(
            "benchmark {benchmark:?} splits questions into {} and {}",
            inside.len(),
            outside.len()
        )));
    }
    let mu_b = directed_mean(&inside, benchmark)?;
    let mu_rest = directed_mean(&outside, "the complement")?;
    Ok(cosine(&mu_b, &mu_rest).expect("both means are non-zero"))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grouping {
    #[default]
    Benchmark,
    Subject,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineStat {
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosineStats {
    pub groups: BTreeMap<String, CosineStat>,
    pub global: CosineStat,
}

fn cosine_stat(members: &[&QuestionGeometry], what: &str) -> Result<CosineStat> {
    let mu = directed_mean(members, what)?;
    let cos: Vec<f64> = members
        .iter()
        .map(|g| cosine(&g.direction, &mu).expect("non-zero"))
        .collect();
    let k = cos.len() as f64;
    let mean = cos.iter().sum::<f64>() / k;
    let var = cos.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / k;
    Ok(CosineStat {
        count: cos.len(),
        mean,
        std: var.sqrt(),
    })
}

/// Cosine of every direction to its group's mean direction. Under subject
/// grouping, questions without a subject only enter the global statistic.
pub fn cosine_to_mean_stats(geom: &[QuestionGeometry], grouping: Grouping) -> Result<CosineStats> {
    if geom.is_empty() {
        return Err(Error::Config("no questions".into()));
    }
    let mut groups: BTreeMap<&str, Vec<&QuestionGeometry>> = BTreeMap::new();
    for g in geom {
        let key = match grouping {
            Grouping::Benchmark => Some(g.benchmark.as_str()),
            Grouping::Subject => g.subject.as_deref(),
        };
        if let Some(key) = key {
            groups.entry(key).or_default().push(g);
        }
    }
    let all: Vec<&QuestionGeometry> = geom.iter().collect();
    Ok(CosineStats {
        groups: groups
            .into_iter()
            .map(|(k, members)| Ok((k.to_owned(), cosine_stat(&members, k)?)))
            .collect::<Result<_>>()?,
        global: cosine_stat(&all, "all questions")?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaSpectrum {
    /// Covariance eigenvalues, descending, negatives from rounding clamped to 0.
    pub eigenvalues: Vec<f64>,
    /// Cumulative explained-variance fractions; the last entry is 1.
    pub cumulative: Vec<f64>,
}

fn check_rows(vectors: &[Vec<f64>]) -> Result<()> {
    if vectors.len() < 2 {
        return Err(Error::Config(format!("need at least 2 vectors, got {}", vectors.len())));
    }
    let d = vectors[0].len();
    if d == 0 || vectors.iter().any(|v| v.len() != d) {
        return Err(Error::Shape("vectors must share one non-zero length".into()));
    }
    Ok(())
}

pub fn covariance_spectrum(vectors: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_rows(vectors)?;
    let eig = symmetric_eigen(&covariance(vectors), EIGEN_TOL);
    Ok(eig.values.into_iter().map(|v| v.max(0.0)).collect())
}

pub fn pca_cumulative_variance(vectors: &[Vec<f64>]) -> Result<PcaSpectrum> {
    let eigenvalues = covariance_spectrum(vectors)?;
    let total: f64 = eigenvalues.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("covariance has zero trace".into()));
    }
    let mut acc = 0.0;
    let mut cumulative: Vec<f64> = eigenvalues
        .iter()
        .map(|v| {
            acc += v;
            acc / total
        })
        .collect();
    if let Some(last) = cumulative.last_mut() {
        *last = 1.0;
    }
    Ok(PcaSpectrum { eigenvalues, cumulative })
}

/// `exp(H)` of the normalized spectrum, with `0 · ln 0 = 0`.
pub fn effective_rank_of_spectrum(eigenvalues: &[f64]) -> Result<f64> {
    let total: f64 = eigenvalues.iter().map(|v| v.max(0.0)).sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("spectrum has zero total".into()));
    }
    let entropy: f64 = eigenvalues
        .iter()
        .map(|v| v.max(0.0) / total)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum();
    Ok(entropy.exp())
}

pub fn effective_rank(vectors: &[Vec<f64>]) -> Result<f64> {
    effective_rank_of_spectrum(&covariance_spectrum(vectors)?)
}

/// Kernel PCA with the cosine kernel, returning the top two components'
/// coordinates scaled by the square root of their eigenvalues.
///
/// The centered kernel is `K = Ũ Ũᵀ` for the column-centered unit directions
/// `Ũ`, so its non-zero spectrum is that of the d x d matrix `Ũᵀ Ũ`, and the
/// scaled coordinates along eigenvector `w` are `Ũ w`. Each axis is signed so
/// its largest-magnitude coordinate is positive.
pub fn kernel_pca_cosine_2d(geom: &[QuestionGeometry], cap: usize) -> Result<Vec<[f64; 2]>> {
    if geom.len() > cap {
        return Err(Error::Config(format!("{} questions exceed the kernel PCA cap of {cap}", geom.len())));
    }
    if geom.is_empty() {
        return Ok(Vec::new());
    }
    let d = geom[0].direction.len();
    if geom.iter().any(|g| g.direction.len() != d) {
        return Err(Error::Shape("directions must share one length".into()));
    }
    let rows: Vec<Vec<f64>> = geom.iter().map(|g| g.direction.clone()).collect();
    let mean = mean_vector(&rows);
    let centered: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    let mut gram = vec![vec![0.0; d]; d];
    for r in &centered {
        for i in 0..d {
            for j in i..d {
                gram[i][j] += r[i] * r[j];
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            gram[i][j] = gram[j][i];
        }
    }
    let eig = symmetric_eigen(&gram, EIGEN_TOL);
    let scale = eig.values.first().copied().unwrap_or(0.0).max(0.0);
    let mut coords = vec![[0.0; 2]; geom.len()];
    for axis in 0..2.min(d) {
        if !(eig.values[axis] > scale * 1e-12) {
            continue;
        }
        let w = &eig.vectors[axis];
        let mut column: Vec<f64> = centered.iter().map(|r| dot(r, w)).collect();
        let lead = column
            .iter()
            .copied()
            .fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if lead < 0.0 {
            column.iter_mut().for_each(|v| *v = -*v);
        }
        for (c, v) in coords.iter_mut().zip(column) {
            c[axis] = v;
        }
    }
    Ok(coords)
}
