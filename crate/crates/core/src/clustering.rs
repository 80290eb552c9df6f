//! k-means on unit directions and agreement of the resulting partition with
//! reference labels.

use std::collections::{BTreeMap, HashMap};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::QuestionGeometry;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub k: usize,
    pub seed: u64,
    /// Cluster of each question, in input order; every entry `< k`.
    pub question_ids: Vec<String>,
    pub clusters: Vec<usize>,
    pub inertia: f64,
    /// Inertia after initialization and after every Lloyd iteration.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl ClusterAssignment {
    pub fn as_map(&self) -> BTreeMap<String, usize> {
        self.question_ids.iter().cloned().zip(self.clusters.iter().copied()).collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(point, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++ seeding followed by Lloyd iterations on the unit directions,
/// until the assignment stops changing or `max_iters` is reached. A cluster
/// left empty is re-seeded at the point farthest from its current center.
pub fn kmeans_unit(geom: &[QuestionGeometry], k: usize, seed: u64, max_iters: usize) -> Result<ClusterAssignment> {
    let points: Vec<Vec<f64>> = geom.iter().map(|g| g.direction.clone()).collect();
    let clusters = kmeans(&points, k, seed, max_iters)?;
    Ok(ClusterAssignment {
        question_ids: geom.iter().map(|g| g.question_id.clone()).collect(),
        ..clusters
    })
}

/// Plain k-means over arbitrary points; question ids are left empty.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iters: usize) -> Result<ClusterAssignment> {
    let n = points.len();
    if k == 0 || n < k {
        return Err(Error::Config(format!("cannot form {k} clusters from {n} points")));
    }
    let mut rng = rng::seeded(seed);

    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    let mut closest: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = closest.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in closest.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            // every point coincides with a center
            rng.random_range(0..n)
        };
        centers.push(points[next].clone());
        for (c, p) in closest.iter_mut().zip(points) {
            *c = c.min(sq_dist(p, centers.last().expect("pushed")));
        }
    }

    let assign = |centers: &[Vec<f64>]| -> (Vec<usize>, f64) {
        let mut inertia = 0.0;
        let labels = points
            .iter()
            .map(|p| {
                let (c, d) = nearest(p, centers);
                inertia += d;
                c
            })
            .collect();
        (labels, inertia)
    };
    let (mut labels, mut inertia) = assign(&centers);
    let mut history = vec![inertia];
    let mut converged = false;
    let mut iterations = 0;
    let dim = points[0].len();

    while iterations < max_iters {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&labels) {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq_dist(&points[a], &centers[labels[a]]);
                        let db = sq_dist(&points[b], &centers[labels[b]]);
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .expect("n >= 1");
                centers[c] = points[far].clone();
                counts[labels[far]] -= 1;
                labels[far] = c;
                counts[c] = 1;
            }
        }
        let (next, next_inertia) = assign(&centers);
        history.push(next_inertia);
        let changed = next != labels;
        labels = next;
        inertia = next_inertia;
        if !changed {
            converged = true;
            break;
        }
    }

    Ok(ClusterAssignment {
        k,
        seed,
        question_ids: Vec::new(),
        clusters: labels,
        inertia,
        inertia_history: history,
        iterations,
        converged,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NmiNorm {
    #[default]
    Arithmetic,
    Geometric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementMetrics {
    pub purity: f64,
    pub inverse_purity: f64,
    pub nmi: f64,
    pub homogeneity: f64,
    pub completeness: f64,
}

/// Entropy in nats of a count vector, with `0 ln 0 = 0`.
fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

pub fn agreement_metrics(assign: &ClusterAssignment, labels: &BTreeMap<String, String>) -> Result<AgreementMetrics> {
    agreement_metrics_with(assign, labels, NmiNorm::Arithmetic)
}

/// Metrics of clusters C against reference classes S. Homogeneity is 1 when
/// H(S) = 0 and completeness is 1 when H(C) = 0; NMI is 1 when both
/// entropies vanish.
pub fn agreement_metrics_with(
    assign: &ClusterAssignment,
    labels: &BTreeMap<String, String>,
    norm: NmiNorm,
) -> Result<AgreementMetrics> {
    let mut classes: HashMap<&str, usize> = HashMap::new();
    let mut class_of = Vec::with_capacity(assign.clusters.len());
    for q in &assign.question_ids {
        let label = labels
            .get(q)
            .ok_or_else(|| Error::Coverage(format!("question {q} has no label")))?;
        let next = classes.len();
        class_of.push(*classes.entry(label.as_str()).or_insert(next));
    }
    Ok(contingency_metrics(&assign.clusters, &class_of, norm))
}

/// Metrics from two parallel label vectors.
pub fn contingency_metrics(clusters: &[usize], classes: &[usize], norm: NmiNorm) -> AgreementMetrics {
    assert_eq!(clusters.len(), classes.len());
    let n = clusters.len() as f64;
    let kc = clusters.iter().max().map_or(0, |m| m + 1);
    let ks = classes.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0usize; ks]; kc];
    for (&c, &s) in clusters.iter().zip(classes) {
        table[c][s] += 1;
    }
    let row: Vec<usize> = table.iter().map(|r| r.iter().sum()).collect();
    let col: Vec<usize> = (0..ks).map(|s| table.iter().map(|r| r[s]).sum()).collect();

    let purity = table.iter().map(|r| r.iter().copied().max().unwrap_or(0)).sum::<usize>() as f64 / n;
    let inverse_purity = (0..ks).map(|s| table.iter().map(|r| r[s]).max().unwrap_or(0)).sum::<usize>() as f64 / n;

    let h_c = entropy(row.iter().copied(), n);
    let h_s = entropy(col.iter().copied(), n);
    let mut mi = 0.0;
    for c in 0..kc {
        for s in 0..ks {
            let nij = table[c][s];
            if nij > 0 {
                let nij = nij as f64;
                mi += nij / n * (n * nij / (row[c] as f64 * col[s] as f64)).ln();
            }
        }
    }
    let mi = mi.max(0.0);
    // H(S|C) = H(S) - I, H(C|S) = H(C) - I
    let homogeneity = if h_s == 0.0 { 1.0 } else { (mi / h_s).clamp(0.0, 1.0) };
    let completeness = if h_c == 0.0 { 1.0 } else { (mi / h_c).clamp(0.0, 1.0) };
    let denom = match norm {
        NmiNorm::Arithmetic => 0.5 * (h_c + h_s),
        NmiNorm::Geometric => (h_c * h_s).sqrt(),
    };
    let nmi = if h_c == 0.0 && h_s == 0.0 {
        1.0
    } else if denom == 0.0 {
        0.0
    } else {
        (mi / denom).clamp(0.0, 1.0)
    };
    AgreementMetrics {
        purity,
        inverse_purity,
        nmi,
        homogeneity,
        completeness,
    }
}
