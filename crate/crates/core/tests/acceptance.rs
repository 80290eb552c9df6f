//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any criterion fails.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use jeirt::clustering::{contingency_metrics, NmiNorm};
use jeirt::data::{make_split, Dataset, ResponseRecord, SplitPart};
use jeirt::engine::{batch_loss_and_grads, evaluate, train, AdapterParams, ModelTable, TrainConfig, NORM_GUARD};
use jeirt::geometry::{
    directional_alignment, effective_rank, effective_rank_of_spectrum, pca_cumulative_variance, roc_curve,
    roc_from_norms, QuestionGeometry,
};
use jeirt::irt2pl::{fit_2pl, saturation_report, Irt2plConfig};
use jeirt::math::{bce_from_logit, dot, norm, sigmoid};
use jeirt::onboarding::onboard_model;
use jeirt::rng::seeded;
use jeirt::synth::{
    check_ability_shift, check_prob_stability, check_prop1, generate_planted, Cone, DifficultyProfile,
    DirectionProfile, PlantedConfig, PlantedWorld,
};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    pass: bool,
    /// Not evaluated because its inputs are absent; counts as neither pass nor fail.
    skipped: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome {
        pass,
        skipped: false,
        detail,
    }
}

fn within_budget(elapsed: Duration, budget: Duration) -> (bool, String) {
    (
        elapsed <= budget,
        format!("{:.1}s of {}s budget", elapsed.as_secs_f64(), budget.as_secs()),
    )
}

fn propositions() -> Outcome {
    let start = Instant::now();
    let prob = check_prob_stability(100_000, 1);
    let shift = check_ability_shift(100_000, 2);
    let p1 = check_prop1();
    let (fast, time) = within_budget(start.elapsed(), Duration::from_secs(30));
    outcome(
        prob.holds() && shift.holds() && p1.holds() && p1.checked + p1.skipped_parallel == 1000 && fast,
        format!(
            "probability bound: {} violations (max slack {:.2e}, equal-norm {} violations); ability bound: {} violations (max slack {:.2e}); construction: {} pairs checked, {} violations; {time}",
            prob.violations,
            prob.max_slack,
            prob.equal_norm_violations.unwrap_or(0),
            shift.violations,
            shift.max_slack,
            p1.checked,
            p1.violations
        ),
    )
}

fn std_normal(rng: &mut jeirt::rng::Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn gradients() -> Outcome {
    const STEP: f64 = 1e-4;
    const REL_TOL: f64 = 1e-3;
    let start = Instant::now();
    let mut rng = seeded(77);
    let mut configs = 0;
    let mut rejected = 0;
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    while configs < 50 {
        let p = rng.random_range(1..=5);
        let d = rng.random_range(1..=4);
        let mut adapter = AdapterParams::glorot(p, d, &mut rng);
        adapter.b1.iter_mut().for_each(|b| *b = 0.3 * std_normal(&mut rng));
        adapter.b2.iter_mut().for_each(|b| *b = 0.3 * std_normal(&mut rng));
        let m = rng.random_range(1..=3);
        let nq = rng.random_range(1..=4);
        let ids: Vec<String> = (0..m).map(|i| format!("m{i}")).collect();
        let table_rows: Vec<f64> = (0..m * d).map(|_| std_normal(&mut rng)).collect();
        let table = ModelTable::new(d, ids.clone(), table_rows).unwrap();
        let qids: Vec<String> = (0..nq).map(|j| format!("q{j}")).collect();
        let values: Vec<f32> = (0..nq * p).map(|_| std_normal(&mut rng) as f32).collect();
        let feats = jeirt::data::FeatureMatrix::new(qids.clone(), p, values).unwrap();
        let batch: Vec<ResponseRecord> = (0..rng.random_range(1..=8))
            .map(|_| {
                ResponseRecord::new(
                    &ids[rng.random_range(0..m)],
                    &qids[rng.random_range(0..nq)],
                    rng.random_bool(0.5),
                    "b",
                )
            })
            .collect();

        // A perturbation of W1 or b1 moves a pre-activation by at most
        // STEP · max(1, |x|); reject configs with a kink closer than 10x that.
        let h = adapter.hidden();
        let mut near_kink = false;
        for j in 0..nq {
            let x: Vec<f64> = feats.row(j).iter().map(|&v| f64::from(v)).collect();
            let reach = 10.0 * STEP * x.iter().fold(1.0f64, |a, v| a.max(v.abs()));
            for i in 0..h {
                let pre = adapter.b1[i] + dot(&adapter.w1[i * p..(i + 1) * p], &x);
                near_kink |= pre.abs() < reach;
            }
        }
        let embeddings_ok = (0..nq).all(|j| {
            let x: Vec<f64> = feats.row(j).iter().map(|&v| f64::from(v)).collect();
            norm(&jeirt::engine::question_embedding(&adapter, &x).unwrap()) > 1e-2
        });
        if near_kink || !embeddings_ok {
            rejected += 1;
            continue;
        }
        configs += 1;

        let analytic = batch_loss_and_grads(&adapter, &table, &feats, &batch, NORM_GUARD).unwrap();
        let loss_at = |a: &AdapterParams, t: &ModelTable| batch_loss_and_grads(a, t, &feats, &batch, NORM_GUARD).unwrap().loss;
        let mut check = |numeric: f64, exact: f64| {
            let rel = (numeric - exact).abs() / numeric.abs().max(exact.abs()).max(1e-6);
            worst = worst.max(rel);
            if rel > REL_TOL {
                failures += 1;
            }
        };
        let seg_len = [adapter.w1.len(), adapter.b1.len(), adapter.w2.len(), adapter.b2.len()];
        for (s, &len) in seg_len.iter().enumerate() {
            for k in 0..len {
                let nudge = |delta: f64| {
                    let mut a = adapter.clone();
                    [&mut a.w1, &mut a.b1, &mut a.w2, &mut a.b2][s][k] += delta;
                    loss_at(&a, &table)
                };
                let numeric = (nudge(STEP) - nudge(-STEP)) / (2.0 * STEP);
                let g = &analytic.grads.adapter;
                let exact = [&g.w1, &g.b1, &g.w2, &g.b2][s][k];
                check(numeric, exact);
            }
        }
        for k in 0..m * d {
            let nudge = |delta: f64| {
                let mut rows = table.rows().to_vec();
                rows[k] += delta;
                loss_at(&adapter, &ModelTable::new(d, ids.clone(), rows).unwrap())
            };
            check((nudge(STEP) - nudge(-STEP)) / (2.0 * STEP), analytic.grads.table[k]);
        }
    }
    let (fast, time) = within_budget(start.elapsed(), Duration::from_secs(60));
    outcome(
        failures == 0 && fast,
        format!("50 configurations ({rejected} rejected near a ReLU kink), worst relative error {worst:.2e}, {failures} coordinates over {REL_TOL:e}; {time}"),
    )
}

fn recovery_world() -> PlantedWorld {
    generate_planted(&PlantedConfig {
        models: 50,
        questions: 2000,
        dim: 8,
        seed: 20_240,
        ..Default::default()
    })
    .unwrap()
}

/// Log-loss and accuracy of the planted probabilities on the given records.
fn planted_scores(world: &PlantedWorld, ds: &Dataset, indices: &[usize]) -> (f64, f64) {
    let m_of: HashMap<&str, usize> = world.model_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let q_of: HashMap<&str, usize> = world.question_ids.iter().enumerate().map(|(j, s)| (s.as_str(), j)).collect();
    let (mut loss, mut hits) = (0.0, 0usize);
    for &i in indices {
        let r = &ds.records()[i];
        let p = world.true_prob(m_of[r.model_id.as_str()], q_of[r.question_id.as_str()]);
        let z = (p / (1.0 - p)).ln();
        loss += bce_from_logit(z, r.correct);
        hits += usize::from((p >= 0.5) == r.correct);
    }
    let n = indices.len() as f64;
    (loss / n, hits as f64 / n)
}

fn recovery(world: &PlantedWorld) -> (Outcome, Option<jeirt::JeirtCheckpoint>) {
    let start = Instant::now();
    let ds = world.dataset().unwrap();
    let feats = world.features();
    let split = make_split(&ds, [0.8, 0.1, 0.1], 7).unwrap();
    let cfg = TrainConfig {
        dim: 8,
        max_epochs: 400,
        seed: 3,
        ..Default::default()
    };
    let trained = train(&ds, &split, &feats, &cfg).unwrap();
    let report = evaluate(&trained.checkpoint, &ds, &split, SplitPart::Test, &feats).unwrap();
    let (bayes, planted_acc) = planted_scores(world, &ds, &split.test);
    let gap = report.mean_log_loss - bayes;
    let acc_gap = (report.overall_accuracy - planted_acc).abs();
    let (fast, time) = within_budget(start.elapsed(), Duration::from_secs(600));
    (
        outcome(
            gap <= 0.05 && acc_gap <= 0.02 && fast,
            format!(
                "test log-loss {:.4} vs planted {:.4} (gap {gap:.4}, limit 0.05); accuracy {:.4} vs planted {:.4} (gap {acc_gap:.4}, limit 0.02); best epoch {}; {time}",
                report.mean_log_loss, bayes, report.overall_accuracy, planted_acc, trained.checkpoint.meta.epoch
            ),
        ),
        Some(trained.checkpoint),
    )
}

fn checkpoint_bits(c: &jeirt::JeirtCheckpoint) -> Vec<u64> {
    let a = c.adapter();
    a.w1.iter()
        .chain(&a.b1)
        .chain(&a.w2)
        .chain(&a.b2)
        .chain(c.table().rows())
        .map(|v| v.to_bits())
        .collect()
}

fn onboarding_plateau(world: &PlantedWorld, ckpt: &jeirt::JeirtCheckpoint) -> Outcome {
    let start = Instant::now();
    let feats = world.features();
    let before = checkpoint_bits(ckpt);
    let table_len = ckpt.table().rows().len();
    let models = 10;
    let (mut acc_small, mut acc_full) = (0.0, 0.0);
    let mut frozen = true;
    for k in 0..models {
        let (_, records) = world.sample_new_model(&format!("new{k}"), 1000 + k as u64);
        let small = onboard_model(ckpt, &records, &feats, 0.1, k as u64).unwrap();
        let full = onboard_model(ckpt, &records, &feats, 1.0, k as u64).unwrap();
        acc_small += small.test.accuracy / models as f64;
        acc_full += full.test.accuracy / models as f64;
        for out in [&small, &full] {
            let after = checkpoint_bits(&out.checkpoint);
            frozen &= after[..before.len() - table_len] == before[..before.len() - table_len];
            frozen &= out.checkpoint.table().rows()[..table_len] == *ckpt.table().rows();
        }
    }
    frozen &= checkpoint_bits(ckpt) == before;
    let gap = (acc_full - acc_small).abs();
    let (fast, time) = within_budget(start.elapsed(), Duration::from_secs(60));
    outcome(
        gap <= 0.01 && frozen && fast,
        format!(
            "mean held-out accuracy over {models} new models: 10% {acc_small:.4}, 100% {acc_full:.4} (gap {gap:.4}, limit 0.01); frozen parameters bit-identical: {frozen}; {time}"
        ),
    )
}

/// 200 models with standard-normal-quantile abilities answering three item
/// blocks: logistic items increasing in ability, near-unanimous items each
/// missed by exactly one model, and items favouring weaker models.
fn specialist_dataset() -> Dataset {
    let m = 200;
    let mut rng = seeded(5);
    let theta: Vec<f64> = (0..m)
        .map(|i| {
            let p = (i as f64 + 0.5) / m as f64;
            // logit approximation to the normal quantile is enough here
            (p / (1.0 - p)).ln() / 1.7
        })
        .collect();
    let mut records = Vec::new();
    let mut push = |item: String, outcome: &mut dyn FnMut(usize) -> bool| {
        for (i, _) in theta.iter().enumerate() {
            records.push(ResponseRecord::new(&format!("m{i:03}"), &item, outcome(i), "specialist"));
        }
    };
    for j in 0..100 {
        let b = -2.0 + 4.0 * j as f64 / 99.0;
        let mut draws: Vec<bool> = theta.iter().map(|&t| rng.random::<f64>() < sigmoid(1.7 * (t - b))).collect();
        push(format!("g{j:03}"), &mut |i| draws[i]);
        draws.clear();
    }
    for j in 0..40 {
        let dissenter = rng.random_range(0..m);
        push(format!("u{j:03}"), &mut |i| i != dissenter);
    }
    for j in 0..20 {
        let b = -0.5 + j as f64 / 19.0;
        let draws: Vec<bool> = theta.iter().map(|&t| rng.random::<f64>() < sigmoid(-2.0 * (t - b))).collect();
        push(format!("s{j:03}"), &mut |i| draws[i]);
    }
    Dataset::from_records(records).unwrap()
}

fn irt_failure() -> Outcome {
    let ds = specialist_dataset();
    let params = fit_2pl(&ds, &Irt2plConfig::default()).unwrap();
    let negative = params.a.iter().filter(|&&a| a < 0.0).count();
    let sat = saturation_report(&params, &ds, 0.99, 0.01).unwrap();
    outcome(
        negative >= 1 && sat.predicted_unanimous_fraction > sat.actual_unanimous_fraction,
        format!(
            "{negative} items with a < 0; predicted-unanimous {:.3} vs actual-unanimous {:.3} over {} items",
            sat.predicted_unanimous_fraction, sat.actual_unanimous_fraction, sat.items
        ),
    )
}

fn roc_world() -> PlantedWorld {
    let cones = (0..4)
        .map(|k| Cone {
            center: None,
            half_angle: 0.5,
            weight: 1.0,
            label: Some(format!("bench{k}")),
        })
        .collect();
    generate_planted(&PlantedConfig {
        models: 50,
        questions: 2000,
        dim: 8,
        seed: 11,
        difficulty: DifficultyProfile::LogNormal {
            median: 1.0,
            sigma_log: 1.25,
        },
        direction: DirectionProfile::Cones { cones },
        ..Default::default()
    })
    .unwrap()
}

fn norm_roc() -> Outcome {
    let world = roc_world();
    let ds = world.dataset().unwrap();
    let roc = roc_from_norms(&world.geometry(), &ds).unwrap();

    let mut rng = seeded(8);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let mut idx: Vec<usize> = (0..ds.len()).collect();
        idx.shuffle(&mut rng);
        idx.truncate(500);
        let norms: HashMap<&str, f64> = world
            .question_ids
            .iter()
            .zip(&world.question_embeddings)
            .map(|(q, e)| (q.as_str(), norm(e)))
            .collect();
        let scores: Vec<f64> = idx.iter().map(|&i| norms[ds.records()[i].question_id.as_str()]).collect();
        let pos: Vec<bool> = idx.iter().map(|&i| !ds.records()[i].correct).collect();
        let sweep = roc_curve(&scores, &pos).unwrap().auc_sweep;
        let (mut sum, mut pairs) = (0.0, 0.0);
        for a in (0..500).filter(|&a| pos[a]) {
            for b in (0..500).filter(|&b| !pos[b]) {
                sum += if scores[a] > scores[b] {
                    1.0
                } else if scores[a] == scores[b] {
                    0.5
                } else {
                    0.0
                };
                pairs += 1.0;
            }
        }
        worst = worst.max((sweep - sum / pairs).abs());
    }
    outcome(
        roc.auc >= 0.70 && worst <= 1e-12,
        format!(
            "AUC {:.4} (limit 0.70) on {} records, mean planted probability {:.3}; sweep vs pairwise max difference {worst:.1e} over 20 samples of 500",
            roc.auc,
            ds.len(),
            world.mean_true_prob()
        ),
    )
}

/// Contingency metrics from conditional entropies computed directly.
fn brute_metrics(c: &[usize], s: &[usize]) -> [f64; 5] {
    let n = c.len() as f64;
    let mut joint: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut cm: BTreeMap<usize, f64> = BTreeMap::new();
    let mut sm: BTreeMap<usize, f64> = BTreeMap::new();
    for (&a, &b) in c.iter().zip(s) {
        *joint.entry((a, b)).or_default() += 1.0;
        *cm.entry(a).or_default() += 1.0;
        *sm.entry(b).or_default() += 1.0;
    }
    let h = |m: &BTreeMap<usize, f64>| -> f64 { m.values().map(|&k| -(k / n) * (k / n).ln()).sum() };
    let (hc, hs) = (h(&cm), h(&sm));
    let h_s_given_c: f64 = joint.iter().map(|(&(a, _), &k)| -(k / n) * (k / cm[&a]).ln()).sum();
    let h_c_given_s: f64 = joint.iter().map(|(&(_, b), &k)| -(k / n) * (k / sm[&b]).ln()).sum();
    let mi = hs - h_s_given_c;
    let purity = cm
        .keys()
        .map(|a| sm.keys().map(|b| joint.get(&(*a, *b)).copied().unwrap_or(0.0)).fold(0.0, f64::max))
        .sum::<f64>()
        / n;
    let inverse = sm
        .keys()
        .map(|b| cm.keys().map(|a| joint.get(&(*a, *b)).copied().unwrap_or(0.0)).fold(0.0, f64::max))
        .sum::<f64>()
        / n;
    let hom = if hs == 0.0 { 1.0 } else { 1.0 - h_s_given_c / hs };
    let comp = if hc == 0.0 { 1.0 } else { 1.0 - h_c_given_s / hc };
    let nmi = if hc == 0.0 && hs == 0.0 { 1.0 } else { mi / (0.5 * (hc + hs)) };
    [purity, inverse, nmi, hom, comp]
}

fn clustering_oracle() -> Outcome {
    let mut rng = seeded(13);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(20..=200);
        let kc = rng.random_range(1..=8);
        let ks = rng.random_range(1..=8);
        let c: Vec<usize> = (0..n).map(|_| rng.random_range(0..kc)).collect();
        let s: Vec<usize> = (0..n).map(|_| rng.random_range(0..ks)).collect();
        // compact cluster ids so every index below the max is used
        let remap = |v: &[usize]| -> Vec<usize> {
            let mut seen = HashMap::new();
            v.iter().map(|x| { let k = seen.len(); *seen.entry(*x).or_insert(k) }).collect()
        };
        let (c, s) = (remap(&c), remap(&s));
        let got = contingency_metrics(&c, &s, NmiNorm::Arithmetic);
        let want = brute_metrics(&c, &s);
        let got = [got.purity, got.inverse_purity, got.nmi, got.homogeneity, got.completeness];
        for (g, w) in got.iter().zip(want) {
            worst = worst.max((g - w).abs());
        }
    }
    let perfect = contingency_metrics(&[0, 0, 1, 2, 2], &[1, 1, 0, 2, 2], NmiNorm::Arithmetic);
    let perfect_ok = [perfect.purity, perfect.inverse_purity, perfect.nmi, perfect.homogeneity, perfect.completeness]
        .iter()
        .all(|v| (v - 1.0).abs() < 1e-12);
    let single = contingency_metrics(&[0; 6], &[0, 0, 0, 1, 1, 1], NmiNorm::Arithmetic);
    let single_ok = single.homogeneity == 0.0 && single.completeness == 1.0;
    outcome(
        worst <= 1e-9 && perfect_ok && single_ok,
        format!("max deviation from brute force {worst:.1e} over 100 instances; perfect case all ones: {perfect_ok}; single cluster homogeneity 0, completeness 1: {single_ok}"),
    )
}

fn random_rotation(d: usize, rng: &mut jeirt::rng::Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| std_normal(rng));
    g.qr().q()
}

fn geometry_oracles() -> Outcome {
    let mut rng = seeded(17);
    let mut worst_entropy: f64 = 0.0;
    let mut worst_rotation: f64 = 0.0;
    for _ in 0..20 {
        let d = rng.random_range(2..=8);
        let n = rng.random_range(d + 2..60);
        let scales: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..3.0)).collect();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| scales.iter().map(|s| s * std_normal(&mut rng)).collect())
            .collect();

        let x = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
        let mean = x.row_mean();
        let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
        let cov = centered.transpose() * &centered / (n as f64 - 1.0);
        let eig = cov.symmetric_eigen();
        let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
        let h: f64 = eig
            .eigenvalues
            .iter()
            .map(|v| v.max(0.0) / total)
            .filter(|&p| p > 0.0)
            .map(|p| -p * p.ln())
            .sum();
        let er = effective_rank(&rows).unwrap();
        worst_entropy = worst_entropy.max((er - h.exp()).abs());

        let q = random_rotation(d, &mut rng);
        let rotated: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| (0..d).map(|i| (0..d).map(|j| q[(i, j)] * r[j]).sum()).collect())
            .collect();
        let (a, b) = (pca_cumulative_variance(&rows).unwrap(), pca_cumulative_variance(&rotated).unwrap());
        for (u, v) in a.eigenvalues.iter().zip(&b.eigenvalues).chain(a.cumulative.iter().zip(&b.cumulative)) {
            worst_rotation = worst_rotation.max((u - v).abs());
        }
        worst_rotation = worst_rotation.max((er - effective_rank(&rotated).unwrap()).abs());
    }
    let line: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, -0.5 * i as f64, 2.0 * i as f64]).collect();
    let rank_one = effective_rank(&line).unwrap();
    let d = 6;
    let axes: Vec<Vec<f64>> = (0..2 * d)
        .map(|k| {
            let mut v = vec![0.0; d];
            v[k % d] = if k < d { 1.0 } else { -1.0 };
            v
        })
        .collect();
    let isotropic = effective_rank(&axes).unwrap();
    let constructed = effective_rank_of_spectrum(&[0.7; 6]).unwrap();
    let ok = worst_entropy <= 1e-9
        && worst_rotation <= 1e-9
        && (rank_one - 1.0).abs() <= 1e-9
        && (isotropic - d as f64).abs() <= 1e-9
        && (constructed - 6.0).abs() <= 1e-9;
    outcome(
        ok,
        format!(
            "effective rank vs direct entropy {worst_entropy:.1e}; rotation drift {worst_rotation:.1e}; rank-1 gives {rank_one:.12}; isotropic d={d} gives {isotropic:.12} (spectrum form {constructed:.12})"
        ),
    )
}

fn alignment_construction() -> Outcome {
    let e = |k: usize| {
        let mut v = vec![0.0; 8];
        v[k] = 1.0;
        v
    };
    let cone = |k: usize, label: &str| Cone {
        center: Some(e(k)),
        half_angle: 0.35,
        weight: 1.0,
        label: Some(label.into()),
    };
    let world = generate_planted(&PlantedConfig {
        models: 10,
        questions: 600,
        dim: 8,
        seed: 21,
        direction: DirectionProfile::Cones {
            cones: vec![cone(0, "left"), cone(1, "right")],
        },
        ..Default::default()
    })
    .unwrap();
    let geom = world.geometry();
    let cross = directional_alignment(&geom, "left").unwrap();
    let mut within = f64::INFINITY;
    for side in ["left", "right"] {
        let halves: Vec<QuestionGeometry> = geom
            .iter()
            .filter(|g| g.benchmark == side)
            .enumerate()
            .map(|(i, g)| QuestionGeometry {
                benchmark: if i % 2 == 0 { "even".into() } else { "odd".into() },
                ..g.clone()
            })
            .collect();
        within = within.min(directional_alignment(&halves, "even").unwrap());
    }
    outcome(
        cross < 0.3 && within > 0.9,
        format!("cross-cone alignment {cross:.4} (limit < 0.3); within-cone alignment {within:.4} (limit > 0.9)"),
    )
}

fn full_data() -> Outcome {
    let Some(dir) = std::env::var_os("JEIRT_FULL_DATA").map(PathBuf::from) else {
        return Outcome {
            pass: false,
            skipped: true,
            detail: "not run: set JEIRT_FULL_DATA to a directory with responses.jsonl and features.{manifest.json,f32}; expected overall test accuracy 75.05 +/- 1.5".into(),
        };
    };
    let ds = jeirt::data::load_responses(dir.join("responses.jsonl")).unwrap();
    let (m, b) = jeirt::prefixed_paths(dir.join("features"));
    let feats = jeirt::data::load_features(m, b).unwrap();
    let split = make_split(&ds, [0.8, 0.1, 0.1], 0).unwrap();
    let cfg = TrainConfig {
        dim: 256,
        ..Default::default()
    };
    let trained = train(&ds, &split, &feats, &cfg).unwrap();
    let report = evaluate(&trained.checkpoint, &ds, &split, SplitPart::Test, &feats).unwrap();
    let acc = 100.0 * report.overall_accuracy;
    outcome((acc - 75.05).abs() <= 1.5, format!("overall test accuracy {acc:.2} (expected 75.05 +/- 1.5)"))
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut run = |name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let out = f();
        println!(
            "{} {name}: {} [{:.1}s]",
            match (out.skipped, out.pass) {
                (true, _) => "SKIP",
                (false, true) => "PASS",
                (false, false) => "FAIL",
            },
            out.detail,
            start.elapsed().as_secs_f64()
        );
        results.push((name, out));
    };
    run("proposition suites", &mut propositions);
    run("gradient correctness", &mut gradients);
    let world = recovery_world();
    let mut ckpt = None;
    run("planted recovery", &mut || {
        let (out, c) = recovery(&world);
        ckpt = c;
        out
    });
    run("onboarding plateau", &mut || match &ckpt {
        Some(c) => onboarding_plateau(&world, c),
        None => outcome(false, "no trained checkpoint".into()),
    });
    run("2PL failure reproduction", &mut irt_failure);
    run("norm-difficulty ROC", &mut norm_roc);
    run("clustering metrics oracle", &mut clustering_oracle);
    run("geometry oracles", &mut geometry_oracles);
    run("direction alignment construction", &mut alignment_construction);
    run("full-data reproduction", &mut full_data);

    let failed: Vec<&str> = results.iter().filter(|(_, o)| !o.pass && !o.skipped).map(|(n, _)| *n).collect();
    let skipped = results.iter().filter(|(_, o)| o.skipped).count();
    println!(
        "acceptance: {} passed, {} failed, {skipped} skipped",
        results.len() - failed.len() - skipped,
        failed.len()
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
