//! Browser bindings. Each exported function takes plain numbers and returns a
//! JSON string; the same computations are available natively for tests.

use jeirt::engine::{predict_prob, NORM_GUARD};
use jeirt::geometry::{kernel_pca_cosine_2d, roc_from_norms};
use jeirt::synth::{generate_planted, stability_case, Cone, DifficultyProfile, DirectionProfile, PlantedConfig, StabilityCase};
use serde::Serialize;
use wasm_bindgen::prelude::*;

pub const MAX_STEPS: usize = 200;
pub const MAX_QUESTIONS: usize = 3000;

/// Correctness probability over question angle (rows of `prob` follow `norms`,
/// columns follow `angles`) for a model of norm `model_norm`.
#[derive(Debug, Serialize)]
pub struct Surface {
    pub angles: Vec<f64>,
    pub norms: Vec<f64>,
    pub prob: Vec<Vec<f64>>,
}

pub fn probability_surface(model_norm: f64, max_norm: f64, steps: usize) -> Result<Surface, String> {
    if !(model_norm >= 0.0 && model_norm.is_finite()) {
        return Err("model norm must be finite and non-negative".into());
    }
    if !(max_norm > 0.0 && max_norm.is_finite()) {
        return Err("largest question norm must be positive".into());
    }
    if !(2..=MAX_STEPS).contains(&steps) {
        return Err(format!("steps must lie in 2..={MAX_STEPS}"));
    }
    let angles: Vec<f64> = (0..steps).map(|i| std::f64::consts::PI * i as f64 / (steps - 1) as f64).collect();
    // norms start one step above zero; a zero question has no direction
    let norms: Vec<f64> = (1..=steps).map(|i| max_norm * i as f64 / steps as f64).collect();
    let e_m = [model_norm, 0.0];
    let prob = norms
        .iter()
        .map(|&r| {
            angles
                .iter()
                .map(|&a| predict_prob(&e_m, &[r * a.cos(), r * a.sin()], NORM_GUARD).map_err(|e| e.to_string()))
                .collect()
        })
        .collect::<Result<_, _>>()?;
    Ok(Surface { angles, norms, prob })
}

/// Two questions in the plane of a model lying on the first axis.
#[derive(Debug, Serialize)]
pub struct BoundView {
    pub p1: f64,
    pub p2: f64,
    #[serde(flatten)]
    pub case: StabilityCase,
}

pub fn bound_view(model_norm: f64, angle1: f64, norm1: f64, angle2: f64, norm2: f64) -> Result<BoundView, String> {
    for (v, name) in [(model_norm, "model norm"), (norm1, "first norm"), (norm2, "second norm")] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(format!("{name} must be finite and non-negative"));
        }
    }
    if !(norm1 > NORM_GUARD && norm2 > NORM_GUARD) {
        return Err("question norms must be positive".into());
    }
    let e_m = [model_norm, 0.0];
    let q1 = [norm1 * angle1.cos(), norm1 * angle1.sin()];
    let q2 = [norm2 * angle2.cos(), norm2 * angle2.sin()];
    let p = |q: &[f64]| predict_prob(&e_m, q, NORM_GUARD).map_err(|e| e.to_string());
    Ok(BoundView {
        p1: p(&q1)?,
        p2: p(&q2)?,
        case: stability_case(&e_m, &q1, &q2).map_err(|e| e.to_string())?,
    })
}

#[derive(Debug, Serialize)]
pub struct PlantedPoint {
    pub x: f64,
    pub y: f64,
    pub norm: f64,
    pub cone: String,
}

/// Kernel-PCA layout of planted question directions and the ROC AUC of
/// question norm against incorrect responses.
#[derive(Debug, Serialize)]
pub struct PlantedView {
    pub points: Vec<PlantedPoint>,
    pub auc: f64,
    pub mean_probability: f64,
}

pub fn planted_view(seed: u64, cones: usize, half_angle: f64, sigma_log: f64, questions: usize) -> Result<PlantedView, String> {
    if !(1..=8).contains(&cones) {
        return Err("cones must lie in 1..=8".into());
    }
    if !(cones..=MAX_QUESTIONS).contains(&questions) {
        return Err(format!("questions must lie in {cones}..={MAX_QUESTIONS}"));
    }
    let cfg = PlantedConfig {
        models: 30,
        questions,
        dim: 8,
        seed,
        difficulty: DifficultyProfile::LogNormal { median: 1.0, sigma_log },
        direction: DirectionProfile::Cones {
            cones: (0..cones)
                .map(|c| Cone {
                    center: None,
                    half_angle,
                    weight: 1.0,
                    label: Some(format!("cone{c}")),
                })
                .collect(),
        },
        ..PlantedConfig::default()
    };
    cfg.validate().map_err(|e| e.to_string())?;
    let world = generate_planted(&cfg).map_err(|e| e.to_string())?;
    let geom = world.geometry();
    let coords = kernel_pca_cosine_2d(&geom, MAX_QUESTIONS).map_err(|e| e.to_string())?;
    let ds = world.dataset().map_err(|e| e.to_string())?;
    let roc = roc_from_norms(&geom, &ds).map_err(|e| e.to_string())?;
    Ok(PlantedView {
        points: geom
            .iter()
            .zip(&coords)
            .map(|(q, c)| PlantedPoint { x: c[0], y: c[1], norm: q.norm, cone: q.benchmark.clone() })
            .collect(),
        auc: roc.auc,
        mean_probability: world.mean_true_prob(),
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.map(|v| serde_json::to_string(&v).expect("views serialize")).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = probabilitySurface)]
pub fn probability_surface_js(model_norm: f64, max_norm: f64, steps: usize) -> Result<String, JsValue> {
    to_js(probability_surface(model_norm, max_norm, steps))
}

#[wasm_bindgen(js_name = boundView)]
pub fn bound_view_js(model_norm: f64, angle1: f64, norm1: f64, angle2: f64, norm2: f64) -> Result<String, JsValue> {
    to_js(bound_view(model_norm, angle1, norm1, angle2, norm2))
}

#[wasm_bindgen(js_name = plantedView)]
pub fn planted_view_js(seed: u32, cones: usize, half_angle: f64, sigma_log: f64, questions: usize) -> Result<String, JsValue> {
    to_js(planted_view(u64::from(seed), cones, half_angle, sigma_log, questions))
}
