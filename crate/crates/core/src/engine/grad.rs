use std::collections::HashMap;

use super::{AdapterParams, ModelTable};
use crate::data::{FeatureMatrix, ResponseRecord};
use crate::error::{Error, Result};
use crate::math::{bce_from_logit, dot, norm, sigmoid};

/// A record resolved to a model-table row and a feature row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexedRecord {
    pub model: usize,
    pub feature: usize,
    pub label: bool,
}

/// Gradients with the same layout as the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub adapter: AdapterParams,
    /// Same row-major layout as the model table.
    pub table: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub grads: Gradients,
}

/// Mean binary cross-entropy of a batch and its gradients with respect to
/// every adapter weight and every model-table row.
pub fn batch_loss_and_grads(
    adapter: &AdapterParams,
    table: &ModelTable,
    feats: &FeatureMatrix,
    records: &[ResponseRecord],
    guard: f64,
) -> Result<LossGrad> {
    if records.is_empty() {
        return Err(Error::Config("batch must not be empty".into()));
    }
    if feats.dim() != adapter.encoder_dim {
        return Err(Error::Shape(format!(
            "features have dim {} but adapter expects {}",
            feats.dim(),
            adapter.encoder_dim
        )));
    }
    if table.dim() != adapter.dim {
        return Err(Error::Shape(format!(
            "model table dim {} vs adapter output dim {}",
            table.dim(),
            adapter.dim
        )));
    }
    let mut rows: Vec<f64> = Vec::new();
    let mut row_of: HashMap<&str, usize> = HashMap::new();
    let mut batch = Vec::with_capacity(records.len());
    for rec in records {
        let model = table
            .index_of(&rec.model_id)
            .ok_or_else(|| Error::Lookup(format!("model {}", rec.model_id)))?;
        let feature = match row_of.get(rec.question_id.as_str()) {
            Some(&f) => f,
            None => {
                let src = feats
                    .row_of(&rec.question_id)
                    .ok_or_else(|| Error::Lookup(format!("question {}", rec.question_id)))?;
                rows.extend(src.iter().map(|&v| f64::from(v)));
                let f = row_of.len();
                row_of.insert(&rec.question_id, f);
                f
            }
        };
        batch.push(IndexedRecord {
            model,
            feature,
            label: rec.correct,
        });
    }
    let (loss, grads) = loss_and_grads_indexed(adapter, table.rows(), &rows, &batch, guard)?;
    Ok(LossGrad { loss, grads })
}

struct Slot {
    feature: usize,
    pre: Vec<f64>,
    hidden: Vec<f64>,
    e_q: Vec<f64>,
    d_eq: Vec<f64>,
}

/// Core forward/backward pass over pre-resolved records. `features` is a
/// row-major f64 matrix with `adapter.encoder_dim` columns. Reductions run
/// in batch order, so results are bit-reproducible.
pub(crate) fn loss_and_grads_indexed(
    adapter: &AdapterParams,
    table_rows: &[f64],
    features: &[f64],
    batch: &[IndexedRecord],
    guard: f64,
) -> Result<(f64, Gradients)> {
    let p = adapter.encoder_dim;
    let d = adapter.dim;
    let h = adapter.hidden();
    let scale = 1.0 / batch.len() as f64;

    let mut slots: Vec<Slot> = Vec::new();
    let mut slot_of: HashMap<usize, usize> = HashMap::new();
    let mut record_slot = Vec::with_capacity(batch.len());
    for rec in batch {
        let s = *slot_of.entry(rec.feature).or_insert_with(|| {
            let x = &features[rec.feature * p..(rec.feature + 1) * p];
            let pre = adapter.pre_activation(x);
            let hidden: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
            let e_q = adapter.output(&hidden);
            slots.push(Slot {
                feature: rec.feature,
                pre,
                hidden,
                e_q,
                d_eq: vec![0.0; d],
            });
            slots.len() - 1
        });
        record_slot.push(s);
    }

    let mut grads = Gradients {
        adapter: AdapterParams::zeros(p, d),
        table: vec![0.0; table_rows.len()],
    };
    let mut loss = 0.0;
    for (rec, &s) in batch.iter().zip(&record_slot) {
        let slot = &mut slots[s];
        let r = norm(&slot.e_q);
        if r.is_nan() || r <= guard {
            return Err(Error::DegenerateQuestion { norm: r, guard });
        }
        let e_m = &table_rows[rec.model * d..(rec.model + 1) * d];
        let theta = dot(&slot.e_q, e_m) / r;
        let z = theta - r;
        loss += bce_from_logit(z, rec.label);
        let g = (sigmoid(z) - f64::from(u8::from(rec.label))) * scale;
        let t_row = &mut grads.table[rec.model * d..(rec.model + 1) * d];
        for k in 0..d {
            let u = slot.e_q[k] / r;
            t_row[k] += g * u;
            // ∂z/∂E_Q = (E_M − Θ u) / ‖E_Q‖ − u
            slot.d_eq[k] += g * ((e_m[k] - theta * u) / r - u);
        }
    }
    loss *= scale;

    let ga = &mut grads.adapter;
    for slot in &slots {
        let x = &features[slot.feature * p..(slot.feature + 1) * p];
        let mut d_hidden = vec![0.0; h];
        for i in 0..d {
            let de = slot.d_eq[i];
            ga.b2[i] += de;
            let w_row = &adapter.w2[i * h..(i + 1) * h];
            let g_row = &mut ga.w2[i * h..(i + 1) * h];
            for j in 0..h {
                g_row[j] += de * slot.hidden[j];
                d_hidden[j] += de * w_row[j];
            }
        }
        for j in 0..h {
            if slot.pre[j] <= 0.0 {
                continue;
            }
            let dp = d_hidden[j];
            ga.b1[j] += dp;
            let g_row = &mut ga.w1[j * p..(j + 1) * p];
            for k in 0..p {
                g_row[k] += dp * x[k];
            }
        }
    }
    Ok((loss, grads))
}

/// Mean loss only, reusing precomputed question embeddings (`embeddings[f]`
/// for feature row `f`).
pub(crate) fn mean_loss(
    embeddings: &[Vec<f64>],
    table_rows: &[f64],
    dim: usize,
    batch: &[IndexedRecord],
    guard: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for rec in batch {
        let e_q = &embeddings[rec.feature];
        let e_m = &table_rows[rec.model * dim..(rec.model + 1) * dim];
        let z = super::logit(e_m, e_q, guard)?;
        total += bce_from_logit(z, rec.label);
    }
    Ok(total / batch.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::NORM_GUARD;

    fn single_question_setup() -> (AdapterParams, ModelTable, FeatureMatrix) {
        // W2 = 0, b2 = (3, 4) makes E_Q = (3, 4) for every question.
        let mut a = AdapterParams::zeros(2, 2);
        a.b2 = vec![3.0, 4.0];
        let t = ModelTable::new(2, vec!["m".into()], vec![3.0, 4.0]).unwrap();
        let f = FeatureMatrix::new(vec!["q".into(), "r".into()], 2, vec![0.5, 1.0, -1.0, 2.0]).unwrap();
        (a, t, f)
    }

    #[test]
    fn half_probability_gives_ln2() {
        let (a, t, f) = single_question_setup();
        let rec = ResponseRecord::new("m", "q", true, "b");
        let out = batch_loss_and_grads(&a, &t, &f, &[rec], NORM_GUARD).unwrap();
        assert!((out.loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn duplicating_batch_keeps_mean() {
        use rand::Rng;
        let mut rng = crate::rng::seeded(3);
        let mut a = AdapterParams::glorot(3, 2, &mut rng);
        a.b2 = vec![0.3, -0.2];
        let t = ModelTable::gaussian(2, vec!["m0".into(), "m1".into()], 1.0, &mut rng);
        let vals: Vec<f32> = (0..9).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let f = FeatureMatrix::new(vec!["a".into(), "b".into(), "c".into()], 3, vals).unwrap();
        let recs = vec![
            ResponseRecord::new("m0", "a", true, "x"),
            ResponseRecord::new("m1", "b", false, "x"),
            ResponseRecord::new("m1", "c", true, "x"),
        ];
        let doubled: Vec<_> = recs.iter().chain(&recs).cloned().collect();
        let once = batch_loss_and_grads(&a, &t, &f, &recs, NORM_GUARD).unwrap();
        let twice = batch_loss_and_grads(&a, &t, &f, &doubled, NORM_GUARD).unwrap();
        assert!((once.loss - twice.loss).abs() < 1e-14);
        let flat = |g: &Gradients| -> Vec<f64> {
            g.adapter.segments().iter().flat_map(|s| s.iter().copied()).chain(g.table.iter().copied()).collect()
        };
        for (x, y) in flat(&once.grads).iter().zip(flat(&twice.grads)) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn unknown_ids_are_lookup_errors() {
        let (a, t, f) = single_question_setup();
        let bad_model = ResponseRecord::new("zz", "q", true, "b");
        let bad_question = ResponseRecord::new("m", "zz", true, "b");
        assert!(matches!(batch_loss_and_grads(&a, &t, &f, &[bad_model], NORM_GUARD), Err(Error::Lookup(_))));
        assert!(matches!(batch_loss_and_grads(&a, &t, &f, &[bad_question], NORM_GUARD), Err(Error::Lookup(_))));
        assert!(batch_loss_and_grads(&a, &t, &f, &[], NORM_GUARD).is_err());
    }
}
