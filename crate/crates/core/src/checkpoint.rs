//! Checkpoint persistence: a JSON manifest naming parameter segments and
//! their shapes, plus one little-endian f32 blob holding the segments back
//! to back in manifest order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::features::{bytes_to_f32s, f32s_to_bytes, read_json, write_json};
use crate::engine::{quantize, AdapterParams, ModelTable};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "JEC1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    /// Epoch at which the stored parameters were captured (0 = initialization).
    pub epoch: usize,
    pub seed: u64,
    pub val_loss: f64,
}

/// The learned geometry. Parameter values are always f32-representable so
/// that persistence is lossless.
#[derive(Debug, Clone, PartialEq)]
pub struct JeirtCheckpoint {
    adapter: AdapterParams,
    table: ModelTable,
    pub meta: TrainMeta,
}

impl JeirtCheckpoint {
    pub fn new(mut adapter: AdapterParams, table: ModelTable, meta: TrainMeta) -> Result<Self> {
        adapter.validate()?;
        if table.dim() != adapter.dim {
            return Err(Error::Shape(format!(
                "model table dim {} vs adapter dim {}",
                table.dim(),
                adapter.dim
            )));
        }
        for seg in adapter.segments_mut() {
            quantize(seg);
        }
        let mut table = table;
        quantize(table.rows_mut());
        Ok(Self { adapter, table, meta })
    }

    pub fn adapter(&self) -> &AdapterParams {
        &self.adapter
    }

    pub fn table(&self) -> &ModelTable {
        &self.table
    }

    pub fn dim(&self) -> usize {
        self.adapter.dim
    }

    pub fn encoder_dim(&self) -> usize {
        self.adapter.encoder_dim
    }

    /// Copy with one more model row appended; everything else untouched.
    pub fn with_model(&self, id: &str, embedding: &[f64]) -> Result<Self> {
        let mut row = embedding.to_vec();
        quantize(&mut row);
        let mut table = self.table.clone();
        table.push(id, &row)?;
        Ok(Self {
            adapter: self.adapter.clone(),
            table,
            meta: self.meta.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub shape: [usize; 2],
    pub offset: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub dim: usize,
    pub encoder_dim: usize,
    pub hidden: usize,
    pub model_ids: Vec<String>,
    pub segments: Vec<Segment>,
    pub train_meta: TrainMeta,
}

/// `<prefix>.manifest.json` and `<prefix>.f32`.
pub fn prefixed_paths(prefix: impl AsRef<Path>) -> (PathBuf, PathBuf) {
    let prefix = prefix.as_ref().as_os_str().to_owned();
    let mut manifest = prefix.clone();
    manifest.push(".manifest.json");
    let mut blob = prefix;
    blob.push(".f32");
    (manifest.into(), blob.into())
}

fn layout(ckpt: &JeirtCheckpoint) -> (Vec<Segment>, Vec<f64>) {
    let a = &ckpt.adapter;
    let (p, d, h, m) = (a.encoder_dim, a.dim, a.hidden(), ckpt.table.len());
    let parts: [(&str, [usize; 2], &[f64]); 5] = [
        ("W1", [h, p], &a.w1),
        ("b1", [h, 1], &a.b1),
        ("W2", [d, h], &a.w2),
        ("b2", [d, 1], &a.b2),
        ("model_table", [m, d], ckpt.table.rows()),
    ];
    let mut segments = Vec::new();
    let mut values = Vec::new();
    for (name, shape, data) in parts {
        segments.push(Segment {
            name: name.into(),
            shape,
            offset: values.len(),
            count: data.len(),
        });
        values.extend_from_slice(data);
    }
    (segments, values)
}

pub fn save_checkpoint(
    ckpt: &JeirtCheckpoint,
    manifest_path: impl AsRef<Path>,
    blob_path: impl AsRef<Path>,
) -> Result<()> {
    let (segments, values) = layout(ckpt);
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        dim: ckpt.dim(),
        encoder_dim: ckpt.encoder_dim(),
        hidden: ckpt.adapter.hidden(),
        model_ids: ckpt.table.ids().to_vec(),
        segments,
        train_meta: ckpt.meta.clone(),
    };
    write_json(manifest_path.as_ref(), &manifest)?;
    let floats: Vec<f32> = values.iter().map(|&v| v as f32).collect();
    let blob_path = blob_path.as_ref();
    fs::write(blob_path, f32s_to_bytes(&floats)).map_err(|e| Error::io(blob_path, e))
}

pub fn load_checkpoint(manifest_path: impl AsRef<Path>, blob_path: impl AsRef<Path>) -> Result<JeirtCheckpoint> {
    let manifest_path = manifest_path.as_ref();
    let blob_path = blob_path.as_ref();
    let manifest: CheckpointManifest = read_json(manifest_path)?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::Format(format!(
            "{}: unsupported checkpoint format {:?}",
            manifest_path.display(),
            manifest.format
        )));
    }
    let (p, d, m) = (manifest.encoder_dim, manifest.dim, manifest.model_ids.len());
    let h = 2 * p;
    if manifest.hidden != h {
        return Err(Error::Format(format!("hidden size {} must be twice encoder dim {p}", manifest.hidden)));
    }
    let expected: [(&str, [usize; 2]); 5] = [
        ("W1", [h, p]),
        ("b1", [h, 1]),
        ("W2", [d, h]),
        ("b2", [d, 1]),
        ("model_table", [m, d]),
    ];
    if manifest.segments.len() != expected.len() {
        return Err(Error::Format(format!("expected 5 segments, found {}", manifest.segments.len())));
    }
    let blob = fs::read(blob_path).map_err(|e| Error::io(blob_path, e))?;
    let total: usize = expected.iter().map(|(_, s)| s[0] * s[1]).sum();
    if blob.len() != total * 4 {
        return Err(Error::Format(format!(
            "{}: expected {} bytes, found {}",
            blob_path.display(),
            total * 4,
            blob.len()
        )));
    }
    let values: Vec<f64> = bytes_to_f32s(&blob).into_iter().map(f64::from).collect();
    let mut parts = Vec::with_capacity(5);
    let mut offset = 0;
    for (seg, (name, shape)) in manifest.segments.iter().zip(expected) {
        let count = shape[0] * shape[1];
        if seg.name != name || seg.shape != shape || seg.count != count || seg.offset != offset {
            return Err(Error::Format(format!(
                "segment {:?} {:?} (offset {}, count {}) does not match expected {name} {shape:?}",
                seg.name, seg.shape, seg.offset, seg.count
            )));
        }
        parts.push(values[offset..offset + count].to_vec());
        offset += count;
    }
    let mut parts = parts.into_iter();
    let mut next = || parts.next().expect("five segments");
    let adapter = AdapterParams {
        encoder_dim: p,
        dim: d,
        w1: next(),
        b1: next(),
        w2: next(),
        b2: next(),
    };
    let table = ModelTable::new(d, manifest.model_ids, next())?;
    JeirtCheckpoint::new(adapter, table, manifest.train_meta)
}
