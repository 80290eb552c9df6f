use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FEATURE_FORMAT: &str = "JEF1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureManifest {
    pub format: String,
    pub dim: usize,
    pub count: usize,
    pub question_ids: Vec<String>,
}

/// Frozen encoder outputs, one f32 row per question.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    question_ids: Vec<String>,
    dim: usize,
    values: Vec<f32>,
    index: HashMap<String, usize>,
}

impl FeatureMatrix {
    pub fn new(question_ids: Vec<String>, dim: usize, values: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Format("feature dim must be positive".into()));
        }
        if values.len() != question_ids.len() * dim {
            return Err(Error::Format(format!(
                "expected {} values for {} rows of dim {dim}, got {}",
                question_ids.len() * dim,
                question_ids.len(),
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "feature matrix".into(),
                row: pos / dim,
            });
        }
        let mut index = HashMap::with_capacity(question_ids.len());
        for (i, id) in question_ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::Conflict(format!("duplicate feature row for question {id}")));
            }
        }
        Ok(Self {
            question_ids,
            dim,
            values,
            index,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.question_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.question_ids.is_empty()
    }

    pub fn question_ids(&self) -> &[String] {
        &self.question_ids
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_of(&self, question_id: &str) -> Option<&[f32]> {
        self.index.get(question_id).map(|&i| self.row(i))
    }

    pub fn position(&self, question_id: &str) -> Option<usize> {
        self.index.get(question_id).copied()
    }

    pub fn manifest(&self) -> FeatureManifest {
        FeatureManifest {
            format: FEATURE_FORMAT.into(),
            dim: self.dim,
            count: self.len(),
            question_ids: self.question_ids.clone(),
        }
    }

    /// Little-endian float32 blob, row-major.
    pub fn to_bytes(&self) -> Vec<u8> {
        f32s_to_bytes(&self.values)
    }
}

pub(crate) fn f32s_to_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub(crate) fn bytes_to_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_owned(),
        source,
    })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_features(manifest_path: impl AsRef<Path>, blob_path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let manifest_path = manifest_path.as_ref();
    let blob_path = blob_path.as_ref();
    let manifest: FeatureManifest = read_json(manifest_path)?;
    if manifest.format != FEATURE_FORMAT {
        return Err(Error::Format(format!(
            "{}: unsupported feature format {:?}",
            manifest_path.display(),
            manifest.format
        )));
    }
    if manifest.count != manifest.question_ids.len() {
        return Err(Error::Format(format!(
            "manifest count {} but {} question ids",
            manifest.count,
            manifest.question_ids.len()
        )));
    }
    let blob = fs::read(blob_path).map_err(|e| Error::io(blob_path, e))?;
    let expected = manifest.count * manifest.dim * 4;
    if blob.len() != expected {
        return Err(Error::Format(format!(
            "{}: expected {expected} bytes, found {}",
            blob_path.display(),
            blob.len()
        )));
    }
    FeatureMatrix::new(manifest.question_ids, manifest.dim, bytes_to_f32s(&blob))
}

pub fn save_features(
    feats: &FeatureMatrix,
    manifest_path: impl AsRef<Path>,
    blob_path: impl AsRef<Path>,
) -> Result<()> {
    write_json(manifest_path.as_ref(), &feats.manifest())?;
    let blob_path = blob_path.as_ref();
    fs::write(blob_path, feats.to_bytes()).map_err(|e| Error::io(blob_path, e))
}
