//! Run configuration: built-in defaults, then the `--config` document, then
//! explicit flags. The merged document must deserialize into the command's
//! strict config type, so unknown keys anywhere are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::CliError;

pub fn resolve<F: Serialize, R: Serialize + DeserializeOwned + Default>(
    config: Option<&Path>,
    flags: &F,
) -> Result<R, CliError> {
    let mut doc = serde_json::to_value(R::default()).expect("defaults serialize");
    if let Some(path) = config {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let file: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("config {} is not valid JSON: {e}", path.display())))?;
        if !file.is_object() {
            return Err(CliError::Config(format!("config {} must be a JSON object", path.display())));
        }
        merge(&mut doc, file);
    }
    merge(&mut doc, serde_json::to_value(flags).expect("flags serialize"));
    serde_json::from_value(doc).map_err(|e| CliError::Config(e.to_string()))
}

/// Objects merge key by key; any other value replaces the target.
fn merge(target: &mut Value, overlay: Value) {
    match (target, overlay) {
        (Value::Object(t), Value::Object(o)) => {
            for (k, v) in o {
                match t.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        t.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

pub fn required<T: Clone>(value: &Option<T>, key: &str) -> Result<T, CliError> {
    value
        .clone()
        .ok_or_else(|| CliError::Config(format!("missing required setting `{key}`")))
}

/// Output directory that refuses to overwrite any declared input.
pub struct Outputs {
    dir: Option<PathBuf>,
    inputs: Vec<PathBuf>,
}

impl Outputs {
    pub fn new(dir: Option<&str>, inputs: &[&Path]) -> Result<Self, CliError> {
        let dir = dir.map(PathBuf::from);
        if let Some(d) = &dir {
            fs::create_dir_all(d).map_err(|e| CliError::Data(jeirt::Error::io(d, e)))?;
        }
        Ok(Self {
            dir,
            inputs: inputs.iter().filter_map(|p| fs::canonicalize(p).ok()).collect(),
        })
    }

    pub fn require(dir: Option<&str>, inputs: &[&Path]) -> Result<Self, CliError> {
        if dir.is_none() {
            return Err(CliError::Config("missing required setting `out`".into()));
        }
        Self::new(dir, inputs)
    }

    pub fn path(&self, name: &str) -> Result<Option<PathBuf>, CliError> {
        let Some(dir) = &self.dir else { return Ok(None) };
        let path = dir.join(name);
        if let Ok(canon) = fs::canonicalize(&path) {
            if self.inputs.contains(&canon) {
                return Err(CliError::Config(format!("output {} would overwrite an input", path.display())));
            }
        }
        Ok(Some(path))
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        if let Some(path) = self.path(name)? {
            let mut text = serde_json::to_string_pretty(value).expect("report serializes");
            text.push('\n');
            fs::write(&path, text).map_err(|e| CliError::Data(jeirt::Error::io(&path, e)))?;
        }
        Ok(())
    }

    /// Manifest and blob paths for a prefixed artifact inside the directory.
    pub fn prefixed(&self, name: &str) -> Result<(PathBuf, PathBuf), CliError> {
        let (m, b) = (
            self.path(&format!("{name}.manifest.json"))?,
            self.path(&format!("{name}.f32"))?,
        );
        m.zip(b).ok_or_else(|| CliError::Config("missing required setting `out`".into()))
    }
}
