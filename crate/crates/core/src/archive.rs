//! Weight archives: a directory holding one raw little-endian `f32` file per
//! tensor, a `manifest.json` describing each tensor and a `meta.json` with
//! the network's architecture.
//!
//! ```text
//! weights/
//!   manifest.json   {"format_version": 1, "tensors": {name: {dtype, file, shape}}}
//!   meta.json       {"format_version": 1, "kind", "profile", "embedding_dim", "config"}
//!   <name>.f32      prod(shape) little-endian f32 values, row-major
//! ```
//!
//! Saving is canonical: the same parameters always produce the same bytes,
//! so `save -> load -> save` is byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub dtype: String,
    pub file: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub tensors: BTreeMap<String, TensorEntry>,
}

/// Architecture description stored next to the tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveMeta {
    pub format_version: u32,
    /// Network family, e.g. `transformer`, `predictor`, `loss_network`.
    pub kind: String,
    /// `desk` for weights trained here, `import` for converted weights.
    pub profile: String,
    pub embedding_dim: Option<usize>,
    pub config: serde_json::Value,
}

fn file_name_for(name: &str) -> String {
    let safe: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '_' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{safe}.f32")
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save(dir: &Path, store: &ParamStore<f32>, meta: &ArchiveMeta) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tensors = BTreeMap::new();
    for (name, t) in store.iter() {
        let file = file_name_for(name);
        let mut bytes = Vec::with_capacity(4 * t.numel());
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let path = dir.join(&file);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        tensors.insert(
            name.clone(),
            TensorEntry {
                dtype: "f32".into(),
                file,
                shape: t.shape().to_vec(),
            },
        );
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        tensors,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    write_json(&dir.join(META_FILE), meta)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

pub fn load_meta(dir: &Path) -> Result<ArchiveMeta> {
    let meta: ArchiveMeta = read_json(&dir.join(META_FILE))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::format(
            dir.join(META_FILE),
            format!("unsupported format_version {}", meta.format_version),
        ));
    }
    Ok(meta)
}

pub fn load(dir: &Path) -> Result<(ParamStore<f32>, ArchiveMeta)> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest: Manifest = read_json(&manifest_path)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::format(
            &manifest_path,
            format!("unsupported format_version {}", manifest.format_version),
        ));
    }
    let meta = load_meta(dir)?;
    let mut store = ParamStore::new();
    for (name, entry) in &manifest.tensors {
        let bad = |message: String| Error::Tensor {
            path: manifest_path.clone(),
            name: name.clone(),
            message,
        };
        if entry.dtype != "f32" {
            return Err(bad(format!("unsupported dtype `{}`", entry.dtype)));
        }
        if entry.file.is_empty() || entry.file.contains(['/', '\\']) || entry.file.starts_with('.')
        {
            return Err(bad(format!(
                "file `{}` is not a plain file name",
                entry.file
            )));
        }
        let count = entry
            .shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| bad(format!("shape {:?} overflows", entry.shape)))?;
        let path = dir.join(&entry.file);
        let bytes =
            fs::read(&path).map_err(|e| bad(format!("cannot read `{}`: {e}", entry.file)))?;
        if Some(bytes.len()) != count.checked_mul(4) {
            return Err(bad(format!(
                "shape {:?} needs {} bytes but `{}` has {}",
                entry.shape,
                count.saturating_mul(4),
                entry.file,
                bytes.len()
            )));
        }
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(bad("contains non-finite values".into()));
        }
        let t = Tensor::from_vec(&entry.shape, data).map_err(|e| bad(e.to_string()))?;
        store.insert(name.clone(), t);
    }
    Ok((store, meta))
}

/// Maps a parameter-validation failure onto the archive it came from.
pub(crate) fn tensor_error(dir: &Path, err: Error) -> Error {
    match err {
        Error::InvalidInput(msg) => {
            let name = msg.split('`').nth(1).unwrap_or("?").to_string();
            Error::Tensor {
                path: dir.join(MANIFEST_FILE),
                name,
                message: msg,
            }
        }
        other => other,
    }
}
