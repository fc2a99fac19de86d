//! Run manifests: what was run, with which resolved config and seed.

use std::path::{Path, PathBuf};

use serde::Serialize;
use styleaug::{Error, Result};

use crate::config::RunConfig;

#[derive(Debug, Clone, Serialize)]
pub struct Versions {
    pub cli: &'static str,
    pub library: &'static str,
    pub weight_format: u32,
}

impl Default for Versions {
    fn default() -> Self {
        Versions {
            cli: env!("CARGO_PKG_VERSION"),
            library: styleaug::VERSION,
            weight_format: styleaug::archive::FORMAT_VERSION,
        }
    }
}

/// Deliberately free of timestamps and host details so repeated runs
/// produce identical manifests.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    /// Subcommand inputs and outputs after flag resolution.
    pub arguments: serde_json::Value,
    pub config: RunConfig,
    pub versions: Versions,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig, arguments: serde_json::Value) -> Self {
        Manifest {
            command: command.to_string(),
            seed: config.seed,
            arguments,
            config: config.clone(),
            versions: Versions::default(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

/// Manifest location for a run writing into directory `dir`.
pub fn for_dir(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}

/// Manifest location for a run writing the single file `out`.
pub fn for_file(out: &Path) -> PathBuf {
    let mut name = out
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}
