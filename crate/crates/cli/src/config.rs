//! The run configuration file.
//!
//! ```toml
//! seed = 0
//! dataset_dir = "data"         # omit to generate the desk domains
//! dataset_seed = 1
//!
//! [dataset]                    # desk domain parameters
//! image_size = 32
//!
//! [style]                      # see `styleaug::augment::config`
//! probability = 0.5
//! transformer = "style/transformer"
//!
//! [traditional.rotation]
//! enabled = true
//!
//! [experiment]
//! train_domains = ["photo", "night"]
//! eval_domains = ["texture"]
//! iterations = 300
//!
//! [grid]
//! probabilities = [0.0, 0.5]
//! alphas = [0.0, 0.5, 1.0]
//! repetitions = 4
//!
//! [desk_style]                 # train-transformer
//! textures_per_family = 40
//! [desk_style.train]
//! steps = 2000
//!
//! [ablation]
//! seeds = [0, 1, 2, 3]
//!
//! [throughput]
//! batch_sizes = [1, 8, 32]
//! ```
//!
//! Precedence is flags, then this file, then defaults. Relative paths are
//! resolved against the file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use styleaug::augment::{
    line_of_key, parse_toml, validate_located, AugmentationConfig, TraditionalAugmentConfig,
};
use styleaug::harness::{
    DeskDomainParams, DeskStyleParams, ExperimentConfig, GridSearchSpec, HeldOutConfiguration,
};
use styleaug::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub seeds: Vec<u64>,
    /// Defaults to the experiment's train/eval split.
    pub configurations: Vec<HeldOutConfiguration>,
}

impl Default for AblationSection {
    fn default() -> Self {
        AblationSection {
            seeds: vec![0, 1, 2, 3],
            configurations: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThroughputSection {
    pub batch_sizes: Vec<usize>,
    pub images: usize,
}

impl Default for ThroughputSection {
    fn default() -> Self {
        ThroughputSection {
            batch_sizes: vec![1, 8, 32],
            images: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset_dir: Option<PathBuf>,
    pub dataset_seed: u64,
    pub dataset: DeskDomainParams,
    pub style: AugmentationConfig,
    pub traditional: TraditionalAugmentConfig,
    pub experiment: ExperimentConfig,
    pub grid: GridSearchSpec,
    pub desk_style: DeskStyleParams,
    pub ablation: AblationSection,
    pub throughput: ThroughputSection,
}

fn located(text: &str, key: &str, msg: String) -> Error {
    Error::config(line_of_key(text, key), format!("{key}: {msg}"))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = parse_toml(text)?;
        validate_located(text, &cfg.style, &cfg.traditional)?;
        cfg.check().map_err(|(key, msg)| located(text, key, msg))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::config(None, format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.dataset_dir,
            &mut cfg.style.transformer,
            &mut cfg.style.predictor,
            &mut cfg.style.distribution,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Checks that do not depend on file positions; the key names the
    /// offending entry.
    fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        let e = &self.experiment;
        if e.batch_size == 0 {
            return Err(("experiment.batch_size", "must be >= 1".into()));
        }
        if e.train_domains.is_empty() {
            return Err(("experiment.train_domains", "must not be empty".into()));
        }
        if e.eval_domains.is_empty() {
            return Err(("experiment.eval_domains", "must not be empty".into()));
        }
        if e.eval_every == Some(0) {
            return Err(("experiment.eval_every", "must be >= 1".into()));
        }
        if !(e.adam.lr > 0.0) {
            return Err((
                "experiment.adam.lr",
                format!("learning rate must be positive, got {}", e.adam.lr),
            ));
        }
        if let Err(err) = self.grid.validate() {
            let key = if self.grid.repetitions == 0 {
                "grid.repetitions"
            } else if self.grid.alphas.is_empty()
                || self.grid.alphas.iter().any(|a| !(0.0..=1.0).contains(a))
            {
                "grid.alphas"
            } else {
                "grid.probabilities"
            };
            return Err((key, err.to_string()));
        }
        if self.dataset.image_size < 16 {
            return Err((
                "dataset.image_size",
                format!("must be >= 16, got {}", self.dataset.image_size),
            ));
        }
        if self.desk_style.train.steps == 0 {
            return Err(("desk_style.train.steps", "must be >= 1".into()));
        }
        if self.ablation.seeds.is_empty() {
            return Err(("ablation.seeds", "must not be empty".into()));
        }
        if self.throughput.batch_sizes.is_empty() || self.throughput.batch_sizes.contains(&0) {
            return Err((
                "throughput.batch_sizes",
                "must be non-empty and positive".into(),
            ));
        }
        if self.throughput.images < styleaug::harness::throughput::MIN_IMAGES {
            return Err((
                "throughput.images",
                format!("must be >= {}", styleaug::harness::throughput::MIN_IMAGES),
            ));
        }
        Ok(())
    }

    /// Re-runs the checks after flags have been applied.
    pub fn validate(&self) -> Result<()> {
        self.style.validate()?;
        self.traditional.validate()?;
        self.check()
            .map_err(|(k, m)| Error::config(None, format!("{k}: {m}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
