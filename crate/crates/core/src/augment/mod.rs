//! Style and traditional augmentation, and their composition into the four
//! experimental arms.

pub mod config;
pub mod style;
pub mod traditional;

pub use config::{
    line_of_key, parse_toml, validate_located, AlphaPolicy, AlphaPolicyKind, AugmentFile,
    AugmentationConfig, TraditionalAugmentConfig,
};
pub use style::{style_augment, StyleAugmenter, StylePlan};
pub use traditional::traditional_augment;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    None,
    Trad,
    Style,
    Both,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::None, Arm::Trad, Arm::Style, Arm::Both];

    pub fn name(self) -> &'static str {
        match self {
            Arm::None => "none",
            Arm::Trad => "trad",
            Arm::Style => "style",
            Arm::Both => "both",
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arm::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            Error::invalid(format!(
                "unknown arm `{s}`; expected none, trad, style or both"
            ))
        })
    }
}

/// A composed transform: traditional augmentation, then style augmentation.
#[derive(Debug, Clone, Default)]
pub struct Pipeline {
    traditional: Option<TraditionalAugmentConfig>,
    style: Option<Arc<StyleAugmenter>>,
}

/// Builds the transform for `arm`. Arms that need a component fail if it is
/// missing.
pub fn make_pipeline(
    arm: Arm,
    traditional: Option<&TraditionalAugmentConfig>,
    style: Option<Arc<StyleAugmenter>>,
) -> Result<Pipeline> {
    let need_trad = matches!(arm, Arm::Trad | Arm::Both);
    let need_style = matches!(arm, Arm::Style | Arm::Both);
    let traditional = if need_trad {
        let t = traditional.ok_or_else(|| {
            Error::config(None, format!("arm `{arm}` needs a traditional config"))
        })?;
        t.validate()?;
        Some(t.clone())
    } else {
        None
    };
    let style = if need_style {
        Some(style.ok_or_else(|| {
            Error::config(
                None,
                format!("arm `{arm}` needs style augmentation weights"),
            )
        })?)
    } else {
        None
    };
    Ok(Pipeline { traditional, style })
}

impl Pipeline {
    pub fn identity() -> Self {
        Pipeline::default()
    }

    pub fn traditional_only(config: TraditionalAugmentConfig) -> Result<Self> {
        config.validate()?;
        Ok(Pipeline {
            traditional: Some(config),
            style: None,
        })
    }

    /// Style augmentation alone.
    pub fn style_only(style: StyleAugmenter) -> Self {
        Self::style_only_shared(Arc::new(style))
    }

    pub fn style_only_shared(style: Arc<StyleAugmenter>) -> Self {
        Pipeline {
            traditional: None,
            style: Some(style),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.traditional.is_none() && self.style.is_none()
    }

    /// Sub-seeds for the traditional and style stages. Always drawn, so every
    /// arm consumes the caller's stream identically.
    fn split<R: Rng + ?Sized>(rng: &mut R) -> (u64, u64) {
        (rng.next_u64(), rng.next_u64())
    }

    pub fn apply<R: Rng + ?Sized>(&self, image: &RgbImage, rng: &mut R) -> Result<RgbImage> {
        Ok(self.apply_batch(&[image], &[None], rng)?.remove(0))
    }

    /// Augments a batch; `keys` identify items for the content-embedding
    /// cache. Random choices are drawn per image in order, so the result
    /// equals applying [`Pipeline::apply`] to each image in turn.
    pub fn apply_batch<R: Rng + ?Sized>(
        &self,
        images: &[&RgbImage],
        keys: &[Option<u64>],
        rng: &mut R,
    ) -> Result<Vec<RgbImage>> {
        if images.len() != keys.len() {
            return Err(Error::invalid("one key per image required"));
        }
        let seeds: Vec<(u64, u64)> = images.iter().map(|_| Self::split(rng)).collect();
        let stage1: Vec<RgbImage> = images
            .iter()
            .zip(&seeds)
            .map(|(img, &(s1, _))| match &self.traditional {
                Some(cfg) => traditional_augment(img, cfg, &mut stream(s1, 0)),
                None => (*img).clone(),
            })
            .collect();
        let Some(style) = &self.style else {
            return Ok(stage1);
        };
        let plans: Vec<Option<StylePlan>> = seeds
            .iter()
            .map(|&(_, s2)| style.plan(&mut stream(s2, 0)))
            .collect();
        let refs: Vec<&RgbImage> = stage1.iter().collect();
        style.execute(&refs, &plans, keys)
    }
}
