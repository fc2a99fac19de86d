//! Augmentation configuration and its TOML file format.
//!
//! ```toml
//! [style]
//! probability = 0.5          # chance an image is style-augmented
//! alpha_policy = "fixed"     # or "uniform": alpha ~ U[0, 1] per image
//! alpha = 0.5                # used when alpha_policy = "fixed"
//! seed = 0
//! transformer = "weights/transformer"
//! predictor = "weights/predictor"
//! distribution = "styles.embdist"
//! cache_content_embeddings = false
//!
//! [traditional.hflip]
//! enabled = true
//! probability = 0.5
//!
//! [traditional.rotation]     # also: zoom, erasing, shear, grayscale, color_jitter
//! enabled = true
//! probability = 0.5
//! degrees = [-15.0, 15.0]
//! ```
//!
//! Every key is optional; unknown keys are errors. Validation errors carry
//! the line of the offending key.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaPolicyKind {
    Fixed,
    Uniform,
}

/// How the interpolation weight between `P(c)` and a random embedding is
/// chosen for each augmented image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaPolicy {
    Fixed(f64),
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    pub probability: f64,
    pub alpha_policy: AlphaPolicyKind,
    pub alpha: f64,
    pub seed: u64,
    pub transformer: Option<PathBuf>,
    pub predictor: Option<PathBuf>,
    pub distribution: Option<PathBuf>,
    pub cache_content_embeddings: bool,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            probability: 0.5,
            alpha_policy: AlphaPolicyKind::Fixed,
            alpha: 0.5,
            seed: 0,
            transformer: None,
            predictor: None,
            distribution: None,
            cache_content_embeddings: false,
        }
    }
}

impl AugmentationConfig {
    pub fn alpha_policy(&self) -> AlphaPolicy {
        match self.alpha_policy {
            AlphaPolicyKind::Fixed => AlphaPolicy::Fixed(self.alpha),
            AlphaPolicyKind::Uniform => AlphaPolicy::Uniform,
        }
    }

    fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err((
                "probability",
                format!("probability must lie in [0, 1], got {}", self.probability),
            ));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err((
                "alpha",
                format!("alpha must lie in [0, 1], got {}", self.alpha),
            ));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.check().map_err(|(_, m)| Error::config(None, m))
    }
}

/// A transform that is either on or off, applied with a probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Toggle {
    pub enabled: bool,
    pub probability: f64,
}

impl Default for Toggle {
    fn default() -> Self {
        Toggle {
            enabled: true,
            probability: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Rotation {
    pub enabled: bool,
    pub probability: f64,
    pub degrees: [f64; 2],
}

impl Default for Rotation {
    fn default() -> Self {
        Rotation {
            enabled: true,
            probability: 0.5,
            degrees: [-15.0, 15.0],
        }
    }
}

/// Random crop covering `scale` of each side, resized back to full size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Zoom {
    pub enabled: bool,
    pub probability: f64,
    pub scale: [f64; 2],
}

impl Default for Zoom {
    fn default() -> Self {
        Zoom {
            enabled: true,
            probability: 0.5,
            scale: [0.75, 1.0],
        }
    }
}

/// Random erasing of one rectangle filled with uniform noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Erasing {
    pub enabled: bool,
    pub probability: f64,
    /// Fraction of the image area covered by the rectangle.
    pub area: [f64; 2],
    /// Height / width ratio of the rectangle.
    pub aspect: [f64; 2],
}

impl Default for Erasing {
    fn default() -> Self {
        Erasing {
            enabled: true,
            probability: 0.5,
            area: [0.02, 0.2],
            aspect: [0.3, 3.3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Shear {
    pub enabled: bool,
    pub probability: f64,
    pub degrees: [f64; 2],
}

impl Default for Shear {
    fn default() -> Self {
        Shear {
            enabled: true,
            probability: 0.5,
            degrees: [-10.0, 10.0],
        }
    }
}

/// Multiplicative ranges `1 +/- x` for brightness, contrast and saturation;
/// hue shifts by up to `hue` of a full turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColorJitter {
    pub enabled: bool,
    pub probability: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

impl Default for ColorJitter {
    fn default() -> Self {
        ColorJitter {
            enabled: true,
            probability: 0.5,
            brightness: 0.3,
            contrast: 0.3,
            saturation: 0.3,
            hue: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraditionalAugmentConfig {
    pub hflip: Toggle,
    pub rotation: Rotation,
    pub zoom: Zoom,
    pub erasing: Erasing,
    pub shear: Shear,
    pub grayscale: Toggle,
    pub color_jitter: ColorJitter,
}

impl Default for TraditionalAugmentConfig {
    fn default() -> Self {
        TraditionalAugmentConfig {
            hflip: Toggle::default(),
            rotation: Rotation::default(),
            zoom: Zoom::default(),
            erasing: Erasing::default(),
            shear: Shear::default(),
            grayscale: Toggle {
                enabled: true,
                probability: 0.1,
            },
            color_jitter: ColorJitter::default(),
        }
    }
}

impl TraditionalAugmentConfig {
    /// Every transform disabled.
    pub fn disabled() -> Self {
        let mut c = Self::default();
        c.hflip.enabled = false;
        c.rotation.enabled = false;
        c.zoom.enabled = false;
        c.erasing.enabled = false;
        c.shear.enabled = false;
        c.grayscale.enabled = false;
        c.color_jitter.enabled = false;
        c
    }

    /// Color jitter alone, always applied.
    pub fn color_jitter_only() -> Self {
        let mut c = Self::disabled();
        c.color_jitter.enabled = true;
        c.color_jitter.probability = 1.0;
        c
    }

    fn check(&self) -> std::result::Result<(), (String, String)> {
        let prob = |section: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err((
                    format!("{section}.probability"),
                    format!("probability must lie in [0, 1], got {p}"),
                ))
            }
        };
        let range = |key: &str, r: [f64; 2], lo: f64, hi: f64| {
            if r[0].is_finite() && r[1].is_finite() && lo <= r[0] && r[0] <= r[1] && r[1] <= hi {
                Ok(())
            } else {
                Err((
                    key.to_string(),
                    format!(
                        "range [{}, {}] must be ordered and within [{lo}, {hi}]",
                        r[0], r[1]
                    ),
                ))
            }
        };
        prob("hflip", self.hflip.probability)?;
        prob("rotation", self.rotation.probability)?;
        range("rotation.degrees", self.rotation.degrees, -180.0, 180.0)?;
        prob("zoom", self.zoom.probability)?;
        range("zoom.scale", self.zoom.scale, 0.1, 1.0)?;
        prob("erasing", self.erasing.probability)?;
        range("erasing.area", self.erasing.area, 0.0, 1.0)?;
        range("erasing.aspect", self.erasing.aspect, 0.01, 100.0)?;
        if self.erasing.aspect[0] <= 0.0 {
            return Err((
                "erasing.aspect".into(),
                "aspect ratios must be positive".into(),
            ));
        }
        prob("shear", self.shear.probability)?;
        range("shear.degrees", self.shear.degrees, -45.0, 45.0)?;
        prob("grayscale", self.grayscale.probability)?;
        let j = &self.color_jitter;
        prob("color_jitter", j.probability)?;
        for (key, v, hi) in [
            ("color_jitter.brightness", j.brightness, 1.0),
            ("color_jitter.contrast", j.contrast, 1.0),
            ("color_jitter.saturation", j.saturation, 1.0),
            ("color_jitter.hue", j.hue, 0.5),
        ] {
            if !(0.0..=hi).contains(&v) {
                return Err((key.to_string(), format!("must lie in [0, {hi}], got {v}")));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.check()
            .map_err(|(k, m)| Error::config(None, format!("traditional.{k}: {m}")))
    }
}

/// Contents of an augmentation config file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentFile {
    pub style: AugmentationConfig,
    pub traditional: TraditionalAugmentConfig,
}

/// 1-based line containing byte `offset`.
pub fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())]
        .bytes()
        .filter(|&b| b == b'\n')
        .count()
        + 1
}

/// Line on which `key` (a dotted path such as `traditional.zoom.scale`) is
/// assigned, if it appears literally in the file.
pub fn line_of_key(text: &str, path: &str) -> Option<usize> {
    let (table, key) = path.rsplit_once('.').unwrap_or(("", path));
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(h) = line.strip_prefix('[').and_then(|l| l.split(']').next()) {
            current = h.trim().to_string();
            continue;
        }
        let Some((k, _)) = line.split_once('=') else {
            continue;
        };
        let k = k.trim();
        let full = if current.is_empty() {
            k.to_string()
        } else {
            format!("{current}.{k}")
        };
        if full == path || (current == table && k == key) {
            return Some(i + 1);
        }
    }
    None
}

/// Validates the `[style]` and `[traditional]` sections of a parsed file,
/// pointing errors at the line of the offending key in `text`.
pub fn validate_located(
    text: &str,
    style: &AugmentationConfig,
    traditional: &TraditionalAugmentConfig,
) -> Result<()> {
    if let Err((key, msg)) = style.check() {
        let path = format!("style.{key}");
        return Err(Error::config(
            line_of_key(text, &path),
            format!("{path}: {msg}"),
        ));
    }
    if let Err((key, msg)) = traditional.check() {
        let path = format!("traditional.{key}");
        return Err(Error::config(
            line_of_key(text, &path),
            format!("{path}: {msg}"),
        ));
    }
    Ok(())
}

/// Deserializes TOML, reporting syntax and type errors with their line.
pub fn parse_toml<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| line_of_offset(text, s.start));
        Error::config(line, e.message().to_string())
    })
}

impl AugmentFile {
    pub fn parse(text: &str) -> Result<Self> {
        let file: AugmentFile = parse_toml(text)?;
        validate_located(text, &file.style, &file.traditional)?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut file = Self::parse(&text)?;
        // Relative weight paths are relative to the config file.
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut file.style.transformer,
            &mut file.style.predictor,
            &mut file.style.distribution,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(file)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(AugmentFile::parse("").unwrap(), AugmentFile::default());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut f = AugmentFile::default();
        f.style.alpha_policy = AlphaPolicyKind::Uniform;
        f.style.transformer = Some("t".into());
        f.traditional.zoom.scale = [0.5, 0.9];
        assert_eq!(AugmentFile::parse(&f.to_toml()).unwrap(), f);
    }

    #[test]
    fn semantic_error_reports_line() {
        let text = "[style]\nseed = 3\nprobability = 1.5\n";
        let err = AugmentFile::parse(text).unwrap_err();
        assert!(matches!(err, Error::Config { line: Some(3), .. }), "{err}");
        let text = "[traditional.zoom]\nenabled = true\n\nscale = [0.9, 0.5]\n";
        let err = AugmentFile::parse(text).unwrap_err();
        assert!(matches!(err, Error::Config { line: Some(4), .. }), "{err}");
    }

    #[test]
    fn unknown_key_reports_line() {
        let text = "[style]\nprobability = 0.5\nalpah = 0.3\n";
        let err = AugmentFile::parse(text).unwrap_err();
        assert!(matches!(err, Error::Config { line: Some(3), .. }), "{err}");
        assert!(err.is_validation());
    }

    #[test]
    fn syntax_error_reports_line() {
        let err = AugmentFile::parse("[style]\n\nprobability = = 1\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: Some(3), .. }), "{err}");
    }
}
