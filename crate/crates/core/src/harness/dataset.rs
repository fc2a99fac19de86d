//! Synthetic multi-domain classification data: the class is a shape, the
//! domain is how it is rendered (colors, texture, outline, noise).
//!
//! On disk a dataset is `domain/class/{train,test}_NNNN.png` plus
//! `dataset.json` describing domains, classes and splits.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::rng::{derive_seed, stream, tag};
use crate::textures::{generate_texture, TextureFamily};

pub const DATASET_FILE: &str = "dataset.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
    Cross,
}

impl Shape {
    pub fn name(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
            Shape::Cross => "cross",
        }
    }

    /// Whether `(u, v)`, in shape-local coordinates scaled so the shape
    /// radius is 1, lies inside the shape.
    fn contains(self, u: f32, v: f32) -> bool {
        match self {
            Shape::Circle => u * u + v * v < 1.0,
            Shape::Square => u.abs() < 0.8 && v.abs() < 0.8,
            Shape::Triangle => {
                // Equilateral, circumradius 1, apex up.
                let s3 = 3f32.sqrt();
                v < 0.5 && s3 * u - v < 1.0 && -s3 * u - v < 1.0
            }
            Shape::Cross => (u.abs() < 1.0 && v.abs() < 0.33) || (u.abs() < 0.33 && v.abs() < 1.0),
        }
    }
}

/// Rendering style that defines a domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    /// Flat colored shape on a smooth light gradient.
    Photo,
    /// Bright shape on a dark, noisy background.
    Night,
    /// Textured shape on a differently textured background.
    Texture,
    /// Dark outline on paper-colored background.
    Sketch,
}

impl DomainKind {
    pub fn name(self) -> &'static str {
        match self {
            DomainKind::Photo => "photo",
            DomainKind::Night => "night",
            DomainKind::Texture => "texture",
            DomainKind::Sketch => "sketch",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeskDomainParams {
    pub classes: Vec<Shape>,
    pub domains: Vec<DomainKind>,
    /// Training images per class per domain.
    pub train_per_class: usize,
    /// Test images per class per domain.
    pub test_per_class: usize,
    pub image_size: usize,
}

impl Default for DeskDomainParams {
    fn default() -> Self {
        DeskDomainParams {
            classes: vec![Shape::Circle, Shape::Square, Shape::Triangle],
            domains: vec![DomainKind::Photo, DomainKind::Night, DomainKind::Texture],
            train_per_class: 200,
            test_per_class: 100,
            image_size: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemSpec {
    /// Path relative to the dataset root.
    pub file: String,
    pub label: usize,
}

/// Structure of a multi-domain dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub domains: Vec<String>,
    pub classes: Vec<String>,
    pub image_size: usize,
    pub seed: Option<u64>,
    /// domain -> split -> items.
    pub splits: BTreeMap<String, BTreeMap<Split, Vec<ItemSpec>>>,
}

/// A labeled image.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: RgbImage,
    pub label: usize,
}

/// Dataset held in memory, with its spec.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    samples: BTreeMap<(String, Split), Vec<Sample>>,
}

impl Dataset {
    pub fn samples(&self, domain: &str, split: Split) -> Result<&[Sample]> {
        self.samples
            .get(&(domain.to_string(), split))
            .map(Vec::as_slice)
            .ok_or_else(|| Error::invalid(format!("dataset has no domain `{domain}`")))
    }

    pub fn num_classes(&self) -> usize {
        self.spec.classes.len()
    }

    pub fn num_images(&self) -> usize {
        self.samples.values().map(Vec::len).sum()
    }

    /// Writes every image and `dataset.json` under `root`.
    pub fn save(&self, root: &Path) -> Result<()> {
        for ((domain, split), samples) in &self.samples {
            let items = &self.spec.splits[domain][split];
            for (item, sample) in items.iter().zip(samples) {
                sample.image.save_png(&root.join(&item.file))?;
            }
        }
        let mut bytes = serde_json::to_vec_pretty(&self.spec)?;
        bytes.push(b'\n');
        let path = root.join(DATASET_FILE);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    }

    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(DATASET_FILE);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let spec: DatasetSpec =
            serde_json::from_slice(&bytes).map_err(|e| Error::format(&path, e.to_string()))?;
        validate_spec(&spec).map_err(|e| Error::format(&path, e.to_string()))?;
        let mut samples = BTreeMap::new();
        for (domain, splits) in &spec.splits {
            for (split, items) in splits {
                let loaded = items
                    .iter()
                    .map(|item| {
                        Ok(Sample {
                            image: RgbImage::load(&root.join(&item.file))?,
                            label: item.label,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                samples.insert((domain.clone(), *split), loaded);
            }
        }
        Ok(Dataset { spec, samples })
    }

    /// Materialized absolute path of every item, for listing.
    pub fn files(&self, root: &Path) -> Vec<PathBuf> {
        self.spec
            .splits
            .values()
            .flat_map(|s| s.values())
            .flatten()
            .map(|i| root.join(&i.file))
            .collect()
    }
}

fn validate_spec(spec: &DatasetSpec) -> Result<()> {
    if spec.classes.is_empty() || spec.domains.is_empty() {
        return Err(Error::invalid(
            "dataset needs at least one class and one domain",
        ));
    }
    for d in &spec.domains {
        let splits = spec
            .splits
            .get(d)
            .ok_or_else(|| Error::invalid(format!("domain `{d}` has no splits")))?;
        for (split, items) in splits {
            if let Some(bad) = items.iter().find(|i| i.label >= spec.classes.len()) {
                return Err(Error::invalid(format!(
                    "{} has label {} of {}",
                    bad.file,
                    bad.label,
                    spec.classes.len()
                )));
            }
            for c in 0..spec.classes.len() {
                if !items.iter().any(|i| i.label == c) {
                    return Err(Error::invalid(format!(
                        "class `{}` missing from {d}/{}",
                        spec.classes[c],
                        split.name()
                    )));
                }
            }
        }
    }
    Ok(())
}

fn rand_color<R: Rng + ?Sized>(rng: &mut R, lo: f32, hi: f32) -> [f32; 3] {
    [
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
    ]
}

/// Anti-aliased shape coverage in `[0, 1]` per pixel.
fn shape_mask<R: Rng + ?Sized>(shape: Shape, size: usize, rng: &mut R) -> Vec<f32> {
    let s = size as f32;
    let cx = rng.random_range(0.38..0.62) * s;
    let cy = rng.random_range(0.38..0.62) * s;
    let r = rng.random_range(0.24..0.34) * s;
    let theta: f32 = rng.random_range(-0.5..0.5);
    let (ct, st) = (theta.cos(), theta.sin());
    let sub = 3;
    let mut mask = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let mut hits = 0;
            for j in 0..sub {
                for i in 0..sub {
                    let px = x as f32 + (i as f32 + 0.5) / sub as f32 - cx;
                    let py = y as f32 + (j as f32 + 0.5) / sub as f32 - cy;
                    let u = (ct * px + st * py) / r;
                    let v = (-st * px + ct * py) / r;
                    hits += shape.contains(u, v) as usize;
                }
            }
            mask[y * size + x] = hits as f32 / (sub * sub) as f32;
        }
    }
    mask
}

fn outline(mask: &[f32], size: usize) -> Vec<f32> {
    let at = |x: isize, y: isize| {
        if x < 0 || y < 0 || x >= size as isize || y >= size as isize {
            0.0
        } else {
            mask[y as usize * size + x as usize]
        }
    };
    let mut out = vec![0.0; size * size];
    for y in 0..size as isize {
        for x in 0..size as isize {
            let c = at(x, y);
            let mut lo = c;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    lo = lo.min(at(x + dx, y + dy));
                }
            }
            out[y as usize * size + x as usize] = c - lo;
        }
    }
    out
}

fn noise<R: Rng + ?Sized>(img: &mut RgbImage, rng: &mut R, amount: f32) {
    for v in img.data_mut() {
        *v = (*v + rng.random_range(-amount..amount)).clamp(0.0, 1.0);
    }
}

/// Renders one image of `shape` in the style of `domain`.
pub fn render<R: Rng + ?Sized>(
    shape: Shape,
    domain: DomainKind,
    size: usize,
    rng: &mut R,
) -> RgbImage {
    let mask = shape_mask(shape, size, rng);
    let blend = |bg: &RgbImage, fg: &RgbImage, m: &[f32]| {
        RgbImage::from_fn(size, size, |x, y| {
            let t = m[y * size + x];
            let (b, f) = (bg.get(x, y), fg.get(x, y));
            [0, 1, 2].map(|c| b[c] * (1.0 - t) + f[c] * t)
        })
    };
    let mut img = match domain {
        DomainKind::Photo => {
            let (top, bottom) = (rand_color(rng, 0.55, 0.95), rand_color(rng, 0.55, 0.95));
            let bg = RgbImage::from_fn(size, size, |_, y| {
                let t = y as f32 / size as f32;
                [0, 1, 2].map(|c| top[c] * (1.0 - t) + bottom[c] * t)
            });
            let fg = RgbImage::filled(size, size, rand_color(rng, 0.05, 0.5));
            blend(&bg, &fg, &mask)
        }
        DomainKind::Night => {
            let bg = RgbImage::filled(size, size, rand_color(rng, 0.0, 0.2));
            let fg = RgbImage::filled(size, size, rand_color(rng, 0.6, 1.0));
            let mut img = blend(&bg, &fg, &mask);
            noise(&mut img, rng, 0.12);
            img
        }
        DomainKind::Texture => {
            let fam_bg = TextureFamily::ALL[rng.random_range(0..TextureFamily::ALL.len())];
            let fam_fg = TextureFamily::ALL[rng.random_range(0..TextureFamily::ALL.len())];
            let bg = generate_texture(fam_bg, size, rng);
            let mut fg = generate_texture(fam_fg, size, rng);
            // Keep the shape readable: push foreground away from background luminance.
            let lum = |img: &RgbImage| img.data().iter().sum::<f32>() / img.data().len() as f32;
            let shift = if lum(&bg) > 0.5 { -0.35 } else { 0.35 };
            for v in fg.data_mut() {
                *v = (*v + shift).clamp(0.0, 1.0);
            }
            blend(&bg, &fg, &mask)
        }
        DomainKind::Sketch => {
            let paper = rand_color(rng, 0.8, 1.0);
            let ink = rand_color(rng, 0.0, 0.3);
            let edge = outline(&mask, size);
            let bg = RgbImage::filled(size, size, paper);
            let fg = RgbImage::filled(size, size, ink);
            let mut img = blend(&bg, &fg, &edge);
            noise(&mut img, rng, 0.04);
            img
        }
    };
    img.clamp01();
    img
}

/// Renders the full dataset in memory. Each image has its own random
/// stream, so the result depends only on `seed` and `params`.
pub fn build_desk_domains(seed: u64, params: &DeskDomainParams) -> Result<Dataset> {
    if params.domains.len() < 2 || params.classes.len() < 3 {
        return Err(Error::invalid(
            "desk domains need at least 2 domains and 3 classes",
        ));
    }
    if params.image_size < 16 {
        return Err(Error::invalid(
            "desk domain images must be at least 16 pixels",
        ));
    }
    if params.train_per_class == 0 || params.test_per_class == 0 {
        return Err(Error::invalid(
            "every split needs at least one image per class",
        ));
    }
    let mut splits = BTreeMap::new();
    let mut samples = BTreeMap::new();
    for &domain in &params.domains {
        let mut per_split = BTreeMap::new();
        for (split, count) in [
            (Split::Train, params.train_per_class),
            (Split::Test, params.test_per_class),
        ] {
            let mut items = Vec::new();
            let mut imgs = Vec::new();
            for i in 0..count {
                for (label, &shape) in params.classes.iter().enumerate() {
                    let key = format!("{}/{}/{}/{i}", domain.name(), shape.name(), split.name());
                    let mut rng = stream(derive_seed(seed, tag(&key)), 0);
                    imgs.push(Sample {
                        image: render(shape, domain, params.image_size, &mut rng),
                        label,
                    });
                    items.push(ItemSpec {
                        file: format!(
                            "{}/{}/{}_{i:04}.png",
                            domain.name(),
                            shape.name(),
                            split.name()
                        ),
                        label,
                    });
                }
            }
            per_split.insert(split, items);
            samples.insert((domain.name().to_string(), split), imgs);
        }
        splits.insert(domain.name().to_string(), per_split);
    }
    let spec = DatasetSpec {
        domains: params
            .domains
            .iter()
            .map(|d| d.name().to_string())
            .collect(),
        classes: params
            .classes
            .iter()
            .map(|c| c.name().to_string())
            .collect(),
        image_size: params.image_size,
        seed: Some(seed),
        splits,
    };
    // Round through 8-bit so in-memory and on-disk datasets agree exactly.
    for v in samples.values_mut() {
        for s in v.iter_mut() {
            s.image = s.image.quantized();
        }
    }
    Ok(Dataset { spec, samples })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DeskDomainParams {
        DeskDomainParams {
            train_per_class: 3,
            test_per_class: 2,
            image_size: 16,
            ..Default::default()
        }
    }

    #[test]
    fn counts_and_round_trip() {
        let ds = build_desk_domains(4, &small()).unwrap();
        assert_eq!(ds.num_images(), 3 * 3 * 5);
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(
            build_desk_domains(4, &small()).unwrap(),
            build_desk_domains(4, &small()).unwrap()
        );
        assert_ne!(
            build_desk_domains(4, &small()).unwrap(),
            build_desk_domains(5, &small()).unwrap()
        );
    }

    #[test]
    fn too_few_domains_is_invalid() {
        let p = DeskDomainParams {
            domains: vec![DomainKind::Photo],
            ..small()
        };
        assert!(build_desk_domains(0, &p).unwrap_err().is_validation());
    }

    #[test]
    fn shapes_cover_a_reasonable_area() {
        let mut rng = stream(1, 1);
        for shape in [Shape::Circle, Shape::Square, Shape::Triangle, Shape::Cross] {
            let m = shape_mask(shape, 32, &mut rng);
            let area = m.iter().sum::<f32>() / (32.0 * 32.0);
            assert!((0.05..0.5).contains(&area), "{shape:?} {area}");
        }
    }
}
