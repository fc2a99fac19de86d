//! Procedural texture families used as a desk-scale style corpus.

use std::f32::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::image::RgbImage;
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureFamily {
    Stripes,
    Checker,
    Dots,
    Blotches,
    Rings,
    Speckle,
}

impl TextureFamily {
    pub const ALL: [TextureFamily; 6] = [
        TextureFamily::Stripes,
        TextureFamily::Checker,
        TextureFamily::Dots,
        TextureFamily::Blotches,
        TextureFamily::Rings,
        TextureFamily::Speckle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TextureFamily::Stripes => "stripes",
            TextureFamily::Checker => "checker",
            TextureFamily::Dots => "dots",
            TextureFamily::Blotches => "blotches",
            TextureFamily::Rings => "rings",
            TextureFamily::Speckle => "speckle",
        }
    }
}

fn color<R: Rng + ?Sized>(rng: &mut R) -> [f32; 3] {
    [rng.random(), rng.random(), rng.random()]
}

fn mix(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    [0, 1, 2].map(|i| a[i] * (1.0 - t) + b[i] * t)
}

/// Smooth value noise on a `cells x cells` lattice, bilinearly interpolated.
fn value_noise<R: Rng + ?Sized>(rng: &mut R, size: usize, cells: usize) -> Vec<f32> {
    let lattice: Vec<f32> = (0..(cells + 1) * (cells + 1))
        .map(|_| rng.random())
        .collect();
    let at = |i: usize, j: usize| lattice[j * (cells + 1) + i];
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let fx = x as f32 / size as f32 * cells as f32;
            let fy = y as f32 / size as f32 * cells as f32;
            let (i, j) = (fx as usize, fy as usize);
            let (tx, ty) = (fx - i as f32, fy - j as f32);
            let (tx, ty) = (tx * tx * (3.0 - 2.0 * tx), ty * ty * (3.0 - 2.0 * ty));
            let top = at(i, j) * (1.0 - tx) + at(i + 1, j) * tx;
            let bot = at(i, j + 1) * (1.0 - tx) + at(i + 1, j + 1) * tx;
            out.push(top * (1.0 - ty) + bot * ty);
        }
    }
    out
}

/// One `size x size` texture of `family` with random parameters.
pub fn generate_texture<R: Rng + ?Sized>(
    family: TextureFamily,
    size: usize,
    rng: &mut R,
) -> RgbImage {
    let (a, b) = (color(rng), color(rng));
    let s = size as f32;
    match family {
        TextureFamily::Stripes => {
            let angle = rng.random_range(0.0..PI);
            let period = rng.random_range(3.0..8.0) * s / 32.0;
            let (ca, sa) = (angle.cos(), angle.sin());
            RgbImage::from_fn(size, size, |x, y| {
                let u = x as f32 * ca + y as f32 * sa;
                let t = 0.5 + 0.5 * (2.0 * PI * u / period).sin();
                mix(a, b, (t > 0.5) as u8 as f32 * 0.85 + t * 0.15)
            })
        }
        TextureFamily::Checker => {
            let cell = rng.random_range(2.0..6.0) * s / 32.0;
            let (ox, oy) = (rng.random_range(0.0..cell), rng.random_range(0.0..cell));
            RgbImage::from_fn(size, size, |x, y| {
                let i = ((x as f32 + ox) / cell).floor() as i64
                    + ((y as f32 + oy) / cell).floor() as i64;
                if i.rem_euclid(2) == 0 {
                    a
                } else {
                    b
                }
            })
        }
        TextureFamily::Dots => {
            let spacing = rng.random_range(4.0..9.0) * s / 32.0;
            let radius = spacing * rng.random_range(0.2..0.4);
            RgbImage::from_fn(size, size, |x, y| {
                let dx = (x as f32 % spacing) - spacing / 2.0;
                let dy = (y as f32 % spacing) - spacing / 2.0;
                if dx * dx + dy * dy < radius * radius {
                    b
                } else {
                    a
                }
            })
        }
        TextureFamily::Blotches => {
            let cells = rng.random_range(2..5);
            let n = value_noise(rng, size, cells);
            let c = color(rng);
            RgbImage::from_fn(size, size, |x, y| {
                let t = n[y * size + x];
                if t < 0.5 {
                    mix(a, b, t * 2.0)
                } else {
                    mix(b, c, t * 2.0 - 1.0)
                }
            })
        }
        TextureFamily::Rings => {
            let (cx, cy) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
            let period = rng.random_range(3.0..7.0) * s / 32.0;
            RgbImage::from_fn(size, size, |x, y| {
                let r = ((x as f32 - cx).powi(2) + (y as f32 - cy).powi(2)).sqrt();
                mix(a, b, 0.5 + 0.5 * (2.0 * PI * r / period).cos())
            })
        }
        TextureFamily::Speckle => {
            let density = rng.random_range(0.2..0.5);
            let mut out = RgbImage::filled(size, size, a);
            for y in 0..size {
                for x in 0..size {
                    if rng.random::<f32>() < density {
                        let jitter: f32 = rng.random_range(-0.15..0.15);
                        out.set(x, y, b.map(|v| (v + jitter).clamp(0.0, 1.0)));
                    }
                }
            }
            out
        }
    }
}

/// `per_family` textures of every family, in family order. Texture `i` of a
/// family uses its own stream, so corpora of different sizes share prefixes.
pub fn texture_corpus(per_family: usize, size: usize, seed: u64) -> Vec<(TextureFamily, RgbImage)> {
    let mut out = Vec::with_capacity(per_family * TextureFamily::ALL.len());
    for (fi, &family) in TextureFamily::ALL.iter().enumerate() {
        for i in 0..per_family {
            let mut rng = stream(seed, ((fi as u64) << 32) | i as u64);
            out.push((family, generate_texture(family, size, &mut rng)));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_deterministic_and_valid() {
        let a = texture_corpus(2, 16, 9);
        let b = texture_corpus(2, 16, 9);
        assert_eq!(a.len(), 12);
        assert_eq!(a, b);
        for (_, img) in &a {
            assert!(img.is_valid());
            assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert_eq!(texture_corpus(1, 16, 9)[0], a[0]);
    }
}
