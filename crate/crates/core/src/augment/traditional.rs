//! Classical image augmentations. Each enabled transform fires
//! independently with its own probability, in a fixed order: flip,
//! rotation, shear, zoom, color jitter, grayscale, erasing.

use rand::Rng;

use super::config::{ColorJitter, Erasing, TraditionalAugmentConfig};
use crate::image::RgbImage;

pub fn hflip(img: &RgbImage) -> RgbImage {
    let w = img.width();
    RgbImage::from_fn(w, img.height(), |x, y| img.get(w - 1 - x, y))
}

/// Maps every output pixel through `f` (output -> source coordinates,
/// centered on the image) and samples bilinearly with clamped borders.
fn warp(img: &RgbImage, f: impl Fn(f32, f32) -> (f32, f32)) -> RgbImage {
    let cx = (img.width() as f32 - 1.0) / 2.0;
    let cy = (img.height() as f32 - 1.0) / 2.0;
    RgbImage::from_fn(img.width(), img.height(), |x, y| {
        let (sx, sy) = f(x as f32 - cx, y as f32 - cy);
        img.sample_bilinear(sx + cx, sy + cy)
    })
}

pub fn rotate(img: &RgbImage, degrees: f64) -> RgbImage {
    let t = (degrees as f32).to_radians();
    let (c, s) = (t.cos(), t.sin());
    warp(img, |x, y| (c * x + s * y, -s * x + c * y))
}

/// Horizontal shear by `degrees`.
pub fn shear(img: &RgbImage, degrees: f64) -> RgbImage {
    let k = (degrees as f32).to_radians().tan();
    warp(img, |x, y| (x + k * y, y))
}

/// Crops `scale` of each side at `(fx, fy)` (fractions of the free margin)
/// and resizes back to the original size.
pub fn zoom(img: &RgbImage, scale: f64, fx: f64, fy: f64) -> RgbImage {
    let (w, h) = (img.width(), img.height());
    let cw = ((w as f64 * scale).round() as usize).clamp(1, w);
    let ch = ((h as f64 * scale).round() as usize).clamp(1, h);
    let x0 = ((w - cw) as f64 * fx).round() as usize;
    let y0 = ((h - ch) as f64 * fy).round() as usize;
    img.crop(x0, y0, cw, ch).resize(w, h)
}

pub fn grayscale(img: &RgbImage) -> RgbImage {
    RgbImage::from_fn(img.width(), img.height(), |x, y| {
        let [r, g, b] = img.get(x, y);
        let l = 0.299 * r + 0.587 * g + 0.114 * b;
        [l, l, l]
    })
}

fn rgb_to_hsv([r, g, b]: [f32; 3]) -> [f32; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    [h, s, max]
}

fn hsv_to_rgb([h, s, v]: [f32; 3]) -> [f32; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as u32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Brightness, contrast and saturation factors, then a hue shift in turns.
pub fn adjust_color(
    img: &RgbImage,
    brightness: f32,
    contrast: f32,
    saturation: f32,
    hue: f32,
) -> RgbImage {
    let mut out = img.clone();
    for v in out.data_mut() {
        *v = (*v * brightness).clamp(0.0, 1.0);
    }
    let gray_mean =
        grayscale(&out).plane(0).iter().sum::<f32>() / (out.width() * out.height()) as f32;
    for v in out.data_mut() {
        *v = (gray_mean + (*v - gray_mean) * contrast).clamp(0.0, 1.0);
    }
    let gray = grayscale(&out);
    for (v, g) in out.data_mut().iter_mut().zip(gray.data()) {
        *v = (g + (*v - g) * saturation).clamp(0.0, 1.0);
    }
    if hue != 0.0 {
        out = RgbImage::from_fn(out.width(), out.height(), |x, y| {
            let [h, s, v] = rgb_to_hsv(out.get(x, y));
            hsv_to_rgb([h + hue, s, v])
        });
    }
    out
}

fn color_jitter<R: Rng + ?Sized>(img: &RgbImage, c: &ColorJitter, rng: &mut R) -> RgbImage {
    let factor = |rng: &mut R, x: f64| {
        if x > 0.0 {
            rng.random_range(1.0 - x..=1.0 + x) as f32
        } else {
            1.0
        }
    };
    let b = factor(rng, c.brightness);
    let ct = factor(rng, c.contrast);
    let s = factor(rng, c.saturation);
    let h = if c.hue > 0.0 {
        rng.random_range(-c.hue..=c.hue) as f32
    } else {
        0.0
    };
    adjust_color(img, b, ct, s, h)
}

/// Rectangle `(x0, y0, w, h)` for random erasing, or `None` if no
/// attempt fits. The rounded area fraction always lies inside `area`.
pub fn erasing_rect<R: Rng + ?Sized>(
    width: usize,
    height: usize,
    cfg: &Erasing,
    rng: &mut R,
) -> Option<(usize, usize, usize, usize)> {
    let total = (width * height) as f64;
    let (log_lo, log_hi) = (cfg.aspect[0].ln(), cfg.aspect[1].ln());
    for _ in 0..100 {
        let target = rng.random_range(cfg.area[0]..=cfg.area[1]) * total;
        let aspect = rng.random_range(log_lo..=log_hi).exp();
        let h = (target * aspect).sqrt().round() as usize;
        let w = (target / aspect).sqrt().round() as usize;
        if w == 0 || h == 0 || w > width || h > height {
            continue;
        }
        let frac = (w * h) as f64 / total;
        if frac < cfg.area[0] || frac > cfg.area[1] {
            continue;
        }
        let x0 = rng.random_range(0..=width - w);
        let y0 = rng.random_range(0..=height - h);
        return Some((x0, y0, w, h));
    }
    None
}

/// Random erasing: one rectangle replaced by uniform noise.
pub fn erase<R: Rng + ?Sized>(img: &RgbImage, cfg: &Erasing, rng: &mut R) -> RgbImage {
    let mut out = img.clone();
    if let Some((x0, y0, w, h)) = erasing_rect(img.width(), img.height(), cfg, rng) {
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                out.set(x, y, [rng.random(), rng.random(), rng.random()]);
            }
        }
    }
    out
}

fn fires<R: Rng + ?Sized>(enabled: bool, p: f64, rng: &mut R) -> bool {
    enabled && rng.random::<f64>() < p
}

/// Applies every enabled transform independently. Output size equals input
/// size.
pub fn traditional_augment<R: Rng + ?Sized>(
    image: &RgbImage,
    cfg: &TraditionalAugmentConfig,
    rng: &mut R,
) -> RgbImage {
    let mut img = image.clone();
    if fires(cfg.hflip.enabled, cfg.hflip.probability, rng) {
        img = hflip(&img);
    }
    if fires(cfg.rotation.enabled, cfg.rotation.probability, rng) {
        let [lo, hi] = cfg.rotation.degrees;
        img = rotate(&img, rng.random_range(lo..=hi));
    }
    if fires(cfg.shear.enabled, cfg.shear.probability, rng) {
        let [lo, hi] = cfg.shear.degrees;
        img = shear(&img, rng.random_range(lo..=hi));
    }
    if fires(cfg.zoom.enabled, cfg.zoom.probability, rng) {
        let [lo, hi] = cfg.zoom.scale;
        let s = rng.random_range(lo..=hi);
        let (fx, fy) = (rng.random(), rng.random());
        img = zoom(&img, s, fx, fy);
    }
    if fires(cfg.color_jitter.enabled, cfg.color_jitter.probability, rng) {
        img = color_jitter(&img, &cfg.color_jitter, rng);
    }
    if fires(cfg.grayscale.enabled, cfg.grayscale.probability, rng) {
        img = grayscale(&img);
    }
    if fires(cfg.erasing.enabled, cfg.erasing.probability, rng) {
        img = erase(&img, &cfg.erasing, rng);
    }
    img
}
