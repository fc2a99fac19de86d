//! Planar RGB images with `f32` samples in `[0, 1]`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    /// Channel-major `[3, height, width]`.
    data: Vec<f32>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            data: vec![0.0; 3 * width * height],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let mut img = Self::new(width, height);
        for c in 0..3 {
            img.plane_mut(c).fill(rgb[c]);
        }
        img
    }

    pub fn from_planar(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(Error::invalid(format!(
                "{}x{} RGB image needs {} samples, got {}",
                width,
                height,
                3 * width * height,
                data.len()
            )));
        }
        Ok(RgbImage {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [f32; 3],
    ) -> Self {
        let mut img = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                img.set(x, y, f(x, y));
            }
        }
        img
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.width * self.height;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        let n = self.width * self.height;
        let i = y * self.width + x;
        [self.data[i], self.data[n + i], self.data[2 * n + i]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let n = self.width * self.height;
        let i = y * self.width + x;
        self.data[i] = rgb[0];
        self.data[n + i] = rgb[1];
        self.data[2 * n + i] = rgb[2];
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn is_valid(&self) -> bool {
        self.width > 0 && self.height > 0 && self.data.iter().all(|v| v.is_finite())
    }

    pub fn mean_abs_diff(&self, other: &RgbImage) -> f64 {
        assert_eq!(
            (self.width, self.height),
            (other.width, other.height),
            "mean_abs_diff on differently sized images"
        );
        let s: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs() as f64)
            .sum();
        s / self.data.len() as f64
    }

    /// `[1, 3, H, W]` tensor.
    pub fn to_tensor<S: Scalar>(&self) -> Tensor<S> {
        let data = self.data.iter().map(|&v| S::from_f64(v as f64)).collect();
        Tensor::from_vec(&[1, 3, self.height, self.width], data).expect("image shape")
    }

    pub fn batch_to_tensor<S: Scalar>(images: &[&RgbImage]) -> Result<Tensor<S>> {
        let first = images
            .first()
            .ok_or_else(|| Error::invalid("empty image batch"))?;
        let (w, h) = (first.width, first.height);
        let mut data = Vec::with_capacity(images.len() * 3 * w * h);
        for img in images {
            if (img.width, img.height) != (w, h) {
                return Err(Error::invalid(format!(
                    "batch mixes {}x{} and {}x{} images",
                    w, h, img.width, img.height
                )));
            }
            data.extend(img.data.iter().map(|&v| S::from_f64(v as f64)));
        }
        Tensor::from_vec(&[images.len(), 3, h, w], data)
    }

    /// Splits an `[N, 3, H, W]` tensor into images.
    pub fn from_batch_tensor<S: Scalar>(t: &Tensor<S>) -> Result<Vec<RgbImage>> {
        if t.shape().len() != 4 || t.shape()[1] != 3 {
            return Err(Error::invalid(format!(
                "expected [N,3,H,W], got {:?}",
                t.shape()
            )));
        }
        let (n, _, h, w) = t.dims4();
        let per = 3 * h * w;
        Ok((0..n)
            .map(|i| RgbImage {
                width: w,
                height: h,
                data: t.data()[i * per..(i + 1) * per]
                    .iter()
                    .map(|v| v.as_f64() as f32)
                    .collect(),
            })
            .collect())
    }

    /// Bilinear sample with clamped borders at continuous pixel coordinates.
    pub fn sample_bilinear(&self, x: f32, y: f32) -> [f32; 3] {
        let x = x.clamp(0.0, (self.width - 1) as f32);
        let y = y.clamp(0.0, (self.height - 1) as f32);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (fx, fy) = (x - x0 as f32, y - y0 as f32);
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let p = self.plane(c);
            let top = p[y0 * self.width + x0] * (1.0 - fx) + p[y0 * self.width + x1] * fx;
            let bot = p[y1 * self.width + x0] * (1.0 - fx) + p[y1 * self.width + x1] * fx;
            *o = top * (1.0 - fy) + bot * fy;
        }
        out
    }

    /// Bilinear resize (pixel-center aligned).
    pub fn resize(&self, width: usize, height: usize) -> RgbImage {
        if (width, height) == (self.width, self.height) {
            return self.clone();
        }
        let sx = self.width as f32 / width as f32;
        let sy = self.height as f32 / height as f32;
        RgbImage::from_fn(width, height, |x, y| {
            self.sample_bilinear((x as f32 + 0.5) * sx - 0.5, (y as f32 + 0.5) * sy - 0.5)
        })
    }

    /// Resize so the shorter side equals `short`, keeping the aspect ratio.
    pub fn resize_short_side(&self, short: usize) -> RgbImage {
        let (w, h) = (self.width as f64, self.height as f64);
        if w <= h {
            let nh = ((h * short as f64 / w).round() as usize).max(1);
            self.resize(short, nh)
        } else {
            let nw = ((w * short as f64 / h).round() as usize).max(1);
            self.resize(nw, short)
        }
    }

    /// Sub-image `[x0, x0 + w) x [y0, y0 + h)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> RgbImage {
        assert!(
            x0 + w <= self.width && y0 + h <= self.height,
            "crop out of bounds"
        );
        RgbImage::from_fn(w, h, |x, y| self.get(x0 + x, y0 + y))
    }

    pub fn load(path: &Path) -> Result<RgbImage> {
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = RgbImage::new(w, h);
        for (x, y, px) in img.enumerate_pixels() {
            out.set(x as usize, y as usize, px.0.map(|v| v as f32 / 255.0));
        }
        Ok(out)
    }

    /// 8-bit sRGB encoding with round-to-nearest.
    pub fn to_rgb8(&self) -> image::RgbImage {
        let mut img = image::RgbImage::new(self.width as u32, self.height as u32);
        for (x, y, px) in img.enumerate_pixels_mut() {
            let v = self.get(x as usize, y as usize);
            px.0 = v.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
        img
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
        }
        self.to_rgb8()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })
    }

    /// Values after an 8-bit round trip; what a saved PNG decodes to.
    pub fn quantized(&self) -> RgbImage {
        let mut q = self.clone();
        for v in &mut q.data {
            *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
        }
        q
    }
}
