//! Style transfer network `T(c, z)`.
//!
//! Layout (all convolutions 3x3 with reflection padding, `b` = base channels):
//!
//! | layer        | op                          | channels | norm |
//! |--------------|-----------------------------|----------|------|
//! | `enc1`       | conv, stride 1              | b        | IN   |
//! | `enc2`       | conv, stride 2              | 2b       | IN   |
//! | `enc3`       | conv, stride 2              | 4b       | IN   |
//! | `res{i}.a/b` | residual block, i = 1..=R   | 4b       | CIN  |
//! | `dec1`       | nearest 2x upsample + conv  | 2b       | CIN  |
//! | `dec2`       | nearest 2x upsample + conv  | b        | CIN  |
//! | `out`        | conv, then sigmoid          | 3        | CIN  |
//!
//! IN layers carry learned `{layer}.in.gamma` / `{layer}.in.beta` of shape
//! `[1, C]`. Conditioned (CIN) layers map the embedding to per-channel scale
//! and shift through `{layer}.cin.gamma_w` `[D, C]`, `{layer}.cin.gamma_b`
//! `[C]`, and the matching `beta_*` tensors.

mod train;

pub use train::{train_transformer, TrainConfig, TrainOutcome, TrainingData};

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::archive::{self, ArchiveMeta};
use crate::autograd::{Tape, Var};
use crate::embedding::{StyleEmbedding, DEFAULT_DIM};
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::nn::{he_conv, normal_tensor, Bound, ParamStore};
use crate::tensor::{Scalar, Tensor};

/// Total spatial downsampling of the encoder.
pub const DOWNSAMPLE: usize = 4;

/// Inputs are padded up to at least this size before stylization.
pub const MIN_SIDE: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformerConfig {
    pub embedding_dim: usize,
    pub base_channels: usize,
    pub residual_blocks: usize,
    pub eps: f64,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        TransformerConfig {
            embedding_dim: DEFAULT_DIM,
            base_channels: 32,
            residual_blocks: 5,
            eps: 1e-5,
        }
    }
}

impl TransformerConfig {
    /// Half-width network used for desk-scale training.
    pub fn desk() -> Self {
        TransformerConfig {
            base_channels: 16,
            ..Default::default()
        }
    }

    /// Unconditioned encoder layers and their output channels.
    pub fn encoder_layers(&self) -> Vec<(String, usize)> {
        let b = self.base_channels;
        vec![
            ("enc1".into(), b),
            ("enc2".into(), 2 * b),
            ("enc3".into(), 4 * b),
        ]
    }

    /// Conditioned layers and their output channels, in forward order.
    pub fn conditioned_layers(&self) -> Vec<(String, usize)> {
        let b = self.base_channels;
        let mut out = Vec::new();
        for i in 1..=self.residual_blocks {
            out.push((format!("res{i}.a"), 4 * b));
            out.push((format!("res{i}.b"), 4 * b));
        }
        out.push(("dec1".into(), 2 * b));
        out.push(("dec2".into(), b));
        out.push(("out".into(), 3));
        out
    }

    /// `(layer, in_channels, out_channels)` for every convolution.
    fn convs(&self) -> Vec<(String, usize, usize)> {
        let b = self.base_channels;
        let mut out = vec![
            ("enc1".to_string(), 3, b),
            ("enc2".to_string(), b, 2 * b),
            ("enc3".to_string(), 2 * b, 4 * b),
        ];
        for i in 1..=self.residual_blocks {
            out.push((format!("res{i}.a"), 4 * b, 4 * b));
            out.push((format!("res{i}.b"), 4 * b, 4 * b));
        }
        out.push(("dec1".into(), 4 * b, 2 * b));
        out.push(("dec2".into(), 2 * b, b));
        out.push(("out".into(), b, 3));
        out
    }

    fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 || self.base_channels == 0 {
            return Err(Error::invalid(
                "transformer needs embedding_dim > 0 and base_channels > 0",
            ));
        }
        if !(self.eps >= 0.0) || !self.eps.is_finite() {
            return Err(Error::invalid(format!(
                "transformer eps must be finite and >= 0, got {}",
                self.eps
            )));
        }
        Ok(())
    }
}

/// Per-channel scale and shift for one conditioned layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CinParams {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerWeights<S: Scalar = f32> {
    config: TransformerConfig,
    params: ParamStore<S>,
    profile: String,
}

/// Standard deviation of the initial embedding projections.
const PROJECTION_INIT_STD: f64 = 1e-2;

impl TransformerWeights<f32> {
    pub fn init<R: Rng + ?Sized>(config: TransformerConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        for (name, inp, out) in config.convs() {
            params.insert(format!("{name}.weight"), he_conv(rng, out, inp, 3));
        }
        for (name, c) in config.encoder_layers() {
            params.insert(format!("{name}.in.gamma"), Tensor::full(&[1, c], 1.0));
            params.insert(format!("{name}.in.beta"), Tensor::zeros(&[1, c]));
        }
        let d = config.embedding_dim;
        for (name, c) in config.conditioned_layers() {
            params.insert(
                format!("{name}.cin.gamma_w"),
                normal_tensor(rng, &[d, c], PROJECTION_INIT_STD),
            );
            params.insert(format!("{name}.cin.gamma_b"), Tensor::full(&[c], 1.0));
            params.insert(
                format!("{name}.cin.beta_w"),
                normal_tensor(rng, &[d, c], PROJECTION_INIT_STD),
            );
            params.insert(format!("{name}.cin.beta_b"), Tensor::zeros(&[c]));
        }
        Self::from_parts(config, params, "desk")
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let meta = ArchiveMeta {
            format_version: archive::FORMAT_VERSION,
            kind: "transformer".into(),
            profile: self.profile.clone(),
            embedding_dim: Some(self.config.embedding_dim),
            config: serde_json::to_value(&self.config)?,
        };
        archive::save(dir, &self.params, &meta)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (params, meta) = archive::load(dir)?;
        if meta.kind != "transformer" {
            return Err(Error::format(
                dir,
                format!("archive holds a `{}`, not a transformer", meta.kind),
            ));
        }
        let config: TransformerConfig =
            serde_json::from_value(meta.config).map_err(|e| Error::format(dir, e.to_string()))?;
        Self::from_parts(config, params, &meta.profile).map_err(|e| archive::tensor_error(dir, e))
    }
}

impl<S: Scalar> TransformerWeights<S> {
    pub fn from_parts(
        config: TransformerConfig,
        params: ParamStore<S>,
        profile: &str,
    ) -> Result<Self> {
        config.validate()?;
        for (name, inp, out) in config.convs() {
            params.expect_shape(&format!("{name}.weight"), &[out, inp, 3, 3])?;
        }
        for (name, c) in config.encoder_layers() {
            params.expect_shape(&format!("{name}.in.gamma"), &[1, c])?;
            params.expect_shape(&format!("{name}.in.beta"), &[1, c])?;
        }
        let d = config.embedding_dim;
        for (name, c) in config.conditioned_layers() {
            params.expect_shape(&format!("{name}.cin.gamma_w"), &[d, c])?;
            params.expect_shape(&format!("{name}.cin.gamma_b"), &[c])?;
            params.expect_shape(&format!("{name}.cin.beta_w"), &[d, c])?;
            params.expect_shape(&format!("{name}.cin.beta_b"), &[c])?;
        }
        Ok(TransformerWeights {
            config,
            params,
            profile: profile.to_string(),
        })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.params
    }

    pub fn profile(&self) -> &str {
        &self.profile
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.embedding_dim
    }

    pub fn cast<T: Scalar>(&self) -> TransformerWeights<T> {
        TransformerWeights {
            config: self.config.clone(),
            params: self.params.cast(),
            profile: self.profile.clone(),
        }
    }

    /// Records `T(x, z)` on `tape`. `x: [N, 3, H, W]` with `H, W` multiples
    /// of [`DOWNSAMPLE`]; `z: [N, D]` or `[1, D]`.
    pub fn forward(&self, tape: &Tape<S>, bound: &Bound, x: Var, z: Var) -> Var {
        let eps = self.config.eps;
        let conv = |h: Var, name: &str, stride: usize| {
            let padded = tape.reflect_pad(h, 1);
            tape.conv2d(
                padded,
                bound.var(&format!("{name}.weight")),
                None,
                stride,
                0,
            )
        };
        let norm = |h: Var, name: &str| {
            let g = bound.var(&format!("{name}.in.gamma"));
            let b = bound.var(&format!("{name}.in.beta"));
            tape.scale_shift(tape.instance_norm(h, eps), g, b)
        };
        let cin = |h: Var, name: &str| {
            let g = tape.linear(
                z,
                bound.var(&format!("{name}.cin.gamma_w")),
                bound.var(&format!("{name}.cin.gamma_b")),
            );
            let b = tape.linear(
                z,
                bound.var(&format!("{name}.cin.beta_w")),
                bound.var(&format!("{name}.cin.beta_b")),
            );
            tape.scale_shift(tape.instance_norm(h, eps), g, b)
        };

        let mut h = tape.relu(norm(conv(x, "enc1", 1), "enc1"));
        h = tape.relu(norm(conv(h, "enc2", 2), "enc2"));
        h = tape.relu(norm(conv(h, "enc3", 2), "enc3"));
        for i in 1..=self.config.residual_blocks {
            let a = format!("res{i}.a");
            let b = format!("res{i}.b");
            let r = tape.relu(cin(conv(h, &a, 1), &a));
            let r = cin(conv(r, &b, 1), &b);
            h = tape.add(h, r);
        }
        h = tape.relu(cin(conv(tape.upsample2x(h), "dec1", 1), "dec1"));
        h = tape.relu(cin(conv(tape.upsample2x(h), "dec2", 1), "dec2"));
        tape.sigmoid(cin(conv(h, "out", 1), "out"))
    }

    /// Runs the network on a batch whose sides are multiples of
    /// [`DOWNSAMPLE`], without gradients.
    pub fn forward_tensor(&self, x: &Tensor<S>, z: &Tensor<S>) -> Tensor<S> {
        let tape = Tape::new();
        let bound = self.params.bind(&tape, false);
        let xv = tape.constant(x.clone());
        let zv = tape.constant(z.clone());
        let out = self.forward(&tape, &bound, xv, zv);
        let value = (*tape.value(out)).clone();
        value
    }
}

/// `gamma = W_gamma^T z + b_gamma`, `beta = W_beta^T z + b_beta` for `layer`.
pub fn cin_params_from_embedding(
    z: &StyleEmbedding,
    layer: &str,
    weights: &TransformerWeights,
) -> Result<CinParams> {
    let is_conditioned = weights
        .config
        .conditioned_layers()
        .iter()
        .any(|(n, _)| n == layer);
    if !is_conditioned {
        return Err(Error::invalid(format!(
            "`{layer}` is not a conditioned layer"
        )));
    }
    let d = weights.embedding_dim();
    if z.dim() != d {
        return Err(Error::invalid(format!(
            "embedding has dimension {}, transformer expects {d}",
            z.dim()
        )));
    }
    let project = |which: &str| {
        let w = weights
            .params
            .get(&format!("{layer}.cin.{which}_w"))
            .expect("validated");
        let b = weights
            .params
            .get(&format!("{layer}.cin.{which}_b"))
            .expect("validated");
        let c = b.numel();
        (0..c)
            .map(|j| {
                let s: f64 = (0..d)
                    .map(|k| z.values()[k] as f64 * w.data()[k * c + j] as f64)
                    .sum();
                (s + b.data()[j] as f64) as f32
            })
            .collect::<Vec<f32>>()
    };
    Ok(CinParams {
        gamma: project("gamma"),
        beta: project("beta"),
    })
}

/// `gamma * (x - mean) / sqrt(var + eps) + beta` per channel of a `[C, H, W]`
/// map. A channel with zero variance and `eps = 0` maps to `beta`.
pub fn conditional_instance_norm(
    x: &Tensor<f32>,
    params: &CinParams,
    eps: f64,
) -> Result<Tensor<f32>> {
    if x.shape().len() != 3 {
        return Err(Error::invalid(format!(
            "expected a [C, H, W] feature map, got {:?}",
            x.shape()
        )));
    }
    let (c, hw) = (x.shape()[0], x.shape()[1] * x.shape()[2]);
    if hw == 0 {
        return Err(Error::invalid("feature map has no spatial positions"));
    }
    if params.gamma.len() != c || params.beta.len() != c {
        return Err(Error::invalid(format!(
            "CIN params have {}/{} channels for a {c}-channel map",
            params.gamma.len(),
            params.beta.len()
        )));
    }
    if !(eps >= 0.0) {
        return Err(Error::invalid(format!("eps must be >= 0, got {eps}")));
    }
    let mut out = Vec::with_capacity(x.numel());
    for (ch, plane) in x.data().chunks(hw).enumerate() {
        let mean = plane.iter().map(|&v| v as f64).sum::<f64>() / hw as f64;
        let var = plane
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / hw as f64;
        let denom = (var + eps).sqrt();
        let (g, b) = (params.gamma[ch] as f64, params.beta[ch] as f64);
        out.extend(plane.iter().map(|&v| {
            let normalized = if denom > 0.0 {
                (v as f64 - mean) / denom
            } else {
                0.0
            };
            (g * normalized + b) as f32
        }));
    }
    Tensor::from_vec(x.shape(), out)
}

fn padded_side(n: usize) -> usize {
    n.max(MIN_SIDE).div_ceil(DOWNSAMPLE) * DOWNSAMPLE
}

/// Edge-replicates `img` on the right and bottom up to `(w, h)`.
fn pad_edge(img: &RgbImage, w: usize, h: usize) -> RgbImage {
    if (w, h) == (img.width(), img.height()) {
        return img.clone();
    }
    RgbImage::from_fn(w, h, |x, y| {
        img.get(x.min(img.width() - 1), y.min(img.height() - 1))
    })
}

fn check_content(img: &RgbImage) -> Result<()> {
    if !img.is_valid() {
        return Err(Error::invalid(
            "content image is empty or has non-finite pixels",
        ));
    }
    Ok(())
}

/// `T(content, z)`: same size as `content`, values in `[0, 1]`.
pub fn stylize(
    content: &RgbImage,
    z: &StyleEmbedding,
    weights: &TransformerWeights,
) -> Result<RgbImage> {
    Ok(stylize_batch(&[content], std::slice::from_ref(z), weights)?.remove(0))
}

/// Stylizes equally sized images in one pass; `zs[i]` conditions
/// `contents[i]`.
pub fn stylize_batch(
    contents: &[&RgbImage],
    zs: &[StyleEmbedding],
    weights: &TransformerWeights,
) -> Result<Vec<RgbImage>> {
    if contents.len() != zs.len() {
        return Err(Error::invalid(format!(
            "{} images but {} embeddings",
            contents.len(),
            zs.len()
        )));
    }
    let Some(first) = contents.first() else {
        return Ok(Vec::new());
    };
    for c in contents {
        check_content(c)?;
    }
    let d = weights.embedding_dim();
    if let Some(z) = zs.iter().find(|z| z.dim() != d) {
        return Err(Error::invalid(format!(
            "embedding has dimension {}, transformer expects {d}",
            z.dim()
        )));
    }
    let (w, h) = (first.width(), first.height());
    let (pw, ph) = (padded_side(w), padded_side(h));
    let padded: Vec<RgbImage> = contents.iter().map(|c| pad_edge(c, pw, ph)).collect();
    let refs: Vec<&RgbImage> = padded.iter().collect();
    let x = RgbImage::batch_to_tensor::<f32>(&refs)?;
    let z = Tensor::from_vec(
        &[zs.len(), d],
        zs.iter().flat_map(|z| z.values().iter().copied()).collect(),
    )?;
    let y = weights.forward_tensor(&x, &z);
    if !y.is_finite() {
        return Err(Error::numeric("transformer produced non-finite pixels"));
    }
    Ok(RgbImage::from_batch_tensor(&y)?
        .into_iter()
        .map(|img| {
            let mut out = if (pw, ph) == (w, h) {
                img
            } else {
                img.crop(0, 0, w, h)
            };
            out.clamp01();
            out
        })
        .collect())
}
