//! Style predictor `P`: a small convolutional backbone, global average
//! pooling and a linear head to the embedding dimension.
//!
//! The backbone has no normalization layers, so an image's embedding does not
//! depend on what else is in its batch.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::archive::{self, ArchiveMeta};
use crate::autograd::{Tape, Var};
use crate::embedding::{EmbeddingCorpus, StyleEmbedding, DEFAULT_DIM};
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::nn::{he_conv, normal_tensor, Bound, ParamStore};
use crate::tensor::{Scalar, Tensor};

/// Smallest accepted input side, before resizing.
pub const MIN_INPUT_SIZE: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorConfig {
    pub embedding_dim: usize,
    /// Output channels of the stride-2 conv blocks.
    pub channels: Vec<usize>,
    /// Images are resized so their shorter side has this length.
    pub input_size: usize,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            embedding_dim: DEFAULT_DIM,
            channels: vec![16, 32, 64, 128],
            input_size: 256,
        }
    }
}

impl PredictorConfig {
    pub fn desk() -> Self {
        PredictorConfig {
            input_size: 32,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorWeights<S: Scalar = f32> {
    config: PredictorConfig,
    params: ParamStore<S>,
    profile: String,
}

impl PredictorWeights<f32> {
    pub fn init<R: Rng + ?Sized>(config: PredictorConfig, rng: &mut R) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut inp = 3;
        for (i, &c) in config.channels.iter().enumerate() {
            params.insert(format!("conv{}.weight", i + 1), he_conv(rng, c, inp, 3));
            params.insert(format!("conv{}.bias", i + 1), Tensor::zeros(&[c]));
            inp = c;
        }
        let std = 1.0 / (inp as f64).sqrt();
        params.insert(
            "head.weight",
            normal_tensor(rng, &[inp, config.embedding_dim], std),
        );
        params.insert("head.bias", Tensor::zeros(&[config.embedding_dim]));
        Self::from_parts(config, params, "desk")
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let meta = ArchiveMeta {
            format_version: archive::FORMAT_VERSION,
            kind: "predictor".into(),
            profile: self.profile.clone(),
            embedding_dim: Some(self.config.embedding_dim),
            config: serde_json::to_value(&self.config)?,
        };
        archive::save(dir, &self.params, &meta)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (params, meta) = archive::load(dir)?;
        if meta.kind != "predictor" {
            return Err(Error::format(
                dir,
                format!("archive holds a `{}`, not a predictor", meta.kind),
            ));
        }
        let config: PredictorConfig =
            serde_json::from_value(meta.config).map_err(|e| Error::format(dir, e.to_string()))?;
        Self::from_parts(config, params, &meta.profile).map_err(|e| archive::tensor_error(dir, e))
    }
}

impl<S: Scalar> PredictorWeights<S> {
    pub fn from_parts(
        config: PredictorConfig,
        params: ParamStore<S>,
        profile: &str,
    ) -> Result<Self> {
        if config.channels.is_empty() || config.embedding_dim == 0 {
            return Err(Error::invalid(
                "predictor needs at least one conv block and a non-empty embedding",
            ));
        }
        if config.input_size < MIN_INPUT_SIZE {
            return Err(Error::invalid(format!(
                "predictor input_size {} is below the minimum {MIN_INPUT_SIZE}",
                config.input_size
            )));
        }
        let mut inp = 3;
        for (i, &c) in config.channels.iter().enumerate() {
            params.expect_shape(&format!("conv{}.weight", i + 1), &[c, inp, 3, 3])?;
            params.expect_shape(&format!("conv{}.bias", i + 1), &[c])?;
            inp = c;
        }
        params.expect_shape("head.weight", &[inp, config.embedding_dim])?;
        params.expect_shape("head.bias", &[config.embedding_dim])?;
        Ok(PredictorWeights {
            config,
            params,
            profile: profile.to_string(),
        })
    }

    pub fn config(&self) -> &PredictorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.params
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.embedding_dim
    }

    pub fn cast<T: Scalar>(&self) -> PredictorWeights<T> {
        PredictorWeights {
            config: self.config.clone(),
            params: self.params.cast(),
            profile: self.profile.clone(),
        }
    }

    /// `[N, 3, H, W] -> [N, D]` on `tape`.
    pub fn forward(&self, tape: &Tape<S>, bound: &Bound, x: Var) -> Var {
        let mut h = x;
        for i in 1..=self.config.channels.len() {
            let w = bound.var(&format!("conv{i}.weight"));
            let b = bound.var(&format!("conv{i}.bias"));
            h = tape.relu(tape.conv2d(h, w, Some(b), 2, 1));
        }
        let pooled = tape.global_avg_pool(h);
        tape.linear(pooled, bound.var("head.weight"), bound.var("head.bias"))
    }

    /// Embeddings for a `[N, 3, H, W]` batch, without gradients.
    pub fn predict_tensor(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        if x.shape().len() != 4 || x.shape()[1] != 3 {
            return Err(Error::invalid(format!(
                "style predictor expects [N, 3, H, W] input, got {:?}",
                x.shape()
            )));
        }
        let (_, _, h, w) = x.dims4();
        if h.min(w) < MIN_INPUT_SIZE {
            return Err(Error::invalid(format!(
                "image is {w}x{h}; the style predictor needs at least {MIN_INPUT_SIZE}x{MIN_INPUT_SIZE}"
            )));
        }
        let tape = Tape::new();
        let bound = self.params.bind(&tape, false);
        let xv = tape.constant(x.clone());
        let out = self.forward(&tape, &bound, xv);
        let out = (*tape.value(out)).clone();
        if !out.is_finite() {
            return Err(Error::numeric("style predictor produced non-finite values"));
        }
        Ok(out)
    }
}

fn check_input(image: &RgbImage) -> Result<()> {
    if !image.is_valid() {
        return Err(Error::invalid("image is empty or has non-finite pixels"));
    }
    if image.width().min(image.height()) < MIN_INPUT_SIZE {
        return Err(Error::invalid(format!(
            "image is {}x{}; the style predictor needs at least {MIN_INPUT_SIZE}x{MIN_INPUT_SIZE}",
            image.width(),
            image.height()
        )));
    }
    Ok(())
}

/// Resizes `image` to the predictor's input resolution.
pub fn prepare_input(image: &RgbImage, config: &PredictorConfig) -> Result<RgbImage> {
    check_input(image)?;
    Ok(image.resize_short_side(config.input_size))
}

pub fn predict_style(image: &RgbImage, weights: &PredictorWeights) -> Result<StyleEmbedding> {
    let x = prepare_input(image, weights.config())?.to_tensor::<f32>();
    let out = weights.predict_tensor(&x)?;
    StyleEmbedding::new(out.into_data())
}

/// Embeddings for several images; images sharing a size after resizing are
/// run as one batch.
pub fn predict_styles(
    images: &[&RgbImage],
    weights: &PredictorWeights,
) -> Result<Vec<StyleEmbedding>> {
    let prepared = images
        .iter()
        .map(|img| prepare_input(img, weights.config()))
        .collect::<Result<Vec<_>>>()?;
    let mut out: Vec<Option<StyleEmbedding>> = vec![None; images.len()];
    let mut pending: Vec<usize> = (0..images.len()).collect();
    while let Some(&first) = pending.first() {
        let size = (prepared[first].width(), prepared[first].height());
        let (group, rest): (Vec<usize>, Vec<usize>) = pending
            .iter()
            .partition(|&&i| (prepared[i].width(), prepared[i].height()) == size);
        let refs: Vec<&RgbImage> = group.iter().map(|&i| &prepared[i]).collect();
        let t = weights.predict_tensor(&RgbImage::batch_to_tensor::<f32>(&refs)?)?;
        let d = weights.embedding_dim();
        for (row, &i) in t.data().chunks(d).zip(&group) {
            out[i] = Some(StyleEmbedding::new(row.to_vec())?);
        }
        pending = rest;
    }
    Ok(out
        .into_iter()
        .map(|e| e.expect("every image embedded"))
        .collect())
}

/// Image files directly inside `dir`, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_image = path.extension().and_then(|e| e.to_str()).is_some_and(|e| {
            matches!(
                e.to_ascii_lowercase().as_str(),
                "png" | "jpg" | "jpeg" | "bmp"
            )
        });
        if path.is_file() && is_image {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Embeds every image in `dir`. Unreadable images are skipped with a
/// warning; it is an error if none can be embedded.
pub fn embed_directory(dir: &Path, weights: &PredictorWeights) -> Result<EmbeddingCorpus> {
    let mut embeddings = Vec::new();
    let mut sources = Vec::new();
    for path in list_images(dir)? {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        match RgbImage::load(&path).and_then(|img| predict_style(&img, weights)) {
            Ok(z) => {
                embeddings.push(z);
                sources.push(name);
            }
            Err(e) => log::warn!("skipping {}: {e}", path.display()),
        }
    }
    if embeddings.is_empty() {
        return Err(Error::invalid(format!(
            "no embeddable images in {}",
            dir.display()
        )));
    }
    Ok(EmbeddingCorpus {
        embeddings,
        sources,
    })
}

/// Embeds `dir` and writes the corpus file plus its header.
pub fn embed_corpus(dir: &Path, weights: &PredictorWeights, out: &Path) -> Result<EmbeddingCorpus> {
    let corpus = embed_directory(dir, weights)?;
    corpus.save(out)?;
    Ok(corpus)
}
