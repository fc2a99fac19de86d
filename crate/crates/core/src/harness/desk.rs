//! Style augmentation components trained from scratch on desk data.

use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Split};
use crate::augment::{AugmentationConfig, StyleAugmenter};
use crate::embedding::{fit_with_default_jitter, EmbeddingCorpus, EmbeddingDistribution};
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::loss::LossNetwork;
use crate::predictor::predict_styles;
use crate::rng::{derive_seed, stream, tag};
use crate::textures::texture_corpus;
use crate::transformer::{train_transformer, TrainConfig, TrainOutcome, TrainingData};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeskStyleParams {
    /// Synthetic style images per texture family.
    pub textures_per_family: usize,
    pub train: TrainConfig,
}

impl Default for DeskStyleParams {
    fn default() -> Self {
        DeskStyleParams {
            textures_per_family: 40,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DeskStyle {
    pub outcome: TrainOutcome,
    pub style_images: Vec<RgbImage>,
    /// Predictor embeddings of `style_images`.
    pub corpus: EmbeddingCorpus,
    pub distribution: EmbeddingDistribution,
}

impl DeskStyle {
    pub fn augmenter(&self, config: &AugmentationConfig) -> Result<StyleAugmenter> {
        StyleAugmenter::new(
            config,
            std::sync::Arc::new(self.outcome.transformer.clone()),
            std::sync::Arc::new(self.outcome.predictor.clone()),
            std::sync::Arc::new(self.distribution.clone()),
        )
    }
}

/// Synthetic texture style images for `seed`, with source names.
pub fn desk_style_images(
    per_family: usize,
    size: usize,
    seed: u64,
) -> (Vec<RgbImage>, Vec<String>) {
    let corpus = texture_corpus(per_family, size, derive_seed(seed, tag("textures")));
    let names = corpus
        .iter()
        .enumerate()
        .map(|(i, (f, _))| format!("texture:{}:{}", f.name(), i % per_family.max(1)))
        .collect();
    (corpus.into_iter().map(|(_, img)| img).collect(), names)
}

/// Trains transformer and predictor jointly on the training split of
/// `domains` against synthetic textures, then fits the style distribution
/// to the predictor's embeddings of those textures.
pub fn train_desk_style(
    dataset: &Dataset,
    domains: &[String],
    params: &DeskStyleParams,
    seed: u64,
) -> Result<DeskStyle> {
    let mut content = Vec::new();
    for d in domains {
        content.extend(
            dataset
                .samples(d, Split::Train)?
                .iter()
                .map(|s| s.image.clone()),
        );
    }
    if content.is_empty() {
        return Err(Error::invalid("no content images in the chosen domains"));
    }
    let (style_images, sources) =
        desk_style_images(params.textures_per_family, params.train.image_size, seed);
    let data = TrainingData {
        content,
        style: style_images.clone(),
    };
    let outcome = train_transformer(
        &data,
        &params.train,
        &LossNetwork::desk(),
        &mut stream(seed, tag("transformer")),
    )?;
    let refs: Vec<&RgbImage> = style_images.iter().collect();
    let embeddings = predict_styles(&refs, &outcome.predictor)?;
    let distribution = fit_with_default_jitter(&embeddings)?;
    Ok(DeskStyle {
        outcome,
        style_images,
        corpus: EmbeddingCorpus {
            embeddings,
            sources,
        },
        distribution,
    })
}
