#![allow(dead_code)]

use std::sync::Arc;

use rand::Rng;
use styleaug::augment::StyleAugmenter;
use styleaug::embedding::{fit_with_default_jitter, StyleEmbedding};
use styleaug::rng::stream;
use styleaug::{
    AugmentationConfig, PredictorConfig, PredictorWeights, RgbImage, TransformerConfig,
    TransformerWeights,
};

pub fn random_image(w: usize, h: usize, rng: &mut impl Rng) -> RgbImage {
    RgbImage::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()])
}

pub fn small_transformer(seed: u64) -> TransformerWeights {
    let config = TransformerConfig {
        base_channels: 4,
        residual_blocks: 1,
        ..TransformerConfig::default()
    };
    TransformerWeights::init(config, &mut stream(seed, 0)).unwrap()
}

/// Untrained networks and a distribution fitted to random embeddings.
pub fn untrained_augmenter(probability: f64, alpha: f64) -> StyleAugmenter {
    let t = small_transformer(1);
    let p = PredictorWeights::init(PredictorConfig::desk(), &mut stream(2, 0)).unwrap();
    let mut rng = stream(3, 0);
    let corpus: Vec<StyleEmbedding> = (0..20)
        .map(|_| {
            StyleEmbedding::new(
                (0..t.embedding_dim())
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect(),
            )
            .unwrap()
        })
        .collect();
    let dist = fit_with_default_jitter(&corpus).unwrap();
    let config = AugmentationConfig {
        probability,
        alpha,
        ..AugmentationConfig::default()
    };
    StyleAugmenter::new(&config, Arc::new(t), Arc::new(p), Arc::new(dist)).unwrap()
}
