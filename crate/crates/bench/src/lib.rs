//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use styleaug::augment::{AugmentationConfig, StyleAugmenter};
use styleaug::embedding::fit_with_default_jitter;
use styleaug::predictor::{predict_styles, PredictorConfig, PredictorWeights};
use styleaug::rng::stream;
use styleaug::textures::texture_corpus;
use styleaug::transformer::{TransformerConfig, TransformerWeights};
use styleaug::{Result, RgbImage};

/// Smooth test image with some structure.
pub fn test_image(size: usize, seed: u64) -> RgbImage {
    let s = seed as f32;
    RgbImage::from_fn(size, size, |x, y| {
        let (u, v) = (x as f32 / size as f32, y as f32 / size as f32);
        [
            0.5 + 0.4 * (6.0 * u + s).sin(),
            0.5 + 0.4 * (5.0 * v - s).cos(),
            0.5 + 0.3 * (4.0 * (u + v)).sin(),
        ]
    })
}

/// Untrained desk-profile networks and a distribution fitted to their
/// embeddings of synthetic textures. Latency does not depend on training.
pub fn untrained_augmenter(probability: f64) -> Result<StyleAugmenter> {
    let mut rng = stream(11, 0);
    let t = TransformerWeights::init(TransformerConfig::desk(), &mut rng)?;
    let p = PredictorWeights::init(PredictorConfig::desk(), &mut rng)?;
    let textures: Vec<RgbImage> = texture_corpus(8, 32, 3)
        .into_iter()
        .map(|(_, i)| i)
        .collect();
    let refs: Vec<&RgbImage> = textures.iter().collect();
    let dist = fit_with_default_jitter(&predict_styles(&refs, &p)?)?;
    let config = AugmentationConfig {
        probability,
        ..Default::default()
    };
    StyleAugmenter::new(&config, Arc::new(t), Arc::new(p), Arc::new(dist))
}
