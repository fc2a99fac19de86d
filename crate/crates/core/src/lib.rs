//! Style randomization as data augmentation.
//!
//! A style transformer conditioned on a 100-d embedding restyles images;
//! embeddings are drawn from a Gaussian fitted to a style corpus and mixed
//! with the image's own embedding. Around that sit a small CPU autodiff
//! engine, perceptual losses, traditional augmentations and a desk-scale
//! experiment harness.

pub mod archive;
pub mod augment;
pub mod autograd;
pub mod embedding;
pub mod error;
pub mod harness;
pub mod image;
pub mod kernels;
pub mod loss;
pub mod nn;
pub mod predictor;
pub mod rng;
pub mod tensor;
pub mod textures;
pub mod transformer;

pub use augment::{AugmentationConfig, Pipeline, StyleAugmenter, TraditionalAugmentConfig};
pub use embedding::{EmbeddingCorpus, EmbeddingDistribution, StyleEmbedding};
pub use error::{Error, Result};
pub use image::RgbImage;
pub use loss::LossNetwork;
pub use predictor::{PredictorConfig, PredictorWeights};
pub use transformer::{TransformerConfig, TransformerWeights};

/// Library version.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
