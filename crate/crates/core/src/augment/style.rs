//! Style augmentation: with probability `p`, restyle an image with an
//! embedding interpolated between its own `P(c)` and a random draw.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::Rng;

use super::config::{AlphaPolicy, AugmentationConfig};
use crate::embedding::{
    interpolate_embedding, sample_style_embedding, EmbeddingDistribution, StyleEmbedding,
};
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::predictor::{predict_styles, PredictorWeights};
use crate::transformer::{stylize_batch, TransformerWeights};

/// Everything needed to style-augment, loaded once.
#[derive(Debug)]
pub struct StyleAugmenter {
    probability: f64,
    alpha: AlphaPolicy,
    transformer: Arc<TransformerWeights>,
    predictor: Arc<PredictorWeights>,
    distribution: Arc<EmbeddingDistribution>,
    cache: Option<Mutex<HashMap<u64, StyleEmbedding>>>,
}

/// Random choices for one image, drawn before any network runs.
#[derive(Debug, Clone, PartialEq)]
pub struct StylePlan {
    pub z_rand: StyleEmbedding,
    pub alpha: f64,
}

impl StyleAugmenter {
    pub fn new(
        config: &AugmentationConfig,
        transformer: Arc<TransformerWeights>,
        predictor: Arc<PredictorWeights>,
        distribution: Arc<EmbeddingDistribution>,
    ) -> Result<Self> {
        config.validate()?;
        let d = transformer.embedding_dim();
        if predictor.embedding_dim() != d || distribution.dim() != d {
            return Err(Error::config(
                None,
                format!(
                    "embedding dimensions disagree: transformer {d}, predictor {}, distribution {}",
                    predictor.embedding_dim(),
                    distribution.dim()
                ),
            ));
        }
        Ok(StyleAugmenter {
            probability: config.probability,
            alpha: config.alpha_policy(),
            transformer,
            predictor,
            distribution,
            cache: config
                .cache_content_embeddings
                .then(|| Mutex::new(HashMap::new())),
        })
    }

    /// Loads the weights and distribution named in `config`. Missing paths
    /// are configuration errors.
    pub fn from_config(config: &AugmentationConfig) -> Result<Self> {
        let need = |p: &Option<std::path::PathBuf>, what: &str| {
            p.clone().ok_or_else(|| {
                Error::config(None, format!("style augmentation needs `style.{what}`"))
            })
        };
        let t = need(&config.transformer, "transformer")?;
        let p = need(&config.predictor, "predictor")?;
        let d = need(&config.distribution, "distribution")?;
        Self::new(
            config,
            Arc::new(TransformerWeights::load(&t)?),
            Arc::new(PredictorWeights::load(&p)?),
            Arc::new(EmbeddingDistribution::load(&d)?),
        )
    }

    pub fn probability(&self) -> f64 {
        self.probability
    }

    pub fn alpha_policy(&self) -> AlphaPolicy {
        self.alpha
    }

    pub fn transformer(&self) -> &TransformerWeights {
        &self.transformer
    }

    pub fn predictor(&self) -> &PredictorWeights {
        &self.predictor
    }

    pub fn distribution(&self) -> &EmbeddingDistribution {
        &self.distribution
    }

    /// Same networks, different probability and alpha policy.
    pub fn with_policy(&self, probability: f64, alpha: AlphaPolicy) -> Result<Self> {
        if !(0.0..=1.0).contains(&probability) {
            return Err(Error::invalid(format!(
                "probability must lie in [0, 1], got {probability}"
            )));
        }
        if let AlphaPolicy::Fixed(a) = alpha {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::invalid(format!("alpha must lie in [0, 1], got {a}")));
            }
        }
        Ok(StyleAugmenter {
            probability,
            alpha,
            transformer: Arc::clone(&self.transformer),
            predictor: Arc::clone(&self.predictor),
            distribution: Arc::clone(&self.distribution),
            cache: self.cache.as_ref().map(|_| Mutex::new(HashMap::new())),
        })
    }

    /// Draws the augmentation decision for one image. `None` leaves the
    /// image untouched.
    pub fn plan<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<StylePlan> {
        if rng.random::<f64>() >= self.probability {
            return None;
        }
        let z_rand = sample_style_embedding(&self.distribution, rng);
        let alpha = match self.alpha {
            AlphaPolicy::Fixed(a) => a,
            AlphaPolicy::Uniform => rng.random_range(0.0..=1.0),
        };
        Some(StylePlan { z_rand, alpha })
    }

    fn content_embeddings(
        &self,
        images: &[&RgbImage],
        keys: &[Option<u64>],
    ) -> Result<Vec<StyleEmbedding>> {
        let mut out: Vec<Option<StyleEmbedding>> = vec![None; images.len()];
        if let Some(cache) = &self.cache {
            let cache = cache.lock().expect("cache lock");
            for (slot, key) in out.iter_mut().zip(keys) {
                if let Some(k) = key {
                    *slot = cache.get(k).cloned();
                }
            }
        }
        let missing: Vec<usize> = (0..images.len()).filter(|&i| out[i].is_none()).collect();
        if !missing.is_empty() {
            let refs: Vec<&RgbImage> = missing.iter().map(|&i| images[i]).collect();
            let computed = predict_styles(&refs, &self.predictor)?;
            let mut cache = self.cache.as_ref().map(|c| c.lock().expect("cache lock"));
            for (&i, z) in missing.iter().zip(computed) {
                if let (Some(cache), Some(k)) = (cache.as_mut(), keys[i]) {
                    cache.insert(k, z.clone());
                }
                out[i] = Some(z);
            }
        }
        Ok(out.into_iter().map(|z| z.expect("filled")).collect())
    }

    /// Applies pre-drawn plans. Images without a plan are returned
    /// unchanged; the rest are stylized together.
    pub fn execute(
        &self,
        images: &[&RgbImage],
        plans: &[Option<StylePlan>],
        keys: &[Option<u64>],
    ) -> Result<Vec<RgbImage>> {
        assert_eq!(images.len(), plans.len());
        assert_eq!(images.len(), keys.len());
        let chosen: Vec<usize> = (0..images.len()).filter(|&i| plans[i].is_some()).collect();
        let mut out: Vec<RgbImage> = images.iter().map(|&i| i.clone()).collect();
        if chosen.is_empty() {
            return Ok(out);
        }
        // P(c) only matters when alpha < 1.
        let needs_pc: Vec<usize> = chosen
            .iter()
            .copied()
            .filter(|&i| plans[i].as_ref().is_some_and(|p| p.alpha < 1.0))
            .collect();
        let pcs = self.content_embeddings(
            &needs_pc.iter().map(|&i| images[i]).collect::<Vec<_>>(),
            &needs_pc.iter().map(|&i| keys[i]).collect::<Vec<_>>(),
        )?;
        let mut zs = Vec::with_capacity(chosen.len());
        for &i in &chosen {
            let plan = plans[i].as_ref().expect("chosen");
            let z = match needs_pc.iter().position(|&j| j == i) {
                Some(k) => interpolate_embedding(&plan.z_rand, &pcs[k], plan.alpha)?,
                None => plan.z_rand.clone(),
            };
            zs.push(z);
        }
        // Stylize same-sized images together.
        let mut pending: Vec<usize> = (0..chosen.len()).collect();
        while let Some(&first) = pending.first() {
            let size = (
                images[chosen[first]].width(),
                images[chosen[first]].height(),
            );
            let (group, rest): (Vec<usize>, Vec<usize>) = pending
                .iter()
                .partition(|&&k| (images[chosen[k]].width(), images[chosen[k]].height()) == size);
            let imgs: Vec<&RgbImage> = group.iter().map(|&k| images[chosen[k]]).collect();
            let group_z: Vec<StyleEmbedding> = group.iter().map(|&k| zs[k].clone()).collect();
            for (&k, styled) in group
                .iter()
                .zip(stylize_batch(&imgs, &group_z, &self.transformer)?)
            {
                out[chosen[k]] = styled;
            }
            pending = rest;
        }
        Ok(out)
    }

    /// Style-augments one image.
    pub fn augment<R: Rng + ?Sized>(&self, image: &RgbImage, rng: &mut R) -> Result<RgbImage> {
        self.augment_keyed(image, None, rng)
    }

    /// As [`StyleAugmenter::augment`]; `key` identifies the dataset item for
    /// the content-embedding cache.
    pub fn augment_keyed<R: Rng + ?Sized>(
        &self,
        image: &RgbImage,
        key: Option<u64>,
        rng: &mut R,
    ) -> Result<RgbImage> {
        let plan = self.plan(rng);
        if plan.is_none() {
            return Ok(image.clone());
        }
        Ok(self.execute(&[image], &[plan], &[key])?.remove(0))
    }
}

/// Free-function form of [`StyleAugmenter::augment`].
pub fn style_augment<R: Rng + ?Sized>(
    image: &RgbImage,
    augmenter: &StyleAugmenter,
    rng: &mut R,
) -> Result<RgbImage> {
    augmenter.augment(image, rng)
}
