//! Joint training of the transformer and the style predictor on the
//! perceptual objective: `x = T(c, P(s))`, minimizing
//! `content(x, c) + lambda * style(x, s)`.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{TransformerConfig, TransformerWeights};
use crate::autograd::Tape;
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::loss::{LossNetwork, StepLog};
use crate::nn::{Adam, AdamConfig};
use crate::predictor::{PredictorConfig, PredictorWeights};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// Content crops are resized to this square size.
    pub image_size: usize,
    /// Fraction of batch items whose style image is their own content image.
    pub self_style_fraction: f64,
    pub adam: AdamConfig,
    /// Running-average window for the convergence check.
    pub window: usize,
    /// Warn unless the last window's mean loss is below this fraction of the
    /// first window's.
    pub target_ratio: f64,
    pub transformer: TransformerConfig,
    pub predictor: PredictorConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 1e3,
            steps: 2000,
            batch_size: 4,
            image_size: 32,
            self_style_fraction: 0.25,
            adam: AdamConfig::default(),
            window: 100,
            target_ratio: 0.5,
            transformer: TransformerConfig::desk(),
            predictor: PredictorConfig::desk(),
        }
    }
}

/// Content and style images; any sizes, they are resized per the config.
#[derive(Debug, Clone, Default)]
pub struct TrainingData {
    pub content: Vec<RgbImage>,
    pub style: Vec<RgbImage>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub transformer: TransformerWeights,
    pub predictor: PredictorWeights,
    pub log: Vec<StepLog>,
    /// Set when the loss did not fall by the configured factor.
    pub warning: Option<String>,
}

fn square(img: &RgbImage, size: usize) -> RgbImage {
    let r = img.resize_short_side(size);
    let (x0, y0) = ((r.width() - size) / 2, (r.height() - size) / 2);
    r.crop(x0, y0, size, size)
}

fn validate(data: &TrainingData, config: &TrainConfig) -> Result<()> {
    if data.content.is_empty() {
        return Err(Error::invalid("content corpus is empty"));
    }
    if data.style.is_empty() {
        return Err(Error::invalid("style corpus is empty"));
    }
    if !(config.lambda >= 0.0) || !config.lambda.is_finite() {
        return Err(Error::invalid(format!(
            "lambda must be finite and >= 0, got {}",
            config.lambda
        )));
    }
    if config.steps == 0 || config.batch_size == 0 {
        return Err(Error::invalid("steps and batch_size must be >= 1"));
    }
    if config.image_size < super::MIN_SIDE || config.image_size % super::DOWNSAMPLE != 0 {
        return Err(Error::invalid(format!(
            "image_size must be a multiple of {} and at least {}, got {}",
            super::DOWNSAMPLE,
            super::MIN_SIDE,
            config.image_size
        )));
    }
    if !(0.0..=1.0).contains(&config.self_style_fraction) {
        return Err(Error::invalid("self_style_fraction must lie in [0, 1]"));
    }
    if config.transformer.embedding_dim != config.predictor.embedding_dim {
        return Err(Error::invalid(format!(
            "transformer expects {}-d embeddings but the predictor emits {}",
            config.transformer.embedding_dim, config.predictor.embedding_dim
        )));
    }
    if let Some(bad) = data
        .content
        .iter()
        .chain(&data.style)
        .find(|i| !i.is_valid())
    {
        return Err(Error::invalid(format!(
            "corpus holds an invalid {}x{} image",
            bad.width(),
            bad.height()
        )));
    }
    Ok(())
}

/// Initializes both networks from `rng`, then trains them jointly.
pub fn train_transformer<R: Rng + ?Sized>(
    data: &TrainingData,
    config: &TrainConfig,
    net: &LossNetwork,
    rng: &mut R,
) -> Result<TrainOutcome> {
    validate(data, config)?;
    let transformer = TransformerWeights::init(config.transformer.clone(), rng)?;
    let predictor = PredictorWeights::init(config.predictor.clone(), rng)?;
    train_from(transformer, predictor, data, config, net, rng)
}

/// Trains from the given starting weights.
pub fn train_from<R: Rng + ?Sized>(
    mut transformer: TransformerWeights,
    mut predictor: PredictorWeights,
    data: &TrainingData,
    config: &TrainConfig,
    net: &LossNetwork,
    rng: &mut R,
) -> Result<TrainOutcome> {
    validate(data, config)?;
    if transformer.embedding_dim() != predictor.embedding_dim() {
        return Err(Error::invalid(
            "transformer and predictor embedding dimensions differ",
        ));
    }
    let size = config.image_size;
    let p_size = predictor.config().input_size;
    let content: Vec<RgbImage> = data.content.iter().map(|c| square(c, size)).collect();
    // Style images as seen by the loss network and by the predictor.
    let style_loss_view: Vec<RgbImage> = data.style.iter().map(|s| square(s, size)).collect();
    let style_pred_view: Vec<RgbImage> = data.style.iter().map(|s| square(s, p_size)).collect();
    let content_pred_view: Vec<RgbImage> = content.iter().map(|c| square(c, p_size)).collect();

    let mut opt_t = Adam::new(config.adam);
    let mut opt_p = Adam::new(config.adam);
    let content_ids: Vec<usize> = (0..content.len()).collect();
    let style_ids: Vec<usize> = (0..data.style.len()).collect();
    let mut log = Vec::with_capacity(config.steps);

    for step in 1..=config.steps {
        let mut batch_c = Vec::with_capacity(config.batch_size);
        let mut batch_s = Vec::with_capacity(config.batch_size);
        let mut batch_p = Vec::with_capacity(config.batch_size);
        let mut ids = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            let ci = *content_ids.choose(rng).expect("non-empty");
            let own = rng.random::<f64>() < config.self_style_fraction;
            let si = *style_ids.choose(rng).expect("non-empty");
            batch_c.push(&content[ci]);
            if own {
                batch_s.push(&content[ci]);
                batch_p.push(&content_pred_view[ci]);
                ids.push(format!("c{ci}/c{ci}"));
            } else {
                batch_s.push(&style_loss_view[si]);
                batch_p.push(&style_pred_view[si]);
                ids.push(format!("c{ci}/s{si}"));
            }
        }
        let c_t: Tensor = RgbImage::batch_to_tensor(&batch_c)?;
        let s_t: Tensor = RgbImage::batch_to_tensor(&batch_s)?;
        let p_t: Tensor = RgbImage::batch_to_tensor(&batch_p)?;
        let targets = net.targets(&c_t, &s_t);

        let tape = Tape::new();
        let bound_t = transformer.params().bind(&tape, true);
        let bound_p = predictor.params().bind(&tape, true);
        let net_bound = net.params().bind(&tape, false);
        let z = predictor.forward(&tape, &bound_p, tape.constant(p_t));
        let x = transformer.forward(&tape, &bound_t, tape.constant(c_t), z);
        let (lc, ls, lt) = net.objective_on_tape(&tape, &net_bound, x, &targets, config.lambda);
        let entry = StepLog {
            step,
            content_loss: tape.value(lc).item() as f64,
            style_loss: tape.value(ls).item() as f64,
            total: tape.value(lt).item() as f64,
        };
        if !entry.total.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite training loss at step {step}; batch (content/style) = [{}]",
                ids.join(", ")
            )));
        }
        log.push(entry);
        let mut grads = tape.backward(lt);
        let g_t = transformer.params().gradients(&bound_t, &mut grads);
        let g_p = predictor.params().gradients(&bound_p, &mut grads);
        drop(tape);
        opt_t.step(transformer.params_mut(), &g_t);
        opt_p.step(predictor.params_mut(), &g_p);
        if step % 100 == 0 {
            log::info!(
                "step {step}: content {:.4e} style {:.4e} total {:.4e}",
                entry.content_loss,
                entry.style_loss,
                entry.total
            );
        }
    }
    let warning = convergence_warning(&log, config.window, config.target_ratio);
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    Ok(TrainOutcome {
        transformer,
        predictor,
        log,
        warning,
    })
}

/// Compares the mean total loss of the first and last `window` steps.
pub fn convergence_warning(log: &[StepLog], window: usize, target_ratio: f64) -> Option<String> {
    let w = window.min(log.len() / 2).max(1);
    if log.len() < 2 {
        return Some(format!(
            "only {} training step(s); convergence not assessed",
            log.len()
        ));
    }
    let mean = |s: &[StepLog]| s.iter().map(|e| e.total).sum::<f64>() / s.len() as f64;
    let first = mean(&log[..w]);
    let last = mean(&log[log.len() - w..]);
    (last >= target_ratio * first).then(|| {
        format!("training loss fell only from {first:.4e} to {last:.4e} (mean over {w} steps); expected below {target_ratio} x initial")
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            steps: 1,
            batch_size: 2,
            image_size: 16,
            transformer: TransformerConfig {
                embedding_dim: 4,
                base_channels: 4,
                residual_blocks: 1,
                eps: 1e-5,
            },
            predictor: PredictorConfig {
                embedding_dim: 4,
                channels: vec![4, 4, 4, 4],
                input_size: 16,
            },
            ..TrainConfig::default()
        }
    }

    fn data() -> TrainingData {
        TrainingData {
            content: (0..3)
                .map(|k| {
                    RgbImage::from_fn(20, 16, |x, y| [((x + y + k) % 5) as f32 / 5.0, 0.5, 0.1])
                })
                .collect(),
            style: (0..2)
                .map(|k| RgbImage::from_fn(16, 16, |x, _| [0.2, (x % (k + 2)) as f32 / 3.0, 0.9]))
                .collect(),
        }
    }

    #[test]
    fn one_step_changes_weights_and_logs_once() {
        let cfg = tiny_config();
        let net = LossNetwork::desk();
        let mut rng = stream(2, 0);
        let t0 = TransformerWeights::init(cfg.transformer.clone(), &mut rng).unwrap();
        let p0 = PredictorWeights::init(cfg.predictor.clone(), &mut rng).unwrap();
        let out = train_from(t0.clone(), p0.clone(), &data(), &cfg, &net, &mut rng).unwrap();
        assert_eq!(out.log.len(), 1);
        assert_ne!(out.transformer, t0);
        assert_ne!(out.predictor, p0);
    }

    #[test]
    fn empty_corpus_is_invalid() {
        let net = LossNetwork::desk();
        let mut d = data();
        d.style.clear();
        let err = train_transformer(&d, &tiny_config(), &net, &mut stream(0, 0)).unwrap_err();
        assert!(err.is_validation());
    }

    #[test]
    fn convergence_check() {
        let mk = |v: &[f64]| {
            v.iter()
                .enumerate()
                .map(|(i, &t)| StepLog {
                    step: i + 1,
                    content_loss: t,
                    style_loss: 0.0,
                    total: t,
                })
                .collect::<Vec<_>>()
        };
        assert!(convergence_warning(&mk(&[4.0, 4.0, 1.0, 1.0]), 2, 0.5).is_none());
        assert!(convergence_warning(&mk(&[4.0, 4.0, 3.0, 3.0]), 2, 0.5).is_some());
    }
}
