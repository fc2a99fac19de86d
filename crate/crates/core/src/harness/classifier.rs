//! Small fixed CNN classifier: four conv/ReLU/max-pool blocks, global
//! average pooling and a linear layer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::nn::{he_conv, normal_tensor, Bound, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub channels: Vec<usize>,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            channels: vec![32, 64, 96, 128],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    config: ClassifierConfig,
    num_classes: usize,
    params: ParamStore,
}

impl Classifier {
    pub fn init<R: Rng + ?Sized>(
        config: ClassifierConfig,
        num_classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if config.channels.is_empty() || num_classes < 2 {
            return Err(Error::invalid(
                "classifier needs at least one block and two classes",
            ));
        }
        let mut params = ParamStore::new();
        let mut inp = 3;
        for (i, &c) in config.channels.iter().enumerate() {
            params.insert(format!("conv{}.weight", i + 1), he_conv(rng, c, inp, 3));
            params.insert(format!("conv{}.bias", i + 1), Tensor::zeros(&[c]));
            inp = c;
        }
        params.insert(
            "fc.weight",
            normal_tensor(rng, &[inp, num_classes], (1.0 / inp as f64).sqrt()),
        );
        params.insert("fc.bias", Tensor::zeros(&[num_classes]));
        Ok(Classifier {
            config,
            num_classes,
            params,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_elements()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Smallest input side: each block halves the resolution.
    pub fn min_input(&self) -> usize {
        1 << self.config.channels.len()
    }

    /// `[N, 3, H, W] -> [N, K]` logits.
    pub fn forward(&self, tape: &Tape, bound: &Bound, x: Var) -> Var {
        let mut h = x;
        for i in 1..=self.config.channels.len() {
            let w = bound.var(&format!("conv{i}.weight"));
            let b = bound.var(&format!("conv{i}.bias"));
            h = tape.max_pool2(tape.relu(tape.conv2d(h, w, Some(b), 1, 1)));
        }
        let pooled = tape.global_avg_pool(h);
        tape.linear(pooled, bound.var("fc.weight"), bound.var("fc.bias"))
    }

    /// Predicted class of every image, evaluated in chunks.
    pub fn predict(&self, images: &[&RgbImage]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(64) {
            let x = RgbImage::batch_to_tensor::<f32>(chunk)?;
            let tape = Tape::new();
            let bound = self.params.bind(&tape, false);
            let xv = tape.constant(x);
            let logits = tape.value(self.forward(&tape, &bound, xv));
            let k = self.num_classes;
            for row in logits.data().chunks(k) {
                let best = row
                    .iter()
                    .enumerate()
                    .fold(
                        (0, f32::NEG_INFINITY),
                        |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
                    );
                out.push(best.0);
            }
        }
        Ok(out)
    }

    pub fn accuracy(&self, images: &[&RgbImage], labels: &[usize]) -> Result<f64> {
        if images.is_empty() {
            return Err(Error::invalid("accuracy of an empty set"));
        }
        let pred = self.predict(images)?;
        let correct = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
        Ok(correct as f64 / images.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn default_has_about_two_hundred_thousand_parameters() {
        let c = Classifier::init(ClassifierConfig::default(), 3, &mut stream(0, 0)).unwrap();
        let n = c.num_parameters();
        assert!((150_000..250_000).contains(&n), "{n}");
    }

    #[test]
    fn predictions_are_valid_classes() {
        let c = Classifier::init(ClassifierConfig::default(), 3, &mut stream(0, 0)).unwrap();
        let imgs: Vec<RgbImage> = (0..5)
            .map(|k| RgbImage::filled(16, 16, [k as f32 / 5.0, 0.5, 0.5]))
            .collect();
        let refs: Vec<&RgbImage> = imgs.iter().collect();
        assert!(c.predict(&refs).unwrap().iter().all(|&p| p < 3));
    }
}
