//! Perceptual losses computed on a frozen convolutional loss network.
//!
//! The desk loss network is eight 3x3 convolutions with ReLU, with 2x2
//! average pooling after layers 2, 4 and 6. Layers are numbered from 1.
//! Feature shapes for a 64x64 input:
//!
//! | layer | channels | spatial |
//! |-------|----------|---------|
//! | 1, 2  | 16       | 64x64   |
//! | 3, 4  | 32       | 32x32   |
//! | 5, 6  | 64       | 16x16   |
//! | 7, 8  | 64       | 8x8     |
//!
//! Content loss sums `||f_i(x) - f_i(c)||_F^2 / C_i` over the content layers.
//! Style loss sums `||G(f_i(x)) - G(f_i(s))||_F^2 / C_i` over the style
//! layers, where the Gram matrix `G` is normalized by `C_i * H_i * W_i`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::archive::{self, ArchiveMeta};
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::kernels;
use crate::nn::{he_conv, Bound, ParamStore};
use crate::tensor::{Scalar, Tensor};

/// Seed of the published desk loss network weights.
pub const DESK_LOSS_NET_SEED: u64 = 0x5EED_1055;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossNetworkConfig {
    /// Output channels of each conv layer.
    pub channels: Vec<usize>,
    /// 1-based layers followed by 2x2 average pooling.
    pub pool_after: Vec<usize>,
    pub content_layers: Vec<usize>,
    pub style_layers: Vec<usize>,
}

impl Default for LossNetworkConfig {
    fn default() -> Self {
        LossNetworkConfig {
            channels: vec![16, 16, 32, 32, 64, 64, 64, 64],
            pool_after: vec![2, 4, 6],
            content_layers: vec![6],
            style_layers: vec![1, 3, 5, 7],
        }
    }
}

/// Frozen feature extractor `f` with its content and style layer sets.
#[derive(Debug, Clone, PartialEq)]
pub struct LossNetwork<S: Scalar = f32> {
    config: LossNetworkConfig,
    params: ParamStore<S>,
}

/// Per-layer feature tensors `[C, H, W]`, keyed by 1-based layer index.
pub type FeatureMaps<S = f32> = BTreeMap<usize, Tensor<S>>;

impl LossNetwork<f32> {
    /// The desk network: He-initialized from a fixed seed, zero biases.
    pub fn desk() -> Self {
        Self::desk_with(LossNetworkConfig::default())
    }

    pub fn desk_with(config: LossNetworkConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(DESK_LOSS_NET_SEED);
        let mut params = ParamStore::new();
        let mut inp = 3;
        for (i, &c) in config.channels.iter().enumerate() {
            params.insert(
                format!("conv{}.weight", i + 1),
                he_conv(&mut rng, c, inp, 3),
            );
            params.insert(format!("conv{}.bias", i + 1), Tensor::zeros(&[c]));
            inp = c;
        }
        LossNetwork { config, params }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let meta = ArchiveMeta {
            format_version: archive::FORMAT_VERSION,
            kind: "loss_network".into(),
            profile: "desk".into(),
            embedding_dim: None,
            config: serde_json::to_value(&self.config)?,
        };
        archive::save(dir, &self.params, &meta)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (params, meta) = archive::load(dir)?;
        if meta.kind != "loss_network" {
            return Err(Error::format(
                dir,
                format!("archive holds a `{}`, not a loss_network", meta.kind),
            ));
        }
        let config: LossNetworkConfig =
            serde_json::from_value(meta.config).map_err(|e| Error::format(dir, e.to_string()))?;
        Self::from_parts(config, params).map_err(|e| archive::tensor_error(dir, e))
    }
}

impl<S: Scalar> LossNetwork<S> {
    pub fn from_parts(config: LossNetworkConfig, params: ParamStore<S>) -> Result<Self> {
        let n = config.channels.len();
        if n == 0 {
            return Err(Error::invalid("loss network needs at least one layer"));
        }
        for (name, set) in [
            ("content", &config.content_layers),
            ("style", &config.style_layers),
        ] {
            if set.is_empty() {
                return Err(Error::invalid(format!("{name} layer set is empty")));
            }
            if let Some(&bad) = set.iter().find(|&&l| l == 0 || l > n) {
                return Err(Error::invalid(format!(
                    "{name} layer {bad} outside 1..={n}"
                )));
            }
        }
        let mut inp = 3;
        for (i, &c) in config.channels.iter().enumerate() {
            params.expect_shape(&format!("conv{}.weight", i + 1), &[c, inp, 3, 3])?;
            params.expect_shape(&format!("conv{}.bias", i + 1), &[c])?;
            inp = c;
        }
        Ok(LossNetwork { config, params })
    }

    pub fn config(&self) -> &LossNetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<S> {
        &self.params
    }

    pub fn num_layers(&self) -> usize {
        self.config.channels.len()
    }

    /// Unit count `n_i` used to normalize a layer's loss term.
    pub fn units(&self, layer: usize) -> usize {
        self.config.channels[layer - 1]
    }

    pub fn cast<T: Scalar>(&self) -> LossNetwork<T> {
        LossNetwork {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    pub fn with_layers(mut self, content: Vec<usize>, style: Vec<usize>) -> Result<Self> {
        self.config.content_layers = content;
        self.config.style_layers = style;
        Self::from_parts(self.config, self.params)
    }

    fn check_layers(&self, layers: &[usize]) -> Result<()> {
        match layers.iter().find(|&&l| l == 0 || l > self.num_layers()) {
            Some(bad) => Err(Error::invalid(format!(
                "unknown loss-network layer {bad}; available 1..={}",
                self.num_layers()
            ))),
            None => Ok(()),
        }
    }

    /// Records the forward pass on `tape` and returns the activations of
    /// every layer up to `max_layer` (index 0 is layer 1).
    pub fn forward(&self, tape: &Tape<S>, bound: &Bound, x: Var, max_layer: usize) -> Vec<Var> {
        let mut h = x;
        let mut out = Vec::with_capacity(max_layer);
        for layer in 1..=max_layer {
            if layer > 1 && self.config.pool_after.contains(&(layer - 1)) {
                h = tape.avg_pool2(h);
            }
            let w = bound.var(&format!("conv{layer}.weight"));
            let b = bound.var(&format!("conv{layer}.bias"));
            h = tape.conv2d(h, w, Some(b), 1, 1);
            h = tape.relu(h);
            out.push(h);
        }
        out
    }

    fn max_layer(&self) -> usize {
        let c = self
            .config
            .content_layers
            .iter()
            .max()
            .copied()
            .unwrap_or(1);
        let s = self.config.style_layers.iter().max().copied().unwrap_or(1);
        c.max(s)
    }

    /// Content and style targets for a batch, computed without gradients.
    pub fn targets(&self, content: &Tensor<S>, style: &Tensor<S>) -> Targets<S> {
        let tape = Tape::new();
        let bound = self.params.bind(&tape, false);
        let cx = tape.constant(content.clone());
        let feats = self.forward(&tape, &bound, cx, self.max_layer());
        let content = self
            .config
            .content_layers
            .iter()
            .map(|&l| (l, (*tape.value(feats[l - 1])).clone()))
            .collect();
        let sx = tape.constant(style.clone());
        let feats = self.forward(&tape, &bound, sx, self.max_layer());
        let style = self
            .config
            .style_layers
            .iter()
            .map(|&l| (l, kernels::gram(&tape.value(feats[l - 1]))))
            .collect();
        Targets { content, style }
    }

    /// Records the batch-mean joint objective of `x` against `targets`.
    /// Returns `(content, style, total)` scalar nodes.
    pub fn objective_on_tape(
        &self,
        tape: &Tape<S>,
        bound: &Bound,
        x: Var,
        targets: &Targets<S>,
        lambda: f64,
    ) -> (Var, Var, Var) {
        let n = tape.value(x).shape()[0] as f64;
        let feats = self.forward(tape, bound, x, self.max_layer());
        let mut content: Option<Var> = None;
        for (&l, target) in &targets.content {
            let t = tape.constant(broadcast_batch(target, tape.value(x).shape()[0]));
            let term = tape.sum_sq_diff(feats[l - 1], t);
            let term = tape.scale(term, 1.0 / (self.units(l) as f64 * n));
            content = Some(content.map_or(term, |c| tape.add(c, term)));
        }
        let mut style: Option<Var> = None;
        for (&l, target) in &targets.style {
            let g = tape.gram(feats[l - 1]);
            let t = tape.constant(broadcast_batch(target, tape.value(g).shape()[0]));
            let term = tape.sum_sq_diff(g, t);
            let term = tape.scale(term, 1.0 / (self.units(l) as f64 * n));
            style = Some(style.map_or(term, |s| tape.add(s, term)));
        }
        let content = content.expect("content layers non-empty");
        let style = style.expect("style layers non-empty");
        let weighted = tape.scale(style, lambda);
        let total = tape.add(content, weighted);
        (content, style, total)
    }

    /// Joint objective and its gradient with respect to the pixels of `x`.
    pub fn objective_and_pixel_grad(
        &self,
        x: &Tensor<S>,
        targets: &Targets<S>,
        lambda: f64,
    ) -> (ObjectiveTerms, Tensor<S>) {
        let tape = Tape::new();
        let bound = self.params.bind(&tape, false);
        let xv = tape.param(x.clone());
        let (c, s, t) = self.objective_on_tape(&tape, &bound, xv, targets, lambda);
        let terms = ObjectiveTerms {
            content: tape.value(c).item().as_f64(),
            style: tape.value(s).item().as_f64(),
            total: tape.value(t).item().as_f64(),
        };
        let grads = tape.backward(t);
        (
            terms,
            grads
                .get(xv)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(x.shape())),
        )
    }

    /// Objective value only.
    pub fn objective(&self, x: &Tensor<S>, targets: &Targets<S>, lambda: f64) -> ObjectiveTerms {
        let tape = Tape::new();
        let bound = self.params.bind(&tape, false);
        let xv = tape.constant(x.clone());
        let (c, s, t) = self.objective_on_tape(&tape, &bound, xv, targets, lambda);
        ObjectiveTerms {
            content: tape.value(c).item().as_f64(),
            style: tape.value(s).item().as_f64(),
            total: tape.value(t).item().as_f64(),
        }
    }
}

/// Content features and style Gram matrices of the reference images.
/// A batch of one target is broadcast over any batch of `x`.
#[derive(Debug, Clone)]
pub struct Targets<S: Scalar = f32> {
    pub content: BTreeMap<usize, Tensor<S>>,
    pub style: BTreeMap<usize, Tensor<S>>,
}

fn broadcast_batch<S: Scalar>(t: &Tensor<S>, n: usize) -> Tensor<S> {
    if t.shape()[0] == n {
        return t.clone();
    }
    assert_eq!(t.shape()[0], 1, "target batch {} vs {n}", t.shape()[0]);
    Tensor::stack(&vec![t.clone(); n]).expect("same shapes")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    pub content: f64,
    pub style: f64,
    pub total: f64,
}

fn check_image(img: &RgbImage, what: &str) -> Result<()> {
    if !img.is_valid() {
        return Err(Error::invalid(format!(
            "{what} image is empty or has non-finite pixels"
        )));
    }
    Ok(())
}

/// Activations of the requested layers for one image.
pub fn extract_features(
    image: &RgbImage,
    layers: &[usize],
    net: &LossNetwork,
) -> Result<FeatureMaps> {
    check_image(image, "input")?;
    net.check_layers(layers)?;
    let Some(&max) = layers.iter().max() else {
        return Ok(FeatureMaps::new());
    };
    let tape = Tape::new();
    let bound = net.params.bind(&tape, false);
    let x = tape.constant(image.to_tensor());
    let feats = net.forward(&tape, &bound, x, max);
    layers
        .iter()
        .map(|&l| {
            let t = (*tape.value(feats[l - 1])).clone();
            let (_, c, h, w) = t.dims4();
            Ok((l, t.reshape(&[c, h, w])?))
        })
        .collect()
}

/// Normalized Gram matrix of one `[C, H, W]` feature tensor.
pub fn gram_matrix<S: Scalar>(feat: &Tensor<S>) -> Result<Tensor<S>> {
    let shape = feat.shape();
    if shape.len() != 3 || shape[1] * shape[2] == 0 {
        return Err(Error::invalid(format!(
            "gram_matrix needs a [C,H,W] tensor with H*W >= 1, got {shape:?}"
        )));
    }
    let c = shape[0];
    let g = kernels::gram(&feat.clone().reshape(&[1, c, shape[1], shape[2]])?);
    g.reshape(&[c, c])
}

pub fn content_loss(x: &RgbImage, c: &RgbImage, net: &LossNetwork) -> Result<f64> {
    check_image(x, "restyled")?;
    check_image(c, "content")?;
    if (x.width(), x.height()) != (c.width(), c.height()) {
        return Err(Error::invalid(format!(
            "content loss needs equal sizes, got {}x{} and {}x{}",
            x.width(),
            x.height(),
            c.width(),
            c.height()
        )));
    }
    let fx = extract_features(x, &net.config.content_layers, net)?;
    let fc = extract_features(c, &net.config.content_layers, net)?;
    Ok(fx
        .iter()
        .map(|(l, a)| sq_frobenius(a, &fc[l]) / net.units(*l) as f64)
        .sum())
}

pub fn style_loss(x: &RgbImage, s: &RgbImage, net: &LossNetwork) -> Result<f64> {
    check_image(x, "restyled")?;
    check_image(s, "style")?;
    let fx = extract_features(x, &net.config.style_layers, net)?;
    let fs = extract_features(s, &net.config.style_layers, net)?;
    let mut total = 0.0;
    for (l, a) in &fx {
        total += sq_frobenius(&gram_matrix(a)?, &gram_matrix(&fs[l])?) / net.units(*l) as f64;
    }
    Ok(total)
}

pub fn joint_objective(
    x: &RgbImage,
    c: &RgbImage,
    s: &RgbImage,
    lambda: f64,
    net: &LossNetwork,
) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("lambda must be >= 0, got {lambda}")));
    }
    Ok(content_loss(x, c, net)? + lambda * style_loss(x, s, net)?)
}

fn sq_frobenius<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectOptions {
    pub lambda: f64,
    pub steps: usize,
    pub step_size: f64,
    /// Step-size multiplier after an accepted step (1.0 disables growth).
    pub growth: f64,
    /// Give up on a step once backtracking shrinks the step below this.
    pub min_step: f64,
}

impl Default for DirectOptions {
    fn default() -> Self {
        DirectOptions {
            lambda: 1e4,
            steps: 200,
            step_size: 1e-2,
            growth: 1.5,
            min_step: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub content_loss: f64,
    pub style_loss: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct DirectResult {
    pub image: RgbImage,
    /// Entry 0 is the initial iterate; one entry per step after that.
    pub log: Vec<StepLog>,
}

/// Projected gradient descent on the joint objective in pixel space,
/// starting from the content image. A step that would increase the
/// objective is retried at half the step size.
pub fn direct_optimize(
    c: &RgbImage,
    s: &RgbImage,
    opts: &DirectOptions,
    net: &LossNetwork,
) -> Result<DirectResult> {
    check_image(c, "content")?;
    check_image(s, "style")?;
    if !(opts.lambda >= 0.0) || !(opts.step_size > 0.0) {
        return Err(Error::invalid(
            "direct_optimize needs lambda >= 0 and step_size > 0",
        ));
    }
    let ct: Tensor<f32> = c.to_tensor();
    let targets = net.targets(&ct, &s.to_tensor());
    let mut x = ct;
    let (mut terms, mut grad) = net.objective_and_pixel_grad(&x, &targets, opts.lambda);
    let entry = |step: usize, t: ObjectiveTerms| StepLog {
        step,
        content_loss: t.content,
        style_loss: t.style,
        total: t.total,
    };
    if !terms.total.is_finite() {
        return Err(Error::numeric("objective is non-finite at step 0"));
    }
    let mut log = vec![entry(0, terms)];
    let mut eta = opts.step_size;
    for step in 1..=opts.steps {
        loop {
            let e = eta as f32;
            let candidate = Tensor::from_vec(
                x.shape(),
                x.data()
                    .iter()
                    .zip(grad.data())
                    .map(|(&v, &g)| (v - e * g).clamp(0.0, 1.0))
                    .collect(),
            )?;
            let t = net.objective(&candidate, &targets, opts.lambda);
            if !t.total.is_finite() {
                return Err(Error::numeric(format!(
                    "objective is non-finite at step {step}"
                )));
            }
            if t.total <= terms.total {
                x = candidate;
                let (t2, g2) = net.objective_and_pixel_grad(&x, &targets, opts.lambda);
                terms = t2;
                grad = g2;
                eta *= opts.growth;
                break;
            }
            eta *= 0.5;
            if eta < opts.min_step {
                break;
            }
        }
        log.push(entry(step, terms));
    }
    let mut image = RgbImage::from_batch_tensor(&x)?.remove(0);
    image.clamp01();
    Ok(DirectResult { image, log })
}

/// Objective log as CSV: `step,content_loss,style_loss,total`.
pub fn write_objective_csv(path: &Path, log: &[StepLog]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "step,content_loss,style_loss,total").expect("vec write");
    for e in log {
        writeln!(
            out,
            "{},{},{},{}",
            e.step, e.content_loss, e.style_loss, e.total
        )
        .expect("vec write");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
