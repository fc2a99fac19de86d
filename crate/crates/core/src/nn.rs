//! Named parameter storage, initialization and the Adam optimizer.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Grads, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Ordered map of parameter name to tensor. Ordering makes iteration, and
/// therefore archives and optimizer updates, deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<S: Scalar = f32> {
    params: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        ParamStore {
            params: BTreeMap::new(),
        }
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<S>) {
        self.params.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<S>> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<S>)> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Checks that `name` exists with exactly `shape`.
    pub fn expect_shape(&self, name: &str, shape: &[usize]) -> Result<()> {
        match self.params.get(name) {
            None => Err(Error::invalid(format!("missing parameter `{name}`"))),
            Some(t) if t.shape() != shape => Err(Error::invalid(format!(
                "parameter `{name}` has shape {:?}, expected {:?}",
                t.shape(),
                shape
            ))),
            Some(t) if !t.is_finite() => Err(Error::invalid(format!(
                "parameter `{name}` has non-finite values"
            ))),
            Some(_) => Ok(()),
        }
    }

    /// Puts every parameter on the tape, trainable or frozen.
    pub fn bind(&self, tape: &Tape<S>, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(k, v)| {
                let var = if trainable {
                    tape.param(v.clone())
                } else {
                    tape.constant(v.clone())
                };
                (k.clone(), var)
            })
            .collect();
        Bound { vars }
    }

    /// Gradients for every bound parameter (zeros where none flowed).
    pub fn gradients(&self, bound: &Bound, grads: &mut Grads<S>) -> BTreeMap<String, Tensor<S>> {
        self.params
            .iter()
            .map(|(k, v)| {
                let g = bound
                    .vars
                    .get(k)
                    .and_then(|var| grads.take(*var))
                    .unwrap_or_else(|| Tensor::zeros(v.shape()));
                (k.clone(), g)
            })
            .collect()
    }
}

/// Tape handles for a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` not bound"))
    }
}

/// He-normal initialized convolution weight `[out, in, k, k]`.
pub fn he_conv<S: Scalar, R: Rng + ?Sized>(
    rng: &mut R,
    out: usize,
    inp: usize,
    k: usize,
) -> Tensor<S> {
    let std = (2.0 / (inp * k * k) as f64).sqrt();
    normal_tensor(rng, &[out, inp, k, k], std)
}

pub fn normal_tensor<S: Scalar, R: Rng + ?Sized>(
    rng: &mut R,
    shape: &[usize],
    std: f64,
) -> Tensor<S> {
    let n: usize = shape.iter().product();
    let dist = Normal::new(0.0, std).expect("finite std");
    let data = (0..n).map(|_| S::from_f64(dist.sample(rng))).collect();
    Tensor::from_vec(shape, data).expect("shape matches")
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

pub struct Adam<S: Scalar = f32> {
    config: AdamConfig,
    step: u64,
    moments: BTreeMap<String, (Vec<S>, Vec<S>)>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<S>, grads: &BTreeMap<String, Tensor<S>>) {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let lr = S::from_f64(c.lr * bc2.sqrt() / bc1);
        let (b1, b2, eps) = (
            S::from_f64(c.beta1),
            S::from_f64(c.beta2),
            S::from_f64(c.eps),
        );
        for (name, g) in grads {
            let Some(p) = store.get_mut(name) else {
                continue;
            };
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![S::zero(); g.numel()], vec![S::zero(); g.numel()]));
            for (((w, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = b1 * *mi + (S::one() - b1) * gi;
                *vi = b2 * *vi + (S::one() - b2) * gi * gi;
                *w -= lr * *mi / (vi.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut store = ParamStore::<f64>::new();
        store.insert("x", Tensor::from_vec(&[2], vec![3.0, -2.0]).unwrap());
        let mut opt = Adam::new(AdamConfig {
            lr: 0.1,
            ..Default::default()
        });
        for _ in 0..300 {
            let tape = Tape::new();
            let b = store.bind(&tape, true);
            let zero = tape.constant(Tensor::zeros(&[2]));
            let loss = tape.sum_sq_diff(b.var("x"), zero);
            let mut g = tape.backward(loss);
            let grads = store.gradients(&b, &mut g);
            opt.step(&mut store, &grads);
        }
        assert!(store
            .get("x")
            .unwrap()
            .data()
            .iter()
            .all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn expect_shape_names_the_parameter() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        store.insert("conv.weight", he_conv(&mut rng, 4, 3, 3));
        assert!(store.expect_shape("conv.weight", &[4, 3, 3, 3]).is_ok());
        let err = store
            .expect_shape("conv.weight", &[4, 3, 1, 1])
            .unwrap_err();
        assert!(err.to_string().contains("conv.weight"));
        assert!(store
            .expect_shape("conv.bias", &[4])
            .unwrap_err()
            .to_string()
            .contains("conv.bias"));
    }
}
