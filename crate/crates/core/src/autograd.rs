//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its output value and enough saved
//! state to run its adjoint. [`Tape::backward`] walks the tape in reverse.
//! Nodes that do not depend on any trainable leaf are never visited.

use std::cell::RefCell;
use std::rc::Rc;

use crate::kernels::{self, ConvGeom};
use crate::tensor::{Scalar, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<S> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    ReflectPad {
        x: Var,
        pad: usize,
    },
    InstanceNorm {
        x: Var,
        inv_std: Vec<S>,
    },
    ScaleShift {
        x: Var,
        gamma: Var,
        beta: Var,
    },
    Relu {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        k: S,
    },
    Upsample2x {
        x: Var,
    },
    MaxPool2 {
        x: Var,
        arg: Vec<u32>,
    },
    AvgPool2 {
        x: Var,
    },
    GlobalAvgPool {
        x: Var,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Gram {
        x: Var,
    },
    SumSqDiff {
        a: Var,
        b: Var,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Tensor<S>,
    },
}

struct Node<S> {
    value: Rc<Tensor<S>>,
    op: Op<S>,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Grads<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Grads<S> {
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<S>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[derive(Default)]
pub struct Tape<S: Scalar = f32> {
    nodes: RefCell<Vec<Node<S>>>,
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<S>, op: Op<S>, parents: &[Var]) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let needs_grad = parents.iter().any(|p| nodes[p.0].needs_grad);
        nodes.push(Node {
            value: Rc::new(value),
            op,
            needs_grad,
        });
        Var(nodes.len() - 1)
    }

    fn leaf(&self, value: Tensor<S>, needs_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op: Op::Leaf,
            needs_grad,
        });
        Var(nodes.len() - 1)
    }

    /// A trainable leaf; its gradient is reported by [`Tape::backward`].
    pub fn param(&self, value: Tensor<S>) -> Var {
        self.leaf(value, true)
    }

    /// A constant leaf; gradients never flow into it.
    pub fn constant(&self, value: Tensor<S>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> Rc<Tensor<S>> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].needs_grad
    }

    pub fn conv2d(&self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let (xv, wv) = (self.value(x), self.value(w));
        let geom = ConvGeom {
            kernel: wv.shape()[2],
            stride,
            pad,
        };
        let bv = b.map(|b| self.value(b));
        let out = kernels::conv2d(&xv, &wv, bv.as_deref(), geom);
        let mut parents = vec![x, w];
        parents.extend(b);
        self.push(out, Op::Conv2d { x, w, b, geom }, &parents)
    }

    pub fn reflect_pad(&self, x: Var, pad: usize) -> Var {
        if pad == 0 {
            return x;
        }
        let out = kernels::reflect_pad(&self.value(x), pad);
        self.push(out, Op::ReflectPad { x, pad }, &[x])
    }

    pub fn instance_norm(&self, x: Var, eps: f64) -> Var {
        let (out, inv_std) = kernels::instance_norm(&self.value(x), S::from_f64(eps));
        self.push(out, Op::InstanceNorm { x, inv_std }, &[x])
    }

    /// Per-channel affine map; `gamma`/`beta` are `[1, C]` or `[N, C]`.
    pub fn scale_shift(&self, x: Var, gamma: Var, beta: Var) -> Var {
        let out = kernels::scale_shift(&self.value(x), &self.value(gamma), &self.value(beta));
        self.push(out, Op::ScaleShift { x, gamma, beta }, &[x, gamma, beta])
    }

    pub fn relu(&self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(S::zero()));
        self.push(out, Op::Relu { x }, &[x])
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        let out = self.value(x).map(|v| S::one() / (S::one() + (-v).exp()));
        self.push(out, Op::Sigmoid { x }, &[x])
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        let mut out = (*self.value(a)).clone();
        out.add_assign(&self.value(b));
        self.push(out, Op::Add { a, b }, &[a, b])
    }

    pub fn scale(&self, x: Var, k: f64) -> Var {
        let k = S::from_f64(k);
        let out = self.value(x).map(|v| v * k);
        self.push(out, Op::Scale { x, k }, &[x])
    }

    pub fn upsample2x(&self, x: Var) -> Var {
        let out = kernels::upsample_nearest2x(&self.value(x));
        self.push(out, Op::Upsample2x { x }, &[x])
    }

    pub fn max_pool2(&self, x: Var) -> Var {
        let (out, arg) = kernels::max_pool2(&self.value(x));
        self.push(out, Op::MaxPool2 { x, arg }, &[x])
    }

    pub fn avg_pool2(&self, x: Var) -> Var {
        let out = kernels::avg_pool2(&self.value(x));
        self.push(out, Op::AvgPool2 { x }, &[x])
    }

    /// `[N, C, H, W] -> [N, C]`.
    pub fn global_avg_pool(&self, x: Var) -> Var {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4();
        let hw = S::from_f64((h * w) as f64);
        let data = xv
            .data()
            .chunks(h * w)
            .map(|p| p.iter().copied().sum::<S>() / hw)
            .collect();
        let out = Tensor::from_vec(&[n, c], data).expect("pool shape");
        self.push(out, Op::GlobalAvgPool { x }, &[x])
    }

    pub fn linear(&self, x: Var, w: Var, b: Var) -> Var {
        let out = kernels::linear(&self.value(x), &self.value(w), &self.value(b));
        self.push(out, Op::Linear { x, w, b }, &[x, w, b])
    }

    pub fn gram(&self, x: Var) -> Var {
        let out = kernels::gram(&self.value(x));
        self.push(out, Op::Gram { x }, &[x])
    }

    /// Scalar `sum((a - b)^2)`.
    pub fn sum_sq_diff(&self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "sum_sq_diff shape mismatch");
        let s: f64 = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| {
                let d = (x - y).as_f64();
                d * d
            })
            .sum();
        self.push(
            Tensor::scalar(S::from_f64(s)),
            Op::SumSqDiff { a, b },
            &[a, b],
        )
    }

    /// Mean softmax cross-entropy of `[N, K]` logits against class indices.
    pub fn cross_entropy(&self, logits: Var, labels: &[usize]) -> Var {
        let lv = self.value(logits);
        let (n, k) = lv.dims2();
        assert_eq!(
            n,
            labels.len(),
            "cross_entropy: {n} rows, {} labels",
            labels.len()
        );
        let mut probs = Tensor::zeros(&[n, k]);
        let mut loss = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = &lv.data()[r * k..(r + 1) * k];
            let m = row.iter().fold(S::neg_infinity(), |a, &b| a.max(b));
            let exps: Vec<S> = row.iter().map(|&v| (v - m).exp()).collect();
            let z: S = exps.iter().copied().sum();
            for (p, e) in probs.data_mut()[r * k..(r + 1) * k].iter_mut().zip(&exps) {
                *p = *e / z;
            }
            loss -= (probs.data()[r * k + label].as_f64()).max(1e-30).ln();
        }
        let out = Tensor::scalar(S::from_f64(loss / n as f64));
        self.push(
            out,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        )
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Grads<S> {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[output.0].value.numel(), 1, "backward from non-scalar");
        let mut grads: Vec<Option<Tensor<S>>> = (0..nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::full(nodes[output.0].value.shape(), S::one()));

        fn acc<S: Scalar>(
            grads: &mut [Option<Tensor<S>>],
            nodes: &[Node<S>],
            v: Var,
            g: Tensor<S>,
        ) {
            if !nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=output.0).rev() {
            let node = &nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            let val = |v: Var| Rc::clone(&nodes[v.0].value);
            let wants = |v: Var| nodes[v.0].needs_grad;
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(dy);
                    continue;
                }
                Op::Conv2d { x, w, b, geom } => {
                    let (dx, dw, db) =
                        kernels::conv2d_backward(&val(*x), &val(*w), &dy, *geom, wants(*x));
                    if let Some(dx) = dx {
                        acc(&mut grads, &nodes, *x, dx);
                    }
                    acc(&mut grads, &nodes, *w, dw);
                    if let Some(b) = b {
                        acc(&mut grads, &nodes, *b, db);
                    }
                }
                Op::ReflectPad { x, pad } => {
                    let dx = kernels::reflect_pad_backward(&dy, *pad, val(*x).shape());
                    acc(&mut grads, &nodes, *x, dx);
                }
                Op::InstanceNorm { x, inv_std } => {
                    let dx = kernels::instance_norm_backward(&node.value, inv_std, &dy);
                    acc(&mut grads, &nodes, *x, dx);
                }
                Op::ScaleShift { x, gamma, beta } => {
                    let (dx, dg, db) = kernels::scale_shift_backward(&val(*x), &val(*gamma), &dy);
                    acc(&mut grads, &nodes, *x, dx);
                    acc(&mut grads, &nodes, *gamma, dg);
                    acc(&mut grads, &nodes, *beta, db);
                }
                Op::Relu { x } => {
                    let mut dx = dy;
                    for (d, &y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                        if y <= S::zero() {
                            *d = S::zero();
                        }
                    }
                    acc(&mut grads, &nodes, *x, dx);
                }
                Op::Sigmoid { x } => {
                    let mut dx = dy;
                    for (d, &y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                        *d *= y * (S::one() - y);
                    }
                    acc(&mut grads, &nodes, *x, dx);
                }
                Op::Add { a, b } => {
                    acc(&mut grads, &nodes, *b, dy.clone());
                    acc(&mut grads, &nodes, *a, dy);
                }
                Op::Scale { x, k } => {
                    let k = *k;
                    acc(&mut grads, &nodes, *x, dy.map(|g| g * k));
                }
                Op::Upsample2x { x } => {
                    acc(
                        &mut grads,
                        &nodes,
                        *x,
                        kernels::upsample_nearest2x_backward(&dy),
                    );
                }
                Op::MaxPool2 { x, arg } => {
                    let dx = kernels::max_pool2_backward(&dy, arg, val(*x).shape());
                    acc(&mut grads, &nodes, *x, dx);
                }
                Op::AvgPool2 { x } => {
                    let dx = kernels::avg_pool2_backward(&dy, val(*x).shape());
                    acc(&mut grads, &nodes, *x, dx);
                }
                Op::GlobalAvgPool { x } => {
                    let xv = val(*x);
                    let (_, _, h, w) = xv.dims4();
                    let hw = S::from_f64((h * w) as f64);
                    let mut dx = Tensor::zeros(xv.shape());
                    for (plane, &g) in dx.data_mut().chunks_mut(h * w).zip(dy.data()) {
                        plane.fill(g / hw);
                    }
                    acc(&mut grads, &nodes, *x, dx);
                }
                Op::Linear { x, w, b } => {
                    let (dx, dw, db) = kernels::linear_backward(&val(*x), &val(*w), &dy);
                    acc(&mut grads, &nodes, *x, dx);
                    acc(&mut grads, &nodes, *w, dw);
                    acc(&mut grads, &nodes, *b, db);
                }
                Op::Gram { x } => {
                    acc(
                        &mut grads,
                        &nodes,
                        *x,
                        kernels::gram_backward(&val(*x), &dy),
                    );
                }
                Op::SumSqDiff { a, b } => {
                    let g2 = dy.item() + dy.item();
                    let (av, bv) = (val(*a), val(*b));
                    let diff: Vec<S> = av
                        .data()
                        .iter()
                        .zip(bv.data())
                        .map(|(&x, &y)| (x - y) * g2)
                        .collect();
                    let da = Tensor::from_vec(av.shape(), diff).expect("same shape");
                    if wants(*b) {
                        acc(&mut grads, &nodes, *b, da.map(|v| -v));
                    }
                    acc(&mut grads, &nodes, *a, da);
                }
                Op::CrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let (n, k) = probs.dims2();
                    let scale = dy.item() / S::from_f64(n as f64);
                    let mut dl = probs.clone();
                    for (r, &label) in labels.iter().enumerate() {
                        dl.data_mut()[r * k + label] -= S::one();
                    }
                    acc(&mut grads, &nodes, *logits, dl.map(|v| v * scale));
                }
            }
        }
        Grads { grads }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central finite differences of `f` around `x0` for a handful of indices.
    fn check_grad(build: impl Fn(&Tape<f64>, Var) -> Var, x0: Tensor<f64>, probes: &[usize]) {
        let tape = Tape::new();
        let x = tape.param(x0.clone());
        let y = build(&tape, x);
        let grads = tape.backward(y);
        let analytic = grads.get(x).unwrap().clone();
        let h = 1e-5;
        for &i in probes {
            let eval = |delta: f64| {
                let mut xp = x0.clone();
                xp.data_mut()[i] += delta;
                let t = Tape::new();
                let xv = t.param(xp);
                let out = build(&t, xv);
                t.value(out).item()
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            assert!(
                rel < 1e-5 || (a - numeric).abs() < 1e-9,
                "index {i}: analytic {a} vs numeric {numeric}"
            );
        }
    }

    fn input(shape: &[usize]) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::from_vec(
            shape,
            (0..n).map(|i| ((i as f64) * 0.731).sin() + 0.1).collect(),
        )
        .unwrap()
    }

    #[test]
    fn conv_pad_norm_chain_gradient() {
        let w = input(&[3, 2, 3, 3]).map(|v| v * 0.5);
        let target = input(&[1, 3, 5, 5]).map(|v| v.cos());
        check_grad(
            |t, x| {
                let p = t.reflect_pad(x, 1);
                let wv = t.constant(w.clone());
                let c = t.conv2d(p, wv, None, 1, 0);
                let n = t.instance_norm(c, 1e-5);
                let s = t.sigmoid(n);
                let tv = t.constant(target.clone());
                t.sum_sq_diff(s, tv)
            },
            input(&[1, 2, 5, 5]),
            &[0, 7, 13, 24, 49],
        );
    }

    #[test]
    fn pooling_upsample_gram_gradient() {
        check_grad(
            |t, x| {
                let u = t.upsample2x(x);
                let m = t.avg_pool2(u);
                let g = t.gram(m);
                let z = t.constant(Tensor::zeros(&[2, 3, 3]));
                t.sum_sq_diff(g, z)
            },
            input(&[2, 3, 2, 2]),
            &[0, 5, 11, 23],
        );
    }

    #[test]
    fn affine_and_linear_gradients_flow_to_conditioning() {
        let feat = input(&[2, 3, 2, 2]);
        let w = input(&[4, 3]).map(|v| v * 0.3);
        let b = input(&[3]);
        check_grad(
            |t, z| {
                let wv = t.constant(w.clone());
                let bv = t.constant(b.clone());
                let gamma = t.linear(z, wv, bv);
                let beta = t.scale(gamma, 0.5);
                let f = t.constant(feat.clone());
                let y = t.scale_shift(f, gamma, beta);
                let y = t.relu(y);
                let p = t.global_avg_pool(y);
                t.cross_entropy(p, &[0, 2])
            },
            input(&[2, 4]),
            &[0, 1, 2, 3, 4, 5, 6, 7],
        );
    }

    #[test]
    fn constants_receive_no_gradient() {
        let t = Tape::<f64>::new();
        let a = t.constant(Tensor::scalar(2.0));
        let b = t.param(Tensor::scalar(3.0));
        let s = t.sum_sq_diff(a, b);
        let g = t.backward(s);
        assert!(g.get(a).is_none());
        assert_eq!(g.get(b).unwrap().item(), 2.0);
    }
}
