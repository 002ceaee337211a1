//! Fully connected ReLU networks with hand-written backpropagation.
//!
//! Layers compute `x·W + b` with `W` stored as `(in, out)`; every layer but the
//! last is followed by a ReLU. Batches are row-major `(batch, features)`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::SimRng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    /// `(in, out)`
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Layer<T> {
    pub fn in_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Layer<T>>,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    /// Input of every layer; entry 0 is the network input.
    pub inputs: Vec<Array2<T>>,
    pub output: Array2<T>,
}

/// Parameter gradients, same shapes as the network.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads<T> {
    pub weight: Vec<Array2<T>>,
    pub bias: Vec<Array1<T>>,
}

impl<T: Scalar> MlpGrads<T> {
    pub fn zeros_like(net: &Mlp<T>) -> Self {
        Self {
            weight: net
                .layers
                .iter()
                .map(|l| Array2::zeros(l.weight.raw_dim()))
                .collect(),
            bias: net
                .layers
                .iter()
                .map(|l| Array1::zeros(l.bias.raw_dim()))
                .collect(),
        }
    }
}

impl<T: Scalar> Mlp<T> {
    /// Uniform initialisation in ±1/√fan_in.
    pub fn new(sizes: &[usize], rng: &mut SimRng) -> Self {
        assert!(
            sizes.len() >= 2,
            "an MLP needs at least input and output sizes"
        );
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let mut draw = || T::lit(rng.random_range(-bound..bound));
                Layer {
                    weight: Array2::from_shape_simple_fn((w[0], w[1]), &mut draw),
                    bias: Array1::from_shape_simple_fn(w[1], &mut draw),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(
            sizes.len() >= 2,
            "an MLP needs at least input and output sizes"
        );
        Self {
            layers: sizes
                .windows(2)
                .map(|w| Layer {
                    weight: Array2::zeros((w[0], w[1])),
                    bias: Array1::zeros(w[1]),
                })
                .collect(),
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.out_dim()));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn forward(&self, x: ArrayView2<'_, T>) -> Result<ForwardCache<T>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight);
            z += &layer.bias;
            if i < last {
                z.mapv_inplace(|v| v.max(T::zero()));
            }
            inputs.push(h);
            h = z;
        }
        Ok(ForwardCache { inputs, output: h })
    }

    /// Output only, for a single input vector.
    pub fn predict(&self, x: &[T]) -> Result<Vec<T>> {
        let view = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        Ok(self.forward(view)?.output.row(0).to_vec())
    }

    /// Gradients of a scalar loss given `d_output = ∂loss/∂output`.
    pub fn backward(&self, cache: &ForwardCache<T>, d_output: ArrayView2<'_, T>) -> MlpGrads<T> {
        let n = self.layers.len();
        let mut weight = Vec::with_capacity(n);
        let mut bias = Vec::with_capacity(n);
        let mut delta = d_output.to_owned();
        for i in (0..n).rev() {
            let input = &cache.inputs[i];
            weight.push(input.t().dot(&delta));
            bias.push(delta.sum_axis(Axis(0)));
            if i > 0 {
                let mut d_in = delta.dot(&self.layers[i].weight.t());
                // ReLU: gradient flows only where the activation was positive.
                ndarray::Zip::from(&mut d_in).and(input).for_each(|d, &a| {
                    if a <= T::zero() {
                        *d = T::zero();
                    }
                });
                delta = d_in;
            }
        }
        weight.reverse();
        bias.reverse();
        MlpGrads { weight, bias }
    }

    /// `self ← self − lr · grads`
    pub fn sgd_step(&mut self, grads: &MlpGrads<T>, lr: T) {
        for (l, (gw, gb)) in self
            .layers
            .iter_mut()
            .zip(grads.weight.iter().zip(&grads.bias))
        {
            l.weight.scaled_add(-lr, gw);
            l.bias.scaled_add(-lr, gb);
        }
    }

    /// `self ← (1 − rate)·self + rate·source`
    pub fn polyak_from(&mut self, source: &Mlp<T>, rate: T) {
        let keep = T::one() - rate;
        for (t, s) in self.layers.iter_mut().zip(&source.layers) {
            ndarray::Zip::from(&mut t.weight)
                .and(&s.weight)
                .for_each(|a, &b| *a = keep * *a + rate * b);
            ndarray::Zip::from(&mut t.bias)
                .and(&s.bias)
                .for_each(|a, &b| *a = keep * *a + rate * b);
        }
    }

    /// Visits every parameter mutably, layer by layer (weights then bias).
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn cast<U: Scalar>(&self) -> Mlp<U> {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: l.weight.mapv(|v| U::lit(v.as_f64())),
                    bias: l.bias.mapv(|v| U::lit(v.as_f64())),
                })
                .collect(),
        }
    }
}

impl<T: Scalar> MlpGrads<T> {
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.weight
            .iter()
            .zip(&self.bias)
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
    }
}

/// Adam moment estimates for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: MlpGrads<T>,
    pub v: MlpGrads<T>,
    /// Number of steps taken.
    pub t: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl<T: Scalar> AdamState<T> {
    pub fn new(net: &Mlp<T>) -> Self {
        Self {
            m: MlpGrads::zeros_like(net),
            v: MlpGrads::zeros_like(net),
            t: 0,
        }
    }

    /// One bias-corrected Adam update of `net`.
    pub fn step(&mut self, net: &mut Mlp<T>, grads: &MlpGrads<T>, lr: T) {
        self.t += 1;
        let b1 = T::lit(ADAM_BETA1);
        let b2 = T::lit(ADAM_BETA2);
        let eps = T::lit(ADAM_EPS);
        let one = T::one();
        let t = i32::try_from(self.t).unwrap_or(i32::MAX);
        let step = lr * (one - b2.powi(t)).sqrt() / (one - b1.powi(t));
        let update = |p: &mut T, g: T, m: &mut T, v: &mut T| {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            *p -= step * *m / (v.sqrt() + eps);
        };
        for (i, layer) in net.layers.iter_mut().enumerate() {
            ndarray::Zip::from(&mut layer.weight)
                .and(&grads.weight[i])
                .and(&mut self.m.weight[i])
                .and(&mut self.v.weight[i])
                .for_each(|p, &g, m, v| update(p, g, m, v));
            ndarray::Zip::from(&mut layer.bias)
                .and(&grads.bias[i])
                .and(&mut self.m.bias[i])
                .and(&mut self.v.bias[i])
                .for_each(|p, &g, m, v| update(p, g, m, v));
        }
    }
}

/// Row-wise numerically stable softmax.
pub fn softmax<T: Scalar>(logits: &Array2<T>) -> Array2<T> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: T = row.iter().copied().sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Row-wise log-softmax.
pub fn log_softmax<T: Scalar>(logits: &Array2<T>) -> Array2<T> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}
