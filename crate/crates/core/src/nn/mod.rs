//! Small feed-forward classifier with hand-written backpropagation.
//!
//! Everything runs in `f64` on a single thread so that a fixed seed
//! reproduces parameters bit for bit. Batched forward/backward passes keep
//! per-layer caches in a [`ForwardTrace`]; a single sample is a batch of one.

mod checkpoint;
mod optim;
mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use optim::{sgd_step, OptimizerState, SgdConfig};
pub use tensor::{argmax, log_sum_exp, softmax, Tensor};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use tensor::{matmul_into, transpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

/// Fully connected layer; `weight` is `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl Dense {
    pub fn new(weight: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        if weight.shape().len() != 2 {
            return Err(Error::Dimension(format!(
                "weight must be 2-D, got {:?}",
                weight.shape()
            )));
        }
        if bias.shape() != [weight.shape()[0]] {
            return Err(Error::Dimension(format!(
                "bias shape {:?} does not match weight rows {}",
                bias.shape(),
                weight.shape()[0]
            )));
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    /// Uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init<R: Rng>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..=bound)).collect() };
        let weight = draw(in_dim * out_dim);
        let bias = draw(out_dim);
        Self {
            weight: Tensor::new(vec![out_dim, in_dim], weight).expect("sized above"),
            bias: Tensor::from_vec(bias),
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }
}

/// Layer stack of a classifier. The last layer is the FC head producing logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    layers: Vec<Dense>,
}

impl ModelParams {
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Dimension("model needs at least one layer".into()));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Dimension(format!(
                    "layer {} outputs {} but layer {} expects {}",
                    k,
                    pair[0].out_dim(),
                    k + 1,
                    pair[1].in_dim()
                )));
            }
        }
        if layers.last().map(|l| l.activation) != Some(Activation::Identity) {
            return Err(Error::Dimension(
                "final layer must emit raw logits (identity activation)".into(),
            ));
        }
        Ok(Self { layers })
    }

    /// ReLU MLP `input -> hidden[0] -> ... -> classes`.
    pub fn mlp<R: Rng>(input_dim: usize, hidden: &[usize], classes: usize, rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = input_dim;
        for &h in hidden {
            layers.push(Dense::init(prev, h, Activation::Relu, rng));
            prev = h;
        }
        layers.push(Dense::init(prev, classes, Activation::Identity, rng));
        Self { layers }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn n_classes(&self) -> usize {
        self.head().out_dim()
    }

    /// Width of the penultimate feature fed into the head.
    pub fn feature_dim(&self) -> usize {
        self.head().in_dim()
    }

    pub fn head(&self) -> &Dense {
        self.layers.last().expect("non-empty by construction")
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weight.is_finite() && l.bias.is_finite())
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(l.bias.data());
        }
        out
    }

    /// Mutable access to the `idx`-th parameter in [`flatten`](Self::flatten) order.
    pub fn param_mut(&mut self, mut idx: usize) -> &mut f64 {
        for l in &mut self.layers {
            let w = l.weight.len();
            if idx < w {
                return &mut l.weight.data_mut()[idx];
            }
            idx -= w;
            let b = l.bias.len();
            if idx < b {
                return &mut l.bias.data_mut()[idx];
            }
            idx -= b;
        }
        panic!("parameter index out of range");
    }
}

/// Cached intermediates of a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    batch: usize,
    /// `inputs[k]` is the `batch × in_k` input of layer `k`.
    inputs: Vec<Vec<f64>>,
    /// `pre[k]` is the `batch × out_k` affine output of layer `k`.
    pre: Vec<Vec<f64>>,
    dims: Vec<(usize, usize)>,
}

impl ForwardTrace {
    pub fn batch_size(&self) -> usize {
        self.batch
    }

    pub fn n_classes(&self) -> usize {
        self.dims.last().unwrap().1
    }

    pub fn logits(&self, b: usize) -> &[f64] {
        let c = self.n_classes();
        &self.pre.last().unwrap()[b * c..(b + 1) * c]
    }

    /// Penultimate feature `z` of sample `b` (input of the head).
    pub fn feature(&self, b: usize) -> &[f64] {
        let h = self.dims.last().unwrap().0;
        &self.inputs.last().unwrap()[b * h..(b + 1) * h]
    }

    pub fn pre_activation(&self, layer: usize, b: usize) -> &[f64] {
        let n = self.dims[layer].1;
        &self.pre[layer][b * n..(b + 1) * n]
    }

    pub fn probs(&self, b: usize) -> Vec<f64> {
        softmax(self.logits(b))
    }

    pub fn predictions(&self) -> Vec<usize> {
        (0..self.batch).map(|b| argmax(self.logits(b))).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Gradients with the same layout as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub layers: Vec<LayerGrad>,
}

impl ParamGrads {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            layers: params
                .layers()
                .iter()
                .map(|l| LayerGrad {
                    weight: Tensor::zeros(l.weight.shape().to_vec()),
                    bias: Tensor::zeros(l.bias.shape().to_vec()),
                })
                .collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(l.bias.data());
        }
        out
    }

    pub fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            l.weight.data_mut().iter_mut().for_each(|v| *v *= k);
            l.bias.data_mut().iter_mut().for_each(|v| *v *= k);
        }
    }
}

/// Forward pass for a single input tensor (any shape with the right element count).
pub fn forward(params: &ModelParams, input: &Tensor) -> Result<ForwardTrace> {
    forward_batch(params, &[input.data()])
}

/// Forward pass over a batch of flattened inputs.
pub fn forward_batch(params: &ModelParams, rows: &[&[f64]]) -> Result<ForwardTrace> {
    let in_dim = params.input_dim();
    let batch = rows.len();
    let mut x = Vec::with_capacity(batch * in_dim);
    for (b, r) in rows.iter().enumerate() {
        if r.len() != in_dim {
            return Err(Error::Dimension(format!(
                "input {} has {} features, model expects {}",
                b,
                r.len(),
                in_dim
            )));
        }
        x.extend_from_slice(r);
    }
    let layers = params.layers();
    let mut inputs = Vec::with_capacity(layers.len());
    let mut pre = Vec::with_capacity(layers.len());
    let mut dims = Vec::with_capacity(layers.len());
    for layer in layers {
        let (n_in, n_out) = (layer.in_dim(), layer.out_dim());
        let wt = transpose(layer.weight.data(), n_out, n_in);
        let mut z = Vec::with_capacity(batch * n_out);
        for _ in 0..batch {
            z.extend_from_slice(layer.bias.data());
        }
        matmul_into(&x, batch, n_in, &wt, n_out, &mut z);
        let next = match layer.activation {
            Activation::Relu => z.iter().map(|&v| v.max(0.0)).collect(),
            Activation::Identity => z.clone(),
        };
        inputs.push(x);
        pre.push(z);
        dims.push((n_in, n_out));
        x = next;
    }
    Ok(ForwardTrace {
        batch,
        inputs,
        pre,
        dims,
    })
}

/// Backpropagates `logit_grads` (`batch × c`, row per sample) and returns the
/// gradient summed over the batch.
pub fn backward(params: &ModelParams, trace: &ForwardTrace, logit_grads: &[f64]) -> Result<ParamGrads> {
    let layers = params.layers();
    if trace.dims.len() != layers.len()
        || trace
            .dims
            .iter()
            .zip(layers)
            .any(|(&(i, o), l)| i != l.in_dim() || o != l.out_dim())
    {
        return Err(Error::State("trace was produced by a different architecture".into()));
    }
    let batch = trace.batch;
    if logit_grads.len() != batch * params.n_classes() {
        return Err(Error::Dimension(format!(
            "logit gradient has {} entries, expected {}",
            logit_grads.len(),
            batch * params.n_classes()
        )));
    }
    let mut grads = ParamGrads::zeros_like(params);
    let mut delta = logit_grads.to_vec();
    for k in (0..layers.len()).rev() {
        let layer = &layers[k];
        let (n_in, n_out) = trace.dims[k];
        if layer.activation == Activation::Relu {
            for (d, &z) in delta.iter_mut().zip(&trace.pre[k]) {
                if z <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        let a = &trace.inputs[k];
        let g = &mut grads.layers[k];
        {
            let gw = g.weight.data_mut();
            for b in 0..batch {
                let a_row = &a[b * n_in..(b + 1) * n_in];
                for o in 0..n_out {
                    let d = delta[b * n_out + o];
                    if d == 0.0 {
                        continue;
                    }
                    let dst = &mut gw[o * n_in..(o + 1) * n_in];
                    for (w, &av) in dst.iter_mut().zip(a_row) {
                        *w += d * av;
                    }
                }
            }
        }
        {
            let gb = g.bias.data_mut();
            for b in 0..batch {
                for o in 0..n_out {
                    gb[o] += delta[b * n_out + o];
                }
            }
        }
        if k > 0 {
            let w = layer.weight.data();
            let mut prev = vec![0.0; batch * n_in];
            for b in 0..batch {
                let dst = &mut prev[b * n_in..(b + 1) * n_in];
                for o in 0..n_out {
                    let d = delta[b * n_out + o];
                    if d == 0.0 {
                        continue;
                    }
                    for (p, &wv) in dst.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                        *p += d * wv;
                    }
                }
            }
            delta = prev;
        }
    }
    Ok(grads)
}

pub fn predict_class(params: &ModelParams, input: &Tensor) -> Result<usize> {
    let trace = forward(params, input)?;
    Ok(argmax(trace.logits(0)))
}
