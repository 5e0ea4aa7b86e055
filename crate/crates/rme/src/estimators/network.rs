//! Grid-completion convolutional network with hand-written forward and
//! backward passes.
//!
//! Fixed encoder-decoder: 3x3 same-padding convolutions
//! `C_in -> 16 -> 32 (stride 2) -> 32`, nearest-neighbor 2x upsample,
//! `32 -> 16 -> 1`, leaky ReLU (slope 0.2) after every convolution except the
//! last. Input height and width must be even. Roughly 20k parameters.

use ndarray::{Array1, Array2, Array3, Array4};
use rand::Rng;

use crate::error::{Result, RmeError};
use crate::rng::{stream, Domain};

pub const LEAKY_SLOPE: f64 = 0.2;
const KERNEL: usize = 3;

/// One 3x3 convolution layer; weights indexed `(out, in, ky, kx)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub weights: Array4<f64>,
    pub bias: Array1<f64>,
    pub stride: usize,
}

impl ConvLayer {
    pub fn zeros(out_ch: usize, in_ch: usize, stride: usize) -> Self {
        ConvLayer {
            weights: Array4::zeros((out_ch, in_ch, KERNEL, KERNEL)),
            bias: Array1::zeros(out_ch),
            stride,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// The full parameter set of the completion network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights {
    pub layers: Vec<ConvLayer>,
}

/// Layer channel plan: (out, in-multiplier resolved at init, stride).
const PLAN: [(usize, usize); 5] = [(16, 1), (32, 2), (32, 1), (16, 1), (1, 1)];
/// The nearest-neighbor 2x upsample sits after this layer index.
const UPSAMPLE_AFTER: usize = 2;

impl NetworkWeights {
    /// Uniform fan-in initialization seeded by the run seed.
    pub fn init(input_channels: usize, seed: u64) -> Self {
        let mut rng = stream(seed, Domain::WeightInit, input_channels as u64);
        let mut layers = Vec::new();
        let mut in_ch = input_channels;
        for (out_ch, stride) in PLAN {
            let fan_in = (in_ch * KERNEL * KERNEL) as f64;
            let bound = (1.0 / fan_in).sqrt();
            let mut layer = ConvLayer::zeros(out_ch, in_ch, stride);
            for w in layer.weights.iter_mut() {
                *w = rng.gen_range(-bound..bound);
            }
            for b in layer.bias.iter_mut() {
                *b = rng.gen_range(-bound..bound);
            }
            layers.push(layer);
            in_ch = out_ch;
        }
        NetworkWeights { layers }
    }

    /// All-zero weights with the same architecture, mainly for tests.
    pub fn zeros(input_channels: usize) -> Self {
        let mut layers = Vec::new();
        let mut in_ch = input_channels;
        for (out_ch, stride) in PLAN {
            layers.push(ConvLayer::zeros(out_ch, in_ch, stride));
            in_ch = out_ch;
        }
        NetworkWeights { layers }
    }

    pub fn input_channels(&self) -> usize {
        self.layers[0].in_channels()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.n_params()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_from_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params());
        let mut k = 0;
        for l in &mut self.layers {
            for w in l.weights.iter_mut() {
                *w = flat[k];
                k += 1;
            }
            for b in l.bias.iter_mut() {
                *b = flat[k];
                k += 1;
            }
        }
    }

    fn check_input(&self, input: &Array3<f64>) -> Result<()> {
        let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        if c != self.input_channels() {
            return Err(RmeError::ShapeMismatch(format!(
                "input has {c} channels, network expects {}",
                self.input_channels()
            )));
        }
        if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
            return Err(RmeError::ShapeMismatch(format!(
                "grid dims must be even and non-zero, got {h}x{w}"
            )));
        }
        Ok(())
    }
}

fn conv_forward(layer: &ConvLayer, input: &Array3<f64>) -> Array3<f64> {
    let (in_ch, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let out_ch = layer.out_channels();
    let s = layer.stride;
    let (oh, ow) = (h / s, w / s);
    let mut out = Array3::zeros((out_ch, oh, ow));
    for o in 0..out_ch {
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = layer.bias[o];
                for i in 0..in_ch {
                    for ky in 0..KERNEL {
                        let yy = (y * s + ky) as isize - 1;
                        if yy < 0 || yy >= h as isize {
                            continue;
                        }
                        for kx in 0..KERNEL {
                            let xx = (x * s + kx) as isize - 1;
                            if xx < 0 || xx >= w as isize {
                                continue;
                            }
                            acc += layer.weights[[o, i, ky, kx]]
                                * input[[i, yy as usize, xx as usize]];
                        }
                    }
                }
                out[[o, y, x]] = acc;
            }
        }
    }
    out
}

/// Backward pass of one convolution: gradients w.r.t. weights, bias, input.
fn conv_backward(
    layer: &ConvLayer,
    input: &Array3<f64>,
    grad_out: &Array3<f64>,
) -> (Array4<f64>, Array1<f64>, Array3<f64>) {
    let (in_ch, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let out_ch = layer.out_channels();
    let s = layer.stride;
    let (oh, ow) = (grad_out.shape()[1], grad_out.shape()[2]);
    let mut gw = Array4::zeros(layer.weights.raw_dim());
    let mut gb = Array1::zeros(out_ch);
    let mut gin = Array3::zeros((in_ch, h, w));
    for o in 0..out_ch {
        for y in 0..oh {
            for x in 0..ow {
                let g = grad_out[[o, y, x]];
                if g == 0.0 {
                    continue;
                }
                gb[o] += g;
                for i in 0..in_ch {
                    for ky in 0..KERNEL {
                        let yy = (y * s + ky) as isize - 1;
                        if yy < 0 || yy >= h as isize {
                            continue;
                        }
                        for kx in 0..KERNEL {
                            let xx = (x * s + kx) as isize - 1;
                            if xx < 0 || xx >= w as isize {
                                continue;
                            }
                            gw[[o, i, ky, kx]] += g * input[[i, yy as usize, xx as usize]];
                            gin[[i, yy as usize, xx as usize]] +=
                                g * layer.weights[[o, i, ky, kx]];
                        }
                    }
                }
            }
        }
    }
    (gw, gb, gin)
}

fn leaky(z: &Array3<f64>) -> Array3<f64> {
    z.mapv(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v })
}

fn leaky_grad(z: &Array3<f64>, grad: &Array3<f64>) -> Array3<f64> {
    let mut out = grad.clone();
    out.zip_mut_with(z, |g, &zv| {
        if zv <= 0.0 {
            *g *= LEAKY_SLOPE;
        }
    });
    out
}

fn upsample2(input: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    Array3::from_shape_fn((c, h * 2, w * 2), |(i, y, x)| input[[i, y / 2, x / 2]])
}

fn upsample2_backward(grad: &Array3<f64>) -> Array3<f64> {
    let (c, h2, w2) = (grad.shape()[0], grad.shape()[1], grad.shape()[2]);
    let mut out = Array3::zeros((c, h2 / 2, w2 / 2));
    for i in 0..c {
        for y in 0..h2 {
            for x in 0..w2 {
                out[[i, y / 2, x / 2]] += grad[[i, y, x]];
            }
        }
    }
    out
}

struct ForwardCache {
    /// Pre-activation of each conv layer.
    pre: Vec<Array3<f64>>,
    /// Input seen by each conv layer.
    inputs: Vec<Array3<f64>>,
}

fn forward_cached(weights: &NetworkWeights, input: &Array3<f64>) -> (Array3<f64>, ForwardCache) {
    let mut pre = Vec::with_capacity(weights.layers.len());
    let mut inputs = Vec::with_capacity(weights.layers.len());
    let mut act = input.clone();
    for (idx, layer) in weights.layers.iter().enumerate() {
        inputs.push(act.clone());
        let z = conv_forward(layer, &act);
        pre.push(z.clone());
        act = if idx + 1 == weights.layers.len() {
            z
        } else {
            leaky(&z)
        };
        if idx == UPSAMPLE_AFTER {
            act = upsample2(&act);
        }
    }
    (act, ForwardCache { pre, inputs })
}

/// Deterministic forward pass: `C x H x W` input to `H x W` dB estimates.
pub fn network_forward(weights: &NetworkWeights, input: &Array3<f64>) -> Result<Array2<f64>> {
    weights.check_input(input)?;
    let (out, _) = forward_cached(weights, input);
    debug_assert_eq!(out.shape()[0], 1);
    Ok(out.index_axis(ndarray::Axis(0), 0).to_owned())
}

/// Per-layer parameter gradients, mirroring `NetworkWeights`.
#[derive(Debug, Clone)]
pub struct NetworkGradients {
    pub layers: Vec<(Array4<f64>, Array1<f64>)>,
}

impl NetworkGradients {
    pub fn zeros_like(w: &NetworkWeights) -> Self {
        NetworkGradients {
            layers: w
                .layers
                .iter()
                .map(|l| (Array4::zeros(l.weights.raw_dim()), Array1::zeros(l.bias.len())))
                .collect(),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (gw, gb) in &self.layers {
            out.extend(gw.iter());
            out.extend(gb.iter());
        }
        out
    }

    pub fn add_scaled(&mut self, other: &NetworkGradients, scale: f64) {
        for ((gw, gb), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            gw.zip_mut_with(ow, |a, &b| *a += scale * b);
            gb.zip_mut_with(ob, |a, &b| *a += scale * b);
        }
    }
}

/// Mask-weighted mean squared error over target-occupied entries.
pub fn masked_mse(pred: &Array2<f64>, target: &Array2<f64>, mask: &Array2<f64>) -> f64 {
    let count: f64 = mask.sum();
    if count == 0.0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for ((p, t), m) in pred.iter().zip(target.iter()).zip(mask.iter()) {
        acc += m * (p - t) * (p - t);
    }
    acc / count
}

/// Forward pass plus analytic gradients of the masked MSE loss with respect
/// to every weight and bias.
pub fn loss_and_gradients(
    weights: &NetworkWeights,
    input: &Array3<f64>,
    target: &Array2<f64>,
    mask: &Array2<f64>,
) -> Result<(f64, NetworkGradients)> {
    weights.check_input(input)?;
    let (out3, cache) = forward_cached(weights, input);
    let pred = out3.index_axis(ndarray::Axis(0), 0).to_owned();
    let loss = masked_mse(&pred, target, mask);
    let count: f64 = mask.sum();
    let (h, w) = (pred.shape()[0], pred.shape()[1]);
    let mut grad = Array3::zeros((1, h, w));
    if count > 0.0 {
        for y in 0..h {
            for x in 0..w {
                grad[[0, y, x]] = 2.0 * mask[[y, x]] * (pred[[y, x]] - target[[y, x]]) / count;
            }
        }
    }

    let n_layers = weights.layers.len();
    let mut grads = NetworkGradients::zeros_like(weights);
    for idx in (0..n_layers).rev() {
        if idx != n_layers - 1 {
            // Gradient currently refers to the post-activation (and
            // post-upsample, where applicable) output of layer idx.
            if idx == UPSAMPLE_AFTER {
                grad = upsample2_backward(&grad);
            }
            grad = leaky_grad(&cache.pre[idx], &grad);
        }
        let (gw, gb, gin) = conv_backward(&weights.layers[idx], &cache.inputs[idx], &grad);
        grads.layers[idx] = (gw, gb);
        grad = gin;
    }
    Ok((loss, grads))
}
