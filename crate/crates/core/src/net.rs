//! Plain 3x3 convolutional network with hand-written backpropagation.
//!
//! The trunk maps the mid-resolution depth input to three output planes:
//! one residual added back onto the input (residual depth head) and two
//! planes estimating the gradient of the ground truth (depth-discontinuity
//! head). Hidden layers use the rectifier, the output layer is linear and
//! zero-initialized so an untrained network is the identity on depth.
//!
//! No normalization layers, no padding tricks: every layer preserves the
//! spatial size via symmetric zero padding of 1.

use crate::field::Field2D;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use wide::f64x4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Activation {
    Rectifier,
    None,
}

/// One 3x3 convolution, zero-padded to preserve spatial size.
///
/// Kernel layout: `kernel[((oc * in_channels + ic) * 3 + ky) * 3 + kx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl ConvLayer {
    pub fn zeros(in_channels: usize, out_channels: usize, activation: Activation) -> Self {
        ConvLayer {
            in_channels,
            out_channels,
            kernel: vec![0.0; out_channels * in_channels * 9],
            bias: vec![0.0; out_channels],
            activation,
        }
    }

    /// Variance-scaled init (2 / fan-in), zero biases.
    pub fn he_init(
        in_channels: usize,
        out_channels: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let std = (2.0 / (in_channels as f64 * 9.0)).sqrt();
        let normal = Normal::new(0.0, std).unwrap();
        let mut layer = Self::zeros(in_channels, out_channels, activation);
        for w in &mut layer.kernel {
            *w = normal.sample(rng);
        }
        layer
    }

    pub fn forward(&self, input: &Field2D) -> Field2D {
        assert_eq!(input.channels(), self.in_channels, "layer channel mismatch");
        let (h, w) = (input.height(), input.width());
        let mut out = Field2D::zeros(self.out_channels, h, w);
        let zero = vec![0.0; w];
        for oc in 0..self.out_channels {
            out.plane_mut(oc).fill(self.bias[oc]);
            for ic in 0..self.in_channels {
                let inp = input.plane(ic);
                let outp = out.plane_mut(oc);
                let kbase = (oc * self.in_channels + ic) * 9;
                let mut k = [0.0f64; 9];
                k.copy_from_slice(&self.kernel[kbase..kbase + 9]);
                for y in 0..h {
                    let top = if y > 0 { &inp[(y - 1) * w..][..w] } else { &zero[..] };
                    let mid = &inp[y * w..][..w];
                    let bot = if y + 1 < h { &inp[(y + 1) * w..][..w] } else { &zero[..] };
                    stencil_row(&mut outp[y * w..][..w], top, mid, bot, &k);
                }
            }
        }
        if self.activation == Activation::Rectifier {
            for v in out.data_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        out
    }

    /// Backward pass given the layer input, its forward output, and the
    /// upstream gradient; returns parameter gradients and the gradient with
    /// respect to the input.
    pub fn backward(
        &self,
        input: &Field2D,
        output: &Field2D,
        d_out: &Field2D,
    ) -> (LayerGrads, Field2D) {
        let (h, w) = (input.height(), input.width());
        // rectifier: zero the upstream gradient where the output was clamped
        let d_pre = match self.activation {
            Activation::Rectifier => {
                let mut d = d_out.clone();
                for (g, &o) in d.data_mut().iter_mut().zip(output.data()) {
                    if o <= 0.0 {
                        *g = 0.0;
                    }
                }
                d
            }
            Activation::None => d_out.clone(),
        };

        let mut grads = LayerGrads::zeros(self);
        let mut d_in = Field2D::zeros(self.in_channels, h, w);
        let zero = vec![0.0; w];
        for oc in 0..self.out_channels {
            let dp = d_pre.plane(oc);
            grads.d_bias[oc] = dp.iter().sum();
            for ic in 0..self.in_channels {
                let inp = input.plane(ic);
                let dip = d_in.plane_mut(ic);
                let kbase = (oc * self.in_channels + ic) * 9;

                // kernel gradients: correlate upstream rows with shifted input rows
                let mut dw = [0.0f64; 9];
                for y in 0..h {
                    let top = if y > 0 { &inp[(y - 1) * w..][..w] } else { &zero[..] };
                    let mid = &inp[y * w..][..w];
                    let bot = if y + 1 < h { &inp[(y + 1) * w..][..w] } else { &zero[..] };
                    stencil_dots(&mut dw, &dp[y * w..][..w], top, mid, bot);
                }
                grads.d_kernel[kbase..kbase + 9].copy_from_slice(&dw);

                // input gradient: convolve upstream with the 180-degree
                // rotated kernel (the adjoint of the forward correlation)
                let mut kr = [0.0f64; 9];
                for (i, v) in kr.iter_mut().enumerate() {
                    *v = self.kernel[kbase + 8 - i];
                }
                for y in 0..h {
                    let top = if y > 0 { &dp[(y - 1) * w..][..w] } else { &zero[..] };
                    let mid = &dp[y * w..][..w];
                    let bot = if y + 1 < h { &dp[(y + 1) * w..][..w] } else { &zero[..] };
                    stencil_row(&mut dip[y * w..][..w], top, mid, bot, &kr);
                }
            }
        }
        (grads, d_in)
    }
}

/// Accumulate one full 3x3 stencil pass over a row: `out[x] +=` the nine
/// taps applied to the rows above, at, and below, zero padded horizontally.
#[inline]
fn stencil_row(out: &mut [f64], top: &[f64], mid: &[f64], bot: &[f64], k: &[f64; 9]) {
    let n = out.len();
    if n == 1 {
        out[0] += k[1] * top[0] + k[4] * mid[0] + k[7] * bot[0];
        return;
    }
    out[0] += k[1] * top[0] + k[2] * top[1] + k[4] * mid[0] + k[5] * mid[1] + k[7] * bot[0]
        + k[8] * bot[1];
    // four output pixels per step; per-pixel arithmetic identical to the
    // scalar tail, so results do not depend on the vector width
    let kv: [f64x4; 9] = std::array::from_fn(|i| f64x4::splat(k[i]));
    let mut x = 1;
    while x + 4 < n {
        let load = |row: &[f64], off: usize| f64x4::from(&row[x + off - 1..x + off + 3]);
        let taps = kv[0] * load(top, 0)
            + kv[1] * load(top, 1)
            + kv[2] * load(top, 2)
            + kv[3] * load(mid, 0)
            + kv[4] * load(mid, 1)
            + kv[5] * load(mid, 2)
            + kv[6] * load(bot, 0)
            + kv[7] * load(bot, 1)
            + kv[8] * load(bot, 2);
        let acc = f64x4::from(&out[x..x + 4]) + taps;
        out[x..x + 4].copy_from_slice(&acc.to_array());
        x += 4;
    }
    for x in x..n - 1 {
        out[x] += k[0] * top[x - 1]
            + k[1] * top[x]
            + k[2] * top[x + 1]
            + k[3] * mid[x - 1]
            + k[4] * mid[x]
            + k[5] * mid[x + 1]
            + k[6] * bot[x - 1]
            + k[7] * bot[x]
            + k[8] * bot[x + 1];
    }
    out[n - 1] += k[0] * top[n - 2] + k[1] * top[n - 1] + k[3] * mid[n - 2] + k[4] * mid[n - 1]
        + k[6] * bot[n - 2]
        + k[7] * bot[n - 1];
}

/// Accumulate the nine kernel-gradient dot products of one upstream row
/// against the input rows above, at, and below (zero padded horizontally).
#[inline]
fn stencil_dots(dw: &mut [f64; 9], dp: &[f64], top: &[f64], mid: &[f64], bot: &[f64]) {
    let n = dp.len();
    if n == 1 {
        dw[1] += dp[0] * top[0];
        dw[4] += dp[0] * mid[0];
        dw[7] += dp[0] * bot[0];
        return;
    }
    // four pixels per step with per-tap vector accumulators, reduced once at
    // the end; the split accumulation only reorders a commutative sum
    let mut acc = [f64x4::ZERO; 9];
    let mut x = 1;
    while x + 4 < n {
        let load = |row: &[f64], off: usize| f64x4::from(&row[x + off - 1..x + off + 3]);
        let d = f64x4::from(&dp[x..x + 4]);
        acc[0] += d * load(top, 0);
        acc[1] += d * load(top, 1);
        acc[2] += d * load(top, 2);
        acc[3] += d * load(mid, 0);
        acc[4] += d * load(mid, 1);
        acc[5] += d * load(mid, 2);
        acc[6] += d * load(bot, 0);
        acc[7] += d * load(bot, 1);
        acc[8] += d * load(bot, 2);
        x += 4;
    }
    for i in 0..9 {
        dw[i] += acc[i].reduce_add();
    }
    for x in x..n - 1 {
        let d = dp[x];
        dw[0] += d * top[x - 1];
        dw[1] += d * top[x];
        dw[2] += d * top[x + 1];
        dw[3] += d * mid[x - 1];
        dw[4] += d * mid[x];
        dw[5] += d * mid[x + 1];
        dw[6] += d * bot[x - 1];
        dw[7] += d * bot[x];
        dw[8] += d * bot[x + 1];
    }
    let d = dp[0];
    dw[1] += d * top[0];
    dw[2] += d * top[1];
    dw[4] += d * mid[0];
    dw[5] += d * mid[1];
    dw[7] += d * bot[0];
    dw[8] += d * bot[1];
    let d = dp[n - 1];
    dw[0] += d * top[n - 2];
    dw[1] += d * top[n - 1];
    dw[3] += d * mid[n - 2];
    dw[4] += d * mid[n - 1];
    dw[6] += d * bot[n - 2];
    dw[7] += d * bot[n - 1];
}

/// Gradients of one layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub d_kernel: Vec<f64>,
    pub d_bias: Vec<f64>,
}

impl LayerGrads {
    pub fn zeros(layer: &ConvLayer) -> Self {
        LayerGrads {
            d_kernel: vec![0.0; layer.kernel.len()],
            d_bias: vec![0.0; layer.bias.len()],
        }
    }

    pub fn accumulate(&mut self, other: &LayerGrads) {
        for (a, b) in self.d_kernel.iter_mut().zip(&other.d_kernel) {
            *a += b;
        }
        for (a, b) in self.d_bias.iter_mut().zip(&other.d_bias) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.d_kernel {
            *v *= s;
        }
        for v in &mut self.d_bias {
            *v *= s;
        }
    }
}

/// Trunk of 3x3 layers whose final linear layer emits three planes:
/// residual depth plus the 2-channel discontinuity estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvNet {
    pub layers: Vec<ConvLayer>,
}

impl ConvNet {
    /// `depth` layers total, hidden width `features`, single-channel input,
    /// 3-channel output. The output layer is zero-initialized so the fresh
    /// network reproduces its input depth exactly.
    pub fn new(depth: usize, features: usize, rng: &mut impl Rng) -> Self {
        assert!(depth >= 1, "network needs at least one layer");
        let mut layers = Vec::with_capacity(depth);
        if depth == 1 {
            layers.push(ConvLayer::zeros(1, 3, Activation::None));
        } else {
            layers.push(ConvLayer::he_init(1, features, Activation::Rectifier, rng));
            for _ in 1..depth - 1 {
                layers.push(ConvLayer::he_init(
                    features,
                    features,
                    Activation::Rectifier,
                    rng,
                ));
            }
            layers.push(ConvLayer::zeros(features, 3, Activation::None));
        }
        ConvNet { layers }
    }

    /// Forward pass keeping every intermediate activation;
    /// `trace[0]` is the input, `trace[i]` the output of layer `i - 1`.
    pub fn forward_trace(&self, s: &Field2D) -> Vec<Field2D> {
        let mut trace = Vec::with_capacity(self.layers.len() + 1);
        trace.push(s.clone());
        for layer in &self.layers {
            let next = layer.forward(trace.last().unwrap());
            trace.push(next);
        }
        trace
    }

    /// Backward pass from the upstream gradient at the trunk output.
    pub fn backward(&self, trace: &[Field2D], d_out: &Field2D) -> NetGrads {
        assert_eq!(trace.len(), self.layers.len() + 1);
        let mut per_layer = Vec::with_capacity(self.layers.len());
        let mut d = d_out.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (grads, d_in) = layer.backward(&trace[i], &trace[i + 1], &d);
            per_layer.push(grads);
            d = d_in;
        }
        per_layer.reverse();
        NetGrads { layers: per_layer }
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.kernel.len() + l.bias.len())
            .sum()
    }
}

/// Gradients for every layer of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGrads {
    pub layers: Vec<LayerGrads>,
}

impl NetGrads {
    pub fn zeros(net: &ConvNet) -> Self {
        NetGrads {
            layers: net.layers.iter().map(LayerGrads::zeros).collect(),
        }
    }

    pub fn accumulate(&mut self, other: &NetGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.accumulate(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.scale(s);
        }
    }
}

/// Split the trunk output into the two heads:
/// `g = s + residual`, `h` the 2-channel discontinuity estimate.
pub fn net_forward(net: &ConvNet, s: &Field2D) -> (Field2D, Field2D) {
    assert_eq!(s.channels(), 1, "network input is single-channel depth");
    let trace = net.forward_trace(s);
    split_heads(s, trace.last().unwrap())
}

pub fn split_heads(s: &Field2D, trunk_out: &Field2D) -> (Field2D, Field2D) {
    assert_eq!(trunk_out.channels(), 3, "trunk must emit 3 planes");
    let g = s.add(&trunk_out.channel(0));
    let mut h = Field2D::zeros(2, s.height(), s.width());
    h.plane_mut(0).copy_from_slice(trunk_out.plane(1));
    h.plane_mut(1).copy_from_slice(trunk_out.plane(2));
    (g, h)
}

/// Merge head gradients back into a trunk-output gradient
/// (inverse of [`split_heads`]; the residual add passes d_g through).
pub fn merge_head_grads(d_g: &Field2D, d_h: &Field2D) -> Field2D {
    let mut d = Field2D::zeros(3, d_g.height(), d_g.width());
    d.plane_mut(0).copy_from_slice(d_g.plane(0));
    d.plane_mut(1).copy_from_slice(d_h.plane(0));
    d.plane_mut(2).copy_from_slice(d_h.plane(1));
    d
}

/// Stage-one loss: per-pixel mean of `|g - t|^2 + |h - grad t|^2`. The mean
/// keeps gradient magnitudes (and hence usable learning rates) independent
/// of the patch size.
pub fn pretrain_loss(g: &Field2D, h: &Field2D, target: &Field2D) -> f64 {
    pretrain_loss_grad(g, h, target).0
}

/// Stage-one loss with gradients with respect to both heads.
pub fn pretrain_loss_grad(g: &Field2D, h: &Field2D, target: &Field2D) -> (f64, Field2D, Field2D) {
    assert!(g.same_shape(target), "pretrain loss shape mismatch");
    let gt = crate::grid::grad(target);
    assert!(h.same_shape(&gt), "discontinuity head shape mismatch");
    let n = (g.height() * g.width()) as f64;
    let dg = g.sub(target);
    let dh = h.sub(&gt);
    let loss = (dg.inner(&dg) + dh.inner(&dh)) / n;
    (loss, dg.scale(2.0 / n), dh.scale(2.0 / n))
}

/// Classical momentum update, in place:
/// `v <- momentum * v - lr * grad; w <- w + v`.
pub fn sgd_momentum_step(
    weights: &mut [f64],
    velocity: &mut [f64],
    grads: &[f64],
    learning_rate: f64,
    momentum: f64,
) {
    assert_eq!(weights.len(), velocity.len());
    assert_eq!(weights.len(), grads.len());
    for i in 0..weights.len() {
        velocity[i] = momentum * velocity[i] - learning_rate * grads[i];
        weights[i] += velocity[i];
    }
}
