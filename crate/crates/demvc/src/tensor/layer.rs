//! Differentiable layers: affine, strided 2-D convolution, and its transposed
//! mirror, each with an optional ReLU. Backward passes are exact analytic
//! gradients; every kind is validated against finite differences in tests.

use super::Tensor;
use crate::error::{DemvcError, Result};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Work threshold below which the affine kernels stay sequential.
const PAR_THRESHOLD: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Linear,
    Relu,
}

impl Activation {
    fn apply(self, pre: &Tensor) -> Tensor {
        match self {
            Activation::Linear => pre.clone(),
            Activation::Relu => {
                let mut out = pre.clone();
                for v in out.data_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
                out
            }
        }
    }

    /// Multiplies `upstream` by the activation derivative at the cached
    /// pre-activations. ReLU uses the subgradient 0 at exactly 0.
    fn backprop(self, pre: &Tensor, upstream: &Tensor) -> Tensor {
        match self {
            Activation::Linear => upstream.clone(),
            Activation::Relu => {
                let mut g = upstream.clone();
                for (gv, pv) in g.data_mut().iter_mut().zip(pre.data()) {
                    if *pv <= 0.0 {
                        *gv = 0.0;
                    }
                }
                g
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Affine,
    Conv2d { stride: usize },
    Deconv2d { stride: usize },
}

/// One parameterized layer.
///
/// Shapes by kind:
/// - affine: weights (out_dim, in_dim), bias (out_dim); input (N, in_dim)
///   or any (N, ...) whose trailing extents flatten to in_dim
/// - conv2d: weights (out_c, in_c, k, k), bias (out_c); input (N, in_c, H, W)
/// - deconv2d: weights (in_c, out_c, k, k), bias (out_c); input (N, in_c, H, W)
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerParams {
    pub kind: LayerKind,
    pub activation: Activation,
    pub weights: Tensor,
    pub bias: Tensor,
}

/// Forward-pass state a backward pass needs: the layer input and the
/// pre-activation values.
#[derive(Debug, Clone)]
pub struct LayerCache {
    input: Tensor,
    pre_activation: Tensor,
}

impl LayerCache {
    /// Shape of the layer output this cache was produced for.
    pub fn pre_shape(&self) -> &[usize] {
        self.pre_activation.shape()
    }
}

#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub weights: Tensor,
    pub bias: Tensor,
}

/// Uniform Glorot initialization: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
pub fn glorot_uniform<R: Rng>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let len: usize = shape.iter().product();
    let data = (0..len).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::from_vec(shape, data).expect("shape/product mismatch is impossible here")
}

impl LayerParams {
    pub fn affine<R: Rng>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        LayerParams {
            kind: LayerKind::Affine,
            activation,
            weights: glorot_uniform(&[out_dim, in_dim], in_dim, out_dim, rng),
            bias: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn conv2d<R: Rng>(
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let fan = kernel * kernel;
        LayerParams {
            kind: LayerKind::Conv2d { stride },
            activation,
            weights: glorot_uniform(&[out_c, in_c, kernel, kernel], in_c * fan, out_c * fan, rng),
            bias: Tensor::zeros(&[out_c]),
        }
    }

    pub fn deconv2d<R: Rng>(
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let fan = kernel * kernel;
        LayerParams {
            kind: LayerKind::Deconv2d { stride },
            activation,
            weights: glorot_uniform(&[in_c, out_c, kernel, kernel], in_c * fan, out_c * fan, rng),
            bias: Tensor::zeros(&[out_c]),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self.kind {
            LayerKind::Affine => self.weights.shape()[0],
            LayerKind::Conv2d { .. } => self.weights.shape()[0],
            LayerKind::Deconv2d { .. } => self.weights.shape()[1],
        }
    }

    /// Activation output for `input`, without saving backward state.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        Ok(self.activation.apply(&self.pre_activation(input)?))
    }

    /// Activation output plus the cache a later `backward` call consumes.
    pub fn forward_cached(&self, input: &Tensor) -> Result<(Tensor, LayerCache)> {
        let pre = self.pre_activation(input)?;
        let out = self.activation.apply(&pre);
        Ok((
            out,
            LayerCache {
                input: input.clone(),
                pre_activation: pre,
            },
        ))
    }

    /// Exact gradients of the layer output contracted with `upstream`.
    /// Returns the gradient with respect to the input (in the input's original
    /// shape) and the parameter gradients.
    pub fn backward(&self, cache: &LayerCache, upstream: &Tensor) -> Result<(Tensor, LayerGrads)> {
        if upstream.shape() != cache.pre_activation.shape() {
            return Err(DemvcError::Usage(format!(
                "stale or mismatched layer cache: upstream shape {:?} does not match cached pre-activation shape {:?}",
                upstream.shape(),
                cache.pre_activation.shape()
            )));
        }
        let grad_pre = self.activation.backprop(&cache.pre_activation, upstream);
        match self.kind {
            LayerKind::Affine => self.affine_backward(cache, &grad_pre),
            LayerKind::Conv2d { stride } => self.conv_backward(cache, &grad_pre, stride),
            LayerKind::Deconv2d { stride } => self.deconv_backward(cache, &grad_pre, stride),
        }
    }

    fn pre_activation(&self, input: &Tensor) -> Result<Tensor> {
        match self.kind {
            LayerKind::Affine => self.affine_pre(input),
            LayerKind::Conv2d { stride } => self.conv_pre(input, stride),
            LayerKind::Deconv2d { stride } => self.deconv_pre(input, stride),
        }
    }

    fn affine_pre(&self, input: &Tensor) -> Result<Tensor> {
        let (out_dim, in_dim) = (self.weights.shape()[0], self.weights.shape()[1]);
        if input.shape().is_empty() || input.cols() != in_dim {
            return Err(DemvcError::dimension(
                "affine forward",
                &[input.rows(), in_dim],
                input.shape(),
            ));
        }
        let n = input.rows();
        let w = self.weights.data();
        let b = self.bias.data();
        let mut out = Tensor::zeros(&[n, out_dim]);

        let compute_row = |x_row: &[f64], o_row: &mut [f64]| {
            for (o, ov) in o_row.iter_mut().enumerate() {
                let w_row = &w[o * in_dim..(o + 1) * in_dim];
                let mut acc = 0.0;
                for (xv, wv) in x_row.iter().zip(w_row) {
                    acc += xv * wv;
                }
                *ov = acc + b[o];
            }
        };

        if n * out_dim * in_dim >= PAR_THRESHOLD {
            let in_rows: Vec<&[f64]> = (0..n).map(|i| input.row(i)).collect();
            out.data_mut()
                .par_chunks_mut(out_dim)
                .zip(in_rows.into_par_iter())
                .for_each(|(o_row, x_row)| compute_row(x_row, o_row));
        } else {
            for i in 0..n {
                let x_row = input.row(i);
                let o_row = &mut out.data_mut()[i * out_dim..(i + 1) * out_dim];
                compute_row(x_row, o_row);
            }
        }
        Ok(out)
    }

    fn affine_backward(
        &self,
        cache: &LayerCache,
        grad_pre: &Tensor,
    ) -> Result<(Tensor, LayerGrads)> {
        let (out_dim, in_dim) = (self.weights.shape()[0], self.weights.shape()[1]);
        let n = cache.input.rows();
        let x = &cache.input;
        let w = self.weights.data();

        // grad_w[o, i] = sum_n g[n, o] * x[n, i]
        let mut grad_w = Tensor::zeros(&[out_dim, in_dim]);
        let fill_w_row = |o: usize, w_row: &mut [f64]| {
            for r in 0..n {
                let g = grad_pre.data()[r * out_dim + o];
                if g == 0.0 {
                    continue;
                }
                for (wv, xv) in w_row.iter_mut().zip(x.row(r)) {
                    *wv += g * xv;
                }
            }
        };
        if n * out_dim * in_dim >= PAR_THRESHOLD {
            grad_w
                .data_mut()
                .par_chunks_mut(in_dim)
                .enumerate()
                .for_each(|(o, w_row)| fill_w_row(o, w_row));
        } else {
            for o in 0..out_dim {
                fill_w_row(o, &mut grad_w.data_mut()[o * in_dim..(o + 1) * in_dim]);
            }
        }

        let mut grad_b = Tensor::zeros(&[out_dim]);
        for r in 0..n {
            for (bv, gv) in grad_b.data_mut().iter_mut().zip(grad_pre.row(r)) {
                *bv += gv;
            }
        }

        // grad_x[n, i] = sum_o g[n, o] * w[o, i]
        let mut grad_x = Tensor::zeros(&[n, in_dim]);
        let fill_x_row = |g_row: &[f64], x_row: &mut [f64]| {
            for (o, g) in g_row.iter().enumerate() {
                if *g == 0.0 {
                    continue;
                }
                let w_row = &w[o * in_dim..(o + 1) * in_dim];
                for (xv, wv) in x_row.iter_mut().zip(w_row) {
                    *xv += g * wv;
                }
            }
        };
        if n * out_dim * in_dim >= PAR_THRESHOLD {
            let g_rows: Vec<&[f64]> = (0..n).map(|i| grad_pre.row(i)).collect();
            grad_x
                .data_mut()
                .par_chunks_mut(in_dim)
                .zip(g_rows.into_par_iter())
                .for_each(|(x_row, g_row)| fill_x_row(g_row, x_row));
        } else {
            for r in 0..n {
                let g_row = grad_pre.row(r);
                fill_x_row(g_row, &mut grad_x.data_mut()[r * in_dim..(r + 1) * in_dim]);
            }
        }

        let grad_input = grad_x.reshaped(cache.input.shape())?;
        Ok((
            grad_input,
            LayerGrads {
                weights: grad_w,
                bias: grad_b,
            },
        ))
    }

    fn conv_dims(
        &self,
        input: &Tensor,
        stride: usize,
    ) -> Result<(usize, usize, usize, usize, usize, usize)> {
        let ws = self.weights.shape();
        let (out_c, in_c, k) = (ws[0], ws[1], ws[2]);
        if input.shape().len() != 4 || input.shape()[1] != in_c {
            return Err(DemvcError::dimension(
                "conv2d forward",
                &[0, in_c, k, k],
                input.shape(),
            ));
        }
        let (h, w) = (input.shape()[2], input.shape()[3]);
        if h < k || w < k {
            return Err(DemvcError::dimension(
                "conv2d forward",
                &[0, in_c, k, k],
                input.shape(),
            ));
        }
        let oh = (h - k) / stride + 1;
        let ow = (w - k) / stride + 1;
        Ok((out_c, in_c, k, h, oh, ow))
    }

    fn conv_pre(&self, input: &Tensor, stride: usize) -> Result<Tensor> {
        let (out_c, in_c, k, _h, oh, ow) = self.conv_dims(input, stride)?;
        let n = input.shape()[0];
        let (h, w) = (input.shape()[2], input.shape()[3]);
        let wt = self.weights.data();
        let bias = self.bias.data();
        let mut out = Tensor::zeros(&[n, out_c, oh, ow]);
        let od = out.data_mut();
        for ni in 0..n {
            for oc in 0..out_c {
                for y in 0..oh {
                    for x in 0..ow {
                        let mut acc = bias[oc];
                        for ic in 0..in_c {
                            for a in 0..k {
                                let in_row =
                                    ((ni * in_c + ic) * h + y * stride + a) * w + x * stride;
                                let w_row = ((oc * in_c + ic) * k + a) * k;
                                for b in 0..k {
                                    acc += input.data()[in_row + b] * wt[w_row + b];
                                }
                            }
                        }
                        od[((ni * out_c + oc) * oh + y) * ow + x] = acc;
                    }
                }
            }
        }
        Ok(out)
    }

    fn conv_backward(
        &self,
        cache: &LayerCache,
        grad_pre: &Tensor,
        stride: usize,
    ) -> Result<(Tensor, LayerGrads)> {
        let input = &cache.input;
        let (out_c, in_c, k, h, oh, ow) = self.conv_dims(input, stride)?;
        let n = input.shape()[0];
        let w = input.shape()[3];
        let wt = self.weights.data();
        let g = grad_pre.data();

        let mut grad_w = Tensor::zeros(&[out_c, in_c, k, k]);
        let mut grad_b = Tensor::zeros(&[out_c]);
        let mut grad_in = Tensor::zeros(input.shape());
        for ni in 0..n {
            for oc in 0..out_c {
                for y in 0..oh {
                    for x in 0..ow {
                        let gv = g[((ni * out_c + oc) * oh + y) * ow + x];
                        if gv == 0.0 {
                            continue;
                        }
                        grad_b.data_mut()[oc] += gv;
                        for ic in 0..in_c {
                            for a in 0..k {
                                let in_base =
                                    ((ni * in_c + ic) * h + y * stride + a) * w + x * stride;
                                let w_base = ((oc * in_c + ic) * k + a) * k;
                                for b in 0..k {
                                    grad_w.data_mut()[w_base + b] += gv * input.data()[in_base + b];
                                    grad_in.data_mut()[in_base + b] += gv * wt[w_base + b];
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok((
            grad_in,
            LayerGrads {
                weights: grad_w,
                bias: grad_b,
            },
        ))
    }

    fn deconv_dims(
        &self,
        input: &Tensor,
        stride: usize,
    ) -> Result<(usize, usize, usize, usize, usize)> {
        let ws = self.weights.shape();
        let (in_c, out_c, k) = (ws[0], ws[1], ws[2]);
        if input.shape().len() != 4 || input.shape()[1] != in_c {
            return Err(DemvcError::dimension(
                "deconv2d forward",
                &[0, in_c, 0, 0],
                input.shape(),
            ));
        }
        let (h, w) = (input.shape()[2], input.shape()[3]);
        let oh = (h - 1) * stride + k;
        let ow = (w - 1) * stride + k;
        Ok((out_c, in_c, k, oh, ow))
    }

    fn deconv_pre(&self, input: &Tensor, stride: usize) -> Result<Tensor> {
        let (out_c, in_c, k, oh, ow) = self.deconv_dims(input, stride)?;
        let n = input.shape()[0];
        let (h, w) = (input.shape()[2], input.shape()[3]);
        let wt = self.weights.data();
        let mut out = Tensor::zeros(&[n, out_c, oh, ow]);
        for ni in 0..n {
            for ic in 0..in_c {
                for i in 0..h {
                    for j in 0..w {
                        let xv = input.data()[((ni * in_c + ic) * h + i) * w + j];
                        if xv == 0.0 {
                            continue;
                        }
                        for oc in 0..out_c {
                            for a in 0..k {
                                let o_base =
                                    ((ni * out_c + oc) * oh + i * stride + a) * ow + j * stride;
                                let w_base = ((ic * out_c + oc) * k + a) * k;
                                for b in 0..k {
                                    out.data_mut()[o_base + b] += xv * wt[w_base + b];
                                }
                            }
                        }
                    }
                }
            }
        }
        // bias per output channel
        let bias = self.bias.data();
        for ni in 0..n {
            for oc in 0..out_c {
                let base = (ni * out_c + oc) * oh * ow;
                for v in &mut out.data_mut()[base..base + oh * ow] {
                    *v += bias[oc];
                }
            }
        }
        Ok(out)
    }

    fn deconv_backward(
        &self,
        cache: &LayerCache,
        grad_pre: &Tensor,
        stride: usize,
    ) -> Result<(Tensor, LayerGrads)> {
        let input = &cache.input;
        let (out_c, in_c, k, oh, ow) = self.deconv_dims(input, stride)?;
        let n = input.shape()[0];
        let (h, w) = (input.shape()[2], input.shape()[3]);
        let wt = self.weights.data();
        let g = grad_pre.data();

        let mut grad_w = Tensor::zeros(&[in_c, out_c, k, k]);
        let mut grad_b = Tensor::zeros(&[out_c]);
        let mut grad_in = Tensor::zeros(input.shape());
        for ni in 0..n {
            for oc in 0..out_c {
                let base = (ni * out_c + oc) * oh * ow;
                for v in &g[base..base + oh * ow] {
                    grad_b.data_mut()[oc] += v;
                }
            }
        }
        for ni in 0..n {
            for ic in 0..in_c {
                for i in 0..h {
                    for j in 0..w {
                        let in_idx = ((ni * in_c + ic) * h + i) * w + j;
                        let xv = input.data()[in_idx];
                        let mut gx = 0.0;
                        for oc in 0..out_c {
                            for a in 0..k {
                                let o_base =
                                    ((ni * out_c + oc) * oh + i * stride + a) * ow + j * stride;
                                let w_base = ((ic * out_c + oc) * k + a) * k;
                                for b in 0..k {
                                    let gv = g[o_base + b];
                                    gx += gv * wt[w_base + b];
                                    grad_w.data_mut()[w_base + b] += gv * xv;
                                }
                            }
                        }
                        grad_in.data_mut()[in_idx] = gx;
                    }
                }
            }
        }
        Ok((
            grad_in,
            LayerGrads {
                weights: grad_w,
                bias: grad_b,
            },
        ))
    }
}
