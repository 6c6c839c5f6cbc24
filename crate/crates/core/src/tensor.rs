//! Differentiable building blocks for small fully-convolutional networks.
//!
//! Everything here works on single images laid out channel-major
//! (`C x H x W`). Convolutions are fixed at 3x3 with one pixel of zero
//! padding, so spatial size is preserved. Backward functions take the cached
//! forward quantities explicitly rather than recording a tape.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{arg_err, shape_err, Result};
use crate::kernels::{correlate3x3, kernel_grads, padded_row, round_up, O_BLOCK, X_BLOCK};

/// Dense real array with a gradient buffer of the same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct NetTensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Vec<f64>,
}

impl NetTensor {
    pub fn new(shape: &[usize], values: Vec<f64>) -> Result<Self> {
        check_shape(shape)?;
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(shape_err!(
                "shape {:?} needs {} values, got {}",
                shape,
                n,
                values.len()
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            grad: vec![0.0; n],
            values,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n: usize = shape.iter().product();
        assert!(shape.iter().all(|&d| d >= 1), "zero extent in {shape:?}");
        Self {
            shape: shape.to_vec(),
            values: vec![value; n],
            grad: vec![0.0; n],
        }
    }

    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        let values = (0..n).map(f).collect();
        Self::new(shape, values).expect("valid shape")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        &mut self.grad
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Adds `scale * delta` into the gradient buffer.
    pub fn accumulate_grad(&mut self, delta: &[f64], scale: f64) {
        debug_assert_eq!(delta.len(), self.grad.len());
        for (g, d) in self.grad.iter_mut().zip(delta) {
            *g += scale * d;
        }
    }

    /// `(channels, height, width)` of a rank-3 feature map.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(shape_err!("expected a C x H x W tensor, got {:?}", self.shape)),
        }
    }

    pub fn at3(&self, c: usize, y: usize, x: usize) -> f64 {
        let (_, h, w) = (self.shape[0], self.shape[1], self.shape[2]);
        self.values[(c * h + y) * w + x]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.shape[1] * self.shape[2];
        &self.values[c * plane..(c + 1) * plane]
    }

    pub fn dot(&self, other: &NetTensor) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(shape_err!("invalid shape {:?}", shape));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    None,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::None => x,
        }
    }

    /// Derivative expressed through the activation's own output `y`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::None => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "sigmoid" => Some(Activation::Sigmoid),
            "none" | "linear" => Some(Activation::None),
            _ => None,
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn activation_apply(x: &NetTensor, kind: Activation) -> NetTensor {
    let values = x.values.iter().map(|&v| kind.apply(v)).collect();
    NetTensor::new(&x.shape, values).expect("same shape")
}

/// A 3x3 convolution with bias and activation.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    /// `O x C x 3 x 3`
    pub kernels: NetTensor,
    /// `O`
    pub bias: NetTensor,
    pub activation: Activation,
}

pub const KERNEL_SIZE: usize = 3;

impl ConvLayer {
    /// Xavier-initialized kernels and zero bias.
    pub fn new(in_channels: usize, out_channels: usize, activation: Activation, seed: u64) -> Self {
        Self {
            kernels: xavier_init(&[out_channels, in_channels, KERNEL_SIZE, KERNEL_SIZE], seed),
            bias: NetTensor::zeros(&[out_channels]),
            activation,
        }
    }

    pub fn from_parts(kernels: NetTensor, bias: NetTensor, activation: Activation) -> Result<Self> {
        match kernels.shape() {
            [o, _, KERNEL_SIZE, KERNEL_SIZE] if bias.shape() == [*o] => Ok(Self {
                kernels,
                bias,
                activation,
            }),
            _ => Err(shape_err!(
                "kernels {:?} with bias {:?} do not form a 3x3 layer",
                kernels.shape(),
                bias.shape()
            )),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.shape[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.shape[1]
    }

    pub fn parameter_count(&self) -> usize {
        self.kernels.len() + self.bias.len()
    }
}

/// Gradients produced by [`conv2d_backward`].
#[derive(Clone, Debug)]
pub struct ConvGrads {
    /// Absent when the caller asked to skip the input gradient.
    pub input: Option<NetTensor>,
    pub kernels: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Copies each channel into a zero border of width one, rows widened to the
/// kernel block size.
fn pad_channels(values: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let pw = padded_row(w);
    let plane = (h + 2) * pw;
    let mut out = vec![0.0; c * plane];
    for ch in 0..c {
        for y in 0..h {
            let src = &values[(ch * h + y) * w..][..w];
            out[ch * plane + (y + 1) * pw + 1..][..w].copy_from_slice(src);
        }
    }
    out
}

/// Rearranges `O x C x 9` weights into `C x 9 x O_pad` so that a block of
/// output channels reads contiguous taps. With `flip_transpose` the result
/// describes the adjoint convolution (`O` and `C` swapped, taps reversed).
fn pack_weights(k: &[f64], o: usize, c: usize, flip_transpose: bool) -> (Vec<f64>, usize) {
    let (outs, ins) = if flip_transpose { (c, o) } else { (o, c) };
    let opad = round_up(outs, O_BLOCK);
    let mut packed = vec![0.0; ins * 9 * opad];
    for oc in 0..o {
        for ic in 0..c {
            for t in 0..9 {
                let v = k[(oc * c + ic) * 9 + t];
                let idx = if flip_transpose {
                    (oc * 9 + (8 - t)) * opad + ic
                } else {
                    (ic * 9 + t) * opad + oc
                };
                packed[idx] = v;
            }
        }
    }
    (packed, opad)
}

/// Widens each `h x w` plane to rows of `round_up(w, X_BLOCK)`, zero-filled.
fn widen_rows(values: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let wr = round_up(w, X_BLOCK);
    let mut out = vec![0.0; c * h * wr];
    for row in 0..c * h {
        out[row * wr..][..w].copy_from_slice(&values[row * w..][..w]);
    }
    out
}

/// Same-size 3x3 convolution (cross-correlation) with zero padding, bias and
/// activation.
pub fn conv2d_forward(input: &NetTensor, layer: &ConvLayer) -> Result<NetTensor> {
    let (c, h, w) = input.dims3()?;
    if c != layer.in_channels() {
        return Err(shape_err!(
            "layer expects {} input channels, got {}",
            layer.in_channels(),
            c
        ));
    }
    let o = layer.out_channels();
    let padded = pad_channels(&input.values, c, h, w);
    let (packed, opad) = pack_weights(&layer.kernels.values, o, c, false);
    let mut out = vec![0.0; o * h * w];
    correlate3x3(&padded, c, h, w, &packed, opad, &layer.bias.values, &mut out, o);
    if layer.activation != Activation::None {
        out.iter_mut().for_each(|v| *v = layer.activation.apply(*v));
    }
    NetTensor::new(&[o, h, w], out)
}

/// Gradients of [`conv2d_forward`] given its input, its output and the
/// gradient arriving at the output.
pub fn conv2d_backward(
    input: &NetTensor,
    layer: &ConvLayer,
    output: &NetTensor,
    upstream: &NetTensor,
) -> Result<ConvGrads> {
    conv2d_backward_with(input, layer, output, upstream, true)
}

pub(crate) fn conv2d_backward_with(
    input: &NetTensor,
    layer: &ConvLayer,
    output: &NetTensor,
    upstream: &NetTensor,
    need_input_grad: bool,
) -> Result<ConvGrads> {
    let (c, h, w) = input.dims3()?;
    let o = layer.out_channels();
    if c != layer.in_channels() || output.shape() != [o, h, w] || upstream.shape() != output.shape() {
        return Err(shape_err!(
            "backward shapes inconsistent: input {:?}, output {:?}, upstream {:?}, layer {}->{}",
            input.shape(),
            output.shape(),
            upstream.shape(),
            layer.in_channels(),
            o
        ));
    }
    let plane = h * w;

    let act = layer.activation;
    let g: Vec<f64> = upstream
        .values
        .iter()
        .zip(&output.values)
        .map(|(&u, &y)| u * act.derivative_from_output(y))
        .collect();

    let bias: Vec<f64> = (0..o).map(|oc| g[oc * plane..(oc + 1) * plane].iter().sum()).collect();

    let padded = pad_channels(&input.values, c, h, w);
    let kernels = kernel_grads(&widen_rows(&g, o, h, w), o, &padded, c, h, w);

    let input_grad = if need_input_grad {
        let g_padded = pad_channels(&g, o, h, w);
        let (packed, cpad) = pack_weights(&layer.kernels.values, o, c, true);
        let mut ig = vec![0.0; c * plane];
        correlate3x3(&g_padded, o, h, w, &packed, cpad, &[], &mut ig, c);
        Some(NetTensor::new(&[c, h, w], ig)?)
    } else {
        None
    };

    Ok(ConvGrads {
        input: input_grad,
        kernels,
        bias,
    })
}

/// Winning input offsets of a max-pool, kept for the backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolIndices {
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    argmax: Vec<usize>,
}

impl PoolIndices {
    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }
}

/// Non-overlapping `factor x factor` max-pool. Ties go to the first position
/// in row-major order.
pub fn maxpool_forward(input: &NetTensor, factor: usize) -> Result<(NetTensor, PoolIndices)> {
    let (c, h, w) = input.dims3()?;
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(shape_err!(
            "{}x{} is not divisible by pool factor {}",
            h,
            w,
            factor
        ));
    }
    let (oh, ow) = (h / factor, w / factor);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = usize::MAX;
                for dy in 0..factor {
                    let row = (ch * h + oy * factor + dy) * w + ox * factor;
                    for dx in 0..factor {
                        let v = input.values[row + dx];
                        if v > best || best_idx == usize::MAX {
                            best = v;
                            best_idx = row + dx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    let output_shape = vec![c, oh, ow];
    Ok((
        NetTensor::new(&output_shape, out)?,
        PoolIndices {
            input_shape: input.shape.clone(),
            output_shape,
            argmax,
        },
    ))
}

pub fn maxpool_backward(indices: &PoolIndices, upstream: &NetTensor) -> Result<NetTensor> {
    if upstream.shape() != indices.output_shape.as_slice() {
        return Err(shape_err!(
            "upstream {:?} does not match pooled shape {:?}",
            upstream.shape(),
            indices.output_shape
        ));
    }
    let mut grad = NetTensor::zeros(&indices.input_shape);
    for (&idx, &g) in indices.argmax.iter().zip(&upstream.values) {
        grad.values[idx] += g;
    }
    Ok(grad)
}

/// Nearest-neighbour upsampling: every value becomes a `factor x factor` block.
pub fn upsample_nearest(input: &NetTensor, factor: usize) -> Result<NetTensor> {
    let (c, h, w) = input.dims3()?;
    if factor == 0 {
        return Err(arg_err!("upsample factor must be at least 1"));
    }
    let (oh, ow) = (h * factor, w * factor);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            let src = &input.values[(ch * h + y / factor) * w..][..w];
            let dst = &mut out[(ch * oh + y) * ow..][..ow];
            for (x, d) in dst.iter_mut().enumerate() {
                *d = src[x / factor];
            }
        }
    }
    NetTensor::new(&[c, oh, ow], out)
}

/// Adjoint of [`upsample_nearest`]: sums each `factor x factor` block.
pub fn block_sum(upstream: &NetTensor, factor: usize) -> Result<NetTensor> {
    let (c, h, w) = upstream.dims3()?;
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(shape_err!("{}x{} is not divisible by factor {}", h, w, factor));
    }
    let (oh, ow) = (h / factor, w / factor);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for y in 0..h {
            let src = &upstream.values[(ch * h + y) * w..][..w];
            let dst = &mut out[(ch * oh + y / factor) * ow..][..ow];
            for (x, &v) in src.iter().enumerate() {
                dst[x / factor] += v;
            }
        }
    }
    NetTensor::new(&[c, oh, ow], out)
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse_loss(pred: &NetTensor, target: &NetTensor) -> Result<(f64, NetTensor)> {
    if pred.shape() != target.shape() {
        return Err(shape_err!(
            "prediction {:?} and target {:?} differ",
            pred.shape(),
            target.shape()
        ));
    }
    let n = pred.len() as f64;
    let mut sum = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.values.iter().zip(&target.values) {
        let d = p - t;
        sum += d * d;
        grad.push(2.0 * d / n);
    }
    Ok((sum / n, NetTensor::new(&pred.shape, grad)?))
}

/// `lambda` times the population standard deviation of the layer's kernel
/// weights, with the gradient of that penalty for each weight.
pub fn weight_std_penalty(layer: &ConvLayer, lambda: f64) -> (f64, Vec<f64>) {
    let w = layer.kernels.values();
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let var = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if lambda == 0.0 || std == 0.0 {
        return (lambda * std, vec![0.0; w.len()]);
    }
    let grad = w.iter().map(|v| lambda * (v - mean) / (n * std)).collect();
    (lambda * std, grad)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for a fixed, ordered list of parameter tensors.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, param_lens: &[usize]) -> Self {
        Self {
            config,
            step: 0,
            first: param_lens.iter().map(|&n| vec![0.0; n]).collect(),
            second: param_lens.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update of `params` from their gradient buffers. Parameters are
/// kept on the single-precision grid so they serialize without loss.
pub fn adam_step(params: &mut [&mut NetTensor], state: &mut AdamState) -> Result<()> {
    if params.len() != state.first.len() {
        return Err(shape_err!(
            "optimizer tracks {} tensors, got {}",
            state.first.len(),
            params.len()
        ));
    }
    for (p, m) in params.iter().zip(&state.first) {
        if p.len() != m.len() {
            return Err(shape_err!("parameter of {} values, moments of {}", p.len(), m.len()));
        }
    }
    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for ((p, m), v) in params.iter_mut().zip(&mut state.first).zip(&mut state.second) {
        for i in 0..p.values.len() {
            let g = p.grad[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            let updated = p.values[i] - lr * m_hat / (v_hat.sqrt() + epsilon);
            p.values[i] = updated as f32 as f64;
        }
    }
    Ok(())
}

/// Fan-in and fan-out of a weight shape: kernels `O x C x kh x kw`, matrices
/// `O x I`, vectors use their length for both.
pub fn fans(shape: &[usize]) -> (usize, usize) {
    match *shape {
        [o, c, kh, kw] => (c * kh * kw, o * kh * kw),
        [o, i] => (i, o),
        _ => {
            let n = shape.iter().product();
            (n, n)
        }
    }
}

/// Uniform Xavier initialization in `+-sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_init(shape: &[usize], seed: u64) -> NetTensor {
    let (fan_in, fan_out) = fans(shape);
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    NetTensor::from_fn(shape, |_| {
        let v: f64 = rng.random_range(-bound..=bound);
        (v as f32 as f64).clamp(-bound, bound)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer_with(kernel: [f64; 9], activation: Activation) -> ConvLayer {
        ConvLayer::from_parts(
            NetTensor::new(&[1, 1, 3, 3], kernel.to_vec()).unwrap(),
            NetTensor::zeros(&[1]),
            activation,
        )
        .unwrap()
    }

    #[test]
    fn all_ones_convolution_counts_neighbours() {
        let input = NetTensor::filled(&[1, 3, 3], 1.0);
        let out = conv2d_forward(&input, &layer_with([1.0; 9], Activation::None)).unwrap();
        assert_eq!(out.values(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut k = [0.0; 9];
        k[4] = 1.0;
        let input = NetTensor::from_fn(&[1, 4, 5], |i| i as f64 * 0.37 - 2.0);
        let out = conv2d_forward(&input, &layer_with(k, Activation::None)).unwrap();
        assert_eq!(out.values(), input.values());
    }

    #[test]
    fn channel_mismatch_is_a_shape_error() {
        let input = NetTensor::zeros(&[2, 3, 3]);
        assert!(conv2d_forward(&input, &layer_with([0.0; 9], Activation::None)).is_err());
        assert!(NetTensor::zeros(&[3, 3]).dims3().is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let layer = ConvLayer::new(2, 3, Activation::Relu, 4);
        let input = NetTensor::from_fn(&[2, 5, 5], |i| (i as f64).sin());
        let out = conv2d_forward(&input, &layer).unwrap();
        let grads = conv2d_backward(&input, &layer, &out, &NetTensor::zeros(out.shape())).unwrap();
        assert!(grads.input.unwrap().values().iter().all(|&v| v == 0.0));
        assert!(grads.kernels.iter().all(|&v| v == 0.0));
        assert!(grads.bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_pixel_kernel_grad_is_input_times_upstream() {
        let mut k = [0.0; 9];
        k[4] = 0.5;
        let layer = layer_with(k, Activation::None);
        let input = NetTensor::new(&[1, 1, 1], vec![3.0]).unwrap();
        let out = conv2d_forward(&input, &layer).unwrap();
        let up = NetTensor::new(&[1, 1, 1], vec![-2.0]).unwrap();
        let grads = conv2d_backward(&input, &layer, &out, &up).unwrap();
        assert_eq!(grads.kernels[4], -6.0);
        assert_eq!(grads.bias[0], -2.0);
        assert!(grads.kernels.iter().enumerate().all(|(i, &g)| i == 4 || g == 0.0));
        assert_eq!(grads.input.unwrap().values(), &[-1.0]);
    }

    #[test]
    fn maxpool_basics() {
        let input = NetTensor::from_fn(&[1, 3, 3], |i| (i + 1) as f64);
        let (out, idx) = maxpool_forward(&input, 3).unwrap();
        assert_eq!(out.values(), &[9.0]);
        assert_eq!(idx.argmax(), &[8]);

        let (out, idx) = maxpool_forward(&NetTensor::filled(&[1, 6, 6], 2.5), 3).unwrap();
        assert_eq!(out.shape(), &[1, 2, 2]);
        assert!(out.values().iter().all(|&v| v == 2.5));
        assert_eq!(idx.argmax(), &[0, 3, 18, 21]);

        assert!(maxpool_forward(&NetTensor::zeros(&[1, 4, 6]), 3).is_err());
    }

    #[test]
    fn maxpool_backward_routes_to_winners() {
        let input = NetTensor::from_fn(&[1, 6, 6], |i| ((i * 7) % 11) as f64);
        let (out, idx) = maxpool_forward(&input, 3).unwrap();
        let g = maxpool_backward(&idx, &NetTensor::filled(out.shape(), 1.0)).unwrap();
        assert_eq!(g.values().iter().filter(|&&v| v == 1.0).count(), 4);
        assert_eq!(g.values().iter().sum::<f64>(), 4.0);
        let z = maxpool_backward(&idx, &NetTensor::zeros(out.shape())).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn upsample_cases() {
        let five = NetTensor::new(&[1, 1, 1], vec![5.0]).unwrap();
        let up = upsample_nearest(&five, 3).unwrap();
        assert_eq!(up.shape(), &[1, 3, 3]);
        assert!(up.values().iter().all(|&v| v == 5.0));

        let x = NetTensor::from_fn(&[2, 2, 3], |i| i as f64);
        assert_eq!(upsample_nearest(&x, 1).unwrap().values(), x.values());

        let constant = NetTensor::filled(&[2, 6, 6], 0.75);
        let (pooled, _) = maxpool_forward(&constant, 3).unwrap();
        assert_eq!(upsample_nearest(&pooled, 3).unwrap(), constant);
    }

    #[test]
    fn activations() {
        assert_eq!(Activation::Sigmoid.apply(0.0), 0.5);
        assert_eq!(Activation::Relu.apply(-2.0), 0.0);
        assert_eq!(Activation::Relu.apply(3.0), 3.0);
        let d = Activation::Sigmoid.derivative_from_output(Activation::Sigmoid.apply(0.0));
        assert_eq!(d, 0.25);
        let h = 1e-5;
        let fd = (sigmoid(h) - sigmoid(-h)) / (2.0 * h);
        assert!((fd - 0.25).abs() < 1e-6);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn mse_examples() {
        let a = NetTensor::from_fn(&[4], |i| i as f64);
        assert_eq!(mse_loss(&a, &a).unwrap().0, 0.0);

        let pred = NetTensor::zeros(&[2]);
        let target = NetTensor::filled(&[2], 1.0);
        let (loss, grad) = mse_loss(&pred, &target).unwrap();
        assert_eq!(loss, 1.0);
        assert_eq!(grad.values(), &[-1.0, -1.0]);

        let p = NetTensor::from_fn(&[3], |i| i as f64 * 0.5);
        let t = NetTensor::from_fn(&[3], |i| 1.0 - i as f64);
        let scale = |x: &NetTensor, c: f64| NetTensor::from_fn(x.shape(), |i| c * x.values()[i]);
        let base = mse_loss(&p, &t).unwrap().0;
        let scaled = mse_loss(&scale(&p, 3.0), &scale(&t, 3.0)).unwrap().0;
        assert!((scaled - 9.0 * base).abs() < 1e-12);

        assert!(mse_loss(&a, &NetTensor::zeros(&[2, 2])).is_err());
    }

    #[test]
    fn std_penalty_examples() {
        let flat = ConvLayer::from_parts(
            NetTensor::filled(&[1, 1, 3, 3], 0.3),
            NetTensor::zeros(&[1]),
            Activation::None,
        )
        .unwrap();
        assert_eq!(weight_std_penalty(&flat, 2.0).0, 0.0);

        let two = ConvLayer {
            kernels: NetTensor::new(&[2, 1, 1, 1], vec![-1.0, 1.0]).unwrap(),
            bias: NetTensor::zeros(&[2]),
            activation: Activation::None,
        };
        assert_eq!(weight_std_penalty(&two, 1.0).0, 1.0);
        let (p0, g0) = weight_std_penalty(&two, 0.0);
        assert_eq!(p0, 0.0);
        assert!(g0.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn adam_first_step_and_zero_gradient() {
        let mut w = NetTensor::filled(&[1], 1.0);
        w.grad_mut()[0] = 1.0;
        let mut state = AdamState::new(
            AdamConfig {
                lr: 0.1,
                ..AdamConfig::default()
            },
            &[1],
        );
        adam_step(&mut [&mut w], &mut state).unwrap();
        assert!((w.values()[0] - 0.9).abs() < 1e-6);
        assert_eq!(state.step_count(), 1);

        let mut p = xavier_init(&[4, 2, 3, 3], 9);
        let before = p.clone();
        let mut state = AdamState::new(AdamConfig::default(), &[p.len()]);
        for _ in 0..10 {
            adam_step(&mut [&mut p], &mut state).unwrap();
        }
        assert_eq!(p.values(), before.values());
    }

    #[test]
    fn adam_minimizes_scalar_quadratic() {
        let mut w = NetTensor::filled(&[1], 3.0);
        let mut state = AdamState::new(
            AdamConfig {
                lr: 0.1,
                ..AdamConfig::default()
            },
            &[1],
        );
        for _ in 0..200 {
            let g = 2.0 * w.values()[0];
            w.grad_mut()[0] = g;
            adam_step(&mut [&mut w], &mut state).unwrap();
        }
        assert!(w.values()[0].abs() < 0.1);
    }

    #[test]
    fn adam_rejects_mismatched_parameters() {
        let mut w = NetTensor::zeros(&[3]);
        let mut state = AdamState::new(AdamConfig::default(), &[2]);
        assert!(adam_step(&mut [&mut w], &mut state).is_err());
    }

    #[test]
    fn xavier_support_moments_and_determinism() {
        let shape = [8, 8, 3, 3];
        let (fi, fo) = fans(&shape);
        assert_eq!((fi, fo), (72, 72));
        let bound = (6.0 / (fi + fo) as f64).sqrt();
        assert_eq!(xavier_init(&shape, 1), xavier_init(&shape, 1));
        assert_ne!(xavier_init(&shape, 1), xavier_init(&shape, 2));

        let samples: Vec<f64> = (0..18)
            .flat_map(|s| xavier_init(&shape, s).into_values())
            .collect();
        assert!(samples.len() >= 10_000);
        assert!(samples.iter().all(|v| v.abs() <= bound));
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (samples.len() - 1) as f64;
        let expected = 2.0 / (fi + fo) as f64;
        assert!((var - expected).abs() < 0.2 * expected, "{var} vs {expected}");
    }
}
