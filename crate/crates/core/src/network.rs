//! Sequential convolutional networks described by a compact text descriptor,
//! plus the mini-batch Adam training loop shared by both models.
//!
//! Descriptor grammar, stages separated by `;`:
//!
//! ```text
//! conv(IN,OUT,ACT)           3x3 convolution, ACT in relu|sigmoid|none
//! conv(IN,OUT,ACT,std=L)     same, with a weight-std penalty of weight L
//! maxpool(F)                 F x F max-pool
//! upsample(F)                F x F nearest-neighbour upsampling
//! ```

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{shape_err, Error, Result};
use crate::raster::mirror_index;
use crate::rng::{derive_seed, seeded};
use crate::tensor::{
    adam_step, block_sum, conv2d_backward_with, conv2d_forward, maxpool_backward, maxpool_forward, mse_loss,
    upsample_nearest, weight_std_penalty, Activation, AdamConfig, AdamState, ConvGrads, ConvLayer, NetTensor,
    PoolIndices,
};

#[derive(Clone, Debug, PartialEq)]
pub enum Stage {
    Conv(ConvLayer),
    MaxPool(usize),
    Upsample(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    stages: Vec<Stage>,
    /// Conv-layer index and weight of the kernel-std penalty.
    regularizer: Option<(usize, f64)>,
}

/// Intermediate values of one forward pass, consumed by [`Network::backward`].
pub struct ForwardCache {
    activations: Vec<NetTensor>,
    pools: Vec<Option<PoolIndices>>,
}

impl ForwardCache {
    pub fn output(&self) -> &NetTensor {
        self.activations.last().expect("cache holds the input")
    }
}

fn desc_err(msg: impl Into<String>) -> Error {
    Error::Descriptor(msg.into())
}

fn parse_stage(token: &str) -> Result<(String, Vec<String>)> {
    let token = token.trim();
    let open = token.find('(').ok_or_else(|| desc_err(format!("missing '(' in {token:?}")))?;
    if !token.ends_with(')') {
        return Err(desc_err(format!("missing ')' in {token:?}")));
    }
    let name = token[..open].trim().to_string();
    let args = token[open + 1..token.len() - 1]
        .split(',')
        .map(|a| a.trim().to_string())
        .filter(|a| !a.is_empty())
        .collect();
    Ok((name, args))
}

fn parse_usize(s: &str) -> Result<usize> {
    s.parse::<usize>()
        .ok()
        .filter(|&v| v >= 1)
        .ok_or_else(|| desc_err(format!("expected a positive integer, got {s:?}")))
}

impl Network {
    /// Builds a network with Xavier-initialized kernels and zero biases.
    pub fn from_descriptor(descriptor: &str, seed: u64) -> Result<Self> {
        let mut stages = Vec::new();
        let mut regularizer = None;
        let mut conv_index = 0u64;
        for token in descriptor.split(';').filter(|t| !t.trim().is_empty()) {
            let (name, args) = parse_stage(token)?;
            match (name.as_str(), args.len()) {
                ("conv", 3 | 4) => {
                    let cin = parse_usize(&args[0])?;
                    let cout = parse_usize(&args[1])?;
                    let act = Activation::parse(&args[2])
                        .ok_or_else(|| desc_err(format!("unknown activation {:?}", args[2])))?;
                    if let Some(extra) = args.get(3) {
                        let lambda = extra
                            .strip_prefix("std=")
                            .and_then(|v| v.parse::<f64>().ok())
                            .filter(|v| *v >= 0.0 && v.is_finite())
                            .ok_or_else(|| desc_err(format!("bad regularizer {extra:?}")))?;
                        if regularizer.is_some() {
                            return Err(desc_err("at most one regularized layer"));
                        }
                        regularizer = Some((conv_index as usize, lambda));
                    }
                    stages.push(Stage::Conv(ConvLayer::new(cin, cout, act, derive_seed(seed, conv_index))));
                    conv_index += 1;
                }
                ("maxpool", 1) => stages.push(Stage::MaxPool(parse_usize(&args[0])?)),
                ("upsample", 1) => stages.push(Stage::Upsample(parse_usize(&args[0])?)),
                _ => return Err(desc_err(format!("unrecognized stage {token:?}"))),
            }
        }
        let net = Self { stages, regularizer };
        net.validate()?;
        Ok(net)
    }

    fn validate(&self) -> Result<()> {
        let mut channels: Option<usize> = None;
        let mut scale: i64 = 0;
        for stage in &self.stages {
            match stage {
                Stage::Conv(layer) => {
                    if let Some(c) = channels {
                        if c != layer.in_channels() {
                            return Err(desc_err(format!(
                                "layer consumes {} channels but receives {}",
                                layer.in_channels(),
                                c
                            )));
                        }
                    }
                    channels = Some(layer.out_channels());
                }
                Stage::MaxPool(_) => scale += 1,
                Stage::Upsample(_) => scale -= 1,
            }
        }
        if channels.is_none() {
            return Err(desc_err("network has no convolution"));
        }
        if scale != 0 || self.pool_factor() != self.upsample_factor() {
            return Err(desc_err("pooling and upsampling do not cancel"));
        }
        Ok(())
    }

    fn pool_factor(&self) -> usize {
        self.stages
            .iter()
            .map(|s| if let Stage::MaxPool(f) = s { *f } else { 1 })
            .product()
    }

    fn upsample_factor(&self) -> usize {
        self.stages
            .iter()
            .map(|s| if let Stage::Upsample(f) = s { *f } else { 1 })
            .product()
    }

    /// Input height and width must be multiples of this.
    pub fn spatial_multiple(&self) -> usize {
        self.pool_factor()
    }

    pub fn descriptor(&self) -> String {
        let mut out = String::new();
        let mut conv_index = 0;
        for (i, stage) in self.stages.iter().enumerate() {
            if i > 0 {
                out.push(';');
            }
            match stage {
                Stage::Conv(l) => {
                    let _ = write!(out, "conv({},{},{}", l.in_channels(), l.out_channels(), l.activation.name());
                    if let Some((idx, lambda)) = self.regularizer {
                        if idx == conv_index {
                            let _ = write!(out, ",std={lambda}");
                        }
                    }
                    out.push(')');
                    conv_index += 1;
                }
                Stage::MaxPool(f) => {
                    let _ = write!(out, "maxpool({f})");
                }
                Stage::Upsample(f) => {
                    let _ = write!(out, "upsample({f})");
                }
            }
        }
        out
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn regularizer(&self) -> Option<(usize, f64)> {
        self.regularizer
    }

    pub fn set_regularizer_weight(&mut self, lambda: f64) {
        if let Some((_, l)) = self.regularizer.as_mut() {
            *l = lambda;
        }
    }

    pub fn conv_layers(&self) -> impl Iterator<Item = &ConvLayer> {
        self.stages.iter().filter_map(|s| match s {
            Stage::Conv(l) => Some(l),
            _ => None,
        })
    }

    pub fn conv_layers_mut(&mut self) -> impl Iterator<Item = &mut ConvLayer> {
        self.stages.iter_mut().filter_map(|s| match s {
            Stage::Conv(l) => Some(l),
            _ => None,
        })
    }

    pub fn conv_count(&self) -> usize {
        self.conv_layers().count()
    }

    /// Replaces every convolution's parameters, keeping the stage layout.
    pub fn replace_layers(&mut self, layers: Vec<ConvLayer>) -> Result<()> {
        if layers.len() != self.conv_count() {
            return Err(shape_err!(
                "network has {} convolutions, got {} layers",
                self.conv_count(),
                layers.len()
            ));
        }
        for (slot, layer) in self.conv_layers().zip(&layers) {
            if slot.kernels.shape() != layer.kernels.shape() || slot.activation != layer.activation {
                return Err(shape_err!(
                    "layer {:?}/{} does not fit slot {:?}/{}",
                    layer.kernels.shape(),
                    layer.activation.name(),
                    slot.kernels.shape(),
                    slot.activation.name()
                ));
            }
        }
        for (slot, layer) in self.conv_layers_mut().zip(layers) {
            *slot = layer;
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.conv_layers().map(ConvLayer::parameter_count).sum()
    }

    pub fn input_channels(&self) -> usize {
        self.conv_layers().next().map_or(0, ConvLayer::in_channels)
    }

    pub fn output_channels(&self) -> usize {
        self.conv_layers().last().map_or(0, ConvLayer::out_channels)
    }

    /// Inference pass keeping only the current activation.
    pub fn forward(&self, input: &NetTensor) -> Result<NetTensor> {
        let mut x = self.apply_stage(0, input)?;
        for i in 1..self.stages.len() {
            x = self.apply_stage(i, &x)?;
        }
        Ok(x)
    }

    fn apply_stage(&self, i: usize, x: &NetTensor) -> Result<NetTensor> {
        match &self.stages[i] {
            Stage::Conv(l) => conv2d_forward(x, l),
            Stage::MaxPool(f) => Ok(maxpool_forward(x, *f)?.0),
            Stage::Upsample(f) => upsample_nearest(x, *f),
        }
    }

    pub fn forward_cached(&self, input: &NetTensor) -> Result<ForwardCache> {
        let mut activations = Vec::with_capacity(self.stages.len() + 1);
        let mut pools = Vec::with_capacity(self.stages.len());
        activations.push(input.clone());
        for stage in &self.stages {
            let x = activations.last().unwrap();
            let (y, pool) = match stage {
                Stage::Conv(l) => (conv2d_forward(x, l)?, None),
                Stage::MaxPool(f) => {
                    let (y, idx) = maxpool_forward(x, *f)?;
                    (y, Some(idx))
                }
                Stage::Upsample(f) => (upsample_nearest(x, *f)?, None),
            };
            activations.push(y);
            pools.push(pool);
        }
        Ok(ForwardCache { activations, pools })
    }

    /// Parameter gradients (one entry per convolution, in order) and the
    /// gradient with respect to the network input when requested.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        upstream: &NetTensor,
        need_input_grad: bool,
    ) -> Result<(Vec<ConvGrads>, Option<NetTensor>)> {
        let mut grads = Vec::with_capacity(self.conv_count());
        let mut g = upstream.clone();
        for (i, stage) in self.stages.iter().enumerate().rev() {
            let input = &cache.activations[i];
            let output = &cache.activations[i + 1];
            let skip_input = !need_input_grad && i == 0;
            g = match stage {
                Stage::Conv(l) => {
                    let mut cg = conv2d_backward_with(input, l, output, &g, !skip_input)?;
                    let next = cg.input.take();
                    grads.push(cg);
                    match next {
                        Some(n) => n,
                        None => {
                            grads.reverse();
                            return Ok((grads, None));
                        }
                    }
                }
                Stage::MaxPool(_) => maxpool_backward(cache.pools[i].as_ref().unwrap(), &g)?,
                Stage::Upsample(f) => block_sum(&g, *f)?,
            };
        }
        grads.reverse();
        Ok((grads, Some(g)))
    }

    fn params_mut(&mut self) -> Vec<&mut NetTensor> {
        self.stages
            .iter_mut()
            .filter_map(|s| match s {
                Stage::Conv(l) => Some([&mut l.kernels, &mut l.bias]),
                _ => None,
            })
            .flatten()
            .collect()
    }

    fn param_lens(&self) -> Vec<usize> {
        self.conv_layers()
            .flat_map(|l| [l.kernels.len(), l.bias.len()])
            .collect()
    }
}

/// Mini-batch training options.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

/// Minimizes `mse(net(input), target)` plus the network's weight-std penalty
/// with Adam. When `targets` is `None` each input is its own target.
///
/// Returns the mean objective of every epoch. `on_epoch` is called after each
/// epoch with its index and loss.
pub fn fit(
    net: &mut Network,
    inputs: &[NetTensor],
    targets: Option<&[NetTensor]>,
    options: &FitOptions,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    if let Some(t) = targets {
        if t.len() != inputs.len() {
            return Err(shape_err!("{} inputs but {} targets", inputs.len(), t.len()));
        }
    }
    if options.epochs > 0 && inputs.is_empty() {
        return Err(shape_err!("no training samples"));
    }
    retain_freed_memory();
    let batch_size = options.batch_size.max(1);
    let mut state = AdamState::new(options.adam, &net.param_lens());
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut history = Vec::with_capacity(options.epochs);

    for epoch in 0..options.epochs {
        order.shuffle(&mut seeded(derive_seed(options.seed, epoch as u64)));
        let mut epoch_mse = 0.0;
        let mut epoch_penalty = 0.0;
        let mut batches = 0usize;

        for batch in order.chunks(batch_size) {
            let net_ref = &*net;
            let per_sample: Vec<(f64, Vec<ConvGrads>)> = batch
                .par_iter()
                .map(|&i| -> Result<(f64, Vec<ConvGrads>)> {
                    let input = &inputs[i];
                    let target = targets.map_or(input, |t| &t[i]);
                    let cache = net_ref.forward_cached(input)?;
                    let (loss, grad) = mse_loss(cache.output(), target)?;
                    let (grads, _) = net_ref.backward(&cache, &grad, false)?;
                    Ok((loss, grads))
                })
                .collect::<Result<_>>()?;

            let scale = 1.0 / batch.len() as f64;
            let regularizer = net.regularizer;
            for (k, layer) in net.conv_layers_mut().enumerate() {
                layer.kernels.zero_grad();
                layer.bias.zero_grad();
                for (_, grads) in &per_sample {
                    layer.kernels.accumulate_grad(&grads[k].kernels, scale);
                    layer.bias.accumulate_grad(&grads[k].bias, scale);
                }
                if let Some((idx, lambda)) = regularizer {
                    if idx == k && lambda > 0.0 {
                        let (penalty, pg) = weight_std_penalty(layer, lambda);
                        layer.kernels.accumulate_grad(&pg, 1.0);
                        epoch_penalty += penalty;
                    }
                }
            }
            epoch_mse += per_sample.iter().map(|(l, _)| l).sum::<f64>();
            batches += 1;

            let mut params = net.params_mut();
            adam_step(&mut params, &mut state)?;
        }

        let loss = epoch_mse / inputs.len() as f64 + epoch_penalty / batches as f64;
        history.push(loss);
        on_epoch(epoch, loss);
    }
    Ok(history)
}

/// Training allocates and frees many sub-megabyte buffers per step. glibc's
/// default trimming hands that memory back to the OS after every free, which
/// turns each step into a stream of page faults. Keep it in the heap instead.
fn retain_freed_memory() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    {
        use std::sync::Once;
        static TUNED: Once = Once::new();
        TUNED.call_once(|| {
            // SAFETY: mallopt only adjusts allocator parameters.
            unsafe {
                libc::mallopt(libc::M_MMAP_THRESHOLD, 32 << 20);
                libc::mallopt(libc::M_TRIM_THRESHOLD, 256 << 20);
                libc::mallopt(libc::M_TOP_PAD, 64 << 20);
            }
        });
    }
}

/// Mirror-extends every channel on the bottom and right edges to `h x w`.
pub fn pad_mirror(x: &NetTensor, h: usize, w: usize) -> Result<NetTensor> {
    let (c, xh, xw) = x.dims3()?;
    if h < xh || w < xw {
        return Err(shape_err!("cannot pad {}x{} down to {}x{}", xh, xw, h, w));
    }
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for y in 0..h {
            let sy = mirror_index(y as isize, xh);
            for xx in 0..w {
                out.push(x.at3(ch, sy, mirror_index(xx as isize, xw)));
            }
        }
    }
    NetTensor::new(&[c, h, w], out)
}

/// Copies the `h x w` window at `(y0, x0)` of every channel.
pub fn crop(x: &NetTensor, y0: usize, x0: usize, h: usize, w: usize) -> Result<NetTensor> {
    let (c, xh, xw) = x.dims3()?;
    if y0 + h > xh || x0 + w > xw {
        return Err(shape_err!(
            "window {}x{} at ({}, {}) exceeds {}x{}",
            h,
            w,
            y0,
            x0,
            xh,
            xw
        ));
    }
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for y in 0..h {
            let start = (ch * xh + y0 + y) * xw + x0;
            out.extend_from_slice(&x.values()[start..start + w]);
        }
    }
    NetTensor::new(&[c, h, w], out)
}
