//! Coherence: the windowed estimator, Chan-Vese segmentation of coherence
//! maps, training-target cleanup and the coherence-estimation network.

use std::collections::VecDeque;
use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::denoiser::patch_corners;
use crate::error::{arg_err, shape_err, Result};
use crate::network::{crop, fit, FitOptions, Network};
use crate::preprocess::{prepare_input, NormalizedPair};
use crate::raster::{box_sums, CoherenceMap, ComplexRaster};
use crate::tensor::{AdamConfig, NetTensor};

pub const DEFAULT_WINDOW: usize = 11;

/// Four convolutions, no resampling. The third carries the weight-std penalty.
pub const COHERENCE_DESCRIPTOR: &str =
    "conv(2,8,relu);conv(8,16,relu);conv(16,8,relu,std=0.001);conv(8,1,sigmoid)";

pub const DEFAULT_LAMBDA: f64 = 1e-3;

/// `|sum u1 conj(u2)| / sqrt(sum |u1|^2 sum |u2|^2)` over a `window x window`
/// neighbourhood of every pixel. Windows with no energy get 0.
pub fn raw_coherence(u1: &ComplexRaster, u2: &ComplexRaster, window: usize) -> Result<CoherenceMap> {
    if u1.dims() != u2.dims() {
        return Err(shape_err!(
            "rasters are {}x{} and {}x{}",
            u1.height(),
            u1.width(),
            u2.height(),
            u2.width()
        ));
    }
    if window == 0 || window.is_multiple_of(2) {
        return Err(arg_err!("window must be odd, got {window}"));
    }
    let (h, w) = u1.dims();
    let n = h * w;
    let (mut cre, mut cim, mut e1, mut e2) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for (i, (a, b)) in u1.samples().iter().zip(u2.samples()).enumerate() {
        let a = Complex64::new(a.re as f64, a.im as f64);
        let b = Complex64::new(b.re as f64, b.im as f64);
        let c = a * b.conj();
        cre[i] = c.re;
        cim[i] = c.im;
        e1[i] = a.norm_sqr();
        e2[i] = b.norm_sqr();
    }
    let (cre, cim) = (box_sums(&cre, h, w, window), box_sums(&cim, h, w, window));
    let (e1, e2) = (box_sums(&e1, h, w, window), box_sums(&e2, h, w, window));
    let values = (0..n)
        .map(|i| {
            let energy = e1[i] * e2[i];
            if energy > 0.0 {
                (cre[i].hypot(cim[i]) / energy.sqrt()).min(1.0) as f32
            } else {
                0.0
            }
        })
        .collect();
    CoherenceMap::new(h, w, values)
}

/// Region id per pixel plus a coherent flag per region.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    ids: Vec<u32>,
    coherent: Vec<bool>,
}

impl LabelMap {
    /// Splits a binary class mask into 4-connected regions. Every region
    /// inherits the flag of its class.
    pub fn from_classes(height: usize, width: usize, coherent_class: &[bool]) -> Result<Self> {
        if coherent_class.len() != height * width {
            return Err(shape_err!(
                "{} class flags for {}x{}",
                coherent_class.len(),
                height,
                width
            ));
        }
        let mut ids = vec![u32::MAX; height * width];
        let mut coherent = Vec::new();
        let mut queue = VecDeque::new();
        for start in 0..ids.len() {
            if ids[start] != u32::MAX {
                continue;
            }
            let id = coherent.len() as u32;
            let class = coherent_class[start];
            coherent.push(class);
            ids[start] = id;
            queue.push_back(start);
            while let Some(p) = queue.pop_front() {
                let (y, x) = (p / width, p % width);
                let mut visit = |q: usize| {
                    if ids[q] == u32::MAX && coherent_class[q] == class {
                        ids[q] = id;
                        queue.push_back(q);
                    }
                };
                if y > 0 {
                    visit(p - width);
                }
                if y + 1 < height {
                    visit(p + width);
                }
                if x > 0 {
                    visit(p - 1);
                }
                if x + 1 < width {
                    visit(p + 1);
                }
            }
        }
        Ok(Self {
            height,
            width,
            ids,
            coherent,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn region_count(&self) -> usize {
        self.coherent.len()
    }

    pub fn is_coherent(&self, region: u32) -> bool {
        self.coherent[region as usize]
    }

    pub fn pixel_coherent(&self, y: usize, x: usize) -> bool {
        self.is_coherent(self.ids[y * self.width + x])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChanVeseParams {
    /// Perimeter weight relative to the squared value range of the map.
    pub mu_factor: f64,
    /// Width of the regularized Heaviside.
    pub epsilon: f64,
    /// Stop once fewer than this fraction of pixels change sign over a block
    /// of iterations.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for ChanVeseParams {
    fn default() -> Self {
        Self {
            mu_factor: 0.1,
            epsilon: 1.0,
            tolerance: 1e-4,
            max_iterations: 500,
        }
    }
}

/// Result of a segmentation run with the energy after every iteration
/// (`energy[0]` is the initial level set).
#[derive(Clone, Debug)]
pub struct Segmentation {
    pub labels: LabelMap,
    pub energy: Vec<f64>,
    pub iterations: usize,
}

struct LevelSet<'a> {
    u: &'a [f64],
    h: usize,
    w: usize,
    mu: f64,
    eps: f64,
}

const TV_SMOOTHING: f64 = 1e-8;

impl LevelSet<'_> {
    fn heaviside(&self, phi: f64) -> f64 {
        0.5 * (1.0 + (2.0 / PI) * (phi / self.eps).atan())
    }

    fn dirac(&self, phi: f64) -> f64 {
        self.eps / (PI * (self.eps * self.eps + phi * phi))
    }

    fn means(&self, hv: &[f64]) -> (f64, f64) {
        let (mut s_in, mut n_in, mut s_out, mut n_out) = (0.0, 0.0, 0.0, 0.0);
        for (&hp, &up) in hv.iter().zip(self.u) {
            s_in += hp * up;
            n_in += hp;
            s_out += (1.0 - hp) * up;
            n_out += 1.0 - hp;
        }
        let c1 = if n_in > 0.0 { s_in / n_in } else { 0.0 };
        let c2 = if n_out > 0.0 { s_out / n_out } else { 0.0 };
        (c1, c2)
    }

    /// Forward differences of `hv` at `p`, zero across the far borders.
    fn diffs(&self, hv: &[f64], p: usize) -> (f64, f64) {
        let (y, x) = (p / self.w, p % self.w);
        let gx = if x + 1 < self.w { hv[p + 1] - hv[p] } else { 0.0 };
        let gy = if y + 1 < self.h { hv[p + self.w] - hv[p] } else { 0.0 };
        (gx, gy)
    }

    fn energy(&self, phi: &[f64]) -> f64 {
        let hv: Vec<f64> = phi.iter().map(|&p| self.heaviside(p)).collect();
        let (c1, c2) = self.means(&hv);
        let mut e = 0.0;
        for p in 0..hv.len() {
            let (gx, gy) = self.diffs(&hv, p);
            let d1 = self.u[p] - c1;
            let d2 = self.u[p] - c2;
            e += self.mu * (gx * gx + gy * gy + TV_SMOOTHING).sqrt() + hv[p] * d1 * d1 + (1.0 - hv[p]) * d2 * d2;
        }
        e
    }

    /// One semi-implicit curvature-plus-fitting update of `phi` with step `dt`.
    /// Region means use the current sign of `phi`.
    fn propose(&self, phi: &[f64], dt: f64) -> Vec<f64> {
        let (h, w) = (self.h, self.w);
        let (mut s_in, mut n_in, mut s_out, mut n_out) = (0.0, 0usize, 0.0, 0usize);
        for (&p, &v) in phi.iter().zip(self.u) {
            if p > 0.0 {
                s_in += v;
                n_in += 1;
            } else {
                s_out += v;
                n_out += 1;
            }
        }
        let c1 = if n_in > 0 { s_in / n_in as f64 } else { 0.0 };
        let c2 = if n_out > 0 { s_out / n_out as f64 } else { 0.0 };
        let at = |y: usize, x: usize| phi[y * w + x];
        let mut out = vec![0.0; h * w];
        out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
            let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
            for (x, o) in row.iter_mut().enumerate() {
                let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
                let c = at(y, x);
                let (r, l, d, u) = (at(y, xr), at(y, xl), at(yd, x), at(yu, x));
                let cx = (r - l) / 2.0;
                let cy = (d - u) / 2.0;
                let k1 = 1.0 / (CURVATURE_SMOOTHING + (r - c).powi(2) + cy * cy).sqrt();
                let k2 = 1.0 / (CURVATURE_SMOOTHING + (c - l).powi(2) + cy * cy).sqrt();
                let k3 = 1.0 / (CURVATURE_SMOOTHING + cx * cx + (d - c).powi(2)).sqrt();
                let k4 = 1.0 / (CURVATURE_SMOOTHING + cx * cx + (c - u).powi(2)).sqrt();
                let curvature = r * k1 + l * k2 + d * k3 + u * k4;
                let v = self.u[y * w + x];
                let fitting = (v - c2).powi(2) - (v - c1).powi(2);
                let rate = dt * self.dirac(c);
                *o = (c + rate * (self.mu * curvature + fitting)) / (1.0 + rate * self.mu * (k1 + k2 + k3 + k4));
            }
        });
        out
    }
}

const TIME_STEP: f64 = 0.5;
const CURVATURE_SMOOTHING: f64 = 1e-16;
const MAX_HALVINGS: usize = 40;
/// Sign changes are counted against the level set this many iterations back.
const FLIP_WINDOW: usize = 10;

/// Two-phase Chan-Vese segmentation of a coherence map.
///
/// The level set starts as `sin(pi x / 5) sin(pi y / 5)` and evolves by
/// semi-implicit steps. A step that would raise the regularized energy is
/// shortened until it does not, so the recorded energy never increases.
/// The class with the higher mean is coherent; a map with a single class is
/// coherent when its mean is at least 0.5.
pub fn chan_vese(map: &CoherenceMap, params: &ChanVeseParams) -> Result<Segmentation> {
    let (h, w) = map.dims();
    if h == 0 || w == 0 {
        return Err(arg_err!("cannot segment an empty map"));
    }
    let u: Vec<f64> = map.values().iter().map(|&v| v as f64).collect();
    let (lo, hi) = u.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if range == 0.0 {
        let labels = LabelMap::from_classes(h, w, &vec![lo >= 0.5; h * w])?;
        return Ok(Segmentation {
            labels,
            energy: vec![0.0],
            iterations: 0,
        });
    }

    let ls = LevelSet {
        u: &u,
        h,
        w,
        mu: params.mu_factor * range * range,
        eps: params.epsilon,
    };
    let mut phi: Vec<f64> = (0..h * w)
        .map(|p| (PI * (p % w) as f64 / 5.0).sin() * (PI * (p / w) as f64 / 5.0).sin())
        .collect();
    let mut energy = vec![ls.energy(&phi)];
    let mut iterations = 0;
    let mut reference: Vec<bool> = phi.iter().map(|&p| p > 0.0).collect();

    while iterations < params.max_iterations {
        let proposal = ls.propose(&phi, TIME_STEP);
        let current = *energy.last().unwrap();
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = phi.iter().zip(&proposal).map(|(a, b)| a + t * (b - a)).collect();
            let e = ls.energy(&trial);
            if e <= current {
                accepted = Some((trial, e));
                break;
            }
            t *= 0.5;
        }
        let Some((next, e)) = accepted else { break };
        iterations += 1;
        phi = next;
        energy.push(e);
        if iterations % FLIP_WINDOW == 0 {
            let signs: Vec<bool> = phi.iter().map(|&p| p > 0.0).collect();
            let flips = signs.iter().zip(&reference).filter(|(a, b)| a != b).count();
            if (flips as f64) < params.tolerance * (h * w) as f64 {
                break;
            }
            reference = signs;
        }
    }

    let inside: Vec<bool> = phi.iter().map(|&p| p > 0.0).collect();
    let (mut s_in, mut n_in, mut s_out, mut n_out) = (0.0, 0usize, 0.0, 0usize);
    for (&v, &i) in u.iter().zip(&inside) {
        if i {
            s_in += v;
            n_in += 1;
        } else {
            s_out += v;
            n_out += 1;
        }
    }
    let classes: Vec<bool> = if n_in == 0 || n_out == 0 {
        let mean = (s_in + s_out) / (h * w) as f64;
        vec![mean >= 0.5; h * w]
    } else {
        let inside_coherent = s_in / n_in as f64 >= s_out / n_out as f64;
        inside.iter().map(|&i| i == inside_coherent).collect()
    };
    Ok(Segmentation {
        labels: LabelMap::from_classes(h, w, &classes)?,
        energy,
        iterations,
    })
}

pub fn chan_vese_segment(map: &CoherenceMap, params: &ChanVeseParams) -> Result<LabelMap> {
    Ok(chan_vese(map, params)?.labels)
}

/// Coherent pixels become 1. Each incoherent region is replaced by its mean
/// minus its (population) standard deviation, clamped to [0, 1].
pub fn preprocess_targets(raw: &CoherenceMap, labels: &LabelMap) -> Result<CoherenceMap> {
    if raw.dims() != labels.dims() {
        return Err(shape_err!("coherence and labels differ in size"));
    }
    let regions = labels.region_count();
    let mut sum = vec![0.0; regions];
    let mut sum_sq = vec![0.0; regions];
    let mut count = vec![0usize; regions];
    for (&id, &v) in labels.ids().iter().zip(raw.values()) {
        let (id, v) = (id as usize, v as f64);
        sum[id] += v;
        sum_sq[id] += v * v;
        count[id] += 1;
    }
    let fill: Vec<f64> = (0..regions)
        .map(|r| {
            if labels.is_coherent(r as u32) {
                return 1.0;
            }
            let n = count[r] as f64;
            let mean = sum[r] / n;
            let var = (sum_sq[r] / n - mean * mean).max(0.0);
            (mean - var.sqrt()).clamp(0.0, 1.0)
        })
        .collect();
    let (h, w) = raw.dims();
    let values = labels.ids().iter().map(|&id| fill[id as usize] as f32).collect();
    CoherenceMap::new(h, w, values)
}

/// Intermediate maps of the target pipeline.
#[derive(Clone, Debug)]
pub struct CoherenceTargets {
    pub raw: CoherenceMap,
    pub labels: LabelMap,
    pub targets: CoherenceMap,
}

/// Raw coherence between a noisy interferogram and its denoised version,
/// segmented and cleaned up into training targets.
pub fn build_targets(
    noisy: &ComplexRaster,
    denoised: &ComplexRaster,
    window: usize,
    params: &ChanVeseParams,
) -> Result<CoherenceTargets> {
    let raw = raw_coherence(noisy, denoised, window)?;
    let labels = chan_vese_segment(&raw, params)?;
    let targets = preprocess_targets(&raw, &labels)?;
    Ok(CoherenceTargets { raw, labels, targets })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoherenceModel {
    network: Network,
}

pub fn build_coherence_model(seed: u64) -> CoherenceModel {
    CoherenceModel {
        network: Network::from_descriptor(COHERENCE_DESCRIPTOR, seed).expect("built-in descriptor"),
    }
}

impl CoherenceModel {
    pub fn from_network(network: Network) -> Result<Self> {
        if network.input_channels() != 2 || network.output_channels() != 1 || network.spatial_multiple() != 1 {
            return Err(shape_err!("coherence network must map 2 channels to 1 without resampling"));
        }
        Ok(Self { network })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn into_network(self) -> Network {
        self.network
    }

    pub fn parameter_count(&self) -> usize {
        self.network.parameter_count()
    }

    pub fn forward_normalized(&self, channels: &NetTensor) -> Result<NetTensor> {
        self.network.forward(channels)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoherenceTrainConfig {
    pub patch_size: usize,
    pub patches_per_image: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda: f64,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for CoherenceTrainConfig {
    fn default() -> Self {
        Self {
            patch_size: 64,
            patches_per_image: 500,
            epochs: 100,
            batch_size: 32,
            lambda: DEFAULT_LAMBDA,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

/// Aligned noisy-input and target patches cut at the same random corners.
pub fn extract_patch_pairs(
    input: &NormalizedPair,
    targets: &CoherenceMap,
    size: usize,
    count: usize,
    seed: u64,
) -> Result<(Vec<NetTensor>, Vec<NetTensor>)> {
    let (h, w) = (input.height(), input.width());
    if targets.dims() != (h, w) {
        return Err(shape_err!("targets do not match the {h}x{w} input"));
    }
    let target = NetTensor::new(&[1, h, w], targets.values().iter().map(|&v| v as f64).collect())?;
    let mut xs = Vec::with_capacity(count);
    let mut ys = Vec::with_capacity(count);
    for (y, x) in patch_corners(h, w, size, count, seed)? {
        xs.push(crop(&input.channels, y, x, size, size)?);
        ys.push(crop(&target, y, x, size, size)?);
    }
    Ok((xs, ys))
}

/// Trains a fresh model on aligned patch lists.
pub fn train_coherence(
    inputs: &[NetTensor],
    targets: &[NetTensor],
    config: &CoherenceTrainConfig,
) -> Result<(CoherenceModel, Vec<f64>)> {
    train_coherence_with(inputs, targets, config, |_, _| {})
}

pub fn train_coherence_with(
    inputs: &[NetTensor],
    targets: &[NetTensor],
    config: &CoherenceTrainConfig,
    on_epoch: impl FnMut(usize, f64),
) -> Result<(CoherenceModel, Vec<f64>)> {
    if inputs.len() != targets.len() {
        return Err(shape_err!("{} inputs but {} targets", inputs.len(), targets.len()));
    }
    if config.lambda < 0.0 || !config.lambda.is_finite() {
        return Err(arg_err!("lambda must be a finite non-negative number"));
    }
    let mut model = build_coherence_model(config.seed);
    model.network.set_regularizer_weight(config.lambda);
    let options = FitOptions {
        epochs: config.epochs,
        batch_size: config.batch_size.max(1),
        seed: config.seed,
        adam: config.adam,
    };
    let history = fit(&mut model.network, inputs, Some(targets), &options, on_epoch)?;
    Ok((model, history))
}

/// Full-image coherence prediction. Values lie strictly inside (0, 1).
pub fn estimate_coherence(model: &CoherenceModel, raster: &ComplexRaster) -> Result<CoherenceMap> {
    let pair = prepare_input(raster)?;
    let out = model.forward_normalized(&pair.channels)?;
    let (h, w) = raster.dims();
    let top = 1.0 - f32::EPSILON as f64 / 2.0;
    let values = out
        .values()
        .iter()
        .map(|&v| v.clamp(f32::MIN_POSITIVE as f64, top) as f32)
        .collect();
    CoherenceMap::new(h, w, values)
}
