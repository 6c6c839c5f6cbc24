//! Classical comparison filters: boxcar averaging and the Goldstein
//! patch-spectrum filter.

use num_complex::{Complex32, Complex64};
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::coherence::raw_coherence;
use crate::error::{arg_err, shape_err, Result};
use crate::raster::{box_sums, mirror_index, CoherenceMap, ComplexRaster};

pub const DEFAULT_BOXCAR: usize = 3;

/// Complex mean over a `k x k` mirror-extended neighbourhood.
pub fn boxcar_filter(raster: &ComplexRaster, k: usize) -> Result<ComplexRaster> {
    if k == 0 || k.is_multiple_of(2) {
        return Err(arg_err!("boxcar window must be odd, got {k}"));
    }
    let (h, w) = raster.dims();
    if k == 1 {
        return Ok(raster.clone());
    }
    let re: Vec<f64> = raster.samples().iter().map(|z| z.re as f64).collect();
    let im: Vec<f64> = raster.samples().iter().map(|z| z.im as f64).collect();
    let (re, im) = (box_sums(&re, h, w, k), box_sums(&im, h, w, k));
    let area = (k * k) as f64;
    let samples = re
        .iter()
        .zip(&im)
        .map(|(r, i)| Complex32::new((r / area) as f32, (i / area) as f32))
        .collect();
    ComplexRaster::new(h, w, samples)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GoldsteinParams {
    pub alpha: f64,
    pub patch: usize,
    pub overlap: usize,
    pub smoothing: usize,
}

impl Default for GoldsteinParams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            patch: 32,
            overlap: 16,
            smoothing: 3,
        }
    }
}

impl GoldsteinParams {
    pub fn validate(&self) -> Result<()> {
        if !self.patch.is_power_of_two() || self.patch < 2 {
            return Err(arg_err!("patch size {} is not a power of two", self.patch));
        }
        if self.overlap >= self.patch {
            return Err(arg_err!("overlap {} must be below the patch size {}", self.overlap, self.patch));
        }
        if self.smoothing == 0 || self.smoothing.is_multiple_of(2) {
            return Err(arg_err!("smoothing kernel must be odd, got {}", self.smoothing));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(arg_err!("alpha must be finite and non-negative"));
        }
        Ok(())
    }
}

/// In-place 2-D DFT of a row-major `h x w` block. Unnormalized in both
/// directions.
pub fn fft2(data: &mut [Complex64], h: usize, w: usize, inverse: bool) -> Result<()> {
    if data.len() != h * w {
        return Err(shape_err!("{} samples for a {h}x{w} transform", data.len()));
    }
    let mut planner = FftPlanner::<f64>::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    row_fft.process(data);
    let mut column = vec![Complex64::default(); h];
    for x in 0..w {
        for y in 0..h {
            column[y] = data[y * w + x];
        }
        col_fft.process(&mut column);
        for y in 0..h {
            data[y * w + x] = column[y];
        }
    }
    Ok(())
}

/// Raised-cosine taper; overlapping copies are normalized by their sum.
fn taper(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| (std::f64::consts::PI * (i as f64 + 0.5) / n as f64).sin().powi(2))
        .collect()
}

fn filter_patch(patch: &mut [Complex64], n: usize, params: &GoldsteinParams) -> Result<()> {
    fft2(patch, n, n, false)?;
    if params.alpha != 0.0 {
        let mag: Vec<f64> = patch.iter().map(|z| z.norm()).collect();
        let r = (params.smoothing / 2) as isize;
        let area = (params.smoothing * params.smoothing) as f64;
        for y in 0..n {
            for x in 0..n {
                let mut s = 0.0;
                for dy in -r..=r {
                    let yy = (y as isize + dy).rem_euclid(n as isize) as usize;
                    for dx in -r..=r {
                        s += mag[yy * n + (x as isize + dx).rem_euclid(n as isize) as usize];
                    }
                }
                patch[y * n + x] *= (s / area).powf(params.alpha);
            }
        }
    }
    fft2(patch, n, n, true)?;
    let norm = 1.0 / (n * n) as f64;
    patch.iter_mut().for_each(|z| *z *= norm);
    Ok(())
}

/// Goldstein filter: each overlapping patch's spectrum is multiplied by its
/// smoothed magnitude raised to `alpha`; patches are blended back with a
/// raised-cosine window. Borders are mirror-extended.
pub fn goldstein_filter(raster: &ComplexRaster, params: &GoldsteinParams) -> Result<ComplexRaster> {
    params.validate()?;
    let (h, w) = raster.dims();
    if h == 0 || w == 0 {
        return Ok(raster.clone());
    }
    let n = params.patch;
    let step = n - params.overlap;
    let margin = params.overlap;
    let span = |len: usize| {
        let inner = len + 2 * margin;
        let tiles = if inner <= n { 1 } else { (inner - n).div_ceil(step) + 1 };
        (tiles, (tiles - 1) * step + n)
    };
    let (ty, ph) = span(h);
    let (tx, pw) = span(w);
    let padded: Vec<Complex64> = (0..ph * pw)
        .map(|i| {
            let y = mirror_index((i / pw) as isize - margin as isize, h);
            let x = mirror_index((i % pw) as isize - margin as isize, w);
            raster.get64(y, x)
        })
        .collect();

    let corners: Vec<(usize, usize)> = (0..ty).flat_map(|j| (0..tx).map(move |i| (j * step, i * step))).collect();
    let filtered: Vec<Vec<Complex64>> = corners
        .par_iter()
        .map(|&(y0, x0)| {
            let mut patch: Vec<Complex64> = (0..n * n).map(|i| padded[(y0 + i / n) * pw + x0 + i % n]).collect();
            filter_patch(&mut patch, n, params)?;
            Ok(patch)
        })
        .collect::<Result<_>>()?;

    let win = taper(n);
    let mut acc = vec![Complex64::default(); ph * pw];
    let mut weight = vec![0.0; ph * pw];
    for (&(y0, x0), patch) in corners.iter().zip(&filtered) {
        for y in 0..n {
            for x in 0..n {
                let wgt = win[y] * win[x];
                let idx = (y0 + y) * pw + x0 + x;
                acc[idx] += patch[y * n + x] * wgt;
                weight[idx] += wgt;
            }
        }
    }
    Ok(ComplexRaster::from_fn(h, w, |y, x| {
        let idx = (y + margin) * pw + x + margin;
        acc[idx] / weight[idx]
    }))
}

/// Windowed coherence between two rasters, used for the classical methods.
pub fn baseline_coherence(u1: &ComplexRaster, u2: &ComplexRaster, k: usize) -> Result<CoherenceMap> {
    raw_coherence(u1, u2, k)
}
