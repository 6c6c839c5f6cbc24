//! Image containers shared by every stage of the pipeline.
//!
//! Samples are held in single precision, matching the on-disk formats, so a
//! raster read from a file and written back is bit-identical. Processing code
//! promotes to `f64` where it accumulates.

use num_complex::{Complex32, Complex64};
use rayon::prelude::*;

use crate::error::{arg_err, shape_err, Result};

/// Row-major grid of complex interferogram samples.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexRaster {
    height: usize,
    width: usize,
    samples: Vec<Complex32>,
}

impl ComplexRaster {
    pub fn new(height: usize, width: usize, samples: Vec<Complex32>) -> Result<Self> {
        if height * width != samples.len() {
            return Err(shape_err!(
                "{}x{} raster needs {} samples, got {}",
                height,
                width,
                height * width,
                samples.len()
            ));
        }
        if let Some(i) = samples.iter().position(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(arg_err!("non-finite sample at index {i}"));
        }
        Ok(Self {
            height,
            width,
            samples,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            samples: vec![Complex32::new(0.0, 0.0); height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut samples = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                let z = f(y, x);
                samples.push(Complex32::new(z.re as f32, z.im as f32));
            }
        }
        Self {
            height,
            width,
            samples,
        }
    }

    /// Unit-amplitude raster carrying the given phase.
    pub fn from_phase(phase: &PhaseRaster) -> Self {
        Self::from_fn(phase.height(), phase.width(), |y, x| {
            Complex64::from_polar(1.0, phase.get(y, x) as f64)
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Complex32] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [Complex32] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<Complex32> {
        self.samples
    }

    pub fn get(&self, y: usize, x: usize) -> Complex32 {
        self.samples[y * self.width + x]
    }

    pub fn get64(&self, y: usize, x: usize) -> Complex64 {
        let z = self.get(y, x);
        Complex64::new(z.re as f64, z.im as f64)
    }

    pub fn set(&mut self, y: usize, x: usize, z: Complex32) {
        self.samples[y * self.width + x] = z;
    }

    pub fn amplitudes(&self) -> Vec<f64> {
        self.samples
            .iter()
            .map(|z| (z.re as f64).hypot(z.im as f64))
            .collect()
    }

    /// Wrapped phase in (-pi, pi].
    pub fn phase(&self) -> PhaseRaster {
        PhaseRaster {
            height: self.height,
            width: self.width,
            values: self
                .samples
                .iter()
                .map(|z| (z.im as f64).atan2(z.re as f64) as f32)
                .collect(),
        }
    }

    /// Multiplies every sample by `c`.
    pub fn scaled(&self, c: Complex64) -> Self {
        Self::from_fn(self.height, self.width, |y, x| self.get64(y, x) * c)
    }
}

/// Per-pixel coherence magnitudes in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct CoherenceMap {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl CoherenceMap {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if height * width != values.len() {
            return Err(shape_err!(
                "{}x{} map needs {} values, got {}",
                height,
                width,
                height * width,
                values.len()
            ));
        }
        if let Some(i) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(arg_err!("coherence {} at index {i} is outside [0, 1]", values[i]));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    /// Builds a map, clamping each value into [0, 1]. NaN becomes 0.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                let v = f(y, x);
                values.push(if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) as f32 });
            }
        }
        Self {
            height,
            width,
            values,
        }
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self::from_fn(height, width, |_, _| value as f64)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        mean_f32(&self.values)
    }
}

/// Per-pixel phase in radians. Values are not required to be wrapped.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseRaster {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl PhaseRaster {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if height * width != values.len() {
            return Err(shape_err!(
                "{}x{} phase raster needs {} values, got {}",
                height,
                width,
                height * width,
                values.len()
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(arg_err!("non-finite phase at index {i}"));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                values.push(f(y, x) as f32);
            }
        }
        Self {
            height,
            width,
            values,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }
}

/// Folds an index that may lie outside `0..n` back into range by mirroring
/// about the edges (edge samples repeated: `-1 -> 0`, `n -> n-1`).
#[inline]
pub fn mirror_index(i: isize, n: usize) -> usize {
    debug_assert!(n > 0);
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Sums of `values` (row-major `h x w`) over a `k x k` window centred on each
/// pixel, mirror-extended at the borders.
pub(crate) fn box_sums(values: &[f64], h: usize, w: usize, k: usize) -> Vec<f64> {
    let r = (k / 2) as isize;
    let mut rows = vec![0.0; h * w];
    rows.par_chunks_mut(w).enumerate().for_each(|(y, out)| {
        let src = &values[y * w..(y + 1) * w];
        for (x, o) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for dx in -r..=r {
                s += src[mirror_index(x as isize + dx, w)];
            }
            *o = s;
        }
    });
    let mut sums = vec![0.0; h * w];
    sums.par_chunks_mut(w).enumerate().for_each(|(y, out)| {
        for dy in -r..=r {
            let src = &rows[mirror_index(y as isize + dy, h) * w..][..w];
            for (o, s) in out.iter_mut().zip(src) {
                *o += s;
            }
        }
    });
    sums
}

pub(crate) fn mean_f32(values: &[f32]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().map(|&v| v as f64).sum::<f64>() / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mirror_index_folds_both_sides() {
        let folded: Vec<usize> = (-4..8).map(|i| mirror_index(i, 4)).collect();
        assert_eq!(folded, vec![3, 2, 1, 0, 0, 1, 2, 3, 3, 2, 1, 0]);
        assert_eq!(mirror_index(-3, 1), 0);
        assert_eq!(mirror_index(5, 1), 0);
    }

    #[test]
    fn constructors_check_lengths_and_ranges() {
        assert!(ComplexRaster::new(2, 2, vec![Complex32::new(0.0, 0.0); 3]).is_err());
        assert!(ComplexRaster::new(1, 1, vec![Complex32::new(f32::NAN, 0.0)]).is_err());
        assert!(CoherenceMap::new(1, 2, vec![0.5, 1.5]).is_err());
        assert!(CoherenceMap::new(1, 2, vec![0.0, 1.0]).is_ok());
        assert!(PhaseRaster::new(1, 1, vec![f32::INFINITY]).is_err());
    }

    #[test]
    fn from_fn_clamps_coherence() {
        let map = CoherenceMap::from_fn(1, 3, |_, x| [-0.5, 0.25, 2.0][x]);
        assert_eq!(map.values(), &[0.0, 0.25, 1.0]);
    }
}
