//! Amplitude outlier handling and the two-channel network input encoding.
//!
//! Outliers are found with the modified z-score `0.6745 (a - median) / MAD`.
//! Flagged amplitudes are clipped to the largest inlier amplitude (phase kept),
//! then both channels are divided by the shared maximum amplitude and shifted
//! by +1 so they lie in `[0, 2]`.

use num_complex::Complex32;

use crate::error::{arg_err, shape_err, Result};
use crate::raster::ComplexRaster;
use crate::tensor::NetTensor;

pub const OUTLIER_THRESHOLD: f64 = 3.5;
const MAD_CONSISTENCY: f64 = 0.6745;
const MEAN_AD_CONSISTENCY: f64 = 0.7979;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OutlierMask {
    height: usize,
    width: usize,
    flags: Vec<bool>,
}

impl OutlierMask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            flags: vec![false; height * width],
        }
    }

    pub fn from_flags(height: usize, width: usize, flags: Vec<bool>) -> Result<Self> {
        if flags.len() != height * width {
            return Err(shape_err!("mask of {} flags for {}x{}", flags.len(), height, width));
        }
        Ok(Self { height, width, flags })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    pub fn flagged_indices(&self) -> Vec<usize> {
        self.flags
            .iter()
            .enumerate()
            .filter_map(|(i, &f)| f.then_some(i))
            .collect()
    }
}

/// Network-ready encoding of a raster: channels `re / scale + 1` and
/// `im / scale + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedPair {
    pub channels: NetTensor,
    pub scale: f64,
}

impl NormalizedPair {
    pub fn height(&self) -> usize {
        self.channels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.channels.shape()[2]
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

/// Robust z-scores of `values`. When the MAD vanishes the mean absolute
/// deviation about the median is used instead; when that vanishes too every
/// score is zero.
pub fn modified_z_scores(values: &[f64]) -> Vec<f64> {
    let med = median(&sorted(values.to_vec()));
    let deviations: Vec<f64> = values.iter().map(|v| (v - med).abs()).collect();
    let mad = median(&sorted(deviations.clone()));
    let (factor, spread) = if mad > 0.0 {
        (MAD_CONSISTENCY, mad)
    } else {
        let mean_ad = deviations.iter().sum::<f64>() / values.len() as f64;
        (MEAN_AD_CONSISTENCY, mean_ad)
    };
    if spread <= 0.0 {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| factor * (v - med) / spread).collect()
}

pub fn detect_outliers(raster: &ComplexRaster) -> Result<OutlierMask> {
    if raster.is_empty() {
        return Err(arg_err!("cannot detect outliers in an empty raster"));
    }
    let flags = modified_z_scores(&raster.amplitudes())
        .into_iter()
        .map(|z| z.abs() > OUTLIER_THRESHOLD)
        .collect();
    OutlierMask::from_flags(raster.height(), raster.width(), flags)
}

/// Clips flagged amplitudes to the largest inlier amplitude, keeping phase.
pub fn saturate_amplitudes(raster: &ComplexRaster, mask: &OutlierMask) -> Result<ComplexRaster> {
    if mask.dims() != raster.dims() {
        return Err(shape_err!(
            "mask {:?} does not match raster {:?}",
            mask.dims(),
            raster.dims()
        ));
    }
    let amplitudes = raster.amplitudes();
    let ceiling = amplitudes
        .iter()
        .zip(mask.flags())
        .filter(|(_, &f)| !f)
        .map(|(&a, _)| a)
        .fold(0.0f64, f64::max);
    let mut out = raster.clone();
    for ((z, &a), &flag) in out.samples_mut().iter_mut().zip(&amplitudes).zip(mask.flags()) {
        if flag && a > ceiling && a > 0.0 {
            let k = ceiling / a;
            *z = Complex32::new((z.re as f64 * k) as f32, (z.im as f64 * k) as f32);
        }
    }
    Ok(out)
}

pub fn normalize_shift(raster: &ComplexRaster) -> Result<NormalizedPair> {
    let scale = raster.amplitudes().into_iter().fold(0.0f64, f64::max);
    if scale <= 0.0 {
        return Err(arg_err!("raster has no nonzero sample; normalization scale undefined"));
    }
    let (h, w) = raster.dims();
    let n = h * w;
    let mut values = vec![0.0; 2 * n];
    for (i, z) in raster.samples().iter().enumerate() {
        values[i] = (z.re as f64 / scale + 1.0).clamp(0.0, 2.0);
        values[n + i] = (z.im as f64 / scale + 1.0).clamp(0.0, 2.0);
    }
    Ok(NormalizedPair {
        channels: NetTensor::new(&[2, h, w], values)?,
        scale,
    })
}

pub fn denormalize(pair: &NormalizedPair) -> Result<ComplexRaster> {
    let (c, h, w) = pair.channels.dims3()?;
    if c != 2 {
        return Err(shape_err!("expected 2 channels, got {c}"));
    }
    let re = pair.channels.channel(0);
    let im = pair.channels.channel(1);
    ComplexRaster::new(
        h,
        w,
        re.iter()
            .zip(im)
            .map(|(&r, &i)| Complex32::new(((r - 1.0) * pair.scale) as f32, ((i - 1.0) * pair.scale) as f32))
            .collect(),
    )
}

/// Outlier detection, saturation and normalization in one step.
pub fn prepare_input(raster: &ComplexRaster) -> Result<NormalizedPair> {
    let mask = detect_outliers(raster)?;
    normalize_shift(&saturate_amplitudes(raster, &mask)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn from_amplitudes(amps: &[f64]) -> ComplexRaster {
        ComplexRaster::from_fn(1, amps.len(), |_, x| Complex64::from_polar(amps[x], 0.3 * x as f64))
    }

    #[test]
    fn zero_mad_falls_back_to_mean_deviation() {
        // median 1, MAD 0, mean |dev| = 99/5 = 19.8, score(100) = 0.7979*99/19.8 = 3.9895
        let scores = modified_z_scores(&[1.0, 1.0, 1.0, 1.0, 100.0]);
        assert!((scores[4] - 3.9895).abs() < 1e-4);
        let mask = detect_outliers(&from_amplitudes(&[1.0, 1.0, 1.0, 1.0, 100.0])).unwrap();
        assert_eq!(mask.flagged_indices(), vec![4]);
    }

    #[test]
    fn constant_amplitudes_have_no_outliers() {
        let mask = detect_outliers(&from_amplitudes(&[2.0; 16])).unwrap();
        assert_eq!(mask.count(), 0);
    }

    #[test]
    fn single_spike_among_uniform_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut amps: Vec<f64> = (0..200).map(|_| rng.random_range(0.9..1.1)).collect();
        amps[57] = 50.0;
        // oracle: direct formula on the sorted data
        let mut s = amps.clone();
        s.sort_by(f64::total_cmp);
        let med = 0.5 * (s[99] + s[100]);
        let mut dev: Vec<f64> = amps.iter().map(|a| (a - med).abs()).collect();
        dev.sort_by(f64::total_cmp);
        let mad = 0.5 * (dev[99] + dev[100]);
        let expected: Vec<usize> = (0..200)
            .filter(|&i| (0.6745 * (amps[i] - med) / mad).abs() > 3.5)
            .collect();
        assert_eq!(expected, vec![57]);
        assert_eq!(detect_outliers(&from_amplitudes(&amps)).unwrap().flagged_indices(), expected);
    }

    #[test]
    fn empty_raster_is_rejected() {
        assert!(detect_outliers(&ComplexRaster::zeros(0, 0)).is_err());
    }

    #[test]
    fn saturation_cases() {
        let r = from_amplitudes(&[1.0, 2.0, 100.0]);
        assert_eq!(saturate_amplitudes(&r, &OutlierMask::empty(1, 3)).unwrap(), r);

        let mask = OutlierMask::from_flags(1, 3, vec![false, false, true]).unwrap();
        let s = saturate_amplitudes(&r, &mask).unwrap();
        let z = s.get64(0, 2);
        assert!((z.norm() - 2.0).abs() < 1e-6);
        assert!((z.arg() - r.get64(0, 2).arg()).abs() < 1e-6);

        let zero = ComplexRaster::new(1, 2, vec![Complex32::new(0.0, 0.0), Complex32::new(1.0, 0.0)]).unwrap();
        let mask = OutlierMask::from_flags(1, 2, vec![true, false]).unwrap();
        assert_eq!(saturate_amplitudes(&zero, &mask).unwrap().get(0, 0), Complex32::new(0.0, 0.0));

        assert!(saturate_amplitudes(&r, &OutlierMask::empty(3, 1)).is_err());
    }

    #[test]
    fn normalize_examples() {
        let one = ComplexRaster::new(1, 1, vec![Complex32::new(1.0, 0.0)]).unwrap();
        let pair = normalize_shift(&one).unwrap();
        assert_eq!(pair.channels.values(), &[2.0, 1.0]);

        let r = ComplexRaster::new(1, 2, vec![Complex32::new(-4.0, 0.0), Complex32::new(0.0, 2.0)]).unwrap();
        let pair = normalize_shift(&r).unwrap();
        assert_eq!(pair.scale, 4.0);
        assert_eq!(pair.channels.values()[0], 0.0);

        assert!(normalize_shift(&ComplexRaster::zeros(2, 2)).is_err());
    }

    #[test]
    fn denormalize_examples() {
        let pair = NormalizedPair {
            channels: NetTensor::filled(&[2, 2, 2], 1.0),
            scale: 3.0,
        };
        assert!(denormalize(&pair).unwrap().samples().iter().all(|z| z.re == 0.0 && z.im == 0.0));

        let pair = NormalizedPair {
            channels: NetTensor::new(&[2, 1, 1], vec![2.0, 1.0]).unwrap(),
            scale: 2.0,
        };
        assert_eq!(denormalize(&pair).unwrap().get(0, 0), Complex32::new(2.0, 0.0));
    }

    fn heavy_tailed(seed: u64, h: usize, w: usize) -> ComplexRaster {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ComplexRaster::from_fn(h, w, |_, _| {
            let u: f64 = rng.random_range(1e-3..1.0);
            let amp = if rng.random_bool(0.05) { 1.0 / u.powi(3) } else { u };
            Complex64::from_polar(amp, rng.random_range(-3.0..3.0))
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn prepared_channels_lie_in_zero_two(seed in 0u64..10_000, h in 1usize..12, w in 1usize..12) {
            let pair = prepare_input(&heavy_tailed(seed, h, w)).unwrap();
            prop_assert!(pair.channels.values().iter().all(|v| (0.0..=2.0).contains(v)));
            prop_assert!(pair.scale > 0.0);
        }

        #[test]
        fn saturation_preserves_phase(seed in 0u64..10_000) {
            let r = heavy_tailed(seed, 9, 9);
            let s = saturate_amplitudes(&r, &detect_outliers(&r).unwrap()).unwrap();
            for (a, b) in r.samples().iter().zip(s.samples()) {
                if a.norm() > 0.0 {
                    let d = (a.arg() - b.arg()).abs();
                    prop_assert!(d.min(2.0 * std::f32::consts::PI - d) < 1e-6);
                }
            }
        }

        #[test]
        fn outlier_mask_is_scale_free(seed in 0u64..10_000, c in 0.01f64..100.0) {
            let r = heavy_tailed(seed, 8, 8);
            let scaled = r.scaled(Complex64::new(c, 0.0));
            prop_assert_eq!(detect_outliers(&r).unwrap(), detect_outliers(&scaled).unwrap());
        }

        #[test]
        fn normalize_round_trip(seed in 0u64..10_000) {
            let r = heavy_tailed(seed, 7, 5);
            let s = saturate_amplitudes(&r, &detect_outliers(&r).unwrap()).unwrap();
            let back = denormalize(&normalize_shift(&s).unwrap()).unwrap();
            for (a, b) in s.samples().iter().zip(back.samples()) {
                prop_assert!((a - b).norm() <= 1e-6 * (1.0 + a.norm()));
            }
        }
    }
}
