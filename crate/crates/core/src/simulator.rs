//! Synthetic interferograms: Gaussian bubbles, road ramps and building steps,
//! corrupted by circular complex Gaussian noise of spatially varying strength.
//!
//! For unit-power signal `s` and noise of total variance `sigma^2`, the
//! coherence of `u = s + n` against `s` is `1 / sqrt(1 + sigma^2)`.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{arg_err, shape_err, Error, Result};
use crate::io::{write_raster, write_scene_manifest, SceneRecord};
use crate::raster::{CoherenceMap, ComplexRaster, PhaseRaster};
use crate::rng::{derive_seed, seeded};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub bubbles: (usize, usize),
    /// Bubble peaks are drawn from `[-a, a]`.
    pub bubble_amplitude: f64,
    pub bubble_sigma: (f64, f64),
    pub roads: (usize, usize),
    pub road_width: (f64, f64),
    /// Phase ramp along a road is drawn from `[-s, s]` rad/px.
    pub road_slope: f64,
    pub buildings: (usize, usize),
    pub building_extent: (usize, usize),
    /// Building offsets are drawn from `[-o, o]`.
    pub building_offset: f64,
    pub noise_sigma: (f64, f64),
    /// Cells per side of the coarse grid the noise field is interpolated from.
    pub noise_grid: usize,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 256,
            width: 256,
            bubbles: (1, 5),
            bubble_amplitude: 6.0 * PI,
            bubble_sigma: (8.0, 40.0),
            roads: (0, 3),
            road_width: (3.0, 8.0),
            road_slope: 0.05,
            buildings: (0, 5),
            building_extent: (10, 40),
            building_offset: PI,
            noise_sigma: (0.2, 2.0),
            noise_grid: 4,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let ordered = |lo: f64, hi: f64| lo <= hi && lo.is_finite() && hi.is_finite();
        if self.height < 64 || self.width < 64 {
            return Err(arg_err!("scenes must be at least 64x64, got {}x{}", self.height, self.width));
        }
        if self.bubbles.0 > self.bubbles.1 || self.roads.0 > self.roads.1 || self.buildings.0 > self.buildings.1 {
            return Err(arg_err!("count ranges must satisfy min <= max"));
        }
        if !ordered(self.bubble_sigma.0, self.bubble_sigma.1) || self.bubble_sigma.0 <= 0.0 {
            return Err(arg_err!("bubble sigma range must be positive and ordered"));
        }
        if !ordered(self.road_width.0, self.road_width.1) || self.road_width.0 <= 0.0 {
            return Err(arg_err!("road width range must be positive and ordered"));
        }
        if self.building_extent.0 == 0 || self.building_extent.0 > self.building_extent.1 {
            return Err(arg_err!("building extent range must be positive and ordered"));
        }
        if !ordered(self.noise_sigma.0, self.noise_sigma.1) || self.noise_sigma.0 < 0.0 {
            return Err(arg_err!("noise sigma range must be non-negative and ordered"));
        }
        for v in [self.bubble_amplitude, self.road_slope, self.building_offset] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(arg_err!("amplitude, slope and offset bounds must be finite and non-negative"));
            }
        }
        if self.noise_grid == 0 {
            return Err(arg_err!("noise grid needs at least one cell"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedScene {
    /// Unwrapped clean phase in radians.
    pub clean: PhaseRaster,
    pub noisy: ComplexRaster,
    pub gamma: CoherenceMap,
    /// Per-pixel noise standard deviation, row-major.
    pub sigma: Vec<f32>,
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Symmetric draw from `[-a, a]`.
fn symmetric(rng: &mut ChaCha8Rng, a: f64) -> f64 {
    uniform(rng, -a, a)
}

/// Adds Gaussian bubbles, road ramps and building offsets.
pub fn simulate_clean(config: &SceneConfig, seed: u64) -> Result<PhaseRaster> {
    config.validate()?;
    let (h, w) = (config.height, config.width);
    let mut rng = seeded(seed);
    let mut phase = vec![0.0f64; h * w];

    for _ in 0..rng.random_range(config.bubbles.0..=config.bubbles.1) {
        let cy = uniform(&mut rng, 0.0, h as f64);
        let cx = uniform(&mut rng, 0.0, w as f64);
        let a = symmetric(&mut rng, config.bubble_amplitude);
        let s = uniform(&mut rng, config.bubble_sigma.0, config.bubble_sigma.1);
        let inv = 1.0 / (2.0 * s * s);
        for (p, v) in phase.iter_mut().enumerate() {
            let (dy, dx) = ((p / w) as f64 - cy, (p % w) as f64 - cx);
            *v += a * (-(dx * dx + dy * dy) * inv).exp();
        }
    }

    for _ in 0..rng.random_range(config.roads.0..=config.roads.1) {
        let cy = uniform(&mut rng, 0.0, h as f64);
        let cx = uniform(&mut rng, 0.0, w as f64);
        let angle = uniform(&mut rng, 0.0, PI);
        let half = uniform(&mut rng, config.road_width.0, config.road_width.1) / 2.0;
        let slope = symmetric(&mut rng, config.road_slope);
        let (dir_y, dir_x) = angle.sin_cos();
        for (p, v) in phase.iter_mut().enumerate() {
            let (dy, dx) = ((p / w) as f64 - cy, (p % w) as f64 - cx);
            let across = dx * dir_y - dy * dir_x;
            if across.abs() <= half {
                *v += slope * (dx * dir_x + dy * dir_y);
            }
        }
    }

    for _ in 0..rng.random_range(config.buildings.0..=config.buildings.1) {
        let bh = rng.random_range(config.building_extent.0..=config.building_extent.1).min(h);
        let bw = rng.random_range(config.building_extent.0..=config.building_extent.1).min(w);
        let y0 = rng.random_range(0..=h - bh);
        let x0 = rng.random_range(0..=w - bw);
        let offset = symmetric(&mut rng, config.building_offset);
        for y in y0..y0 + bh {
            for v in &mut phase[y * w + x0..y * w + x0 + bw] {
                *v += offset;
            }
        }
    }

    PhaseRaster::new(h, w, phase.into_iter().map(|v| v as f32).collect())
}

/// Smooth noise field: uniform draws on a coarse grid, bilinearly upsampled.
pub fn sigma_field(config: &SceneConfig, seed: u64) -> Vec<f32> {
    let (h, w) = (config.height, config.width);
    let g = config.noise_grid;
    let mut rng = seeded(seed);
    let nodes: Vec<f64> = (0..(g + 1) * (g + 1))
        .map(|_| uniform(&mut rng, config.noise_sigma.0, config.noise_sigma.1))
        .collect();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let fy = y as f64 / (h - 1).max(1) as f64 * g as f64;
        let iy = (fy as usize).min(g - 1);
        let ty = fy - iy as f64;
        for x in 0..w {
            let fx = x as f64 / (w - 1).max(1) as f64 * g as f64;
            let ix = (fx as usize).min(g - 1);
            let tx = fx - ix as f64;
            let at = |j: usize, i: usize| nodes[j * (g + 1) + i];
            let top = at(iy, ix) * (1.0 - tx) + at(iy, ix + 1) * tx;
            let bottom = at(iy + 1, ix) * (1.0 - tx) + at(iy + 1, ix + 1) * tx;
            out.push((top * (1.0 - ty) + bottom * ty) as f32);
        }
    }
    out
}

pub fn coherence_from_sigma(sigma: f64) -> f64 {
    1.0 / (1.0 + sigma * sigma).sqrt()
}

/// `e^{j phi} + n` with `n ~ CN(0, sigma^2)` per pixel.
pub fn add_noise_with_sigma(clean: &PhaseRaster, sigma: &[f32], seed: u64) -> Result<SimulatedScene> {
    let (h, w) = clean.dims();
    if sigma.len() != h * w {
        return Err(shape_err!("{} noise values for a {h}x{w} scene", sigma.len()));
    }
    if let Some(s) = sigma.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
        return Err(arg_err!("noise sigma {s} is not a finite non-negative value"));
    }
    let mut rng = seeded(seed);
    let mut samples = Vec::with_capacity(h * w);
    for (&phi, &s) in clean.values().iter().zip(sigma) {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        let scale = s as f64 / 2f64.sqrt();
        let z = Complex64::from_polar(1.0, phi as f64) + Complex64::new(re, im) * scale;
        samples.push(num_complex::Complex32::new(z.re as f32, z.im as f32));
    }
    let gamma = CoherenceMap::from_fn(h, w, |y, x| coherence_from_sigma(sigma[y * w + x] as f64));
    Ok(SimulatedScene {
        clean: clean.clone(),
        noisy: ComplexRaster::new(h, w, samples)?,
        gamma,
        sigma: sigma.to_vec(),
    })
}

/// Draws a noise field from the config and corrupts `clean` with it.
pub fn add_noise(clean: &PhaseRaster, config: &SceneConfig, seed: u64) -> Result<SimulatedScene> {
    config.validate()?;
    if clean.dims() != (config.height, config.width) {
        return Err(shape_err!("clean phase does not match the configured scene size"));
    }
    let sigma = sigma_field(config, derive_seed(seed, 1));
    add_noise_with_sigma(clean, &sigma, derive_seed(seed, 2))
}

/// Clean phase and noisy observation for one scene seed.
pub fn simulate_scene(config: &SceneConfig, seed: u64) -> Result<SimulatedScene> {
    let clean = simulate_clean(config, seed)?;
    add_noise(&clean, config, seed)
}

pub fn scene_seed(master: u64, index: usize) -> u64 {
    derive_seed(master, index as u64)
}

pub fn scene_paths(dir: &Path, index: usize) -> (PathBuf, PathBuf, PathBuf) {
    (
        dir.join(format!("scene_{index:04}_clean.phse")),
        dir.join(format!("scene_{index:04}_noisy.igrm")),
        dir.join(format!("scene_{index:04}_gamma.cohr")),
    )
}

pub const MANIFEST_NAME: &str = "manifest.txt";

/// Writes `count` scenes (clean PHSE, noisy IGRM, true coherence COHR) and a
/// manifest into `dir`. Scene seeds derive from `config.seed`.
pub fn make_dataset(count: usize, config: &SceneConfig, dir: impl AsRef<Path>) -> Result<Vec<SceneRecord>> {
    config.validate()?;
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let records = (0..count)
        .into_par_iter()
        .map(|index| {
            let seed = scene_seed(config.seed, index);
            let scene = simulate_scene(config, seed)?;
            let (clean, noisy, gamma) = scene_paths(dir, index);
            write_raster(&clean, &scene.clean.into())?;
            write_raster(&noisy, &scene.noisy.into())?;
            write_raster(&gamma, &scene.gamma.into())?;
            Ok(SceneRecord {
                index,
                seed,
                clean,
                noisy,
                gamma,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_scene_manifest(dir.join(MANIFEST_NAME), &records)?;
    Ok(records)
}
