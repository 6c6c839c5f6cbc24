//! Convolutional autoencoder that denoises interferograms without clean
//! references: it is trained to reproduce its own noisy input through a
//! max-pooled bottleneck.

use crate::error::{arg_err, shape_err, Result};
use crate::network::{crop, fit, pad_mirror, FitOptions, Network};
use crate::preprocess::{denormalize, prepare_input, NormalizedPair};
use crate::raster::ComplexRaster;
use crate::rng::{derive_seed, seeded};
use crate::tensor::{AdamConfig, NetTensor};

use rand::Rng;

/// Encoder 2 -> 8 -> 16, pool by 3, 16 -> 16, upsample by 3, decoder 16 -> 8 -> 2.
pub const DENOISER_DESCRIPTOR: &str =
    "conv(2,8,relu);conv(8,16,relu);maxpool(3);conv(16,16,relu);upsample(3);conv(16,8,relu);conv(8,2,relu)";

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserModel {
    network: Network,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub patch_size: usize,
    pub patches_per_image: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            patch_size: 60,
            patches_per_image: 500,
            epochs: 50,
            batch_size: 32,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, multiple: usize) -> Result<()> {
        if self.patch_size == 0 || !self.patch_size.is_multiple_of(multiple) {
            return Err(arg_err!(
                "patch size {} must be a positive multiple of {}",
                self.patch_size,
                multiple
            ));
        }
        if self.patches_per_image == 0 || self.batch_size == 0 {
            return Err(arg_err!("patch and batch counts must be at least 1"));
        }
        Ok(())
    }

    fn fit_options(&self) -> FitOptions {
        FitOptions {
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            adam: self.adam,
        }
    }
}

pub fn build_denoiser(seed: u64) -> DenoiserModel {
    DenoiserModel {
        network: Network::from_descriptor(DENOISER_DESCRIPTOR, seed).expect("built-in descriptor"),
    }
}

impl DenoiserModel {
    /// Wraps a network, checking it maps 2 channels to 2 channels.
    pub fn from_network(network: Network) -> Result<Self> {
        if network.input_channels() != 2 || network.output_channels() != 2 {
            return Err(shape_err!(
                "denoiser must map 2 channels to 2, got {} -> {}",
                network.input_channels(),
                network.output_channels()
            ));
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

    /// Continues training on `patches` (each its own target).
    pub fn fit(&mut self, patches: &[NetTensor], config: &TrainConfig, on_epoch: impl FnMut(usize, f64)) -> Result<Vec<f64>> {
        config.validate(self.network.spatial_multiple())?;
        fit(&mut self.network, patches, None, &config.fit_options(), on_epoch)
    }

    /// Runs the network on normalized channels of any size, mirror-padding to
    /// the pooling multiple and cropping back. Output is clamped to `[0, 2]`.
    pub fn forward_normalized(&self, channels: &NetTensor) -> Result<NetTensor> {
        let (_, h, w) = channels.dims3()?;
        let m = self.network.spatial_multiple();
        let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
        let out = if (ph, pw) == (h, w) {
            self.network.forward(channels)?
        } else {
            let padded = pad_mirror(channels, ph, pw)?;
            crop(&self.network.forward(&padded)?, 0, 0, h, w)?
        };
        let values = out.into_values().into_iter().map(|v| v.clamp(0.0, 2.0)).collect();
        NetTensor::new(&[2, h, w], values)
    }
}

/// Top-left corners of `count` patches drawn uniformly inside an `h x w` image.
pub fn patch_corners(h: usize, w: usize, size: usize, count: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    if size == 0 || h < size || w < size {
        return Err(arg_err!("{h}x{w} image cannot hold a {size}x{size} patch"));
    }
    let mut rng = seeded(seed);
    Ok((0..count)
        .map(|_| (rng.random_range(0..=h - size), rng.random_range(0..=w - size)))
        .collect())
}

/// Seed for the patch corners of the `index`-th training image.
pub fn patch_seed(seed: u64, index: usize) -> u64 {
    derive_seed(derive_seed(seed, u64::MAX), index as u64)
}

pub fn extract_patches(pair: &NormalizedPair, size: usize, count: usize, seed: u64) -> Result<Vec<NetTensor>> {
    patch_corners(pair.height(), pair.width(), size, count, seed)?
        .into_iter()
        .map(|(y, x)| crop(&pair.channels, y, x, size, size))
        .collect()
}

/// Trains a freshly initialized denoiser (seeded by `config.seed`).
pub fn train_denoiser(patches: &[NetTensor], config: &TrainConfig) -> Result<(DenoiserModel, Vec<f64>)> {
    let mut model = build_denoiser(config.seed);
    let history = model.fit(patches, config, |_, _| {})?;
    Ok((model, history))
}

/// Full-image inference: outlier saturation, normalization, network, inverse
/// normalization. Output has the input's dimensions.
pub fn denoise(model: &DenoiserModel, raster: &ComplexRaster) -> Result<ComplexRaster> {
    let pair = prepare_input(raster)?;
    let channels = model.forward_normalized(&pair.channels)?;
    denormalize(&NormalizedPair {
        channels,
        scale: pair.scale,
    })
}
