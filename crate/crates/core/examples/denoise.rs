//! Trains the denoising autoencoder on a few simulated scenes, saves a
//! checkpoint, reloads it and scores a held-out scene.
//!
//! cargo run --release --example denoise -- [epochs]

use interfero::denoiser::{denoise, extract_patches, patch_seed, train_denoiser, DenoiserModel, TrainConfig};
use interfero::io::{load_checkpoint, save_checkpoint};
use interfero::metrics::phce;
use interfero::preprocess::prepare_input;
use interfero::simulator::{scene_seed, simulate_scene, SceneConfig};

fn main() -> interfero::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(8);
    let config = SceneConfig {
        height: 128,
        width: 128,
        ..SceneConfig::default()
    };
    let scenes = (0..5)
        .map(|i| simulate_scene(&config, scene_seed(7, i)))
        .collect::<interfero::Result<Vec<_>>>()?;
    let (train, test) = scenes.split_at(4);

    let mut patches = Vec::new();
    for (i, s) in train.iter().enumerate() {
        patches.extend(extract_patches(&prepare_input(&s.noisy)?, 60, 150, patch_seed(7, i))?);
    }
    let train_config = TrainConfig {
        patches_per_image: 150,
        epochs,
        ..TrainConfig::default()
    };
    let (model, history) = train_denoiser(&patches, &train_config)?;
    for (e, l) in history.iter().enumerate() {
        println!("epoch {:>2}  loss {l:.5}", e + 1);
    }

    let path = std::env::temp_dir().join("interfero-denoiser.cnnm");
    save_checkpoint(&path, model.network())?;
    let model = DenoiserModel::from_network(load_checkpoint(&path)?)?;
    println!("{} parameters, checkpoint {}", model.parameter_count(), path.display());

    let scene = &test[0];
    let filtered = denoise(&model, &scene.noisy)?;
    println!("held-out phce  noisy {:.4}", phce(&scene.noisy.phase(), &scene.clean)?);
    println!("held-out phce  denoised {:.4}", phce(&filtered.phase(), &scene.clean)?);
    Ok(())
}
