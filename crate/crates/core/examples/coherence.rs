//! The coherence pipeline end to end: a briefly trained denoiser, raw
//! coherence against its output, Chan-Vese targets, and a coherence network
//! trained on those targets.
//!
//! cargo run --release --example coherence

use interfero::coherence::{
    build_targets, estimate_coherence, extract_patch_pairs, train_coherence, ChanVeseParams, CoherenceTrainConfig,
    DEFAULT_WINDOW,
};
use interfero::denoiser::{denoise, extract_patches, patch_seed, train_denoiser, TrainConfig};
use interfero::metrics::cmse;
use interfero::preprocess::prepare_input;
use interfero::simulator::{scene_seed, simulate_scene, SceneConfig};

fn main() -> interfero::Result<()> {
    let config = SceneConfig {
        height: 128,
        width: 128,
        ..SceneConfig::default()
    };
    let scenes = (0..5)
        .map(|i| simulate_scene(&config, scene_seed(3, i)))
        .collect::<interfero::Result<Vec<_>>>()?;
    let (train, test) = scenes.split_at(4);

    let mut patches = Vec::new();
    for (i, s) in train.iter().enumerate() {
        patches.extend(extract_patches(&prepare_input(&s.noisy)?, 60, 150, patch_seed(3, i))?);
    }
    let den_config = TrainConfig {
        patches_per_image: 150,
        epochs: 8,
        seed: 3,
        ..TrainConfig::default()
    };
    let (denoiser, _) = train_denoiser(&patches, &den_config)?;

    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (i, s) in train.iter().enumerate() {
        let t = build_targets(&s.noisy, &denoise(&denoiser, &s.noisy)?, DEFAULT_WINDOW, &ChanVeseParams::default())?;
        let incoherent = t.labels.ids().iter().filter(|id| !t.labels.is_coherent(**id)).count();
        println!(
            "scene {i}: {} regions, {:.1}% incoherent, target cmse {:.4}",
            t.labels.region_count(),
            100.0 * incoherent as f64 / t.targets.values().len() as f64,
            cmse(&t.targets, &s.gamma)?
        );
        let (x, y) = extract_patch_pairs(&prepare_input(&s.noisy)?, &t.targets, 64, 40, patch_seed(4, i))?;
        xs.extend(x);
        ys.extend(y);
    }
    let coh_config = CoherenceTrainConfig {
        patches_per_image: 40,
        epochs: 8,
        seed: 3,
        ..CoherenceTrainConfig::default()
    };
    let (model, history) = train_coherence(&xs, &ys, &coh_config)?;
    println!("coherence loss {:.5} -> {:.5}", history[0], history[history.len() - 1]);

    let scene = &test[0];
    let estimate = estimate_coherence(&model, &scene.noisy)?;
    println!("held-out cmse {:.4}", cmse(&estimate, &scene.gamma)?);
    Ok(())
}
