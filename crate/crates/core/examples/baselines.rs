//! Boxcar and Goldstein filtering of one simulated scene across parameters.
//!
//! cargo run --release --example baselines

use interfero::baselines::{baseline_coherence, boxcar_filter, goldstein_filter, GoldsteinParams};
use interfero::coherence::DEFAULT_WINDOW;
use interfero::metrics::{cmse, phce, time_stage};
use interfero::simulator::{simulate_scene, SceneConfig};

fn main() -> interfero::Result<()> {
    let scene = simulate_scene(&SceneConfig::default(), 11)?;
    println!("noisy          phce {:.4}", phce(&scene.noisy.phase(), &scene.clean)?);

    for k in [3, 5, 7] {
        let (out, secs) = time_stage(|| boxcar_filter(&scene.noisy, k));
        let out = out?;
        let gamma = baseline_coherence(&scene.noisy, &out, DEFAULT_WINDOW)?;
        println!(
            "boxcar {k}x{k}     phce {:.4}  cmse {:.4}  {:.3} s",
            phce(&out.phase(), &scene.clean)?,
            cmse(&gamma, &scene.gamma)?,
            secs
        );
    }
    for alpha in [0.2, 0.5, 0.8] {
        let params = GoldsteinParams {
            alpha,
            ..GoldsteinParams::default()
        };
        let (out, secs) = time_stage(|| goldstein_filter(&scene.noisy, &params));
        println!("goldstein a={alpha} phce {:.4}  {:.3} s", phce(&out?.phase(), &scene.clean)?, secs);
    }
    Ok(())
}
