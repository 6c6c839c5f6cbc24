//! Writes a small simulated dataset and summarizes each scene.
//!
//! cargo run --release --example simulate -- [out_dir] [count]

use interfero::io::read_scene_manifest;
use interfero::simulator::{make_dataset, SceneConfig, MANIFEST_NAME};

fn main() -> interfero::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args
        .next()
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("interfero-simulate"));
    let count = args.next().and_then(|s| s.parse().ok()).unwrap_or(4);

    let config = SceneConfig {
        height: 128,
        width: 128,
        seed: 42,
        ..SceneConfig::default()
    };
    make_dataset(count, &config, &dir)?;

    for r in read_scene_manifest(dir.join(MANIFEST_NAME))? {
        let gamma = interfero::io::read_coherence(&r.gamma)?;
        let low = gamma.values().iter().filter(|g| **g < 0.5).count() as f64 / gamma.values().len() as f64;
        println!(
            "scene {:>2}  seed {:>20}  mean coherence {:.3}  below 0.5: {:>5.1}%",
            r.index,
            r.seed,
            gamma.mean(),
            100.0 * low
        );
    }
    println!("manifest: {}", dir.join(MANIFEST_NAME).display());
    Ok(())
}
