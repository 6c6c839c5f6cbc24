//! Round-trips a scene through the raster formats and writes PPM previews.
//!
//! cargo run --release --example render -- [out_dir]

use interfero::io::{read_raster, render_ppm, write_raster, Raster, RenderMode};
use interfero::raster::ComplexRaster;
use interfero::simulator::{simulate_scene, SceneConfig};

fn main() -> interfero::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("interfero-render"));
    std::fs::create_dir_all(&dir).map_err(|e| interfero::Error::io(&dir, e))?;
    let scene = simulate_scene(&SceneConfig::default(), 5)?;

    let rasters: [(&str, Raster, RenderMode); 4] = [
        ("noisy", scene.noisy.clone().into(), RenderMode::Phase),
        ("amplitude", scene.noisy.into(), RenderMode::Amplitude),
        ("clean", ComplexRaster::from_phase(&scene.clean).into(), RenderMode::Phase),
        ("gamma", scene.gamma.into(), RenderMode::Coherence),
    ];
    for (name, raster, mode) in rasters {
        let path = dir.join(format!("{name}.raster"));
        write_raster(&path, &raster)?;
        let back = read_raster(&path)?;
        let ppm = dir.join(format!("{name}.ppm"));
        render_ppm(&back, &ppm, mode)?;
        let (h, w) = back.dims();
        println!("{} {h}x{w} -> {}", String::from_utf8_lossy(back.magic()), ppm.display());
    }
    Ok(())
}
