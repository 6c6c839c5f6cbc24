//! Two-phase segmentation of a synthetic coherence map and the resulting
//! training targets.
//!
//! cargo run --release --example chan_vese

use interfero::coherence::{chan_vese, preprocess_targets, ChanVeseParams};
use interfero::raster::CoherenceMap;
use rand::{Rng, SeedableRng};

fn main() -> interfero::Result<()> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let map = CoherenceMap::from_fn(96, 96, |y, x| {
        let disc = ((y as f64 - 30.0).powi(2) + (x as f64 - 60.0).powi(2)).sqrt() < 18.0;
        let band = (60..80).contains(&y);
        let base = if disc || band { 0.25 } else { 0.85 };
        base + rng.random_range(-0.08..0.08)
    });
    let seg = chan_vese(&map, &ChanVeseParams::default())?;
    println!("{} iterations, energy {:.3} -> {:.3}", seg.iterations, seg.energy[0], seg.energy[seg.energy.len() - 1]);

    let labels = &seg.labels;
    println!("{} regions", labels.region_count());
    let targets = preprocess_targets(&map, labels)?;
    for id in 0..labels.region_count() as u32 {
        let pixels: Vec<usize> = (0..labels.ids().len()).filter(|&p| labels.ids()[p] == id).collect();
        println!(
            "region {id}: {:>5} px  {}  target {:.3}",
            pixels.len(),
            if labels.is_coherent(id) { "coherent  " } else { "incoherent" },
            targets.values()[pixels[0]]
        );
    }
    for y in (0..96).step_by(6) {
        let row: String = (0..96).step_by(3).map(|x| if labels.pixel_coherent(y, x) { '.' } else { '#' }).collect();
        println!("{row}");
    }
    Ok(())
}
