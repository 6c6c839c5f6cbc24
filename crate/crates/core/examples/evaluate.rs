//! Compares methods on simulated scenes with known truth and prints the
//! summary table. The proposed method is included when a denoiser checkpoint
//! is given.
//!
//! cargo run --release --example evaluate -- [denoiser.cnnm] [coherence.cnnm]

use interfero::coherence::CoherenceModel;
use interfero::denoiser::DenoiserModel;
use interfero::io::load_checkpoint;
use interfero::metrics::EvalReport;
use interfero::pipeline::{evaluate_scene, Method, Models, CLASSICAL_COHERENCE_NOTE};
use interfero::simulator::{scene_seed, simulate_scene, SceneConfig};

fn main() -> interfero::Result<()> {
    let mut args = std::env::args().skip(1);
    let denoiser = args
        .next()
        .map(|p| load_checkpoint(p).and_then(DenoiserModel::from_network))
        .transpose()?;
    let coherence = args
        .next()
        .map(|p| load_checkpoint(p).and_then(CoherenceModel::from_network))
        .transpose()?;

    let mut methods: Vec<Method> = ["noisy", "boxcar", "goldstein"].iter().map(|m| m.parse()).collect::<Result<_, _>>()?;
    if denoiser.is_some() {
        methods.push(Method::Proposed);
    }
    let models = Models {
        denoiser: denoiser.as_ref(),
        coherence: coherence.as_ref(),
    };

    let mut report = EvalReport::default();
    for i in 0..3 {
        let s = simulate_scene(&SceneConfig::default(), scene_seed(99, i))?;
        evaluate_scene(&mut report, &format!("scene_{i}"), &s.noisy, &s.clean, &s.gamma, &methods, &models)?;
    }
    report.notes.push(CLASSICAL_COHERENCE_NOTE.into());
    print!("{}", report.to_table());
    Ok(())
}
