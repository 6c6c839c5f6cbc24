//! Method comparison on simulated scenes with known ground truth.

use std::str::FromStr;

use crate::baselines::{baseline_coherence, boxcar_filter, goldstein_filter, GoldsteinParams};
use crate::coherence::{estimate_coherence, CoherenceModel, DEFAULT_WINDOW};
use crate::denoiser::{denoise, DenoiserModel};
use crate::error::{arg_err, Error, Result};
use crate::io::{read_coherence, read_complex, read_phase, SceneRecord};
use crate::metrics::{cmse, phce, time_stage, EvalReport};
use crate::raster::{CoherenceMap, ComplexRaster, PhaseRaster};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Method {
    Noisy,
    Boxcar(usize),
    Goldstein(GoldsteinParams),
    Proposed,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Noisy => "noisy",
            Method::Boxcar(_) => "boxcar",
            Method::Goldstein(_) => "goldstein",
            Method::Proposed => "proposed",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    /// Names with default parameters: `noisy`, `boxcar`, `goldstein`, `proposed`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noisy" => Ok(Method::Noisy),
            "boxcar" => Ok(Method::Boxcar(crate::baselines::DEFAULT_BOXCAR)),
            "goldstein" => Ok(Method::Goldstein(GoldsteinParams::default())),
            "proposed" => Ok(Method::Proposed),
            _ => Err(arg_err!("unknown method {s:?}")),
        }
    }
}

/// Trained networks for the proposed method. The coherence model is optional.
#[derive(Clone, Copy, Debug, Default)]
pub struct Models<'a> {
    pub denoiser: Option<&'a DenoiserModel>,
    pub coherence: Option<&'a CoherenceModel>,
}

/// Output of one method on one scene.
#[derive(Clone, Debug)]
pub struct MethodOutput {
    pub filtered: ComplexRaster,
    pub coherence: Option<CoherenceMap>,
    pub seconds: f64,
}

/// Runs a method. Classical filters get the windowed coherence between the
/// input and their output; the unfiltered input gets none.
pub fn run_method(method: &Method, noisy: &ComplexRaster, models: &Models, window: usize) -> Result<MethodOutput> {
    let (out, seconds) = time_stage(|| -> Result<(ComplexRaster, Option<CoherenceMap>)> {
        Ok(match method {
            Method::Noisy => (noisy.clone(), None),
            Method::Boxcar(k) => {
                let f = boxcar_filter(noisy, *k)?;
                let g = baseline_coherence(noisy, &f, window)?;
                (f, Some(g))
            }
            Method::Goldstein(p) => {
                let f = goldstein_filter(noisy, p)?;
                let g = baseline_coherence(noisy, &f, window)?;
                (f, Some(g))
            }
            Method::Proposed => {
                let model = models
                    .denoiser
                    .ok_or_else(|| arg_err!("the proposed method needs a denoiser model"))?;
                let f = denoise(model, noisy)?;
                let g = models.coherence.map(|m| estimate_coherence(m, noisy)).transpose()?;
                (f, g)
            }
        })
    });
    let (filtered, coherence) = out?;
    Ok(MethodOutput {
        filtered,
        coherence,
        seconds,
    })
}

/// Scores every method on one scene and appends the rows to `report`.
pub fn evaluate_scene(
    report: &mut EvalReport,
    scene: &str,
    noisy: &ComplexRaster,
    clean: &PhaseRaster,
    gamma: &CoherenceMap,
    methods: &[Method],
    models: &Models,
) -> Result<()> {
    for method in methods {
        let out = run_method(method, noisy, models, DEFAULT_WINDOW)?;
        let p = phce(&out.filtered.phase(), clean)?;
        let c = out.coherence.as_ref().map(|g| cmse(g, gamma)).transpose()?;
        report.push(scene, method.name(), p, c, out.seconds);
    }
    Ok(())
}

pub const CLASSICAL_COHERENCE_NOTE: &str =
    "boxcar and goldstein cmse use the 11x11 windowed coherence between input and filtered output";

/// Loads and scores every scene of a manifest.
pub fn evaluate_manifest(records: &[SceneRecord], methods: &[Method], models: &Models) -> Result<EvalReport> {
    let mut report = EvalReport::default();
    for r in records {
        let noisy = read_complex(&r.noisy)?;
        let clean = read_phase(&r.clean)?;
        let gamma = read_coherence(&r.gamma)?;
        evaluate_scene(&mut report, &format!("scene_{:04}", r.index), &noisy, &clean, &gamma, methods, models)?;
    }
    if methods.iter().any(|m| matches!(m, Method::Boxcar(_) | Method::Goldstein(_))) {
        report.notes.push(CLASSICAL_COHERENCE_NOTE.into());
    }
    Ok(report)
}
