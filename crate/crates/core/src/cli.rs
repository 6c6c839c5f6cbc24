//! Command-line front end. Exit codes: 0 success, 1 failure, 2 usage error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::baselines::{boxcar_filter, goldstein_filter, GoldsteinParams};
use crate::coherence::{
    build_targets, estimate_coherence, extract_patch_pairs, train_coherence_with, ChanVeseParams, CoherenceModel,
    CoherenceTrainConfig, DEFAULT_LAMBDA,
};
use crate::denoiser::{build_denoiser, denoise, extract_patches, patch_seed, DenoiserModel, TrainConfig};
use crate::error::{arg_err, Error, Result};
use crate::io::{
    has_magic, load_checkpoint, read_complex, read_coherence, read_pairs_manifest, read_raster, read_scene_manifest,
    render_ppm, save_checkpoint, write_atomic, write_pairs_manifest, write_raster, RenderMode,
};
use crate::pipeline::{evaluate_manifest, Method, Models};
use crate::preprocess::prepare_input;
use crate::simulator::{make_dataset, SceneConfig};
use crate::tensor::AdamConfig;

pub const THREADS_ENV: &str = "INTERFERO_THREADS";

#[derive(Parser, Debug)]
#[command(name = "interfero", version, about = "InSAR interferogram denoising and coherence estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate simulated scenes and a manifest.
    Simulate(SimulateArgs),
    /// Train the denoising autoencoder on noisy interferograms.
    TrainDenoiser(TrainDenoiserArgs),
    /// Denoise one interferogram.
    Denoise(ModelIo),
    /// Build coherence training targets from noisy data and a denoiser.
    BuildTargets(BuildTargetsArgs),
    /// Train the coherence network on input/target pairs.
    TrainCoherence(TrainCoherenceArgs),
    /// Predict a coherence map for one interferogram.
    EstimateCoherence(ModelIo),
    /// Complex moving-average filter.
    FilterBoxcar(BoxcarArgs),
    /// Goldstein patch-spectrum filter.
    FilterGoldstein(GoldsteinArgs),
    /// Score methods on a simulated dataset.
    Evaluate(EvaluateArgs),
    /// Write a PPM preview of a raster.
    Render(RenderArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 20)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub height: usize,
    #[arg(long, default_value_t = 256)]
    pub width: usize,
    #[arg(long, default_value_t = 0.2)]
    pub sigma_min: f64,
    #[arg(long, default_value_t = 2.0)]
    pub sigma_max: f64,
    #[arg(long, default_value_t = 5)]
    pub max_bubbles: usize,
    #[arg(long, default_value_t = 3)]
    pub max_roads: usize,
    #[arg(long, default_value_t = 5)]
    pub max_buildings: usize,
}

#[derive(Args, Debug)]
pub struct TrainDenoiserArgs {
    /// Scene manifests or IGRM files.
    #[arg(long, required = true, num_args = 1..)]
    pub data: Vec<PathBuf>,
    #[arg(long, default_value_t = 60)]
    pub patch_size: usize,
    #[arg(long, default_value_t = 500)]
    pub patches_per_image: usize,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ModelIo {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BuildTargetsArgs {
    /// An IGRM file, or a scene manifest to process every scene.
    #[arg(long)]
    pub noisy: PathBuf,
    /// Denoiser checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 11)]
    pub window: usize,
    /// COHR file for one input, directory for a manifest.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainCoherenceArgs {
    /// Manifest of `input target` lines.
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub patch_size: usize,
    #[arg(long, default_value_t = 500)]
    pub patches_per_image: usize,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BoxcarArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub window: usize,
}

#[derive(Args, Debug)]
pub struct GoldsteinArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 32)]
    pub patch: usize,
    #[arg(long, default_value_t = 16)]
    pub overlap: usize,
    #[arg(long, default_value_t = 3)]
    pub smoothing: usize,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Comma-separated: noisy, boxcar, goldstein, proposed.
    #[arg(long, value_delimiter = ',', default_value = "noisy,boxcar,goldstein,proposed")]
    pub methods: Vec<String>,
    #[arg(long)]
    pub denoiser: Option<PathBuf>,
    #[arg(long)]
    pub coherence: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub boxcar: usize,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// CSV output; the summary table goes to stdout.
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// phase, coherence or amplitude.
    #[arg(long)]
    pub mode: String,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match configure_threads().and_then(|_| execute(cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn run() -> i32 {
    run_from(std::env::args_os())
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .map_err(|_| arg_err!("{THREADS_ENV} must be a non-negative integer, got {value:?}"))?;
    if n > 0 {
        // A pool may already exist when called twice in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Simulate(a) => simulate(a),
        Command::TrainDenoiser(a) => train_denoiser_cmd(a),
        Command::Denoise(a) => {
            let model = load_denoiser(&a.model)?;
            let out = denoise(&model, &read_complex(&a.input)?)?;
            write_raster(&a.out, &out.into())
        }
        Command::BuildTargets(a) => build_targets_cmd(a),
        Command::TrainCoherence(a) => train_coherence_cmd(a),
        Command::EstimateCoherence(a) => {
            let model = load_coherence(&a.model)?;
            let out = estimate_coherence(&model, &read_complex(&a.input)?)?;
            write_raster(&a.out, &out.into())
        }
        Command::FilterBoxcar(a) => {
            let out = boxcar_filter(&read_complex(&a.input)?, a.window)?;
            write_raster(&a.out, &out.into())
        }
        Command::FilterGoldstein(a) => {
            let params = GoldsteinParams {
                alpha: a.alpha,
                patch: a.patch,
                overlap: a.overlap,
                smoothing: a.smoothing,
            };
            let out = goldstein_filter(&read_complex(&a.input)?, &params)?;
            write_raster(&a.out, &out.into())
        }
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Render(a) => {
            let mode: RenderMode = a.mode.parse()?;
            render_ppm(&read_raster(&a.input)?, &a.out, mode)
        }
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let config = SceneConfig {
        height: a.height,
        width: a.width,
        noise_sigma: (a.sigma_min, a.sigma_max),
        bubbles: (1.min(a.max_bubbles), a.max_bubbles),
        roads: (0, a.max_roads),
        buildings: (0, a.max_buildings),
        seed: a.seed,
        ..SceneConfig::default()
    };
    let records = make_dataset(a.count, &config, &a.out)?;
    eprintln!("wrote {} scenes to {}", records.len(), a.out.display());
    Ok(())
}

fn load_denoiser(path: &Path) -> Result<DenoiserModel> {
    DenoiserModel::from_network(load_checkpoint(path)?)
}

fn load_coherence(path: &Path) -> Result<CoherenceModel> {
    CoherenceModel::from_network(load_checkpoint(path)?)
}

/// Noisy rasters named by IGRM files or by scene manifests.
fn noisy_inputs(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if has_magic(p, b"IGRM") {
            out.push(p.clone());
        } else {
            out.extend(read_scene_manifest(p)?.into_iter().map(|r| r.noisy));
        }
    }
    if out.is_empty() {
        return Err(arg_err!("no training interferograms found"));
    }
    Ok(out)
}

fn train_denoiser_cmd(a: TrainDenoiserArgs) -> Result<()> {
    let config = TrainConfig {
        patch_size: a.patch_size,
        patches_per_image: a.patches_per_image,
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.seed,
        adam: AdamConfig {
            lr: a.lr,
            ..AdamConfig::default()
        },
    };
    let mut model = build_denoiser(a.seed);
    config.validate(model.network().spatial_multiple())?;
    let mut patches = Vec::new();
    for (i, path) in noisy_inputs(&a.data)?.iter().enumerate() {
        let pair = prepare_input(&read_complex(path)?)?;
        patches.extend(extract_patches(&pair, a.patch_size, a.patches_per_image, patch_seed(a.seed, i))?);
    }
    eprintln!("training on {} patches", patches.len());
    model.fit(&patches, &config, |e, l| eprintln!("epoch {} loss {l:.6}", e + 1))?;
    save_checkpoint(&a.out, model.network())
}

fn build_targets_cmd(a: BuildTargetsArgs) -> Result<()> {
    let model = load_denoiser(&a.model)?;
    let params = ChanVeseParams::default();
    if has_magic(&a.noisy, b"IGRM") {
        let noisy = read_complex(&a.noisy)?;
        let t = build_targets(&noisy, &denoise(&model, &noisy)?, a.window, &params)?;
        return write_raster(&a.out, &t.targets.into());
    }
    let records = read_scene_manifest(&a.noisy)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mut pairs = Vec::with_capacity(records.len());
    for r in &records {
        let noisy = read_complex(&r.noisy)?;
        let t = build_targets(&noisy, &denoise(&model, &noisy)?, a.window, &params)?;
        let target = a.out.join(format!("scene_{:04}_target.cohr", r.index));
        write_raster(&target, &t.targets.into())?;
        pairs.push((r.noisy.clone(), target));
    }
    write_pairs_manifest(a.out.join("pairs.txt"), &pairs)?;
    eprintln!("wrote {} targets and {}", pairs.len(), a.out.join("pairs.txt").display());
    Ok(())
}

fn train_coherence_cmd(a: TrainCoherenceArgs) -> Result<()> {
    let config = CoherenceTrainConfig {
        patch_size: a.patch_size,
        patches_per_image: a.patches_per_image,
        epochs: a.epochs,
        batch_size: a.batch_size,
        lambda: a.lambda,
        seed: a.seed,
        adam: AdamConfig {
            lr: a.lr,
            ..AdamConfig::default()
        },
    };
    let pairs = read_pairs_manifest(&a.pairs)?;
    if pairs.is_empty() {
        return Err(arg_err!("{} lists no pairs", a.pairs.display()));
    }
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (i, (input, target)) in pairs.iter().enumerate() {
        let pair = prepare_input(&read_complex(input)?)?;
        let (x, y) = extract_patch_pairs(
            &pair,
            &read_coherence(target)?,
            a.patch_size,
            a.patches_per_image,
            patch_seed(a.seed, i),
        )?;
        xs.extend(x);
        ys.extend(y);
    }
    eprintln!("training on {} patch pairs", xs.len());
    let (model, _) = train_coherence_with(&xs, &ys, &config, |e, l| eprintln!("epoch {} loss {l:.6}", e + 1))?;
    save_checkpoint(&a.out, model.network())
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let methods = a
        .methods
        .iter()
        .map(|m| {
            Ok(match m.parse::<Method>()? {
                Method::Boxcar(_) => Method::Boxcar(a.boxcar),
                Method::Goldstein(p) => Method::Goldstein(GoldsteinParams { alpha: a.alpha, ..p }),
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let denoiser = a.denoiser.as_deref().map(load_denoiser).transpose()?;
    let coherence = a.coherence.as_deref().map(load_coherence).transpose()?;
    if methods.contains(&Method::Proposed) && denoiser.is_none() {
        return Err(arg_err!("method \"proposed\" needs --denoiser"));
    }
    let models = Models {
        denoiser: denoiser.as_ref(),
        coherence: coherence.as_ref(),
    };
    let report = evaluate_manifest(&read_scene_manifest(&a.manifest)?, &methods, &models)?;
    write_atomic(&a.report, report.to_csv().as_bytes())?;
    print!("{}", report.to_table());
    Ok(())
}
