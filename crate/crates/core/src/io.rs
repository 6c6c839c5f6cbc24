//! On-disk formats: typed rasters, network checkpoints, PPM previews and the
//! plain-text manifests that tie scene files together.
//!
//! Raster files start with a 13-byte header (`magic`, version byte, height
//! and width as little-endian `u32`) followed by little-endian `f32` samples.
//! `IGRM` stores interleaved real/imaginary pairs, `COHR` and `PHSE` one
//! value per pixel.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex32;

use crate::error::{arg_err, Error, Result};
use crate::network::Network;
use crate::raster::{CoherenceMap, ComplexRaster, PhaseRaster};
use crate::tensor::{ConvLayer, NetTensor, KERNEL_SIZE};

pub const FORMAT_VERSION: u8 = 1;
const HEADER_LEN: usize = 13;

/// Any of the three raster file types.
#[derive(Clone, Debug, PartialEq)]
pub enum Raster {
    Complex(ComplexRaster),
    Coherence(CoherenceMap),
    Phase(PhaseRaster),
}

impl Raster {
    pub fn magic(&self) -> &'static [u8; 4] {
        match self {
            Raster::Complex(_) => b"IGRM",
            Raster::Coherence(_) => b"COHR",
            Raster::Phase(_) => b"PHSE",
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Raster::Complex(_) => "IGRM",
            Raster::Coherence(_) => "COHR",
            Raster::Phase(_) => "PHSE",
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        match self {
            Raster::Complex(r) => r.dims(),
            Raster::Coherence(r) => r.dims(),
            Raster::Phase(r) => r.dims(),
        }
    }

    pub fn into_complex(self) -> Result<ComplexRaster> {
        match self {
            Raster::Complex(r) => Ok(r),
            other => Err(Error::WrongKind {
                expected: "IGRM",
                found: other.kind(),
            }),
        }
    }

    pub fn into_coherence(self) -> Result<CoherenceMap> {
        match self {
            Raster::Coherence(r) => Ok(r),
            other => Err(Error::WrongKind {
                expected: "COHR",
                found: other.kind(),
            }),
        }
    }

    pub fn into_phase(self) -> Result<PhaseRaster> {
        match self {
            Raster::Phase(r) => Ok(r),
            other => Err(Error::WrongKind {
                expected: "PHSE",
                found: other.kind(),
            }),
        }
    }
}

impl From<ComplexRaster> for Raster {
    fn from(r: ComplexRaster) -> Self {
        Raster::Complex(r)
    }
}

impl From<CoherenceMap> for Raster {
    fn from(r: CoherenceMap) -> Self {
        Raster::Coherence(r)
    }
}

impl From<PhaseRaster> for Raster {
    fn from(r: PhaseRaster) -> Self {
        Raster::Phase(r)
    }
}

pub fn encode_raster(raster: &Raster) -> Vec<u8> {
    let (h, w) = raster.dims();
    let per_pixel = if matches!(raster, Raster::Complex(_)) { 8 } else { 4 };
    let mut out = Vec::with_capacity(HEADER_LEN + h * w * per_pixel);
    out.extend_from_slice(raster.magic());
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    match raster {
        Raster::Complex(r) => {
            for z in r.samples() {
                out.extend_from_slice(&z.re.to_le_bytes());
                out.extend_from_slice(&z.im.to_le_bytes());
            }
        }
        Raster::Coherence(r) => r.values().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        Raster::Phase(r) => r.values().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
    }
    out
}

fn read_u32(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

fn read_f32(bytes: &[u8], offset: usize) -> f32 {
    f32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

fn need(bytes: &[u8], offset: usize, len: usize) -> Result<()> {
    if bytes.len() < offset + len {
        return Err(Error::Truncated {
            offset: offset as u64,
            expected: (offset + len) as u64,
            actual: bytes.len() as u64,
        });
    }
    Ok(())
}

pub fn decode_raster(bytes: &[u8]) -> Result<Raster> {
    need(bytes, 0, 4)?;
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    let per_pixel: u64 = match &magic {
        b"IGRM" => 8,
        b"COHR" | b"PHSE" => 4,
        _ => return Err(Error::BadMagic { offset: 0, found: magic }),
    };
    need(bytes, 4, 1)?;
    if bytes[4] != FORMAT_VERSION {
        return Err(Error::Version {
            offset: 4,
            version: bytes[4],
        });
    }
    need(bytes, 5, 8)?;
    let (height, width) = (read_u32(bytes, 5), read_u32(bytes, 9));
    let payload = (height as u64)
        .checked_mul(width as u64)
        .and_then(|n| n.checked_mul(per_pixel))
        .filter(|&n| n <= isize::MAX as u64 - HEADER_LEN as u64)
        .ok_or(Error::DimensionOverflow {
            offset: 5,
            height,
            width,
        })?;
    let expected = HEADER_LEN as u64 + payload;
    if (bytes.len() as u64) != expected {
        return Err(Error::Truncated {
            offset: if (bytes.len() as u64) < expected { bytes.len() as u64 } else { expected },
            expected,
            actual: bytes.len() as u64,
        });
    }
    let (h, w) = (height as usize, width as usize);
    let values = |i: usize| read_f32(bytes, HEADER_LEN + 4 * i);
    let check_finite = |i: usize, v: f32| {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite {
                offset: (HEADER_LEN + 4 * i) as u64,
            })
        }
    };
    Ok(match &magic {
        b"IGRM" => {
            let samples = (0..h * w)
                .map(|p| Ok(Complex32::new(check_finite(2 * p, values(2 * p))?, check_finite(2 * p + 1, values(2 * p + 1))?)))
                .collect::<Result<Vec<_>>>()?;
            Raster::Complex(ComplexRaster::new(h, w, samples)?)
        }
        b"COHR" => {
            let vals = (0..h * w)
                .map(|i| {
                    let v = values(i);
                    if (0.0..=1.0).contains(&v) {
                        Ok(v)
                    } else {
                        Err(Error::Range {
                            offset: (HEADER_LEN + 4 * i) as u64,
                            value: v,
                            min: 0.0,
                            max: 1.0,
                        })
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Raster::Coherence(CoherenceMap::new(h, w, vals)?)
        }
        _ => {
            let vals = (0..h * w).map(|i| check_finite(i, values(i))).collect::<Result<Vec<_>>>()?;
            Raster::Phase(PhaseRaster::new(h, w, vals)?)
        }
    })
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| arg_err!("{} is not a file path", path.display()))?
        .to_string_lossy();
    let tmp = path.with_file_name(format!(".{name}.{}.tmp", std::process::id()));
    let result = (|| {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub fn write_raster(path: impl AsRef<Path>, raster: &Raster) -> Result<()> {
    write_atomic(path.as_ref(), &encode_raster(raster))
}

pub fn read_raster(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_raster(&bytes)
}

pub fn read_complex(path: impl AsRef<Path>) -> Result<ComplexRaster> {
    read_raster(path)?.into_complex()
}

pub fn read_coherence(path: impl AsRef<Path>) -> Result<CoherenceMap> {
    read_raster(path)?.into_coherence()
}

pub fn read_phase(path: impl AsRef<Path>) -> Result<PhaseRaster> {
    read_raster(path)?.into_phase()
}

/// Serialized network: `CNNM`, version byte, length-prefixed descriptor,
/// layer count, then per layer its shape (`out, in, kh, kw`) and `f32`
/// kernels and biases.
pub fn encode_checkpoint(net: &Network) -> Vec<u8> {
    let desc = net.descriptor();
    let mut out = Vec::new();
    out.extend_from_slice(b"CNNM");
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&(desc.len() as u32).to_le_bytes());
    out.extend_from_slice(desc.as_bytes());
    out.extend_from_slice(&(net.conv_count() as u32).to_le_bytes());
    for layer in net.conv_layers() {
        for &d in layer.kernels.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in layer.kernels.values().iter().chain(layer.bias.values()) {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Network> {
    need(bytes, 0, 4)?;
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if &magic != b"CNNM" {
        return Err(Error::BadMagic { offset: 0, found: magic });
    }
    need(bytes, 4, 1)?;
    if bytes[4] != FORMAT_VERSION {
        return Err(Error::Version {
            offset: 4,
            version: bytes[4],
        });
    }
    let mut at = 5;
    need(bytes, at, 4)?;
    let len = read_u32(bytes, at) as usize;
    at += 4;
    need(bytes, at, len)?;
    let desc = std::str::from_utf8(&bytes[at..at + len])
        .map_err(|_| Error::Descriptor(format!("descriptor at byte {at} is not UTF-8")))?;
    let mut net = Network::from_descriptor(desc, 0)?;
    at += len;
    need(bytes, at, 4)?;
    let count = read_u32(bytes, at) as usize;
    if count != net.conv_count() {
        return Err(Error::Descriptor(format!(
            "byte {at}: {count} layers stored, descriptor has {}",
            net.conv_count()
        )));
    }
    at += 4;
    let activations: Vec<_> = net.conv_layers().map(|l| l.activation).collect();
    let mut layers = Vec::with_capacity(count);
    for activation in activations {
        need(bytes, at, 16)?;
        let shape: Vec<usize> = (0..4).map(|i| read_u32(bytes, at + 4 * i) as usize).collect();
        if shape[2] != KERNEL_SIZE || shape[3] != KERNEL_SIZE {
            return Err(Error::Descriptor(format!(
                "byte {at}: kernel {}x{} is not {KERNEL_SIZE}x{KERNEL_SIZE}",
                shape[2], shape[3]
            )));
        }
        at += 16;
        let n = shape.iter().product::<usize>();
        let total = (n + shape[0]) * 4;
        need(bytes, at, total)?;
        let mut floats = (0..n + shape[0]).map(|i| read_f32(bytes, at + 4 * i) as f64);
        let kernels = NetTensor::new(&shape, floats.by_ref().take(n).collect())?;
        let bias = NetTensor::new(&[shape[0]], floats.collect())?;
        if let Some(i) = kernels.values().iter().chain(bias.values()).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                offset: (at + 4 * i) as u64,
            });
        }
        at += total;
        layers.push(ConvLayer::from_parts(kernels, bias, activation)?);
    }
    if at != bytes.len() {
        return Err(Error::Truncated {
            offset: at as u64,
            expected: at as u64,
            actual: bytes.len() as u64,
        });
    }
    net.replace_layers(layers)?;
    Ok(net)
}

pub fn save_checkpoint(path: impl AsRef<Path>, net: &Network) -> Result<()> {
    write_atomic(path.as_ref(), &encode_checkpoint(net))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RenderMode {
    Phase,
    Coherence,
    Amplitude,
}

impl std::str::FromStr for RenderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "phase" => Ok(RenderMode::Phase),
            "coherence" => Ok(RenderMode::Coherence),
            "amplitude" => Ok(RenderMode::Amplitude),
            _ => Err(arg_err!("unknown render mode {s:?}")),
        }
    }
}

/// Fully saturated HSV colour for a phase: `-pi` is blue (hue 240), `0` green
/// and `+pi` red (hue 0). Values outside `[-pi, pi]` are wrapped first; the
/// single-precision neighbours of `+-pi` count as inside.
pub fn phase_color(phi: f64) -> [u8; 3] {
    use std::f64::consts::PI;
    let phi = if phi.abs() <= PI + 1e-6 {
        phi.clamp(-PI, PI)
    } else {
        phi.sin().atan2(phi.cos())
    };
    let hue = 240.0 * (1.0 - (phi + PI) / (2.0 * PI));
    let sector = (hue / 60.0).clamp(0.0, 6.0);
    let x = 1.0 - ((sector % 2.0) - 1.0).abs();
    let (r, g, b) = match sector as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    let q = |c: f64| (c * 255.0).round() as u8;
    [q(r), q(g), q(b)]
}

fn gray(v: f64) -> [u8; 3] {
    let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    [g, g, g]
}

/// RGB bytes for a raster in the given mode.
pub fn render_rgb(raster: &Raster, mode: RenderMode) -> Result<Vec<u8>> {
    let pixels: Vec<[u8; 3]> = match (mode, raster) {
        (RenderMode::Phase, Raster::Complex(r)) => r.samples().iter().map(|z| phase_color(z.arg() as f64)).collect(),
        (RenderMode::Phase, Raster::Phase(r)) => r.values().iter().map(|&v| phase_color(v as f64)).collect(),
        (RenderMode::Coherence, Raster::Coherence(r)) => r.values().iter().map(|&v| gray(v as f64)).collect(),
        (RenderMode::Amplitude, Raster::Complex(r)) => {
            let amps = r.amplitudes();
            let top = amps.iter().fold(0.0f64, |m, &a| m.max(a));
            let denom = top.ln_1p();
            amps.iter()
                .map(|&a| gray(if denom > 0.0 { a.ln_1p() / denom } else { 0.0 }))
                .collect()
        }
        (mode, r) => return Err(arg_err!("cannot render a {} raster in {mode:?} mode", r.kind())),
    };
    Ok(pixels.concat())
}

pub fn encode_ppm(height: usize, width: usize, rgb: &[u8]) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

pub fn render_ppm(raster: &Raster, path: impl AsRef<Path>, mode: RenderMode) -> Result<()> {
    let (h, w) = raster.dims();
    write_atomic(path.as_ref(), &encode_ppm(h, w, &render_rgb(raster, mode)?))
}

/// One simulated scene as listed in a dataset manifest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SceneRecord {
    pub index: usize,
    pub seed: u64,
    pub clean: PathBuf,
    pub noisy: PathBuf,
    pub gamma: PathBuf,
}

pub const SCENE_MANIFEST_HEADER: &str = "# index seed clean noisy gamma";

/// Writes scene records with paths relative to the manifest's directory.
pub fn write_scene_manifest(path: impl AsRef<Path>, records: &[SceneRecord]) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new(""));
    let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
    let mut text = format!("{SCENE_MANIFEST_HEADER}\n");
    for r in records {
        text += &format!(
            "{} {} {} {} {}\n",
            r.index,
            r.seed,
            rel(&r.clean),
            rel(&r.noisy),
            rel(&r.gamma)
        );
    }
    write_atomic(path, text.as_bytes())
}

fn manifest_lines(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .map(|(i, l)| (i, l.split_whitespace().map(str::to_owned).collect()))
        .collect())
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn read_scene_manifest(path: impl AsRef<Path>) -> Result<Vec<SceneRecord>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new(""));
    let bad = |line, message: String| Error::Manifest {
        path: path.to_path_buf(),
        line,
        message,
    };
    manifest_lines(path)?
        .into_iter()
        .map(|(line, f)| {
            if f.len() != 5 {
                return Err(bad(line, format!("expected 5 fields, found {}", f.len())));
            }
            Ok(SceneRecord {
                index: f[0].parse().map_err(|_| bad(line, format!("bad index {:?}", f[0])))?,
                seed: f[1].parse().map_err(|_| bad(line, format!("bad seed {:?}", f[1])))?,
                clean: resolve(base, &f[2]),
                noisy: resolve(base, &f[3]),
                gamma: resolve(base, &f[4]),
            })
        })
        .collect()
}

/// Lines of `input target` paths (IGRM and COHR files) for coherence training.
pub fn read_pairs_manifest(path: impl AsRef<Path>) -> Result<Vec<(PathBuf, PathBuf)>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new(""));
    manifest_lines(path)?
        .into_iter()
        .map(|(line, f)| {
            if f.len() != 2 {
                return Err(Error::Manifest {
                    path: path.to_path_buf(),
                    line,
                    message: format!("expected 2 fields, found {}", f.len()),
                });
            }
            Ok((resolve(base, &f[0]), resolve(base, &f[1])))
        })
        .collect()
}

pub fn write_pairs_manifest(path: impl AsRef<Path>, pairs: &[(PathBuf, PathBuf)]) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new(""));
    let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
    let mut text = String::from("# input target\n");
    for (a, b) in pairs {
        text += &format!("{} {}\n", rel(a), rel(b));
    }
    write_atomic(path, text.as_bytes())
}

/// True when the file at `path` starts with `magic`.
pub fn has_magic(path: impl AsRef<Path>, magic: &[u8; 4]) -> bool {
    use std::io::Read;
    let mut buf = [0u8; 4];
    fs::File::open(path).and_then(|mut f| f.read_exact(&mut buf)).is_ok() && &buf == magic
}
