//! Evaluation measures and the report that collects them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use crate::error::{shape_err, Result};
use crate::raster::{CoherenceMap, PhaseRaster};

/// Mean cosine of the wrapped phase error.
pub fn phce(estimated: &PhaseRaster, truth: &PhaseRaster) -> Result<f64> {
    if estimated.dims() != truth.dims() {
        return Err(shape_err!("phase rasters differ in size"));
    }
    let n = estimated.values().len();
    if n == 0 {
        return Err(shape_err!("empty phase raster"));
    }
    let sum: f64 = estimated
        .values()
        .iter()
        .zip(truth.values())
        .map(|(&e, &t)| {
            let d = e as f64 - t as f64;
            // cos of the wrapped angle of e^{jd}.
            d.sin().atan2(d.cos()).cos()
        })
        .sum();
    Ok(sum / n as f64)
}

/// Mean squared difference after removing each map's own mean.
pub fn cmse(estimated: &CoherenceMap, truth: &CoherenceMap) -> Result<f64> {
    if estimated.dims() != truth.dims() {
        return Err(shape_err!("coherence maps differ in size"));
    }
    let n = estimated.values().len();
    if n == 0 {
        return Err(shape_err!("empty coherence map"));
    }
    let (me, mt) = (estimated.mean(), truth.mean());
    let sum: f64 = estimated
        .values()
        .iter()
        .zip(truth.values())
        .map(|(&e, &t)| {
            let d = (e as f64 - me) - (t as f64 - mt);
            d * d
        })
        .sum();
    Ok(sum / n as f64)
}

/// Runs `stage` and returns its result with the elapsed wall-clock seconds.
pub fn time_stage<T>(stage: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = stage();
    (out, start.elapsed().as_secs_f64())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub scene: String,
    pub method: String,
    pub phce: f64,
    /// `None` when a method produced no coherence estimate.
    pub cmse: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MethodSummary {
    pub phce: f64,
    pub cmse: Option<f64>,
    pub seconds: f64,
    pub scenes: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub notes: Vec<String>,
}

impl EvalReport {
    pub fn push(&mut self, scene: impl Into<String>, method: impl Into<String>, phce: f64, cmse: Option<f64>, seconds: f64) {
        self.rows.push(EvalRow {
            scene: scene.into(),
            method: method.into(),
            phce,
            cmse,
            seconds,
        });
    }

    /// Methods in order of first appearance.
    pub fn methods(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for r in &self.rows {
            if !seen.contains(&r.method) {
                seen.push(r.method.clone());
            }
        }
        seen
    }

    /// Per-method means over scenes.
    pub fn summary(&self) -> BTreeMap<String, MethodSummary> {
        let mut out: BTreeMap<String, (MethodSummary, usize)> = BTreeMap::new();
        for r in &self.rows {
            let (s, with_cmse) = out.entry(r.method.clone()).or_default();
            s.phce += r.phce;
            s.seconds += r.seconds;
            s.scenes += 1;
            if let Some(c) = r.cmse {
                *s.cmse.get_or_insert(0.0) += c;
                *with_cmse += 1;
            }
        }
        out.into_iter()
            .map(|(m, (mut s, k))| {
                let n = s.scenes as f64;
                s.phce /= n;
                s.seconds /= n;
                s.cmse = s.cmse.map(|c| c / k as f64);
                (m, s)
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("scene,method,phce,cmse,seconds\n");
        for r in &self.rows {
            let cmse = r.cmse.map_or(String::new(), |c| format!("{c:.6}"));
            let _ = writeln!(out, "{},{},{:.6},{},{:.6}", r.scene, r.method, r.phce, cmse, r.seconds);
        }
        out
    }

    /// Aligned table with one column per method and rows phce, cmse and mean
    /// seconds per scene.
    pub fn to_table(&self) -> String {
        let methods = self.methods();
        let summary = self.summary();
        let width = methods.iter().map(|m| m.len()).max().unwrap_or(0).max(10);
        let mut out = format!("{:<8}", "");
        for m in &methods {
            let _ = write!(out, " {m:>width$}");
        }
        out.push('\n');
        let mut line = |label: &str, cell: &dyn Fn(&MethodSummary) -> String| {
            let _ = write!(out, "{label:<8}");
            for m in &methods {
                let _ = write!(out, " {:>width$}", cell(&summary[m]));
            }
            out.push('\n');
        };
        line("phce", &|s| format!("{:.4}", s.phce));
        line("cmse", &|s| s.cmse.map_or("N/A".into(), |c| format!("{c:.4}")));
        line("seconds", &|s| format!("{:.3}", s.seconds));
        for note in &self.notes {
            let _ = writeln!(out, "note: {note}");
        }
        out
    }
}
