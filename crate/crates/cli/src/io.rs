//! Ensemble files and their metadata sidecar.
//!
//! Both formats hold one row per particle, grid time and component with the
//! columns `t, particle, component, X, A, M`. CSV writes floats in their
//! shortest round-trip form; the binary format stores the same rows as
//! little-endian `f64`, described by a JSON file next to it. Brownian
//! increments are not written: they are a function of the seed.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use mvsve::{KernelSpec, ModelSpec, ParticleEnsemble, Partition, SimMode};
use serde::{Deserialize, Serialize};

use crate::config::OutputFormat;
use crate::CliError;

pub const CSV_HEADER: &str = "t,particle,component,X,A,M";
pub const COLUMNS: [&str; 6] = ["t", "particle", "component", "X", "A", "M"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateHashes {
    pub drift: String,
    pub diffusion: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMeta {
    pub tool_version: String,
    pub format: OutputFormat,
    /// Ensemble file name, relative to the sidecar.
    pub file: String,
    pub particles: usize,
    pub state_dim: usize,
    pub noise_dim: usize,
    pub times: Vec<f64>,
    pub seed: u64,
    pub mode: SimMode,
    pub noise_substeps: usize,
    pub factor_nodes: usize,
    pub model: ModelSpec,
    pub model_label: String,
    pub kernel_b: KernelSpec,
    pub kernel_sigma: KernelSpec,
    /// SHA-256 of the certificate files the run relied on; `None` when forced.
    pub certificates: Option<CertificateHashes>,
    pub config_sha256: String,
    /// Largest relative residual of the reconstruction identity.
    pub reconstruction_residual: f64,
    /// The particle system replaces the law of `X` by the empirical measure.
    pub law_approximation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryDescriptor {
    pub dtype: String,
    pub byte_order: String,
    pub layout: String,
    pub rows: usize,
    pub columns: Vec<String>,
}

pub fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(path, e))
}

/// Visits every output row in file order.
fn for_each_row(
    ens: &ParticleEnsemble,
    mut f: impl FnMut([f64; 6]) -> std::io::Result<()>,
) -> Result<(), CliError> {
    let (a, m) = ens
        .accumulators()
        .map_err(|e| CliError::Io(format!("cannot write ensemble: {e}")))?;
    let d = ens.state_dim;
    let times = ens.times();
    for n in 0..ens.particles {
        for (j, &t) in times.iter().enumerate() {
            for k in 0..d {
                let o = (n * times.len() + j) * d + k;
                f([t, n as f64, k as f64, ens.x[o], a[o], m[o]])
                    .map_err(|e| CliError::Io(e.to_string()))?;
            }
        }
    }
    Ok(())
}

/// Writes the ensemble rows; returns the data file path.
pub fn write_ensemble(dir: &Path, ens: &ParticleEnsemble, format: OutputFormat) -> Result<PathBuf, CliError> {
    match format {
        OutputFormat::Csv => {
            let path = dir.join("ensemble.csv");
            let file = File::create(&path).map_err(|e| io_err(&path, e))?;
            let mut w = BufWriter::new(file);
            writeln!(w, "{CSV_HEADER}").map_err(|e| io_err(&path, e))?;
            for_each_row(ens, |r| {
                writeln!(w, "{},{},{},{},{},{}", r[0], r[1] as usize, r[2] as usize, r[3], r[4], r[5])
            })?;
            w.flush().map_err(|e| io_err(&path, e))?;
            Ok(path)
        }
        OutputFormat::Bin => {
            let path = dir.join("ensemble.bin");
            let file = File::create(&path).map_err(|e| io_err(&path, e))?;
            let mut w = BufWriter::new(file);
            let mut rows = 0;
            for_each_row(ens, |r| {
                rows += 1;
                r.iter().try_for_each(|v| w.write_all(&v.to_le_bytes()))
            })?;
            w.flush().map_err(|e| io_err(&path, e))?;
            let desc = BinaryDescriptor {
                dtype: "float64".into(),
                byte_order: "little".into(),
                layout: "row-major".into(),
                rows,
                columns: COLUMNS.iter().map(|c| c.to_string()).collect(),
            };
            write_json(&dir.join("ensemble.bin.json"), &desc)?;
            Ok(path)
        }
    }
}

/// Reads an ensemble back, using the sidecar `meta.json` in the same directory.
pub fn read_ensemble(meta_path: &Path) -> Result<(EnsembleMeta, ParticleEnsemble), CliError> {
    let meta: EnsembleMeta = read_json(meta_path)?;
    let dir = meta_path.parent().unwrap_or(Path::new("."));
    let path = dir.join(&meta.file);
    let partition = Partition::from_times(meta.times.clone())
        .map_err(|e| io_err(meta_path, e))?;
    let d = meta.state_dim;
    let cols = meta.times.len();
    let total = meta.particles * cols * d;
    let rows: Vec<[f64; 6]> = match meta.format {
        OutputFormat::Csv => read_csv_rows(&path)?,
        OutputFormat::Bin => read_bin_rows(&path)?,
    };
    if rows.len() != total {
        return Err(io_err(&path, format!("expected {total} rows, found {}", rows.len())));
    }
    let mut x = vec![0.0; total];
    let mut a = vec![0.0; total];
    let mut m = vec![0.0; total];
    for r in &rows {
        let (n, k) = (r[1] as usize, r[2] as usize);
        let j = partition
            .times()
            .binary_search_by(|t| t.total_cmp(&r[0]))
            .map_err(|_| io_err(&path, format!("time {} is not on the grid", r[0])))?;
        if n >= meta.particles || k >= d {
            return Err(io_err(&path, format!("row index out of range: particle {n}, component {k}")));
        }
        let o = (n * cols + j) * d + k;
        x[o] = r[3];
        a[o] = r[4];
        m[o] = r[5];
    }
    let mut ens = ParticleEnsemble::from_paths(partition, meta.particles, d, x)
        .map_err(|e| io_err(&path, e))?;
    ens.noise_dim = meta.noise_dim;
    ens.seed = meta.seed;
    ens.mode = meta.mode;
    ens.noise_substeps = meta.noise_substeps;
    ens.factor_nodes = meta.factor_nodes;
    ens.model = meta.model_label.clone();
    ens.kernel_b = meta.kernel_b.label();
    ens.kernel_sigma = meta.kernel_sigma.label();
    ens.a = Some(a);
    ens.mart = Some(m);
    Ok((meta, ens))
}

fn read_csv_rows(path: &Path) -> Result<Vec<[f64; 6]>, CliError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut lines = BufReader::new(file).lines();
    match lines.next() {
        Some(Ok(h)) if h.trim() == CSV_HEADER => {}
        _ => return Err(io_err(path, format!("missing header `{CSV_HEADER}`"))),
    }
    let mut rows = Vec::new();
    for (no, line) in lines.enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut row = [0.0; 6];
        let mut fields = line.split(',');
        for slot in row.iter_mut() {
            *slot = fields
                .next()
                .and_then(|f| f.trim().parse().ok())
                .ok_or_else(|| io_err(path, format!("line {}: malformed row", no + 2)))?;
        }
        if fields.next().is_some() {
            return Err(io_err(path, format!("line {}: too many columns", no + 2)));
        }
        rows.push(row);
    }
    Ok(rows)
}

fn read_bin_rows(path: &Path) -> Result<Vec<[f64; 6]>, CliError> {
    let desc: BinaryDescriptor = read_json(&path.with_extension("bin.json"))?;
    if desc.dtype != "float64" || desc.byte_order != "little" || desc.columns != COLUMNS {
        return Err(io_err(path, "unsupported binary descriptor"));
    }
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| io_err(path, e))?;
    if bytes.len() != desc.rows * 48 {
        return Err(io_err(path, format!("expected {} bytes, found {}", desc.rows * 48, bytes.len())));
    }
    Ok(bytes
        .chunks_exact(48)
        .map(|chunk| {
            let mut row = [0.0; 6];
            for (v, b) in row.iter_mut().zip(chunk.chunks_exact(8)) {
                *v = f64::from_le_bytes(b.try_into().expect("8-byte chunk"));
            }
            row
        })
        .collect())
}
