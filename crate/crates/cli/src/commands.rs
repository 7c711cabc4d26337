//! The subcommands. Each returns whether its verdicts passed; errors carry
//! their own exit code.

use std::path::{Path, PathBuf};

use mvsve::diagnostics::{
    compare_levels, diagnose, frozen_integral_convergence, moment_report, refinement_study,
    DiagnosticsReport, RefinementOptions,
};
use mvsve::kernels::{certify, dyadic_pair_grid, CertifyOptions};
use mvsve::measures::WassersteinOptions;
use mvsve::solver::{precompute_weights, reconstruct, simulate, SimulationOptions};
use mvsve::{EmpiricalMeasure, KernelCertificate};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, FrozenTest};
use crate::io::{self, io_err, read_json, write_json, CertificateHashes, EnsembleMeta};
use crate::{plot, CliError, Outcome};

pub const CERT_DRIFT: &str = "certificate_b.json";
pub const CERT_DIFFUSION: &str = "certificate_sigma.json";
pub const META: &str = "meta.json";
pub const REPORT: &str = "report.json";
pub const CONVERGENCE: &str = "convergence.json";
pub const SUMMARY: &str = "summary.json";

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the effective experiment; the output location is not part of it.
fn config_hash(cfg: &ExperimentConfig) -> Result<String, CliError> {
    let mut c = cfg.clone();
    c.output.dir = PathBuf::new();
    Ok(sha256_hex(c.to_toml()?.as_bytes()))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Certifies both kernels and writes one certificate per role.
pub fn cmd_certify(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    ensure_dir(out)?;
    let mut opts = CertifyOptions::new(cfg.simulation.horizon, cfg.simulation.eta, cfg.certify.eps_grid.clone());
    opts.pairs = dyadic_pair_grid(cfg.simulation.horizon, cfg.certify.levels, cfg.certify.anchors);
    opts.quadrature = cfg.simulation.quadrature.clone();
    let (b, s) = certify(&cfg.kernel_b, &cfg.kernel_sigma, &opts)?;
    write_json(&out.join(CERT_DRIFT), &b)?;
    write_json(&out.join(CERT_DIFFUSION), &s)?;
    for c in [&b, &s] {
        println!("{}", describe_certificate(c));
    }
    Ok(Outcome::from_pass(b.is_certified() && s.is_certified()))
}

fn describe_certificate(c: &KernelCertificate) -> String {
    match (c.gamma, c.epsilon, c.constant, c.p_min) {
        (Some(g), Some(e), Some(l), Some(p)) => format!(
            "{:?} kernel {}: certified, γ = {g:.6}, ε = {e}, L = {l:.6e}, p > {p:.4}",
            c.role,
            c.kernel.label()
        ),
        _ => format!(
            "{:?} kernel {}: rejected ({})",
            c.role,
            c.kernel.label(),
            c.reasons.join("; ")
        ),
    }
}

/// Certificates in `out` that match the configured kernels, if any.
fn load_certificates(
    cfg: &ExperimentConfig,
    out: &Path,
) -> Result<Option<(KernelCertificate, KernelCertificate, CertificateHashes)>, CliError> {
    let (pb, ps) = (out.join(CERT_DRIFT), out.join(CERT_DIFFUSION));
    if !pb.is_file() || !ps.is_file() {
        return Ok(None);
    }
    let bytes_b = std::fs::read(&pb).map_err(|e| io_err(&pb, e))?;
    let bytes_s = std::fs::read(&ps).map_err(|e| io_err(&ps, e))?;
    let b: KernelCertificate = read_json(&pb)?;
    let s: KernelCertificate = read_json(&ps)?;
    if b.kernel != cfg.kernel_b || s.kernel != cfg.kernel_sigma {
        return Err(CliError::Config(format!(
            "certificates in {} were issued for other kernels; rerun `certify`",
            out.display()
        )));
    }
    let hashes = CertificateHashes {
        drift: sha256_hex(&bytes_b),
        diffusion: sha256_hex(&bytes_s),
    };
    Ok(Some((b, s, hashes)))
}

/// Simulates the particle system and writes the ensemble with its sidecar.
pub fn cmd_simulate(cfg: &ExperimentConfig, out: &Path, force: bool) -> Result<Outcome, CliError> {
    let certs = load_certificates(cfg, out)?;
    let hashes = match certs {
        Some((b, s, h)) if b.is_certified() && s.is_certified() => Some(h),
        Some(_) if !force => {
            eprintln!("kernel certificates were rejected; pass --force to simulate anyway");
            return Ok(Outcome::Fail);
        }
        None if !force => {
            return Err(CliError::Config(format!(
                "no kernel certificates in {}; run `certify` first or pass --force",
                out.display()
            )))
        }
        _ => None,
    };
    ensure_dir(out)?;
    let partition = cfg.partition()?;
    let weights = precompute_weights(&cfg.kernel_b, &cfg.kernel_sigma, &partition, &cfg.simulation.quadrature)?;
    let mut opts = SimulationOptions::new(cfg.simulation.particles, cfg.simulation.seed, cfg.simulation.mode);
    opts.factor_nodes = cfg.simulation.factor_nodes;
    let ens = simulate(&cfg.model, &weights, &cfg.initial_law()?, &opts)?;
    let residual = reconstruct(&ens, &weights)?;
    let data = io::write_ensemble(out, &ens, cfg.output.format)?;
    let meta = EnsembleMeta {
        tool_version: mvsve::TOOL_VERSION.to_string(),
        format: cfg.output.format,
        file: data.file_name().expect("file path").to_string_lossy().into_owned(),
        particles: ens.particles,
        state_dim: ens.state_dim,
        noise_dim: ens.noise_dim,
        times: ens.times().to_vec(),
        seed: ens.seed,
        mode: ens.mode,
        noise_substeps: ens.noise_substeps,
        factor_nodes: ens.factor_nodes,
        model: cfg.model.clone(),
        model_label: ens.model.clone(),
        kernel_b: cfg.kernel_b.clone(),
        kernel_sigma: cfg.kernel_sigma.clone(),
        certificates: hashes,
        config_sha256: config_hash(cfg)?,
        reconstruction_residual: residual.max_residual,
        law_approximation: format!("empirical measure of {} particles", ens.particles),
    };
    write_json(&out.join(META), &meta)?;
    println!(
        "simulated {} particles × {} steps ({}), reconstruction residual {:.2e}; wrote {}",
        ens.particles,
        ens.steps(),
        ens.mode,
        residual.max_residual,
        data.display()
    );
    Ok(Outcome::Pass)
}

/// Runs the per-ensemble diagnostics on a stored ensemble.
pub fn cmd_diagnose(cfg: &ExperimentConfig, out: &Path, ensemble: Option<&Path>) -> Result<Outcome, CliError> {
    let meta_path: PathBuf = match ensemble {
        Some(p) if p.is_dir() => p.join(META),
        Some(p) => p.to_path_buf(),
        None => out.join(META),
    };
    let (_, ens) = io::read_ensemble(&meta_path)?;
    let gamma = match load_certificates(cfg, out)? {
        Some((b, s, _)) => match (b.gamma, s.gamma) {
            (Some(gb), Some(gs)) => Some(gb.min(gs)),
            _ => None,
        },
        None => None,
    };
    let report = diagnose(&ens, &cfg.model, &cfg.diagnostics_config(gamma))?;
    ensure_dir(out)?;
    write_json(&out.join(REPORT), &report)?;
    let text = report.render_text();
    write_text(&out.join("report.txt"), &text)?;
    if cfg.diagnostics.plot_data {
        plot::emit(&out.join("plots"), &report, "diagnostics.gp")?;
    }
    print!("{text}");
    Ok(Outcome::from_pass(report.all_pass()))
}

/// Mesh and particle refinement study with the frozen-integral and moment checks.
pub fn cmd_convergence(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let c = &cfg.convergence;
    let opts = RefinementOptions {
        horizon: cfg.simulation.horizon,
        mesh_ladder: c.mesh_ladder.clone(),
        mesh_particles: c.mesh_particles,
        particle_ladder: c.particle_ladder.clone(),
        particle_steps: c.particle_steps,
        seed: cfg.simulation.seed,
        mode: c.mode.unwrap_or(cfg.simulation.mode),
        eta: cfg.simulation.eta,
        floor: c.floor,
        quadrature: cfg.simulation.quadrature.clone(),
        wasserstein: WassersteinOptions::default(),
    };
    let initial = cfg.initial_law()?;
    let study = refinement_study(&cfg.model, &cfg.kernel_b, &cfg.kernel_sigma, &initial, &opts)?;
    let finest = study.mesh_ensembles.last().expect("validated ladder");
    let mut report = DiagnosticsReport {
        particles: finest.particles,
        steps: finest.steps(),
        mode: finest.mode.to_string(),
        ..Default::default()
    };
    report.attach_refinement(study.report);
    let test = c.frozen_test;
    let f = move |_t: f64, x: &[f64], mu: &EmpiricalMeasure| match test {
        FrozenTest::One => 1.0,
        FrozenTest::State => x[0],
        FrozenTest::SecondMomentSquared => mu.moment(2.0).powi(4),
    };
    let frozen = frozen_integral_convergence(
        &study.mesh_ensembles,
        &cfg.kernel_b,
        &cfg.simulation.quadrature,
        c.floor,
        &f,
    )?;
    report.attach_frozen_integral(frozen);
    if !c.q_list.is_empty() {
        let tables = study
            .mesh_ensembles
            .iter()
            .map(|e| moment_report(e, &c.q_list))
            .collect::<mvsve::Result<Vec<_>>>()?;
        report.attach_moment_stability(compare_levels(&tables, c.moment_z)?);
    }
    ensure_dir(out)?;
    write_json(&out.join(CONVERGENCE), &report)?;
    let text = report.render_text();
    write_text(&out.join("convergence.txt"), &text)?;
    if cfg.diagnostics.plot_data {
        plot::emit(&out.join("plots"), &report, "convergence.gp")?;
    }
    print!("{text}");
    Ok(Outcome::from_pass(report.all_pass()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub source: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub directory: String,
    pub entries: Vec<SummaryEntry>,
    pub passed: bool,
}

/// Collects whatever earlier commands left in `out` into one summary.
pub fn cmd_report(out: &Path) -> Result<Outcome, CliError> {
    let mut entries = Vec::new();
    for name in [CERT_DRIFT, CERT_DIFFUSION] {
        let path = out.join(name);
        if path.is_file() {
            let c: KernelCertificate = read_json(&path)?;
            entries.push(SummaryEntry {
                source: name.into(),
                passed: c.is_certified(),
                detail: describe_certificate(&c),
            });
        }
    }
    let meta_path = out.join(META);
    if meta_path.is_file() {
        let m: EnsembleMeta = read_json(&meta_path)?;
        entries.push(SummaryEntry {
            source: META.into(),
            passed: m.reconstruction_residual <= mvsve::solver::RESIDUAL_TOLERANCE,
            detail: format!(
                "{} particles × {} steps, mode {}, seed {}, reconstruction residual {:.2e}{}",
                m.particles,
                m.times.len() - 1,
                m.mode,
                m.seed,
                m.reconstruction_residual,
                if m.certificates.is_none() { ", forced without certificates" } else { "" }
            ),
        });
    }
    for name in [REPORT, CONVERGENCE] {
        let path = out.join(name);
        if path.is_file() {
            let r: DiagnosticsReport = read_json(&path)?;
            for v in &r.verdicts {
                entries.push(SummaryEntry {
                    source: format!("{name}: {}", v.section),
                    passed: v.passed,
                    detail: v.threshold.clone(),
                });
            }
            if r.verdicts.is_empty() {
                entries.push(SummaryEntry {
                    source: name.into(),
                    passed: true,
                    detail: "no verdicts requested".into(),
                });
            }
        }
    }
    if entries.is_empty() {
        return Err(CliError::Io(format!("no results found in {}", out.display())));
    }
    let summary = Summary {
        directory: out.display().to_string(),
        passed: entries.iter().all(|e| e.passed),
        entries,
    };
    let mut text = String::new();
    for e in &summary.entries {
        text.push_str(&format!(
            "[{}] {}: {}\n",
            if e.passed { "pass" } else { "FAIL" },
            e.source,
            e.detail
        ));
    }
    write_json(&out.join(SUMMARY), &summary)?;
    write_text(&out.join("summary.txt"), &text)?;
    print!("{text}");
    Ok(Outcome::from_pass(summary.passed))
}
