//! Experiment configuration files.
//!
//! A config is TOML with one table per concern:
//!
//! ```toml
//! [model]            # catalog entry, selected by `name`
//! name = "mean_field_ou"
//! theta = 1.0
//! sigma0 = 1.0
//!
//! [kernel_b]         # kernels are selected by `type`
//! type = "constant"
//! c = 1.0
//!
//! [kernel_sigma]
//! type = "fractional"
//! c = 1.0
//! alpha = 0.25
//!
//! [simulation]
//! horizon = 1.0
//! steps = 100        # or: times = [0.0, 0.1, ..., 1.0]
//! particles = 1000
//! seed = 42
//! mode = "integrated-kernel"
//!
//! [initial]          # point | gaussian | empirical
//! type = "point"
//! value = [0.0]
//! ```
//!
//! `[certify]`, `[diagnostics]`, `[convergence]` and `[output]` are optional
//! and documented on their structs.

use std::path::{Path, PathBuf};

use mvsve::diagnostics::{DiagnosticsConfig, IncrementOptions, MartingaleOptions};
use mvsve::kernels::QuadratureConfig;
use mvsve::solver::InitialLaw;
use mvsve::{CoefficientModel, KernelSpec, ModelSpec, Partition, SimMode};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub kernel_b: KernelSpec,
    pub kernel_sigma: KernelSpec,
    pub simulation: SimulationSection,
    pub initial: InitialSection,
    #[serde(default)]
    pub certify: CertifySection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
    #[serde(default)]
    pub convergence: ConvergenceSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    pub particles: usize,
    pub seed: u64,
    #[serde(default)]
    pub mode: SimMode,
    #[serde(default = "two")]
    pub eta: f64,
    #[serde(default = "sixteen")]
    pub factor_nodes: usize,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSection {
    Point { value: Vec<f64> },
    Gaussian { mean: Vec<f64>, cov: Vec<Vec<f64>> },
    /// Whitespace- or comma-separated rows, one atom per line; relative
    /// paths are resolved against the config file's directory.
    Empirical { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifySection {
    /// Candidate ε values.
    pub eps_grid: Vec<f64>,
    /// Dyadic levels of the `(t, t')` grid.
    pub levels: u32,
    pub anchors: usize,
}

impl Default for CertifySection {
    fn default() -> Self {
        Self {
            eps_grid: vec![1.0],
            levels: 14,
            anchors: 5,
        }
    }
}

/// Which diagnostics `diagnose` runs; an all-off section yields an empty report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsSection {
    pub moments: bool,
    pub q_list: Vec<f64>,
    pub increments: bool,
    pub p_list: Vec<f64>,
    /// Minimum `log10(h_max / h_min)` of the lag set.
    pub lag_decades: f64,
    pub holder: bool,
    pub martingale: bool,
    pub z_threshold: f64,
    pub increment_tolerance: f64,
    pub holder_tolerance: f64,
    /// Emit `.dat` files and a gnuplot script next to the report.
    pub plot_data: bool,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self {
            moments: true,
            q_list: vec![2.0, 4.0],
            increments: true,
            p_list: vec![2.0, 4.0],
            lag_decades: 1.5,
            holder: true,
            martingale: true,
            z_threshold: 3.0,
            increment_tolerance: 0.1,
            holder_tolerance: 0.1,
            plot_data: true,
        }
    }
}

/// The quantity integrated by the frozen-integral study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrozenTest {
    One,
    /// First state component.
    State,
    /// `(∫ |y|² μ(dy))²`.
    SecondMomentSquared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceSection {
    /// Scheme for the ladders; defaults to `simulation.mode`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<SimMode>,
    pub mesh_ladder: Vec<usize>,
    pub mesh_particles: usize,
    pub particle_ladder: Vec<usize>,
    pub particle_steps: usize,
    pub floor: f64,
    pub q_list: Vec<f64>,
    pub moment_z: f64,
    pub frozen_test: FrozenTest,
}

impl Default for ConvergenceSection {
    fn default() -> Self {
        Self {
            mode: None,
            mesh_ladder: vec![25, 50, 100, 200],
            mesh_particles: 1000,
            particle_ladder: vec![1000, 4000, 16000],
            particle_steps: 50,
            floor: 1e-9,
            q_list: vec![2.0, 4.0],
            moment_z: 3.0,
            frozen_test: FrozenTest::SecondMomentSquared,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Bin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub format: OutputFormat,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            format: OutputFormat::Csv,
        }
    }
}

fn two() -> f64 {
    2.0
}

fn sixteen() -> usize {
    16
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads and validates a config; relative paths inside it are made
    /// relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let InitialSection::Empirical { path: p } = &mut cfg.initial {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let s = &self.simulation;
        if !(s.horizon > 0.0 && s.horizon.is_finite()) {
            return bad(format!("horizon must be positive, got {}", s.horizon));
        }
        if s.particles < 2 {
            return bad(format!("need at least 2 particles, got {}", s.particles));
        }
        if !(s.eta >= 1.0 && s.eta.is_finite()) {
            return bad(format!("eta must be ≥ 1, got {}", s.eta));
        }
        self.partition()?;
        self.model.validate().map_err(config_err)?;
        self.kernel_b.validate().map_err(config_err)?;
        self.kernel_sigma.validate().map_err(config_err)?;
        s.quadrature.validate().map_err(config_err)?;
        if let InitialSection::Empirical { path } = &self.initial {
            if !path.is_file() {
                return bad(format!("initial atoms file {} does not exist", path.display()));
            }
        }
        let law = self.initial_law()?;
        if law.dim() != self.model.state_dim() {
            return bad(format!(
                "initial law has dimension {}, model has {}",
                law.dim(),
                self.model.state_dim()
            ));
        }
        if self.certify.eps_grid.is_empty() || self.certify.eps_grid.iter().any(|e| !(*e > 0.0)) {
            return bad("certify.eps_grid needs positive entries".into());
        }
        Ok(())
    }

    pub fn partition(&self) -> Result<Partition, CliError> {
        let s = &self.simulation;
        let p = match (&s.steps, &s.times) {
            (Some(m), None) => Partition::uniform(s.horizon, *m),
            (None, Some(t)) => {
                if t.last() != Some(&s.horizon) {
                    return Err(CliError::Config("times must end at the horizon".into()));
                }
                Partition::from_times(t.clone())
            }
            _ => return Err(CliError::Config("give exactly one of simulation.steps and simulation.times".into())),
        };
        p.map_err(config_err)
    }

    pub fn initial_law(&self) -> Result<InitialLaw, CliError> {
        Ok(match &self.initial {
            InitialSection::Point { value } => InitialLaw::Point { value: value.clone() },
            InitialSection::Gaussian { mean, cov } => InitialLaw::Gaussian {
                mean: mean.clone(),
                cov: cov.clone(),
            },
            InitialSection::Empirical { path } => InitialLaw::Empirical {
                atoms: read_atoms(path)?,
            },
        })
    }

    pub fn diagnostics_config(&self, gamma: Option<f64>) -> DiagnosticsConfig {
        let d = &self.diagnostics;
        DiagnosticsConfig {
            moment_orders: if d.moments { d.q_list.clone() } else { vec![] },
            increment_orders: if d.increments { d.p_list.clone() } else { vec![] },
            holder_orders: if d.holder { d.p_list.clone() } else { vec![] },
            gamma,
            increment_tolerance: d.increment_tolerance,
            holder_tolerance: d.holder_tolerance,
            increments: IncrementOptions {
                min_decades: d.lag_decades,
                ..Default::default()
            },
            martingale: MartingaleOptions {
                z_threshold: d.z_threshold,
                drift_scale: 1.0,
            },
            run_martingale: d.martingale,
        }
    }
}

fn config_err(e: mvsve::Error) -> CliError {
    CliError::Config(e.to_string())
}

fn read_atoms(path: &Path) -> Result<Vec<Vec<f64>>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut atoms = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(str::parse::<f64>)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Config(format!("{}:{}: {e}", path.display(), no + 1)))?;
        atoms.push(row);
    }
    if atoms.is_empty() {
        return Err(CliError::Config(format!("{} holds no atoms", path.display())));
    }
    Ok(atoms)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[model]
name = "pure_noise"
sigma = 1.0

[kernel_b]
type = "constant"
c = 1.0

[kernel_sigma]
type = "constant"
c = 1.0

[simulation]
horizon = 1.0
steps = 10
particles = 4
seed = 1

[initial]
type = "point"
value = [0.0]
"#;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.simulation.mode, SimMode::IntegratedKernel);
        assert_eq!(cfg.simulation.eta, 2.0);
        assert_eq!(cfg.output.format, OutputFormat::Csv);
        assert_eq!(cfg.partition().unwrap().steps(), 10);
    }

    #[test]
    fn invariants_are_enforced() {
        let cases = [
            ("horizon = 1.0", "horizon = -1.0"),
            ("particles = 4", "particles = 1"),
            ("seed = 1", "seed = 1\neta = 0.5"),
            ("steps = 10", "steps = 10\ntimes = [0.0, 1.0]"),
            ("value = [0.0]", "value = [0.0, 1.0]"),
        ];
        for (from, to) in cases {
            let cfg = ExperimentConfig::from_toml(&MINIMAL.replace(from, to)).unwrap();
            assert!(cfg.validate().is_err(), "{to}");
        }
        assert!(ExperimentConfig::from_toml(&MINIMAL.replace("seed = 1", "seed = 1\nbogus = 2")).is_err());
    }

    #[test]
    fn missing_atoms_file_is_rejected() {
        let text = MINIMAL.replace(
            "type = \"point\"\nvalue = [0.0]",
            "type = \"empirical\"\npath = \"/nonexistent/atoms.txt\"",
        );
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
    }

    #[test]
    fn atoms_file_is_read_relative_to_config() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("atoms.txt"), "# x\n0.5\n-1, \n2e-1\n").unwrap();
        let text = MINIMAL.replace(
            "type = \"point\"\nvalue = [0.0]",
            "type = \"empirical\"\npath = \"atoms.txt\"",
        );
        let path = dir.path().join("exp.toml");
        std::fs::write(&path, text).unwrap();
        let cfg = ExperimentConfig::load(&path).unwrap();
        assert_eq!(
            cfg.initial_law().unwrap(),
            InitialLaw::Empirical { atoms: vec![vec![0.5], vec![-1.0], vec![0.2]] }
        );
    }
}
