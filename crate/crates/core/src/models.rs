//! Coefficient pairs `(b, σ)` that depend on the current state and on the
//! law of the state, plus empirical checks of the linear-growth and
//! continuity conditions they are expected to satisfy.
//!
//! The catalog entries are benchmark models chosen for this toolkit; they
//! satisfy the growth bound `|b| + |σ| ≤ C (1 + |x| + W_η(δ_0, μ))` with the
//! constant returned by [`CoefficientModel::growth_constant`]. Matrix norms
//! are Frobenius throughout.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::measures::{norm, EmpiricalMeasure};
use crate::stats::fit_line;

/// Drift `b(t, x, μ) ∈ R^d` and diffusion `σ(t, x, μ) ∈ R^{d×m}`.
///
/// Implementations must be deterministic and free of interior mutation: the
/// solver calls them concurrently from many workers.
pub trait CoefficientModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    /// Wasserstein order of the law dependence.
    fn eta(&self) -> f64;
    /// Declared constant of the linear-growth bound.
    fn growth_constant(&self) -> f64;
    fn label(&self) -> String;
    /// Writes `b(t, x, μ)` into `out` (length `d`).
    fn drift(&self, t: f64, x: &[f64], mu: &EmpiricalMeasure, out: &mut [f64]);
    /// Writes `σ(t, x, μ)` into `out`, row-major `d × m`.
    fn diffusion(&self, t: f64, x: &[f64], mu: &EmpiricalMeasure, out: &mut [f64]);
}

/// Built-in benchmark models, selectable by name from configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum ModelSpec {
    /// `b = 0`, `σ = sigma · I_d`.
    PureNoise {
        sigma: f64,
        #[serde(default = "one")]
        dim: usize,
    },
    /// `b = -θ (x - ∫ y μ(dy))`, `σ = σ0 · I_d`.
    MeanFieldOu {
        theta: f64,
        sigma0: f64,
        #[serde(default = "one")]
        dim: usize,
    },
    /// Scalar model `b = β (x - ∫ y μ(dy))`, `σ = min(a + b|x|, cap)`.
    ScalarInteraction {
        beta: f64,
        vol_base: f64,
        #[serde(default)]
        vol_slope: f64,
        #[serde(default = "unbounded")]
        vol_cap: f64,
    },
}

fn one() -> usize {
    1
}

fn unbounded() -> f64 {
    f64::INFINITY
}

/// Any positive constant bounds the zero model; report 1 rather than 0.
fn positive_or_one(c: f64) -> f64 {
    if c > 0.0 {
        c
    } else {
        1.0
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ModelSpec::PureNoise { sigma, dim } => {
                if dim == 0 || !sigma.is_finite() {
                    return invalid("pure_noise needs dim ≥ 1 and finite sigma");
                }
            }
            ModelSpec::MeanFieldOu { theta, sigma0, dim } => {
                if dim == 0 || !theta.is_finite() || !sigma0.is_finite() {
                    return invalid("mean_field_ou needs dim ≥ 1 and finite theta, sigma0");
                }
            }
            ModelSpec::ScalarInteraction {
                beta,
                vol_base,
                vol_slope,
                vol_cap,
            } => {
                if !beta.is_finite() || !vol_base.is_finite() || !vol_slope.is_finite() {
                    return invalid("scalar_interaction parameters must be finite");
                }
                if vol_base < 0.0 || vol_slope < 0.0 {
                    return invalid("scalar_interaction needs vol_base, vol_slope ≥ 0");
                }
                if !(vol_cap > 0.0) {
                    return invalid("scalar_interaction needs vol_cap > 0");
                }
            }
        }
        Ok(())
    }
}

/// Mean of the measure; the only way the catalog models see the law.
fn mean_of(mu: &EmpiricalMeasure) -> &[f64] {
    mu.mean()
}

impl CoefficientModel for ModelSpec {
    fn state_dim(&self) -> usize {
        match *self {
            ModelSpec::PureNoise { dim, .. } | ModelSpec::MeanFieldOu { dim, .. } => dim,
            ModelSpec::ScalarInteraction { .. } => 1,
        }
    }

    fn noise_dim(&self) -> usize {
        self.state_dim()
    }

    fn eta(&self) -> f64 {
        2.0
    }

    fn growth_constant(&self) -> f64 {
        match *self {
            ModelSpec::PureNoise { sigma, dim } => positive_or_one(sigma.abs() * (dim as f64).sqrt()),
            // |θ(x - m)| + σ0 √d ≤ θ|x| + θ W_1(δ_0, μ) + σ0 √d
            ModelSpec::MeanFieldOu { theta, sigma0, dim } => {
                positive_or_one(theta.abs().max(sigma0.abs() * (dim as f64).sqrt()))
            }
            ModelSpec::ScalarInteraction {
                beta,
                vol_base,
                vol_slope,
                ..
            } => positive_or_one(vol_base.max(beta.abs() + vol_slope)),
        }
    }

    fn label(&self) -> String {
        match *self {
            ModelSpec::PureNoise { sigma, dim } => format!("pure_noise(sigma={sigma}, d={dim})"),
            ModelSpec::MeanFieldOu { theta, sigma0, dim } => {
                format!("mean_field_ou(theta={theta}, sigma0={sigma0}, d={dim})")
            }
            ModelSpec::ScalarInteraction {
                beta,
                vol_base,
                vol_slope,
                vol_cap,
            } => format!(
                "scalar_interaction(beta={beta}, a={vol_base}, b={vol_slope}, cap={vol_cap})"
            ),
        }
    }

    fn drift(&self, _t: f64, x: &[f64], mu: &EmpiricalMeasure, out: &mut [f64]) {
        match *self {
            ModelSpec::PureNoise { .. } => out.fill(0.0),
            ModelSpec::MeanFieldOu { theta, .. } => {
                for ((o, xi), mi) in out.iter_mut().zip(x).zip(mean_of(mu)) {
                    *o = -theta * (xi - mi);
                }
            }
            ModelSpec::ScalarInteraction { beta, .. } => {
                out[0] = beta * (x[0] - mean_of(mu)[0]);
            }
        }
    }

    fn diffusion(&self, _t: f64, x: &[f64], _mu: &EmpiricalMeasure, out: &mut [f64]) {
        match *self {
            ModelSpec::PureNoise { sigma: s, dim } | ModelSpec::MeanFieldOu { sigma0: s, dim, .. } => {
                out.fill(0.0);
                for k in 0..dim {
                    out[k * dim + k] = s;
                }
            }
            ModelSpec::ScalarInteraction {
                vol_base,
                vol_slope,
                vol_cap,
                ..
            } => out[0] = (vol_base + vol_slope * x[0].abs()).min(vol_cap),
        }
    }
}

type CoefficientFn = dyn Fn(f64, &[f64], &EmpiricalMeasure, &mut [f64]) + Send + Sync;

/// A model built from user closures; the library-level extension point.
#[derive(Clone)]
pub struct CustomModel {
    label: String,
    state_dim: usize,
    noise_dim: usize,
    eta: f64,
    growth_constant: f64,
    drift: Arc<CoefficientFn>,
    diffusion: Arc<CoefficientFn>,
}

impl fmt::Debug for CustomModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomModel")
            .field("label", &self.label)
            .field("state_dim", &self.state_dim)
            .field("noise_dim", &self.noise_dim)
            .field("eta", &self.eta)
            .field("growth_constant", &self.growth_constant)
            .finish_non_exhaustive()
    }
}

impl CustomModel {
    pub fn new(
        label: impl Into<String>,
        state_dim: usize,
        noise_dim: usize,
        eta: f64,
        growth_constant: f64,
        drift: impl Fn(f64, &[f64], &EmpiricalMeasure, &mut [f64]) + Send + Sync + 'static,
        diffusion: impl Fn(f64, &[f64], &EmpiricalMeasure, &mut [f64]) + Send + Sync + 'static,
    ) -> Result<Self> {
        if state_dim == 0 || noise_dim == 0 {
            return invalid("model dimensions must be at least 1");
        }
        if !(eta >= 1.0) {
            return invalid(format!("Wasserstein order must be ≥ 1, got {eta}"));
        }
        if !(growth_constant > 0.0) {
            return invalid("declared growth constant must be positive");
        }
        Ok(Self {
            label: label.into(),
            state_dim,
            noise_dim,
            eta,
            growth_constant,
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
        })
    }
}

impl CoefficientModel for CustomModel {
    fn state_dim(&self) -> usize {
        self.state_dim
    }
    fn noise_dim(&self) -> usize {
        self.noise_dim
    }
    fn eta(&self) -> f64 {
        self.eta
    }
    fn growth_constant(&self) -> f64 {
        self.growth_constant
    }
    fn label(&self) -> String {
        self.label.clone()
    }
    fn drift(&self, t: f64, x: &[f64], mu: &EmpiricalMeasure, out: &mut [f64]) {
        (self.drift)(t, x, mu, out)
    }
    fn diffusion(&self, t: f64, x: &[f64], mu: &EmpiricalMeasure, out: &mut [f64]) {
        (self.diffusion)(t, x, mu, out)
    }
}

fn check_inputs(model: &dyn CoefficientModel, x: &[f64], mu: &EmpiricalMeasure) -> Result<()> {
    let d = model.state_dim();
    if x.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: x.len(),
        });
    }
    if mu.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: mu.dim(),
        });
    }
    Ok(())
}

/// `b(t, x, μ)`, rejecting non-finite output.
pub fn eval_drift(
    model: &dyn CoefficientModel,
    t: f64,
    x: &[f64],
    mu: &EmpiricalMeasure,
) -> Result<Vec<f64>> {
    check_inputs(model, x, mu)?;
    let mut out = vec![0.0; model.state_dim()];
    model.drift(t, x, mu, &mut out);
    finite_or_error(out, t, x)
}

/// `σ(t, x, μ)` as a row-major `d × m` matrix, rejecting non-finite output.
pub fn eval_diffusion(
    model: &dyn CoefficientModel,
    t: f64,
    x: &[f64],
    mu: &EmpiricalMeasure,
) -> Result<Vec<f64>> {
    check_inputs(model, x, mu)?;
    let mut out = vec![0.0; model.state_dim() * model.noise_dim()];
    model.diffusion(t, x, mu, &mut out);
    finite_or_error(out, t, x)
}

fn finite_or_error(out: Vec<f64>, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(Error::NonFiniteOutput { t, x: x.to_vec() })
    }
}

/// Outcome of [`growth_check`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub declared: f64,
    /// Largest `(|b| + |σ|) / (1 + |x| + W_η(δ_0, μ))` seen.
    pub max_ratio: f64,
    pub worst_t: f64,
    pub worst_x: Vec<f64>,
    pub worst_moment: f64,
    pub samples: usize,
    pub radius: f64,
    pub passes: bool,
}

/// Options shared by the sampling checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingOptions {
    /// Times are drawn from `[0, horizon]`.
    pub horizon: f64,
    /// Largest atom count of the sampled measures.
    pub max_atoms: usize,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            max_atoms: 8,
        }
    }
}

fn uniform_in_ball(rng: &mut ChaCha8Rng, dim: usize, radius: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let n = norm(&v).max(1e-300);
    let r = radius * rng.random::<f64>().powf(1.0 / dim as f64);
    for x in &mut v {
        *x *= r / n;
    }
    v
}

fn random_measure(rng: &mut ChaCha8Rng, dim: usize, radius: f64, max_atoms: usize) -> EmpiricalMeasure {
    let k = rng.random_range(1..=max_atoms.max(1));
    let atoms: Vec<f64> = (0..k).flat_map(|_| uniform_in_ball(rng, dim, radius)).collect();
    EmpiricalMeasure::new(dim, atoms).expect("sampled atoms are finite")
}

fn coefficient_size(model: &dyn CoefficientModel, t: f64, x: &[f64], mu: &EmpiricalMeasure) -> f64 {
    let mut b = vec![0.0; model.state_dim()];
    let mut s = vec![0.0; model.state_dim() * model.noise_dim()];
    model.drift(t, x, mu, &mut b);
    model.diffusion(t, x, mu, &mut s);
    norm(&b) + norm(&s)
}

/// Samples `(t, x, μ)` with `|x| ≤ radius` and atoms of `μ` in the same ball,
/// and compares the observed growth ratio with the declared constant.
///
/// Besides the random samples, the extreme points `x = ±radius·e_k` with
/// `μ = δ_0` are always probed, since polynomial growth shows up there first.
/// Failures are reported, never raised.
pub fn growth_check(
    model: &dyn CoefficientModel,
    sample_count: usize,
    radius: f64,
    seed: u64,
    opts: &SamplingOptions,
) -> Result<GrowthReport> {
    if sample_count == 0 {
        return invalid("growth_check needs at least one sample");
    }
    if !(radius > 0.0) || !(opts.horizon >= 0.0) {
        return invalid("growth_check needs radius > 0 and horizon ≥ 0");
    }
    let d = model.state_dim();
    let eta = model.eta();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GrowthReport {
        declared: model.growth_constant(),
        max_ratio: 0.0,
        worst_t: 0.0,
        worst_x: vec![0.0; d],
        worst_moment: 0.0,
        samples: 0,
        radius,
        passes: true,
    };
    let consider = |t: f64, x: Vec<f64>, mu: &EmpiricalMeasure, report: &mut GrowthReport| {
        let moment = mu.moment(eta);
        let ratio = coefficient_size(model, t, &x, mu) / (1.0 + norm(&x) + moment);
        report.samples += 1;
        // NaN ratios count as failures
        if !(ratio <= report.max_ratio) {
            report.max_ratio = if ratio.is_nan() { f64::INFINITY } else { ratio };
            report.worst_t = t;
            report.worst_x = x;
            report.worst_moment = moment;
        }
    };
    let origin = EmpiricalMeasure::dirac(&vec![0.0; d])?;
    for k in 0..d {
        for sign in [-1.0, 1.0] {
            for t in [0.0, opts.horizon] {
                let mut x = vec![0.0; d];
                x[k] = sign * radius;
                consider(t, x.clone(), &origin, &mut report);
                consider(t, vec![0.0; d], &EmpiricalMeasure::dirac(&x)?, &mut report);
            }
        }
    }
    for _ in 0..sample_count {
        let t = opts.horizon * rng.random::<f64>();
        let x = uniform_in_ball(&mut rng, d, radius);
        let mu = random_measure(&mut rng, d, radius, opts.max_atoms);
        consider(t, x, &mu, &mut report);
    }
    report.passes = report.max_ratio <= report.declared * (1.0 + 1e-12);
    Ok(report)
}

/// Outcome of [`modulus_check`]: an empirical modulus of continuity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulusReport {
    pub radius: f64,
    pub deltas: Vec<f64>,
    /// `ω(δ)`: largest `|b(x,μ) - b(y,ν)| + |σ(x,μ) - σ(y,ν)|` seen with
    /// `|x - y| ≤ δ` and `W_η(μ, ν) ≤ δ`.
    pub omega: Vec<f64>,
    /// Log-log slope of `ω` against `δ` over the positive entries.
    pub slope: Option<f64>,
    pub monotone: bool,
    /// `ω` non-decreasing in `δ` and either identically zero or vanishing
    /// with a positive log-log slope.
    pub passes: bool,
}

/// Estimates `ω(δ)` on the ball of radius `compact_radius` by sampling
/// nearby pairs `(x, μ)`, `(y, ν)`.
///
/// `ν` is produced by moving every atom of `μ` by at most `δ`, which keeps
/// `W_η(μ, ν) ≤ δ` but probes only that slice of measure space; the result is
/// a heuristic. Pairs centred at the origin are always included.
pub fn modulus_check(
    model: &dyn CoefficientModel,
    compact_radius: f64,
    deltas: &[f64],
    samples_per_delta: usize,
    seed: u64,
    opts: &SamplingOptions,
) -> Result<ModulusReport> {
    if !(compact_radius > 0.0) {
        return invalid("modulus_check needs a positive radius");
    }
    if deltas.is_empty() || deltas.iter().any(|d| !(*d > 0.0)) {
        return invalid("modulus_check needs positive deltas");
    }
    let mut deltas = deltas.to_vec();
    deltas.sort_by(f64::total_cmp);
    let d = model.state_dim();
    let m = model.noise_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b0 = vec![0.0; d];
    let mut b1 = vec![0.0; d];
    let mut s0 = vec![0.0; d * m];
    let mut s1 = vec![0.0; d * m];
    let mut gap = |t: f64, x: &[f64], mu: &EmpiricalMeasure, y: &[f64], nu: &EmpiricalMeasure| {
        model.drift(t, x, mu, &mut b0);
        model.drift(t, y, nu, &mut b1);
        model.diffusion(t, x, mu, &mut s0);
        model.diffusion(t, y, nu, &mut s1);
        let db: f64 = b0.iter().zip(&b1).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let ds: f64 = s0.iter().zip(&s1).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        db + ds
    };
    let mut omega = Vec::with_capacity(deltas.len());
    for &delta in &deltas {
        let mut worst: f64 = 0.0;
        let origin = EmpiricalMeasure::dirac(&vec![0.0; d])?;
        for k in 0..d {
            let mut y = vec![0.0; d];
            y[k] = delta.min(compact_radius);
            worst = worst.max(gap(0.0, &vec![0.0; d], &origin, &y, &origin));
        }
        for _ in 0..samples_per_delta {
            let t = opts.horizon * rng.random::<f64>();
            let x = uniform_in_ball(&mut rng, d, compact_radius);
            let y: Vec<f64> = x
                .iter()
                .zip(uniform_in_ball(&mut rng, d, delta))
                .map(|(a, b)| a + b)
                .collect();
            let mu = random_measure(&mut rng, d, compact_radius, opts.max_atoms);
            let moved: Vec<f64> = mu
                .atoms()
                .chunks(d)
                .flat_map(|a| {
                    let step = uniform_in_ball(&mut rng, d, delta);
                    a.iter().zip(step).map(|(u, v)| u + v).collect::<Vec<_>>()
                })
                .collect();
            let nu = EmpiricalMeasure::new(d, moved)?;
            worst = worst.max(gap(t, &x, &mu, &y, &nu));
        }
        omega.push(worst);
    }
    let monotone = omega
        .windows(2)
        .all(|w| w[0] <= w[1] * (1.0 + 1e-12) + 1e-15);
    let positive: Vec<(f64, f64)> = deltas
        .iter()
        .zip(&omega)
        .filter(|(_, w)| **w > 0.0)
        .map(|(d, w)| (d.ln(), w.ln()))
        .collect();
    let slope = if positive.len() >= 2 {
        let (xs, ys): (Vec<f64>, Vec<f64>) = positive.into_iter().unzip();
        fit_line(&xs, &ys).map(|f| f.slope)
    } else {
        None
    };
    let all_zero = omega.iter().all(|w| *w == 0.0);
    let passes = monotone && (all_zero || slope.is_some_and(|s| s > 0.0));
    Ok(ModulusReport {
        radius: compact_radius,
        deltas,
        omega,
        slope,
        monotone,
        passes,
    })
}
