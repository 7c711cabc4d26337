//! The interacting particle system.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kernels::{KernelSpec, QuadratureConfig};
use crate::measures::EmpiricalMeasure;
use crate::models::CoefficientModel;
use crate::rng::{normals, stream, StreamKind};

use super::weights::{precompute_weights, KernelWeights};
use super::{Partition, SimMode};

/// Law of `X_0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InitialLaw {
    /// `δ_value`.
    Point { value: Vec<f64> },
    /// `N(mean, cov)`; `cov` may be singular.
    Gaussian { mean: Vec<f64>, cov: Vec<Vec<f64>> },
    /// Uniform resampling from a fixed list of points.
    Empirical { atoms: Vec<Vec<f64>> },
}

impl InitialLaw {
    pub fn dim(&self) -> usize {
        match self {
            InitialLaw::Point { value } => value.len(),
            InitialLaw::Gaussian { mean, .. } => mean.len(),
            InitialLaw::Empirical { atoms } => atoms.first().map_or(0, Vec::len),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler().map(|_| ())
    }

    fn sampler(&self) -> Result<InitialSampler<'_>> {
        let d = self.dim();
        if d == 0 {
            return invalid("initial law has dimension 0");
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        let chol = match self {
            InitialLaw::Point { value } => {
                if !finite(value) {
                    return invalid("initial point must be finite");
                }
                Vec::new()
            }
            InitialLaw::Gaussian { mean, cov } => {
                if !finite(mean) {
                    return invalid("initial mean must be finite");
                }
                if cov.len() != d || cov.iter().any(|r| r.len() != d || !finite(r)) {
                    return invalid(format!("initial covariance must be a finite {d}×{d} matrix"));
                }
                cholesky(cov)?
            }
            InitialLaw::Empirical { atoms } => {
                if atoms.iter().any(|a| a.len() != d || !finite(a)) {
                    return invalid("initial atoms must be finite and share one dimension");
                }
                Vec::new()
            }
        };
        Ok(InitialSampler { law: self, chol })
    }
}

/// Lower-triangular `L` with `L Lᵀ = cov`, tolerating positive semidefinite input.
fn cholesky(cov: &[Vec<f64>]) -> Result<Vec<f64>> {
    let d = cov.len();
    let scale = (0..d).map(|i| cov[i][i].abs()).fold(0.0, f64::max);
    let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            if (cov[i][j] - cov[j][i]).abs() > tol.max(1e-12 * cov[i][j].abs()) {
                return invalid("initial covariance must be symmetric");
            }
            let mut s = cov[i][j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if s < -tol {
                    return invalid("initial covariance must be positive semidefinite");
                }
                l[i * d + i] = s.max(0.0).sqrt();
            } else if l[j * d + j] > 0.0 {
                l[i * d + j] = s / l[j * d + j];
            } else if s.abs() > tol {
                return invalid("initial covariance must be positive semidefinite");
            }
        }
    }
    Ok(l)
}

struct InitialSampler<'a> {
    law: &'a InitialLaw,
    chol: Vec<f64>,
}

impl InitialSampler<'_> {
    fn draw(&self, seed: u64, label: u64, out: &mut [f64]) {
        match self.law {
            InitialLaw::Point { value } => out.copy_from_slice(value),
            InitialLaw::Gaussian { mean, .. } => {
                let d = mean.len();
                let mut z = vec![0.0; d];
                normals(seed, label, StreamKind::Initial, 0, &mut z);
                for i in 0..d {
                    out[i] = mean[i] + (0..=i).map(|k| self.chol[i * d + k] * z[k]).sum::<f64>();
                }
            }
            InitialLaw::Empirical { atoms } => {
                let mut rng = stream(seed, label, StreamKind::Initial, 0);
                out.copy_from_slice(&atoms[rng.random_range(0..atoms.len())]);
            }
        }
    }
}

/// Run parameters of [`simulate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationOptions {
    pub particles: usize,
    pub seed: u64,
    #[serde(default)]
    pub mode: SimMode,
    /// Each Brownian increment is the sum of this many finer increments,
    /// each drawn from its own stream block. Partitions of a dyadic ladder
    /// then see the same Brownian path when the finest level uses 1 and
    /// every coarser level the matching refinement factor.
    #[serde(default = "one")]
    pub noise_substeps: usize,
    /// Quadrature nodes of the variance-matched factor.
    #[serde(default = "sixteen")]
    pub factor_nodes: usize,
    /// Stream label per particle; defaults to the particle index.
    #[serde(default)]
    pub labels: Option<Vec<u64>>,
}

fn one() -> usize {
    1
}

fn sixteen() -> usize {
    16
}

impl SimulationOptions {
    pub fn new(particles: usize, seed: u64, mode: SimMode) -> Self {
        Self {
            particles,
            seed,
            mode,
            noise_substeps: 1,
            factor_nodes: 16,
            labels: None,
        }
    }
}

/// `N` particle paths on a grid with their drift and martingale accumulators.
///
/// Arrays are particle-major: `x[(n·(M+1) + j)·d + k]` is component `k` of
/// particle `n` at `t_j`; `dw[(n·M + i)·m + l]` is the Brownian increment
/// over `[t_i, t_{i+1}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub partition: Partition,
    pub particles: usize,
    pub state_dim: usize,
    pub noise_dim: usize,
    pub seed: u64,
    pub mode: SimMode,
    pub noise_substeps: usize,
    pub factor_nodes: usize,
    pub labels: Vec<u64>,
    pub model: String,
    pub kernel_b: String,
    pub kernel_sigma: String,
    pub x: Vec<f64>,
    /// `A(t_j) = X_0 + Σ_{i<j} Δ_i b_i`.
    pub a: Option<Vec<f64>>,
    /// `Mart(t_j) = Σ_{i<j} σ_i ΔB_i`.
    pub mart: Option<Vec<f64>>,
    pub dw: Option<Vec<f64>>,
    /// Frozen `σ_i` per particle and interval, kept by the variance-matched
    /// mode so its noise can be regenerated.
    pub sigma_frozen: Option<Vec<f64>>,
}

impl ParticleEnsemble {
    /// Wraps externally produced paths, e.g. from an exact sampler.
    pub fn from_paths(
        partition: Partition,
        particles: usize,
        state_dim: usize,
        x: Vec<f64>,
    ) -> Result<Self> {
        let expected = particles * (partition.steps() + 1) * state_dim;
        if particles == 0 || state_dim == 0 || x.len() != expected {
            return Err(Error::GridMismatch(format!(
                "expected {expected} values for {particles} paths of dimension {state_dim}, got {}",
                x.len()
            )));
        }
        Ok(Self {
            partition,
            particles,
            state_dim,
            noise_dim: state_dim,
            seed: 0,
            mode: SimMode::IntegratedKernel,
            noise_substeps: 1,
            factor_nodes: 0,
            labels: (0..particles as u64).collect(),
            model: "external".into(),
            kernel_b: "external".into(),
            kernel_sigma: "external".into(),
            x,
            a: None,
            mart: None,
            dw: None,
            sigma_frozen: None,
        })
    }

    pub fn steps(&self) -> usize {
        self.partition.steps()
    }

    pub fn times(&self) -> &[f64] {
        self.partition.times()
    }

    fn offset(&self, n: usize, j: usize) -> usize {
        (n * (self.steps() + 1) + j) * self.state_dim
    }

    /// `X_n(t_j)`.
    pub fn value(&self, n: usize, j: usize) -> &[f64] {
        let o = self.offset(n, j);
        &self.x[o..o + self.state_dim]
    }

    /// The whole path of particle `n`, `(M+1)·d` values.
    pub fn path(&self, n: usize) -> &[f64] {
        let o = self.offset(n, 0);
        &self.x[o..o + (self.steps() + 1) * self.state_dim]
    }

    /// Empirical law of `X(t_j)`.
    pub fn marginal(&self, j: usize) -> EmpiricalMeasure {
        let mut atoms = Vec::with_capacity(self.particles * self.state_dim);
        for n in 0..self.particles {
            atoms.extend_from_slice(self.value(n, j));
        }
        EmpiricalMeasure::new(self.state_dim, atoms).expect("ensemble values are finite")
    }

    /// `(A, Mart)` arrays, laid out like `x`.
    pub fn accumulators(&self) -> Result<(&[f64], &[f64])> {
        match (&self.a, &self.mart) {
            (Some(a), Some(m)) => Ok((a, m)),
            _ => Err(Error::MissingAccumulators),
        }
    }

    /// `Z_n(t_j) = A_n(t_j) + Mart_n(t_j)`.
    pub fn z(&self, n: usize, j: usize) -> Result<Vec<f64>> {
        let (a, m) = self.accumulators()?;
        let o = self.offset(n, j);
        Ok((o..o + self.state_dim).map(|k| a[k] + m[k]).collect())
    }
}

/// Per-worker buffers reused across particles.
struct Scratch {
    x: Vec<f64>,
    b: Vec<f64>,
    s: Vec<f64>,
    z: Vec<f64>,
    dw: Vec<f64>,
    dm: Vec<f64>,
    xi: Vec<f64>,
    u: Vec<f64>,
}

/// Simulates the particle system with precomputed weights.
///
/// The result depends only on the arguments, never on the number of worker
/// threads: every random draw is addressed by `(seed, label, interval)` and
/// the empirical measure is rebuilt serially between steps.
pub fn simulate(
    model: &dyn CoefficientModel,
    weights: &KernelWeights,
    initial: &InitialLaw,
    opts: &SimulationOptions,
) -> Result<ParticleEnsemble> {
    let n_part = opts.particles;
    if n_part < 2 {
        return invalid("the particle system needs at least two particles");
    }
    let d = model.state_dim();
    let mn = model.noise_dim();
    if initial.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: initial.dim(),
        });
    }
    let sampler = initial.sampler()?;
    if opts.noise_substeps == 0 {
        return invalid("noise_substeps must be at least 1");
    }
    let vm = opts.mode == SimMode::VarianceMatched;
    if vm && opts.noise_substeps != 1 {
        return invalid("variance-matched mode draws one factor per interval; use noise_substeps = 1");
    }
    let labels: Vec<u64> = match &opts.labels {
        Some(l) if l.len() != n_part => {
            return invalid(format!("{} stream labels for {n_part} particles", l.len()))
        }
        Some(l) => l.clone(),
        None => (0..n_part as u64).collect(),
    };
    let factor = if vm {
        Some(weights.variance_factor(opts.factor_nodes)?)
    } else {
        None
    };
    let nodes = factor.as_ref().map_or(0, |f| f.nodes());
    let partition = weights.partition();
    let steps = partition.steps();
    let stride = (steps + 1) * d;
    let dw_stride = steps * mn;
    let sig_stride = if vm { steps * d * mn } else { 1 };
    let substeps = opts.noise_substeps;
    let seed = opts.seed;

    let mut x = vec![0.0; n_part * stride];
    let mut a = vec![0.0; n_part * stride];
    let mut mart = vec![0.0; n_part * stride];
    let mut dw = vec![0.0; n_part * dw_stride];
    let mut sig = vec![0.0; n_part * sig_stride];

    let mut x0 = vec![0.0; d];
    for n in 0..n_part {
        sampler.draw(seed, labels[n], &mut x0);
        for j in 0..=steps {
            x[n * stride + j * d..n * stride + (j + 1) * d].copy_from_slice(&x0);
        }
        a[n * stride..n * stride + d].copy_from_slice(&x0);
    }

    let mut atoms = vec![0.0; n_part * d];
    for i in 0..steps {
        for n in 0..n_part {
            atoms[n * d..(n + 1) * d].copy_from_slice(&x[n * stride + i * d..n * stride + (i + 1) * d]);
        }
        let mu = EmpiricalMeasure::new(d, atoms.clone())?;
        let t = partition.time(i);
        let dt = partition.dt(i);
        let width = steps - i;
        let drift_row = weights.drift_row(i);
        let noise_row = match opts.mode {
            SimMode::LeftPoint => weights.left_point_row(i),
            _ => weights.integrated_row(i),
        };
        let factor_cols = factor.as_ref().map(|f| (f.brownian(i), f.columns(i)));
        let fine_scale = (dt / substeps as f64).sqrt();

        let ok: Vec<bool> = x
            .par_chunks_mut(stride)
            .zip(a.par_chunks_mut(stride))
            .zip(mart.par_chunks_mut(stride))
            .zip(dw.par_chunks_mut(dw_stride))
            .zip(sig.par_chunks_mut(sig_stride))
            .zip(labels.par_iter())
            .map_init(
                || Scratch {
                    x: vec![0.0; d],
                    b: vec![0.0; d],
                    s: vec![0.0; d * mn],
                    z: vec![0.0; mn],
                    dw: vec![0.0; mn],
                    dm: vec![0.0; d],
                    xi: vec![0.0; nodes * mn],
                    u: vec![0.0; d],
                },
                |sc, (((((xp, ap), mp), dwp), sp), &label)| {
                    sc.x.copy_from_slice(&xp[i * d..(i + 1) * d]);
                    model.drift(t, &sc.x, &mu, &mut sc.b);
                    model.diffusion(t, &sc.x, &mu, &mut sc.s);

                    match factor_cols {
                        None => {
                            sc.dw.fill(0.0);
                            for k in 0..substeps {
                                let fine = (i * substeps + k) as u64;
                                normals(seed, label, StreamKind::Brownian, fine, &mut sc.z);
                                for (w, z) in sc.dw.iter_mut().zip(&sc.z) {
                                    *w += fine_scale * z;
                                }
                            }
                        }
                        Some((beta, _)) => {
                            normals(seed, label, StreamKind::Factor, i as u64, &mut sc.xi);
                            for l in 0..mn {
                                sc.dw[l] = (0..nodes).map(|k| beta[k] * sc.xi[k * mn + l]).sum();
                            }
                        }
                    }
                    for c in 0..d {
                        sc.dm[c] = (0..mn).map(|l| sc.s[c * mn + l] * sc.dw[l]).sum();
                    }
                    dwp[i * mn..(i + 1) * mn].copy_from_slice(&sc.dw);
                    for c in 0..d {
                        ap[(i + 1) * d + c] = ap[i * d + c] + dt * sc.b[c];
                        mp[(i + 1) * d + c] = mp[i * d + c] + sc.dm[c];
                    }

                    let future = &mut xp[(i + 1) * d..];
                    for c in 0..d {
                        let bc = sc.b[c];
                        for (k, w) in drift_row.iter().enumerate() {
                            future[k * d + c] += w * bc;
                        }
                    }
                    match factor_cols {
                        None => {
                            for c in 0..d {
                                let mc = sc.dm[c];
                                for (k, w) in noise_row.iter().enumerate() {
                                    future[k * d + c] += w * mc;
                                }
                            }
                        }
                        Some((_, cols)) => {
                            sp[i * d * mn..(i + 1) * d * mn].copy_from_slice(&sc.s);
                            for q in 0..nodes {
                                for c in 0..d {
                                    sc.u[c] = (0..mn)
                                        .map(|l| sc.s[c * mn + l] * sc.xi[q * mn + l])
                                        .sum();
                                }
                                let col = &cols[q * width..(q + 1) * width];
                                if d == 1 {
                                    let u = sc.u[0];
                                    for (f, w) in future.iter_mut().zip(col) {
                                        *f += w * u;
                                    }
                                } else {
                                    for c in 0..d {
                                        let u = sc.u[c];
                                        for (k, w) in col.iter().enumerate() {
                                            future[k * d + c] += w * u;
                                        }
                                    }
                                }
                            }
                        }
                    }
                    xp[(i + 1) * d..(i + 2) * d].iter().all(|v| v.is_finite())
                        && ap[(i + 1) * d..(i + 2) * d].iter().all(|v| v.is_finite())
                        && mp[(i + 1) * d..(i + 2) * d].iter().all(|v| v.is_finite())
                },
            )
            .collect();
        if let Some(particle) = ok.iter().position(|ok| !ok) {
            return Err(Error::NonFiniteState {
                step: i + 1,
                particle,
            });
        }
    }

    Ok(ParticleEnsemble {
        partition: partition.clone(),
        particles: n_part,
        state_dim: d,
        noise_dim: mn,
        seed,
        mode: opts.mode,
        noise_substeps: substeps,
        factor_nodes: nodes,
        labels,
        model: model.label(),
        kernel_b: weights.kernel_b().label(),
        kernel_sigma: weights.kernel_sigma().label(),
        x,
        a: Some(a),
        mart: Some(mart),
        dw: Some(dw),
        sigma_frozen: vm.then_some(sig),
    })
}

/// Precomputes weights for `(K_b, K_σ)` on `partition`, then simulates.
pub fn simulate_kernels(
    model: &dyn CoefficientModel,
    kernel_b: &KernelSpec,
    kernel_sigma: &KernelSpec,
    partition: &Partition,
    quadrature: &QuadratureConfig,
    initial: &InitialLaw,
    opts: &SimulationOptions,
) -> Result<ParticleEnsemble> {
    let weights = precompute_weights(kernel_b, kernel_sigma, partition, quadrature)?;
    simulate(model, &weights, initial, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{CustomModel, ModelSpec};

    fn brownian_setup(steps: usize) -> KernelWeights {
        let k = KernelSpec::Constant { c: 1.0 };
        precompute_weights(&k, &k, &Partition::uniform(1.0, steps).unwrap(), &Default::default())
            .unwrap()
    }

    #[test]
    fn zero_coefficients_keep_initial_values() {
        let zero = ModelSpec::PureNoise { sigma: 0.0, dim: 2 };
        let w = brownian_setup(8);
        let init = InitialLaw::Gaussian {
            mean: vec![1.0, -1.0],
            cov: vec![vec![1.0, 0.5], vec![0.5, 2.0]],
        };
        let e = simulate(&zero, &w, &init, &SimulationOptions::new(5, 3, SimMode::IntegratedKernel))
            .unwrap();
        for n in 0..5 {
            for j in 0..=8 {
                assert_eq!(e.value(n, j), e.value(n, 0));
            }
        }
    }

    #[test]
    fn constant_kernel_brownian_paths_are_cumulative_increments() {
        let noise = ModelSpec::PureNoise { sigma: 1.0, dim: 1 };
        let w = brownian_setup(10);
        let e = simulate(
            &noise,
            &w,
            &InitialLaw::Point { value: vec![0.5] },
            &SimulationOptions::new(4, 9, SimMode::IntegratedKernel),
        )
        .unwrap();
        let dw = e.dw.as_ref().unwrap();
        for n in 0..4 {
            let mut acc = 0.5;
            for j in 1..=10 {
                acc += dw[n * 10 + j - 1];
                assert!((e.value(n, j)[0] - acc).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn substeps_sum_fine_increments() {
        let noise = ModelSpec::PureNoise { sigma: 1.0, dim: 1 };
        let init = InitialLaw::Point { value: vec![0.0] };
        let fine = simulate(&noise, &brownian_setup(8), &init, &SimulationOptions::new(3, 1, SimMode::IntegratedKernel)).unwrap();
        let mut opts = SimulationOptions::new(3, 1, SimMode::IntegratedKernel);
        opts.noise_substeps = 4;
        let coarse = simulate(&noise, &brownian_setup(2), &init, &opts).unwrap();
        for n in 0..3 {
            for j in 0..=2 {
                assert!((coarse.value(n, j)[0] - fine.value(n, 4 * j)[0]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn argument_validation() {
        let noise = ModelSpec::PureNoise { sigma: 1.0, dim: 1 };
        let w = brownian_setup(4);
        let init = InitialLaw::Point { value: vec![0.0] };
        assert!(simulate(&noise, &w, &init, &SimulationOptions::new(1, 0, SimMode::IntegratedKernel)).is_err());
        let bad_dim = InitialLaw::Point { value: vec![0.0, 1.0] };
        assert!(matches!(
            simulate(&noise, &w, &bad_dim, &SimulationOptions::new(4, 0, SimMode::IntegratedKernel)),
            Err(Error::DimensionMismatch { .. })
        ));
        let mut opts = SimulationOptions::new(4, 0, SimMode::VarianceMatched);
        opts.noise_substeps = 2;
        assert!(simulate(&noise, &w, &init, &opts).is_err());
        let not_psd = InitialLaw::Gaussian {
            mean: vec![0.0, 0.0],
            cov: vec![vec![1.0, 2.0], vec![2.0, 1.0]],
        };
        assert!(not_psd.validate().is_err());
    }

    #[test]
    fn blow_up_is_reported_with_step() {
        let explosive = CustomModel::new(
            "explosive",
            1,
            1,
            2.0,
            1.0,
            |_, x, _, out| out[0] = 1e300 * (1.0 + x[0].abs()),
            |_, _, _, out| out[0] = 0.0,
        )
        .unwrap();
        let err = simulate(
            &explosive,
            &brownian_setup(10),
            &InitialLaw::Point { value: vec![1.0] },
            &SimulationOptions::new(3, 0, SimMode::IntegratedKernel),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFiniteState { step: 2, particle: 0 }), "{err:?}");
    }

    #[test]
    fn gaussian_initial_law_has_requested_moments() {
        let init = InitialLaw::Gaussian {
            mean: vec![1.0, 0.0],
            cov: vec![vec![4.0, 1.0], vec![1.0, 1.0]],
        };
        let s = init.sampler().unwrap();
        let n = 40_000;
        let (mut m0, mut v0, mut c01) = (0.0, 0.0, 0.0);
        let mut out = [0.0; 2];
        for label in 0..n {
            s.draw(5, label, &mut out);
            m0 += out[0];
            v0 += (out[0] - 1.0).powi(2);
            c01 += (out[0] - 1.0) * out[1];
        }
        let nf = n as f64;
        assert!((m0 / nf - 1.0).abs() < 0.05);
        assert!((v0 / nf - 4.0).abs() < 0.15);
        assert!((c01 / nf - 1.0).abs() < 0.08);
    }
}
