//! Behaviour under mesh and particle refinement.
//!
//! Mesh ladders share one Brownian path: the finest level draws one
//! increment per step and every coarser level sums the matching fine
//! increments, so consecutive levels are coupled pathwise.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kernels::{integrate, KernelSpec, QuadratureConfig};
use crate::measures::{wasserstein_unequal, EmpiricalMeasure, WassersteinOptions};
use crate::models::CoefficientModel;
use crate::solver::{
    precompute_weights, simulate, InitialLaw, ParticleEnsemble, Partition, SimMode,
    SimulationOptions,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementOptions {
    pub horizon: f64,
    /// Steps per mesh level, coarse to fine, each doubling some number of times.
    pub mesh_ladder: Vec<usize>,
    pub mesh_particles: usize,
    /// Particle counts, small to large.
    pub particle_ladder: Vec<usize>,
    pub particle_steps: usize,
    pub seed: u64,
    pub mode: SimMode,
    pub eta: f64,
    /// Distances at or below this count as zero when judging monotonicity.
    pub floor: f64,
    pub quadrature: QuadratureConfig,
    pub wasserstein: WassersteinOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelDistance {
    /// Steps (mesh ladder) or particles (particle ladder) of the two levels.
    pub from: usize,
    pub to: usize,
    pub distance: f64,
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementReport {
    pub eta: f64,
    pub floor: f64,
    pub mesh: Vec<LevelDistance>,
    pub particles: Vec<LevelDistance>,
    pub mesh_decreasing: bool,
    pub particles_decreasing: bool,
    pub passes: bool,
}

/// The report together with the simulated ladders, for further diagnostics.
#[derive(Debug, Clone)]
pub struct RefinementStudy {
    pub report: RefinementReport,
    pub mesh_ensembles: Vec<ParticleEnsemble>,
    pub particle_ensembles: Vec<ParticleEnsemble>,
}

/// Checks that each mesh level doubles its predecessor one or more times.
pub fn validate_mesh_ladder(ladder: &[usize]) -> Result<()> {
    if ladder.len() < 3 {
        return Err(Error::LadderTooShort(format!(
            "mesh ladder needs at least 3 levels, got {}",
            ladder.len()
        )));
    }
    if ladder[0] == 0 {
        return invalid("mesh levels need at least one step");
    }
    for w in ladder.windows(2) {
        if !(w[1] > w[0] && w[1] % w[0] == 0 && (w[1] / w[0]).is_power_of_two()) {
            return Err(Error::GridMismatch(format!(
                "mesh level {} does not refine {} dyadically",
                w[1], w[0]
            )));
        }
    }
    Ok(())
}

/// Simulates every mesh level with the common-seed coupling.
pub fn run_mesh_ladder(
    model: &dyn CoefficientModel,
    kernel_b: &KernelSpec,
    kernel_sigma: &KernelSpec,
    initial: &InitialLaw,
    opts: &RefinementOptions,
) -> Result<Vec<ParticleEnsemble>> {
    validate_mesh_ladder(&opts.mesh_ladder)?;
    if opts.mode == SimMode::VarianceMatched {
        return Err(Error::ModeMismatch(
            "mesh ladders need Brownian increments that nest; variance-matched noise does not".into(),
        ));
    }
    let finest = *opts.mesh_ladder.last().expect("validated");
    opts.mesh_ladder
        .iter()
        .map(|&steps| {
            let partition = Partition::uniform(opts.horizon, steps)?;
            let weights = precompute_weights(kernel_b, kernel_sigma, &partition, &opts.quadrature)?;
            let mut sim = SimulationOptions::new(opts.mesh_particles, opts.seed, opts.mode);
            sim.noise_substeps = finest / steps;
            simulate(model, &weights, initial, &sim)
        })
        .collect()
}

/// Simulates every particle count on the same grid and seed.
pub fn run_particle_ladder(
    model: &dyn CoefficientModel,
    kernel_b: &KernelSpec,
    kernel_sigma: &KernelSpec,
    initial: &InitialLaw,
    opts: &RefinementOptions,
) -> Result<Vec<ParticleEnsemble>> {
    if opts.particle_ladder.len() < 2 {
        return Err(Error::LadderTooShort(format!(
            "particle ladder needs at least 2 levels, got {}",
            opts.particle_ladder.len()
        )));
    }
    if opts.particle_ladder.windows(2).any(|w| w[1] <= w[0]) {
        return invalid("particle ladder must be strictly increasing");
    }
    let partition = Partition::uniform(opts.horizon, opts.particle_steps)?;
    let weights = precompute_weights(kernel_b, kernel_sigma, &partition, &opts.quadrature)?;
    opts.particle_ladder
        .iter()
        .map(|&n| simulate(model, &weights, initial, &SimulationOptions::new(n, opts.seed, opts.mode)))
        .collect()
}

/// `W_η` between the terminal laws of consecutive ensembles.
pub fn terminal_distances(
    ladder: &[ParticleEnsemble],
    eta: f64,
    wopts: &WassersteinOptions,
    by_particles: bool,
) -> Result<Vec<LevelDistance>> {
    ladder
        .windows(2)
        .map(|w| {
            let a = w[0].marginal(w[0].steps());
            let b = w[1].marginal(w[1].steps());
            let t = wasserstein_unequal(&a, &b, eta, wopts)?;
            let key = |e: &ParticleEnsemble| if by_particles { e.particles } else { e.steps() };
            Ok(LevelDistance {
                from: key(&w[0]),
                to: key(&w[1]),
                distance: t.distance,
                exact: t.exact,
            })
        })
        .collect()
}

/// Strictly decreasing, except that values at or below `floor` count as zero.
pub(crate) fn decreasing_with_floor(values: &[f64], floor: f64) -> bool {
    values.windows(2).all(|w| {
        let (prev, next) = (w[0], w[1]);
        next <= floor || next < prev
    })
}

/// Runs both ladders and judges the distance trends.
pub fn refinement_study(
    model: &dyn CoefficientModel,
    kernel_b: &KernelSpec,
    kernel_sigma: &KernelSpec,
    initial: &InitialLaw,
    opts: &RefinementOptions,
) -> Result<RefinementStudy> {
    validate_mesh_ladder(&opts.mesh_ladder)?;
    if opts.particle_ladder.len() < 2 {
        return Err(Error::LadderTooShort(format!(
            "particle ladder needs at least 2 levels, got {}",
            opts.particle_ladder.len()
        )));
    }
    let mesh_ensembles = run_mesh_ladder(model, kernel_b, kernel_sigma, initial, opts)?;
    let particle_ensembles = run_particle_ladder(model, kernel_b, kernel_sigma, initial, opts)?;
    let mesh = terminal_distances(&mesh_ensembles, opts.eta, &opts.wasserstein, false)?;
    let particles = terminal_distances(&particle_ensembles, opts.eta, &opts.wasserstein, true)?;
    let dist = |v: &[LevelDistance]| v.iter().map(|l| l.distance).collect::<Vec<_>>();
    let mesh_decreasing = decreasing_with_floor(&dist(&mesh), opts.floor);
    let particles_decreasing = decreasing_with_floor(&dist(&particles), opts.floor);
    Ok(RefinementStudy {
        report: RefinementReport {
            eta: opts.eta,
            floor: opts.floor,
            mesh,
            particles,
            mesh_decreasing,
            particles_decreasing,
            passes: mesh_decreasing && particles_decreasing,
        },
        mesh_ensembles,
        particle_ensembles,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenIntegralReport {
    pub levels: Vec<usize>,
    /// For every level but the finest: `sup_t` of the root-mean-square over
    /// particles of `I_k(t) - I_finest(t)`, over the finest grid.
    pub sup_difference: Vec<f64>,
    pub floor: f64,
    pub decreasing: bool,
}

/// `I_k(t) = Σ_{t_i < t} (∫_{t_i}^{min(t_{i+1}, t)} K(s,t) ds) f(t_i, X^k(t_i), μ̂^k_i)`
/// for each level `k` at the finest grid's times, compared with the finest level.
///
/// Levels must be ordered coarse to fine, carry the same particles, and be
/// nested in the finest grid.
pub fn frozen_integral_convergence(
    ladder: &[ParticleEnsemble],
    kernel: &KernelSpec,
    cfg: &QuadratureConfig,
    floor: f64,
    f: &(dyn Fn(f64, &[f64], &EmpiricalMeasure) -> f64 + Sync),
) -> Result<FrozenIntegralReport> {
    if ladder.len() < 2 {
        return Err(Error::LadderTooShort("need at least two levels".into()));
    }
    let finest = ladder.last().expect("non-empty");
    let fine_times = finest.times();
    let n_part = finest.particles;
    for e in ladder {
        if e.particles != n_part {
            return Err(Error::SizeMismatch {
                left: e.particles,
                right: n_part,
            });
        }
        if finest.partition.refinement_factor(&e.partition).is_none() {
            return Err(Error::GridMismatch(format!(
                "a level with {} steps is not nested in the finest grid",
                e.steps()
            )));
        }
    }
    let integrals: Vec<Vec<f64>> = ladder
        .iter()
        .map(|e| level_integrals(e, fine_times, kernel, cfg, f))
        .collect::<Result<_>>()?;
    let reference = integrals.last().expect("non-empty");
    let cols = fine_times.len();
    let sup_difference: Vec<f64> = integrals[..integrals.len() - 1]
        .iter()
        .map(|ik| {
            (0..cols)
                .map(|c| {
                    let ss: f64 = (0..n_part)
                        .map(|n| (ik[n * cols + c] - reference[n * cols + c]).powi(2))
                        .sum();
                    (ss / n_part as f64).sqrt()
                })
                .fold(0.0, f64::max)
        })
        .collect();
    Ok(FrozenIntegralReport {
        levels: ladder.iter().map(|e| e.steps()).collect(),
        decreasing: decreasing_with_floor(&sup_difference, floor),
        sup_difference,
        floor,
    })
}

/// `I[n][c]` for one level, `c` indexing `fine_times`.
fn level_integrals(
    e: &ParticleEnsemble,
    fine_times: &[f64],
    kernel: &KernelSpec,
    cfg: &QuadratureConfig,
    f: &(dyn Fn(f64, &[f64], &EmpiricalMeasure) -> f64 + Sync),
) -> Result<Vec<f64>> {
    let p = &e.partition;
    let steps = p.steps();
    let values: Vec<Vec<f64>> = (0..steps)
        .map(|i| {
            let mu = e.marginal(i);
            let t = p.time(i);
            (0..e.particles).map(|n| f(t, e.value(n, i), &mu)).collect()
        })
        .collect();
    let cols = fine_times.len();
    // weights[c] lists (i, w) for the intervals starting before fine_times[c]
    let weights: Vec<Vec<(usize, f64)>> = fine_times
        .par_iter()
        .map(|&t| {
            let mut row = Vec::new();
            for i in 0..steps {
                let a = p.time(i);
                if a >= t {
                    break;
                }
                let b = p.time(i + 1).min(t);
                row.push((i, integrate(kernel, a, b, t, cfg)?));
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    let mut out = vec![0.0; e.particles * cols];
    for (c, row) in weights.iter().enumerate() {
        for n in 0..e.particles {
            out[n * cols + c] = row.iter().map(|&(i, w)| w * values[i][n]).sum();
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelSpec;

    fn opts() -> RefinementOptions {
        RefinementOptions {
            horizon: 1.0,
            mesh_ladder: vec![4, 8, 16],
            mesh_particles: 20,
            particle_ladder: vec![10, 40],
            particle_steps: 8,
            seed: 3,
            mode: SimMode::IntegratedKernel,
            eta: 2.0,
            floor: 1e-9,
            quadrature: QuadratureConfig::default(),
            wasserstein: WassersteinOptions::default(),
        }
    }

    #[test]
    fn ladder_validation() {
        assert!(matches!(validate_mesh_ladder(&[25, 50]), Err(Error::LadderTooShort(_))));
        assert!(validate_mesh_ladder(&[25, 50, 100, 200]).is_ok());
        assert!(validate_mesh_ladder(&[25, 75, 150]).is_err());
        let model = ModelSpec::PureNoise { sigma: 1.0, dim: 1 };
        let k = KernelSpec::Constant { c: 1.0 };
        let init = InitialLaw::Point { value: vec![0.0] };
        let mut o = opts();
        o.particle_ladder = vec![10];
        assert!(matches!(
            refinement_study(&model, &k, &k, &init, &o),
            Err(Error::LadderTooShort(_))
        ));
        let mut o = opts();
        o.mode = SimMode::VarianceMatched;
        assert!(matches!(
            run_mesh_ladder(&model, &k, &k, &init, &o),
            Err(Error::ModeMismatch(_))
        ));
    }

    #[test]
    fn brownian_mesh_ladder_is_exact() {
        let model = ModelSpec::PureNoise { sigma: 1.0, dim: 1 };
        let k = KernelSpec::Constant { c: 1.0 };
        let init = InitialLaw::Point { value: vec![0.0] };
        let study = refinement_study(&model, &k, &k, &init, &opts()).unwrap();
        for l in &study.report.mesh {
            assert!(l.distance < 1e-14, "{l:?}");
        }
        assert!(study.report.mesh_decreasing);
    }

    #[test]
    fn frozen_integral_of_one_is_exact() {
        let model = ModelSpec::PureNoise { sigma: 1.0, dim: 1 };
        let k = KernelSpec::Constant { c: 1.0 };
        let init = InitialLaw::Point { value: vec![0.0] };
        let ladder = run_mesh_ladder(&model, &k, &k, &init, &opts()).unwrap();
        let r = frozen_integral_convergence(&ladder, &k, &QuadratureConfig::default(), 1e-9, &|_, _, _| 1.0)
            .unwrap();
        assert!(r.sup_difference.iter().all(|d| *d < 1e-14));
        assert!(r.decreasing);
        let bad = vec![ladder[0].clone(), ladder[2].clone(), ladder[1].clone()];
        assert!(frozen_integral_convergence(&bad, &k, &QuadratureConfig::default(), 1e-9, &|_, _, _| 1.0).is_err());
    }

    #[test]
    fn floor_rule() {
        assert!(decreasing_with_floor(&[3.0, 2.0, 1.0], 1e-9));
        assert!(!decreasing_with_floor(&[3.0, 3.0, 1.0], 1e-9));
        assert!(decreasing_with_floor(&[1e-16, 2e-16], 1e-9));
        assert!(!decreasing_with_floor(&[1e-16, 1e-3], 1e-9));
    }
}
