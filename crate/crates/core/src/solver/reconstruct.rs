//! Rebuilding `X` from its semimartingale parts:
//! `X(t_j) = Z_0 + Σ_{i<j} (w_b(i,j)/Δ_i) ΔA_i + Σ_{i<j} [kernel noise factor] ΔMart_i`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{normals, StreamKind};

use super::simulate::ParticleEnsemble;
use super::weights::KernelWeights;
use super::SimMode;

/// Largest relative residual accepted for a correctly simulated ensemble.
pub const RESIDUAL_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    /// `max |X - X_rebuilt| / max(1, |X|)` over particles, times and components.
    pub max_residual: f64,
    pub worst_particle: usize,
    pub worst_step: usize,
    pub tolerance: f64,
    pub passes: bool,
}

/// Recomputes every `X_n(t_j)` from `X_n(0)`, the increments of the stored
/// accumulators and the weights, and reports the largest discrepancy.
///
/// Variance-matched ensembles are rebuilt from their frozen `σ` and the
/// regenerated factor normals, so they must come straight from the solver.
pub fn reconstruct(ensemble: &ParticleEnsemble, weights: &KernelWeights) -> Result<ReconstructionReport> {
    let partition = weights.partition();
    if partition != &ensemble.partition {
        return Err(Error::GridMismatch(
            "ensemble and weights live on different partitions".into(),
        ));
    }
    let (a, mart) = ensemble.accumulators()?;
    let steps = partition.steps();
    let d = ensemble.state_dim;
    let mn = ensemble.noise_dim;
    let stride = (steps + 1) * d;
    let vm = ensemble.mode == SimMode::VarianceMatched;
    let factor = if vm {
        if ensemble.sigma_frozen.is_none() {
            return Err(Error::ModeMismatch(
                "variance-matched ensemble without frozen diffusion values cannot be rebuilt"
                    .into(),
            ));
        }
        Some(weights.variance_factor(ensemble.factor_nodes)?)
    } else {
        None
    };
    let mut report = ReconstructionReport {
        max_residual: 0.0,
        worst_particle: 0,
        worst_step: 0,
        tolerance: RESIDUAL_TOLERANCE,
        passes: true,
    };
    let mut rebuilt = vec![0.0; stride];
    let mut xi = vec![0.0; ensemble.factor_nodes * mn];
    for n in 0..ensemble.particles {
        let base = n * stride;
        for j in 0..=steps {
            rebuilt[j * d..(j + 1) * d].copy_from_slice(&a[base..base + d]);
        }
        for i in 0..steps {
            let dt = partition.dt(i);
            let width = steps - i;
            for c in 0..d {
                let da = a[base + (i + 1) * d + c] - a[base + i * d + c];
                let dm = mart[base + (i + 1) * d + c] - mart[base + i * d + c];
                let noise_row = match ensemble.mode {
                    SimMode::LeftPoint => weights.left_point_row(i),
                    _ => weights.integrated_row(i),
                };
                for k in 0..width {
                    let mut v = weights.drift_row(i)[k] / dt * da;
                    if !vm {
                        v += noise_row[k] * dm;
                    }
                    rebuilt[(i + 1 + k) * d + c] += v;
                }
            }
            if let Some(f) = &factor {
                let sig = ensemble.sigma_frozen.as_ref().expect("checked above");
                let s = &sig[(n * steps + i) * d * mn..(n * steps + i + 1) * d * mn];
                normals(ensemble.seed, ensemble.labels[n], StreamKind::Factor, i as u64, &mut xi);
                let cols = f.columns(i);
                for q in 0..f.nodes() {
                    for c in 0..d {
                        let u: f64 = (0..mn).map(|l| s[c * mn + l] * xi[q * mn + l]).sum();
                        for k in 0..width {
                            rebuilt[(i + 1 + k) * d + c] += cols[q * width + k] * u;
                        }
                    }
                }
            }
        }
        for j in 0..=steps {
            for c in 0..d {
                let x = ensemble.x[base + j * d + c];
                let r = (x - rebuilt[j * d + c]).abs() / x.abs().max(1.0);
                if !(r <= report.max_residual) {
                    report.max_residual = if r.is_nan() { f64::INFINITY } else { r };
                    report.worst_particle = n;
                    report.worst_step = j;
                }
            }
        }
    }
    report.passes = report.max_residual <= RESIDUAL_TOLERANCE;
    Ok(report)
}
