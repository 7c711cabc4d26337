//! The Euler-type particle scheme.
//!
//! On a partition `0 = t_0 < … < t_M = T` the coefficients are frozen at the
//! left grid point of each sub-interval while the kernel is integrated
//! exactly over it:
//!
//! ```text
//! X(t_j) = X_0 + Σ_{i<j} w_b(i,j) b(t_i, X(t_i), μ̂_i) + Σ_{i<j} [noise_i → t_j] σ(t_i, X(t_i), μ̂_i)
//! ```
//!
//! The law of `X(t_i)` is replaced by the empirical measure `μ̂_i` of the `N`
//! particles. How the stochastic integral over `[t_i, t_{i+1}]` toward `t_j`
//! is sampled is selected by [`SimMode`].

mod reconstruct;
mod simulate;
mod weights;

pub use reconstruct::{reconstruct, ReconstructionReport, RESIDUAL_TOLERANCE};
pub use simulate::{
    simulate, simulate_kernels, InitialLaw, ParticleEnsemble, SimulationOptions,
};
pub use weights::{precompute_weights, KernelWeights, VarianceFactor};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Discretisation of `∫_{t_i}^{t_{i+1}} K_σ(s, t_j) dB_s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SimMode {
    /// `(v_σ(i,j) / Δ_i) · ΔB_i`: exact mean kernel weight, variance biased
    /// low for singular kernels.
    #[default]
    IntegratedKernel,
    /// `K_σ(t_i, t_j) · ΔB_i`; only sensible for kernels bounded near the diagonal.
    LeftPoint,
    /// A Gaussian vector over `j > i` with exact variances `q_σ(i,j)` and
    /// covariances from a per-interval quadrature factorisation.
    VarianceMatched,
}

impl SimMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SimMode::IntegratedKernel => "integrated-kernel",
            SimMode::LeftPoint => "left-point",
            SimMode::VarianceMatched => "variance-matched",
        }
    }
}

impl std::fmt::Display for SimMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SimMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "integrated-kernel" => Ok(SimMode::IntegratedKernel),
            "left-point" => Ok(SimMode::LeftPoint),
            "variance-matched" => Ok(SimMode::VarianceMatched),
            other => invalid(format!("unknown simulation mode `{other}`")),
        }
    }
}

/// Strictly increasing grid `0 = t_0 < t_1 < … < t_M = T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Partition {
    times: Vec<f64>,
}

impl TryFrom<Vec<f64>> for Partition {
    type Error = Error;
    fn try_from(times: Vec<f64>) -> Result<Self> {
        Partition::from_times(times)
    }
}

impl From<Partition> for Vec<f64> {
    fn from(p: Partition) -> Self {
        p.times
    }
}

impl Partition {
    /// `M` equal steps on `[0, T]`; the endpoints are exact.
    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return invalid(format!("horizon must be positive and finite, got {horizon}"));
        }
        if steps == 0 {
            return invalid("a partition needs at least one step");
        }
        let mut times: Vec<f64> = (0..=steps)
            .map(|i| horizon * i as f64 / steps as f64)
            .collect();
        times[steps] = horizon;
        Ok(Self { times })
    }

    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return invalid("a partition needs at least two times");
        }
        if times[0] != 0.0 {
            return invalid(format!("a partition must start at 0, got {}", times[0]));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return invalid("partition times must be finite");
        }
        if let Some(w) = times.windows(2).find(|w| !(w[1] > w[0])) {
            return invalid(format!(
                "partition must be strictly increasing (found {} then {})",
                w[0], w[1]
            ));
        }
        Ok(Self { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Number of sub-intervals `M`.
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.times[self.steps()]
    }

    pub fn time(&self, i: usize) -> f64 {
        self.times[i]
    }

    /// `Δ_i = t_{i+1} - t_i`.
    pub fn dt(&self, i: usize) -> f64 {
        self.times[i + 1] - self.times[i]
    }

    /// `max_i Δ_i`.
    pub fn mesh(&self) -> f64 {
        (0..self.steps()).map(|i| self.dt(i)).fold(0.0, f64::max)
    }

    /// Whether all steps agree to within `1e-9` relative.
    pub fn is_uniform(&self) -> bool {
        let h = self.horizon() / self.steps() as f64;
        (0..self.steps()).all(|i| (self.dt(i) - h).abs() <= 1e-9 * h)
    }

    /// Index `i` with `t_i ≤ t < t_{i+1}`, and `M` at `t = T`.
    pub fn kappa_index(&self, t: f64) -> Result<usize> {
        let horizon = self.horizon();
        if !(0.0..=horizon).contains(&t) {
            return Err(Error::Domain(format!("t = {t} outside [0, {horizon}]")));
        }
        if t == horizon {
            return Ok(self.steps());
        }
        // number of grid times ≤ t, minus one
        Ok(self.times.partition_point(|&s| s <= t) - 1)
    }

    /// Left grid projection: `t_i` for `t ∈ [t_i, t_{i+1})` and `T` at `T`.
    pub fn kappa(&self, t: f64) -> Result<f64> {
        Ok(self.times[self.kappa_index(t)?])
    }

    /// If every time of `coarse` is a time of `self`, with the same number of
    /// fine steps in each coarse step, returns that number.
    pub fn refinement_factor(&self, coarse: &Partition) -> Option<usize> {
        let (m_fine, m_coarse) = (self.steps(), coarse.steps());
        if m_fine % m_coarse != 0 {
            return None;
        }
        let r = m_fine / m_coarse;
        let tol = 1e-12 * self.horizon();
        let nested = (0..=m_coarse).all(|i| (self.times[i * r] - coarse.times[i]).abs() <= tol);
        nested.then_some(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kappa_examples() {
        let p = Partition::uniform(1.0, 4).unwrap();
        assert_eq!(p.kappa(1.0).unwrap(), 1.0);
        assert_eq!(p.kappa(0.3).unwrap(), 0.25);
        assert_eq!(p.kappa(0.0).unwrap(), 0.0);
        // left-closed, right-open at interior points
        assert_eq!(p.kappa(0.5).unwrap(), 0.5);
        assert_eq!(p.kappa(0.7499999).unwrap(), 0.5);
        assert!(matches!(p.kappa(1.5), Err(Error::Domain(_))));
        assert!(matches!(p.kappa(-0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn construction_rules() {
        assert!(Partition::from_times(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(Partition::from_times(vec![0.1, 1.0]).is_err());
        assert!(Partition::from_times(vec![0.0]).is_err());
        assert!(Partition::uniform(0.0, 3).is_err());
        assert!(Partition::uniform(1.0, 0).is_err());
        let p = Partition::from_times(vec![0.0, 0.1, 0.5, 1.0]).unwrap();
        assert!((p.mesh() - 0.5).abs() < 1e-15);
        assert!(!p.is_uniform());
        assert_eq!(Partition::uniform(3.0, 7).unwrap().horizon(), 3.0);
    }

    #[test]
    fn refinement_detection() {
        let fine = Partition::uniform(1.0, 200).unwrap();
        assert_eq!(fine.refinement_factor(&Partition::uniform(1.0, 25).unwrap()), Some(8));
        assert_eq!(fine.refinement_factor(&Partition::uniform(1.0, 30).unwrap()), None);
        assert_eq!(fine.refinement_factor(&Partition::uniform(2.0, 25).unwrap()), None);
    }

    #[test]
    fn mode_names_round_trip() {
        for m in [SimMode::IntegratedKernel, SimMode::LeftPoint, SimMode::VarianceMatched] {
            assert_eq!(m.as_str().parse::<SimMode>().unwrap(), m);
        }
    }
}
