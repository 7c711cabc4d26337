//! Pathwise Hölder exponent estimates from dyadic increments.
//!
//! For each path and dyadic lag `h = 2^k` steps the mean squared increment
//! over all start points is computed; half the log-log slope of that curve is
//! the path's exponent, and the median over particles is reported. Squared
//! means are used rather than maxima because the maximum of `n` increments
//! carries a `sqrt(log n)` factor that biases the slope downwards at desk
//! scale. The max-increment slope is reported alongside for reference.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::measures::norm;
use crate::solver::ParticleEnsemble;
use crate::stats::{fit_line, median};

/// Smallest grid accepted by [`holder_estimate`].
pub const MIN_HOLDER_STEPS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderEstimate {
    /// Median over particles of the mean-square estimate; `None` when every
    /// path is constant.
    pub exponent: Option<f64>,
    /// Median over particles of the max-increment slope.
    pub max_ratio_exponent: Option<f64>,
    /// 10% and 90% quantiles of the per-particle mean-square estimates.
    pub spread: Option<(f64, f64)>,
    pub method: String,
    pub lags: Vec<usize>,
}

impl HolderEstimate {
    /// The estimate must reach `(γ p - 1)/p - tolerance`.
    pub fn meets_bound(&self, gamma: f64, p: f64, tolerance: f64) -> bool {
        match self.exponent {
            Some(h) => h >= (gamma * p - 1.0) / p - tolerance,
            None => true,
        }
    }
}

/// Estimates the Hölder exponent of the simulated paths.
pub fn holder_estimate(ensemble: &ParticleEnsemble) -> Result<HolderEstimate> {
    let steps = ensemble.steps();
    if steps < MIN_HOLDER_STEPS {
        return invalid(format!(
            "Hölder estimation needs at least {MIN_HOLDER_STEPS} steps, got {steps}"
        ));
    }
    let lags: Vec<usize> = std::iter::successors(Some(1usize), |l| Some(l * 2))
        .take_while(|&l| l <= steps / 4)
        .collect();
    let times = ensemble.times();
    let d = ensemble.state_dim;
    let mut mean_sq_slopes = Vec::new();
    let mut max_slopes = Vec::new();
    let mut diff = vec![0.0; d];
    for n in 0..ensemble.particles {
        let path = ensemble.path(n);
        let mut log_h = Vec::with_capacity(lags.len());
        let mut log_ms = Vec::with_capacity(lags.len());
        let mut log_max = Vec::with_capacity(lags.len());
        for &lag in &lags {
            let mut sum_sq = 0.0;
            let mut max: f64 = 0.0;
            let mut sum_h = 0.0;
            let count = steps + 1 - lag;
            for j in 0..count {
                for (c, v) in diff.iter_mut().enumerate() {
                    *v = path[(j + lag) * d + c] - path[j * d + c];
                }
                let r = norm(&diff);
                sum_sq += r * r;
                max = max.max(r);
                sum_h += times[j + lag] - times[j];
            }
            if sum_sq > 0.0 {
                log_h.push((sum_h / count as f64).ln());
                log_ms.push((sum_sq / count as f64).ln());
                log_max.push(max.ln());
            }
        }
        if log_h.len() >= 2 {
            if let Some(f) = fit_line(&log_h, &log_ms) {
                mean_sq_slopes.push(0.5 * f.slope);
            }
            if let Some(f) = fit_line(&log_h, &log_max) {
                max_slopes.push(f.slope);
            }
        }
    }
    let quantile = |v: &mut Vec<f64>, q: f64| {
        v.sort_by(f64::total_cmp);
        v[((v.len() - 1) as f64 * q).round() as usize]
    };
    let spread = if mean_sq_slopes.is_empty() {
        None
    } else {
        let mut v = mean_sq_slopes.clone();
        Some((quantile(&mut v, 0.1), quantile(&mut v, 0.9)))
    };
    let opt_median = |v: &[f64]| (!v.is_empty()).then(|| median(v));
    Ok(HolderEstimate {
        exponent: opt_median(&mean_sq_slopes),
        max_ratio_exponent: opt_median(&max_slopes),
        spread,
        method: "dyadic mean-square increments, median over particles".into(),
        lags,
    })
}
