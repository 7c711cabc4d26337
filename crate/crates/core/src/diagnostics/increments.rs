//! Scaling of `E|X(t+h) - X(t)|^p` in the lag `h`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::norm;
use crate::solver::ParticleEnsemble;
use crate::stats::{fit_line, mean_and_se};

/// Which stored path the increments are taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PathSource {
    #[default]
    State,
    /// The drift accumulator `A`.
    Drift,
    /// The martingale accumulator `Mart`.
    Martingale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementOptions {
    /// Upper bound on anchor times per lag; anchors are equally spaced.
    pub max_anchors: usize,
    /// Required span `log10(h_max / h_min)` of the lag set.
    pub min_decades: f64,
    pub source: PathSource,
}

impl Default for IncrementOptions {
    fn default() -> Self {
        Self {
            max_anchors: 32,
            min_decades: 1.5,
            source: PathSource::State,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementFit {
    pub p: f64,
    pub source: PathSource,
    /// Lags in grid steps.
    pub lags: Vec<usize>,
    /// Mean lag length in time units per lag.
    pub h: Vec<f64>,
    /// `Ê|X(t+h) - X(t)|^p` per lag.
    pub moments: Vec<f64>,
    pub moment_se: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// All increments vanish; the fit fields are zero.
    pub degenerate: bool,
}

impl IncrementFit {
    /// The slope must not fall below `γ p` by more than `tolerance`.
    pub fn meets_exponent(&self, gamma: f64, tolerance: f64) -> bool {
        self.degenerate || self.slope >= gamma * self.p - tolerance
    }
}

/// Dyadic lags `1, 2, 4, …` not exceeding `steps / 2`.
pub fn dyadic_lags(steps: usize) -> Vec<usize> {
    std::iter::successors(Some(1usize), |l| Some(l * 2))
        .take_while(|&l| l <= steps / 2)
        .collect()
}

/// Regresses `log Ê|X(t+h) - X(t)|^p` on `log h`, averaging over up to
/// `max_anchors` equally spaced anchors `t` per lag and over particles.
pub fn increment_scaling(
    ensemble: &ParticleEnsemble,
    p: f64,
    lags: &[usize],
    opts: &IncrementOptions,
) -> Result<IncrementFit> {
    let steps = ensemble.steps();
    if !(p > 0.0) || !p.is_finite() {
        return Err(Error::InvalidArgument(format!("moment order must be positive, got {p}")));
    }
    let mut lags = lags.to_vec();
    lags.sort_unstable();
    lags.dedup();
    if lags.len() < 2 || lags[0] == 0 || *lags.last().unwrap() > steps {
        return Err(Error::InsufficientLags(format!(
            "need at least two distinct lags in 1..={steps}, got {lags:?}"
        )));
    }
    let span = (*lags.last().unwrap() as f64 / lags[0] as f64).log10();
    if span < opts.min_decades {
        return Err(Error::InsufficientLags(format!(
            "lags span {span:.2} decades, need {}",
            opts.min_decades
        )));
    }
    let paths: &[f64] = match opts.source {
        PathSource::State => &ensemble.x,
        PathSource::Drift => ensemble.accumulators()?.0,
        PathSource::Martingale => ensemble.accumulators()?.1,
    };
    let d = ensemble.state_dim;
    let stride = (steps + 1) * d;
    let times = ensemble.times();
    let anchors_max = opts.max_anchors.max(1);
    let mut h = Vec::with_capacity(lags.len());
    let mut moments = Vec::with_capacity(lags.len());
    let mut moment_se = Vec::with_capacity(lags.len());
    let mut diff = vec![0.0; d];
    for &lag in &lags {
        let last = steps - lag;
        let count = (last + 1).min(anchors_max);
        let anchors: Vec<usize> = if count == 1 {
            vec![0]
        } else {
            (0..count)
                .map(|k| ((k * last) as f64 / (count - 1) as f64).round() as usize)
                .collect()
        };
        // per-particle average over anchors, then mean and SE across particles
        let per_particle: Vec<f64> = (0..ensemble.particles)
            .map(|n| {
                let base = n * stride;
                anchors
                    .iter()
                    .map(|&j| {
                        for (c, v) in diff.iter_mut().enumerate() {
                            *v = paths[base + (j + lag) * d + c] - paths[base + j * d + c];
                        }
                        norm(&diff).powf(p)
                    })
                    .sum::<f64>()
                    / anchors.len() as f64
            })
            .collect();
        let (m, se) = mean_and_se(&per_particle);
        moments.push(m);
        moment_se.push(se);
        h.push(anchors.iter().map(|&j| times[j + lag] - times[j]).sum::<f64>() / anchors.len() as f64);
    }
    let degenerate = moments.iter().all(|m| *m == 0.0);
    let (slope, intercept, r2) = if degenerate {
        (0.0, 0.0, 0.0)
    } else {
        if moments.iter().any(|m| !(*m > 0.0) || !m.is_finite()) {
            return Err(Error::InvalidArgument(
                "some lags have vanishing or non-finite increment moments".into(),
            ));
        }
        let xs: Vec<f64> = h.iter().map(|v| v.ln()).collect();
        let ys: Vec<f64> = moments.iter().map(|v| v.ln()).collect();
        let fit = fit_line(&xs, &ys).ok_or_else(|| {
            Error::InsufficientLags("lags have identical lengths".into())
        })?;
        (fit.slope, fit.intercept, fit.r2)
    };
    Ok(IncrementFit {
        p,
        source: opts.source,
        lags,
        h,
        moments,
        moment_se,
        slope,
        intercept,
        r2,
        degenerate,
    })
}
