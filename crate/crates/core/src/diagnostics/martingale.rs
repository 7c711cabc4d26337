//! The martingale-problem defect.
//!
//! For a compactly supported `C²` test function `f` and the semimartingale
//! part `Z = A + Mart`, the process
//! `f(Z_t) - ∫_0^t A^f(s, X_s, μ_s, Z_s) ds` with the generator
//! `A^f = b·∇f(z) + ½ (σσᵀ) : ∇²f(z)` should be a martingale. The defect test
//! estimates `E[(M^f_t - M^f_s) g(Z_s)]` for adapted weights `g` and reports
//! z-scores across particles.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::models::CoefficientModel;
use crate::solver::ParticleEnsemble;
use crate::stats::mean_and_se;

/// Polynomial factor of a [`TestFunction`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BumpShape {
    /// `P(y) = 1 + c·y`.
    BumpLinear,
    /// `P(y) = 1 + c·y + ½|y|²`.
    BumpQuadratic,
}

/// `f(z) = φ(|y|) P(y)` with `y = (z - z₀)/r`, where `φ` equals 1 on
/// `[0, 1]`, falls to 0 on `[1, 2]` along a quintic smoothstep, and vanishes
/// beyond; `φ` is `C²`, so `f ∈ C²` with support in the ball of radius `2r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub id: String,
    pub center: Vec<f64>,
    pub scale: f64,
    pub shape: BumpShape,
    /// Coefficient vector `c` of the linear term.
    pub slope: Vec<f64>,
}

/// Cutoff value and its first two derivatives at radius `rho`.
fn cutoff(rho: f64) -> (f64, f64, f64) {
    if rho <= 1.0 {
        return (1.0, 0.0, 0.0);
    }
    if rho >= 2.0 {
        return (0.0, 0.0, 0.0);
    }
    let x = rho - 1.0;
    let s = x * x * x * (10.0 + x * (-15.0 + 6.0 * x));
    let ds = 30.0 * x * x * (1.0 - x) * (1.0 - x);
    let dds = 60.0 * x * (1.0 - x) * (1.0 - 2.0 * x);
    (1.0 - s, -ds, -dds)
}

impl TestFunction {
    pub fn new(
        id: impl Into<String>,
        center: Vec<f64>,
        scale: f64,
        shape: BumpShape,
        slope: Vec<f64>,
    ) -> Result<Self> {
        if center.is_empty() || center.len() != slope.len() {
            return invalid("test function centre and slope need the same positive dimension");
        }
        if !(scale > 0.0) || !scale.is_finite() {
            return invalid("test function scale must be positive");
        }
        Ok(Self {
            id: id.into(),
            center,
            scale,
            shape,
            slope,
        })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// `(f(z), ∇f(z), ∇²f(z))`, the Hessian row-major.
    pub fn eval(&self, z: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let d = self.dim();
        let r = self.scale;
        let y: Vec<f64> = z.iter().zip(&self.center).map(|(z, c)| (z - c) / r).collect();
        let rho = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let (phi, dphi, ddphi) = cutoff(rho);
        let mut grad = vec![0.0; d];
        let mut hess = vec![0.0; d * d];
        if phi == 0.0 && dphi == 0.0 && ddphi == 0.0 {
            return (0.0, grad, hess);
        }
        let quad = self.shape == BumpShape::BumpQuadratic;
        let mut p = 1.0;
        let mut dp = self.slope.clone();
        for k in 0..d {
            p += self.slope[k] * y[k];
            if quad {
                p += 0.5 * y[k] * y[k];
                dp[k] += y[k];
            }
        }
        // derivatives of the cutoff in y; zero inside the unit ball
        let mut dpsi = vec![0.0; d];
        let mut hpsi = vec![0.0; d * d];
        if rho > 1.0 {
            for a in 0..d {
                dpsi[a] = dphi * y[a] / rho;
                for b in 0..d {
                    let proj = y[a] * y[b] / (rho * rho);
                    let id = if a == b { 1.0 } else { 0.0 };
                    hpsi[a * d + b] = ddphi * proj + dphi / rho * (id - proj);
                }
            }
        }
        for a in 0..d {
            grad[a] = (phi * dp[a] + p * dpsi[a]) / r;
            for b in 0..d {
                let hp = if quad && a == b { 1.0 } else { 0.0 };
                hess[a * d + b] = (phi * hp + dpsi[a] * dp[b] + dp[a] * dpsi[b] + p * hpsi[a * d + b])
                    / (r * r);
            }
        }
        (phi * p, grad, hess)
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        self.eval(z).0
    }
}

/// Six functions in dimension `d`: centres `0` and `±0.5·(1,…,1)`, both
/// shapes, scale 1, slope `0.5·(1,…,1)`.
pub fn standard_bank(d: usize) -> Vec<TestFunction> {
    let mut out = Vec::new();
    for (tag, c) in [("0", 0.0), ("+0.5", 0.5), ("-0.5", -0.5)] {
        for (name, shape) in [
            ("bump-linear", BumpShape::BumpLinear),
            ("bump-quadratic", BumpShape::BumpQuadratic),
        ] {
            out.push(
                TestFunction::new(format!("{name}@{tag}"), vec![c; d], 1.0, shape, vec![0.5; d])
                    .expect("bank parameters are valid"),
            );
        }
    }
    out
}

/// Four grid-aligned windows: first half, second half, whole horizon, middle half.
pub fn default_time_pairs(steps: usize) -> Vec<(usize, usize)> {
    let (q1, h, q3) = (steps / 4, steps / 2, 3 * steps / 4);
    let mut pairs = vec![(0, h), (h, steps), (0, steps), (q1, q3)];
    pairs.retain(|(s, t)| s < t);
    pairs.dedup();
    pairs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleOptions {
    pub z_threshold: f64,
    /// Multiplies the drift inside the generator; 1 is the correct generator.
    pub drift_scale: f64,
}

impl Default for MartingaleOptions {
    fn default() -> Self {
        Self {
            z_threshold: 3.0,
            drift_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectRow {
    pub function: String,
    pub s: f64,
    pub t: f64,
    /// Adapted weight: `1`, `z[k]` or `f`.
    pub weight: String,
    pub statistic: f64,
    pub se: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleReport {
    pub rows: Vec<DefectRow>,
    pub max_abs_z: f64,
    pub z_threshold: f64,
    pub drift_scale: f64,
    pub passes: bool,
}

/// Computes the defect statistics for every function, window and weight.
pub fn martingale_defect(
    ensemble: &ParticleEnsemble,
    model: &dyn CoefficientModel,
    functions: &[TestFunction],
    time_pairs: &[(usize, usize)],
    opts: &MartingaleOptions,
) -> Result<MartingaleReport> {
    let (a, mart) = ensemble.accumulators()?;
    let d = ensemble.state_dim;
    let m = model.noise_dim();
    if model.state_dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: model.state_dim(),
        });
    }
    if let Some(f) = functions.iter().find(|f| f.dim() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: f.dim(),
        });
    }
    let steps = ensemble.steps();
    if let Some(bad) = time_pairs.iter().find(|(s, t)| !(s < t && *t <= steps)) {
        return invalid(format!("time pair {bad:?} is not a grid window s < t ≤ {steps}"));
    }
    let n_part = ensemble.particles;
    let stride = (steps + 1) * d;
    let partition = &ensemble.partition;
    let z_of = |n: usize, j: usize| -> Vec<f64> {
        let o = n * stride + j * d;
        (0..d).map(|k| a[o + k] + mart[o + k]).collect()
    };

    // cumulative generator integrals per function and particle:
    // cum[f][n][j] = Σ_{i<j} Δ_i A^f(t_i, X_n(t_i), μ̂_i, Z_n(t_i))
    let nf = functions.len();
    let mut cum = vec![vec![0.0; (steps + 1) * n_part]; nf];
    for i in 0..steps {
        let mu = ensemble.marginal(i);
        let t = partition.time(i);
        let dt = partition.dt(i);
        let gen: Vec<Vec<f64>> = (0..n_part)
            .into_par_iter()
            .map(|n| {
                let x = ensemble.value(n, i);
                let z = z_of(n, i);
                let mut b = vec![0.0; d];
                let mut s = vec![0.0; d * m];
                model.drift(t, x, &mu, &mut b);
                model.diffusion(t, x, &mu, &mut s);
                let mut sst = vec![0.0; d * d];
                for p in 0..d {
                    for q in 0..d {
                        sst[p * d + q] = (0..m).map(|l| s[p * m + l] * s[q * m + l]).sum();
                    }
                }
                functions
                    .iter()
                    .map(|f| {
                        let (_, g, h) = f.eval(&z);
                        let drift: f64 = (0..d).map(|k| b[k] * g[k]).sum();
                        let diff: f64 = (0..d * d).map(|k| sst[k] * h[k]).sum();
                        opts.drift_scale * drift + 0.5 * diff
                    })
                    .collect()
            })
            .collect();
        for (k, c) in cum.iter_mut().enumerate() {
            for n in 0..n_part {
                c[n * (steps + 1) + i + 1] = c[n * (steps + 1) + i] + dt * gen[n][k];
            }
        }
    }

    let mut rows = Vec::new();
    for (k, f) in functions.iter().enumerate() {
        for &(s, t) in time_pairs {
            let mut defects = Vec::with_capacity(n_part);
            let mut weights: Vec<Vec<f64>> = vec![Vec::with_capacity(n_part); d + 2];
            for n in 0..n_part {
                let zs = z_of(n, s);
                let fs = f.value(&zs);
                let ft = f.value(&z_of(n, t));
                let c = &cum[k][n * (steps + 1)..(n + 1) * (steps + 1)];
                defects.push(ft - fs - (c[t] - c[s]));
                weights[0].push(1.0);
                for (q, zq) in zs.iter().enumerate() {
                    weights[q + 1].push(*zq);
                }
                weights[d + 1].push(fs);
            }
            for (w, ws) in weights.iter().enumerate() {
                let name = match w {
                    0 => "1".to_string(),
                    w if w <= d => format!("z[{}]", w - 1),
                    _ => "f".to_string(),
                };
                let prod: Vec<f64> = defects.iter().zip(ws).map(|(a, b)| a * b).collect();
                let (statistic, se) = mean_and_se(&prod);
                let z = if se > 0.0 {
                    statistic / se
                } else if statistic == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                };
                rows.push(DefectRow {
                    function: f.id.clone(),
                    s: partition.time(s),
                    t: partition.time(t),
                    weight: name,
                    statistic,
                    se,
                    z,
                });
            }
        }
    }
    let max_abs_z = rows.iter().map(|r| r.z.abs()).fold(0.0, f64::max);
    Ok(MartingaleReport {
        passes: max_abs_z <= opts.z_threshold,
        max_abs_z,
        z_threshold: opts.z_threshold,
        drift_scale: opts.drift_scale,
        rows,
    })
}
