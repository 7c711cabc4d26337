//! Per-interval kernel integrals of the scheme, stored as triangular tables.

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::kernels::quadrature::gauss_legendre;
use crate::kernels::{integrate, integrate_abs_power, KernelSpec, QuadratureConfig};

use super::Partition;

/// Start of row `i` in a table holding entries `(i, j)` for `i < j ≤ m`.
pub(crate) fn tri_offset(m: usize, i: usize) -> usize {
    i * m - i * i.saturating_sub(1) / 2
}

/// For each source interval `i` and target grid index `j > i`:
///
/// * `w_b(i,j) = ∫_{t_i}^{t_{i+1}} K_b(s, t_j) ds`
/// * `v_σ(i,j) = ∫_{t_i}^{t_{i+1}} K_σ(s, t_j) ds`
/// * `q_σ(i,j) = ∫_{t_i}^{t_{i+1}} K_σ(s, t_j)² ds`
/// * `K_σ(t_i, t_j)` for the left-point mode.
///
/// Rows are indexed by `i` so that one interval's contributions to all later
/// grid points are contiguous.
#[derive(Debug, Clone)]
pub struct KernelWeights {
    partition: Partition,
    kernel_b: KernelSpec,
    kernel_sigma: KernelSpec,
    drift: Vec<f64>,
    vol: Vec<f64>,
    vol_over_dt: Vec<f64>,
    vol_sq: Vec<f64>,
    left: Vec<f64>,
}

impl KernelWeights {
    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn kernel_b(&self) -> &KernelSpec {
        &self.kernel_b
    }

    pub fn kernel_sigma(&self) -> &KernelSpec {
        &self.kernel_sigma
    }

    fn index(&self, i: usize, j: usize) -> usize {
        let m = self.partition.steps();
        assert!(i < j && j <= m, "weight index ({i}, {j}) outside 0 ≤ i < j ≤ {m}");
        tri_offset(m, i) + (j - i - 1)
    }

    fn row<'a>(&self, table: &'a [f64], i: usize) -> &'a [f64] {
        let m = self.partition.steps();
        let start = tri_offset(m, i);
        &table[start..start + (m - i)]
    }

    pub fn w_b(&self, i: usize, j: usize) -> f64 {
        self.drift[self.index(i, j)]
    }

    pub fn v_sigma(&self, i: usize, j: usize) -> f64 {
        self.vol[self.index(i, j)]
    }

    pub fn q_sigma(&self, i: usize, j: usize) -> f64 {
        self.vol_sq[self.index(i, j)]
    }

    pub fn left_point(&self, i: usize, j: usize) -> f64 {
        self.left[self.index(i, j)]
    }

    /// `w_b(i, j)` for `j = i+1..=M`.
    pub fn drift_row(&self, i: usize) -> &[f64] {
        self.row(&self.drift, i)
    }

    /// `v_σ(i, j) / Δ_i` for `j = i+1..=M`.
    pub fn integrated_row(&self, i: usize) -> &[f64] {
        self.row(&self.vol_over_dt, i)
    }

    /// `K_σ(t_i, t_j)` for `j = i+1..=M`.
    pub fn left_point_row(&self, i: usize) -> &[f64] {
        self.row(&self.left, i)
    }

    /// Largest violation of `q_σ(i,j) Δ_i ≥ v_σ(i,j)²`, relative to `v²`.
    pub fn cauchy_schwarz_defect(&self) -> f64 {
        let m = self.partition.steps();
        let mut worst: f64 = 0.0;
        for i in 0..m {
            let dt = self.partition.dt(i);
            for j in i + 1..=m {
                let (v, q) = (self.v_sigma(i, j), self.q_sigma(i, j));
                if v != 0.0 {
                    worst = worst.max((v * v - q * dt) / (v * v));
                }
            }
        }
        worst
    }

    /// Builds the per-interval factorisation used by the variance-matched mode.
    pub fn variance_factor(&self, nodes: usize) -> Result<VarianceFactor> {
        VarianceFactor::build(self, nodes)
    }
}

/// Values of one row, computed per lag when the grid is uniform and the
/// kernel a convolution, per pair otherwise.
fn fill_table(
    partition: &Partition,
    kernel: &KernelSpec,
    f: impl Fn(f64, f64, f64) -> Result<f64> + Sync,
    constant: impl Fn(f64) -> Option<f64> + Sync,
) -> Result<Vec<f64>> {
    let m = partition.steps();
    if kernel.is_convolution() && partition.is_uniform() {
        let h = partition.horizon() / m as f64;
        let by_lag: Vec<f64> = (0..m)
            .into_par_iter()
            .map(|lag| f(0.0, h, (lag + 1) as f64 * h))
            .collect::<Result<_>>()?;
        let mut out = Vec::with_capacity(tri_offset(m, m));
        for i in 0..m {
            let dt = partition.dt(i);
            match constant(dt) {
                Some(v) => out.extend(std::iter::repeat_n(v, m - i)),
                None => out.extend_from_slice(&by_lag[..m - i]),
            }
        }
        return Ok(out);
    }
    let rows: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let (a, b) = (partition.time(i), partition.time(i + 1));
            if let Some(v) = constant(b - a) {
                return Ok(vec![v; m - i]);
            }
            (i + 1..=m).map(|j| f(a, b, partition.time(j))).collect()
        })
        .collect::<Result<_>>()?;
    Ok(rows.concat())
}

/// Precomputes all weights of the scheme on `partition`.
///
/// Fails with a divergence error when `K_σ` is not square integrable up to
/// the diagonal, because then `q_σ` is infinite.
pub fn precompute_weights(
    kernel_b: &KernelSpec,
    kernel_sigma: &KernelSpec,
    partition: &Partition,
    cfg: &QuadratureConfig,
) -> Result<KernelWeights> {
    kernel_b.validate()?;
    kernel_sigma.validate()?;
    cfg.validate()?;
    for k in [kernel_b, kernel_sigma] {
        if let Some(h) = k.horizon() {
            if partition.horizon() > h * (1.0 + 1e-12) {
                return Err(Error::Domain(format!(
                    "partition horizon {} exceeds kernel horizon {h}",
                    partition.horizon()
                )));
            }
        }
    }
    // Constant kernels get exact c·Δ and c²·Δ.
    let constant_of = |k: &KernelSpec| match k {
        KernelSpec::Constant { c } => Some(*c),
        _ => None,
    };
    let cb = constant_of(kernel_b);
    let cs = constant_of(kernel_sigma);
    let drift = fill_table(
        partition,
        kernel_b,
        |a, b, t| integrate(kernel_b, a, b, t, cfg),
        |dt| cb.map(|c| c * dt),
    )?;
    let vol = fill_table(
        partition,
        kernel_sigma,
        |a, b, t| integrate(kernel_sigma, a, b, t, cfg),
        |dt| cs.map(|c| c * dt),
    )?;
    let vol_sq = fill_table(
        partition,
        kernel_sigma,
        |a, b, t| integrate_abs_power(kernel_sigma, a, b, t, 2.0, cfg),
        |dt| cs.map(|c| c * c * dt),
    )?;
    let m = partition.steps();
    let mut vol_over_dt = Vec::with_capacity(vol.len());
    let mut left = Vec::with_capacity(vol.len());
    for i in 0..m {
        let dt = partition.dt(i);
        let start = tri_offset(m, i);
        for (k, j) in (i + 1..=m).enumerate() {
            vol_over_dt.push(match cs {
                Some(c) => c,
                None => vol[start + k] / dt,
            });
            left.push(kernel_sigma.value(partition.time(i), partition.time(j)));
        }
    }
    if let Some(bad) = vol_sq.iter().position(|q| !q.is_finite()) {
        return Err(Error::Divergence(format!(
            "q_σ entry {bad} is not finite; K_σ is not square integrable near the diagonal"
        )));
    }
    Ok(KernelWeights {
        partition: partition.clone(),
        kernel_b: kernel_b.clone(),
        kernel_sigma: kernel_sigma.clone(),
        drift,
        vol,
        vol_over_dt,
        vol_sq,
        left,
    })
}

/// Per-interval factor of the Gaussian vector
/// `(B_{t_{i+1}} - B_{t_i}, ∫_{t_i}^{t_{i+1}} K_σ(s, t_j) dB_s for j > i)`.
///
/// The stochastic integrals are approximated by a Gauss–Legendre rule in
/// the variable `v` with `s = t_{i+1} - Δ_i v^r`, which removes the
/// singularity of `K_σ²` at `s = t_j` for `j = i + 1`. With `Q` nodes and
/// independent standard normals `ξ_1..ξ_Q` the factor rows give
///
/// ```text
/// ΔB_i ≈ Σ_k β_k ξ_k,    G_{ij} ≈ Σ_k L_{ijk} ξ_k
/// ```
///
/// and every row is rescaled so that its variance is exactly `Δ_i`
/// respectively `q_σ(i,j)`; covariances across `j` carry the quadrature error.
#[derive(Debug, Clone)]
pub struct VarianceFactor {
    nodes: usize,
    steps: usize,
    brownian: Vec<f64>,
    columns: Vec<f64>,
}

impl VarianceFactor {
    fn build(weights: &KernelWeights, nodes: usize) -> Result<Self> {
        if !(1..=64).contains(&nodes) {
            return invalid(format!("factor node count must be in 1..=64, got {nodes}"));
        }
        let kernel = &weights.kernel_sigma;
        let partition = &weights.partition;
        let m = partition.steps();
        let a = kernel.singular_exponent();
        let r = if 2.0 * a < 1.0 {
            (1.0 / (1.0 - 2.0 * a)).clamp(1.0, 8.0)
        } else {
            return Err(Error::Divergence(format!(
                "variance-matched mode needs a square-integrable K_σ (singular exponent {a})"
            )));
        };
        let (x, w) = gauss_legendre(nodes);
        let v: Vec<f64> = x.iter().map(|x| 0.5 * (x + 1.0)).collect();
        let per_interval: Vec<(Vec<f64>, Vec<f64>)> = (0..m)
            .into_par_iter()
            .map(|i| {
                let dt = partition.dt(i);
                let end = partition.time(i + 1);
                let omega: Vec<f64> = v
                    .iter()
                    .zip(&w)
                    .map(|(v, w)| 0.5 * w * dt * r * v.powf(r - 1.0))
                    .collect();
                let s: Vec<f64> = v.iter().map(|v| end - dt * v.powf(r)).collect();
                let total: f64 = omega.iter().sum();
                let scale = (dt / total).sqrt();
                let brownian: Vec<f64> = omega.iter().map(|o| o.sqrt() * scale).collect();
                let width = m - i;
                let mut cols = vec![0.0; nodes * width];
                for (c, j) in (i + 1..=m).enumerate() {
                    let t = partition.time(j);
                    let g: Vec<f64> = s
                        .iter()
                        .zip(&omega)
                        .map(|(s, o)| kernel.value(*s, t) * o.sqrt())
                        .collect();
                    let norm2: f64 = g.iter().map(|g| g * g).sum();
                    let target = weights.q_sigma(i, j);
                    let scale = if norm2 > 0.0 { (target / norm2).sqrt() } else { 0.0 };
                    for (k, g) in g.iter().enumerate() {
                        cols[k * width + c] = g * scale;
                    }
                }
                (brownian, cols)
            })
            .collect();
        let mut brownian = Vec::with_capacity(m * nodes);
        let mut columns = Vec::with_capacity(nodes * tri_offset(m, m));
        for (b, c) in per_interval {
            brownian.extend(b);
            columns.extend(c);
        }
        if columns.iter().chain(&brownian).any(|v| !v.is_finite()) {
            return Err(Error::Divergence(
                "variance factor has non-finite entries".to_string(),
            ));
        }
        Ok(Self {
            nodes,
            steps: m,
            brownian,
            columns,
        })
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    /// `β_k` for interval `i`.
    pub fn brownian(&self, i: usize) -> &[f64] {
        &self.brownian[i * self.nodes..(i + 1) * self.nodes]
    }

    /// `L_{ijk}` for `j = i+1..=M`, node-major: entry `k·(M-i) + (j-i-1)`.
    pub fn columns(&self, i: usize) -> &[f64] {
        let start = self.nodes * tri_offset(self.steps, i);
        &self.columns[start..start + self.nodes * (self.steps - i)]
    }

    /// `Σ_k L_{ijk} L_{ij'k}`, the modelled covariance of `G_{ij}` and `G_{ij'}`.
    pub fn covariance(&self, i: usize, j: usize, j2: usize) -> f64 {
        let width = self.steps - i;
        let cols = self.columns(i);
        (0..self.nodes)
            .map(|k| cols[k * width + j - i - 1] * cols[k * width + j2 - i - 1])
            .sum()
    }

    /// `Σ_k β_k L_{ijk}`, the modelled covariance of `ΔB_i` and `G_{ij}`.
    pub fn cross_covariance(&self, i: usize, j: usize) -> f64 {
        let width = self.steps - i;
        let cols = self.columns(i);
        let b = self.brownian(i);
        (0..self.nodes).map(|k| b[k] * cols[k * width + j - i - 1]).sum()
    }
}
