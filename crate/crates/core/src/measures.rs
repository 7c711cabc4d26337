//! Empirical measures on `R^d` and Wasserstein distances between them.
//!
//! Laws of the solution are approximated by `N`-atom uniform measures. For
//! equal-size measures optimal transport reduces to an assignment problem,
//! solved exactly up to [`WassersteinOptions::exact_limit`] atoms and by a
//! sliced approximation above it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Uniform measure on `N` atoms in `R^d`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    dim: usize,
    atoms: Vec<f64>,
    mean: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn new(dim: usize, atoms: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return invalid("dimension must be at least 1");
        }
        if atoms.is_empty() || atoms.len() % dim != 0 {
            return invalid(format!(
                "atom buffer of length {} does not hold a positive number of {dim}-vectors",
                atoms.len()
            ));
        }
        if atoms.iter().any(|v| !v.is_finite()) {
            return invalid("atoms must be finite");
        }
        let n = atoms.len() / dim;
        let mut mean = vec![0.0; dim];
        for row in atoms.chunks_exact(dim) {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        Ok(Self { dim, atoms, mean })
    }

    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let dim = points.first().map(Vec::len).unwrap_or(0);
        if points.iter().any(|p| p.len() != dim) {
            return invalid("points have inconsistent dimensions");
        }
        Self::new(dim, points.concat())
    }

    /// Point mass at `x`.
    pub fn dirac(x: &[f64]) -> Result<Self> {
        Self::new(x.len(), x.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.atoms.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atom(&self, i: usize) -> &[f64] {
        &self.atoms[i * self.dim..(i + 1) * self.dim]
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    /// `∫ y μ(dy)`.
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// `(∫ |x|^η μ(dx))^{1/η}`, i.e. `W_η(μ, δ_0)`.
    pub fn moment(&self, eta: f64) -> f64 {
        let n = self.len() as f64;
        let s: f64 = self
            .atoms
            .chunks_exact(self.dim)
            .map(|x| norm(x).powf(eta))
            .sum();
        (s / n).powf(1.0 / eta)
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WassersteinOptions {
    /// Largest atom count solved exactly in dimension > 1.
    pub exact_limit: usize,
    /// Projection count for the sliced approximation.
    pub slices: usize,
    /// Seed for the projection directions.
    pub seed: u64,
}

impl Default for WassersteinOptions {
    fn default() -> Self {
        Self {
            exact_limit: 512,
            slices: 64,
            seed: 0x5eed,
        }
    }
}

/// A transport distance together with whether it was computed exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transport {
    pub distance: f64,
    pub exact: bool,
}

/// `W_η(μ, ν)` for equal-size empirical measures with default options.
pub fn wasserstein(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, eta: f64) -> Result<Transport> {
    wasserstein_with(mu, nu, eta, &WassersteinOptions::default())
}

pub fn wasserstein_with(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    eta: f64,
    opts: &WassersteinOptions,
) -> Result<Transport> {
    check_pair(mu, nu, eta)?;
    if mu.len() != nu.len() {
        return Err(Error::SizeMismatch {
            left: mu.len(),
            right: nu.len(),
        });
    }
    let n = mu.len();
    if mu.dim == 1 {
        let cost = sorted_cost(mu.atoms.clone(), nu.atoms.clone(), eta);
        return Ok(Transport {
            distance: (cost / n as f64).powf(1.0 / eta),
            exact: true,
        });
    }
    if n <= opts.exact_limit {
        let cost = assignment_cost(mu, nu, eta);
        return Ok(Transport {
            distance: (cost / n as f64).powf(1.0 / eta),
            exact: true,
        });
    }
    Ok(Transport {
        distance: sliced(mu, nu, eta, opts),
        exact: false,
    })
}

/// `W_η` between empirical measures of possibly different sizes.
///
/// In one dimension this is exact for any sizes through the quantile
/// coupling. In higher dimension both measures are replicated up to the
/// least common multiple of their sizes, which keeps the problem an
/// assignment; beyond the exact limit the sliced approximation is used.
pub fn wasserstein_unequal(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    eta: f64,
    opts: &WassersteinOptions,
) -> Result<Transport> {
    check_pair(mu, nu, eta)?;
    if mu.len() == nu.len() {
        return wasserstein_with(mu, nu, eta, opts);
    }
    if mu.dim == 1 {
        return Ok(Transport {
            distance: quantile_cost(mu.atoms.clone(), nu.atoms.clone(), eta).powf(1.0 / eta),
            exact: true,
        });
    }
    let lcm = lcm(mu.len(), nu.len());
    if lcm <= opts.exact_limit {
        let a = replicate(mu, lcm / mu.len());
        let b = replicate(nu, lcm / nu.len());
        return wasserstein_with(&a, &b, eta, opts);
    }
    let dirs = directions(mu.dim, opts);
    let mut acc = 0.0;
    for d in &dirs {
        acc += quantile_cost(project(mu, d), project(nu, d), eta);
    }
    Ok(Transport {
        distance: (acc / dirs.len() as f64).powf(1.0 / eta),
        exact: false,
    })
}

fn check_pair(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, eta: f64) -> Result<()> {
    if mu.dim != nu.dim {
        return Err(Error::DimensionMismatch {
            expected: mu.dim,
            got: nu.dim,
        });
    }
    if !(eta >= 1.0) {
        return invalid(format!("Wasserstein order must be ≥ 1, got {eta}"));
    }
    Ok(())
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

fn replicate(mu: &EmpiricalMeasure, times: usize) -> EmpiricalMeasure {
    let mut atoms = Vec::with_capacity(mu.atoms.len() * times);
    for _ in 0..times {
        atoms.extend_from_slice(&mu.atoms);
    }
    EmpiricalMeasure::new(mu.dim, atoms).expect("replicated atoms are valid")
}

/// Sum of `|x_(i) - y_(i)|^η` under the monotone rearrangement.
fn sorted_cost(mut xs: Vec<f64>, mut ys: Vec<f64>, eta: f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    xs.iter().zip(&ys).map(|(x, y)| (x - y).abs().powf(eta)).sum()
}

/// `∫_0^1 |F^{-1}(u) - G^{-1}(u)|^η du` for two 1-d empirical measures.
fn quantile_cost(mut xs: Vec<f64>, mut ys: Vec<f64>, eta: f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n, m) = (xs.len(), ys.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut u = 0.0;
    let mut acc = 0.0;
    while i < n && j < m {
        // next breakpoint of either quantile function, compared exactly
        let next_x = (i + 1) as f64 / n as f64;
        let next_y = (j + 1) as f64 / m as f64;
        let cmp = ((i + 1) * m).cmp(&((j + 1) * n));
        let next = if cmp.is_le() { next_x } else { next_y };
        acc += (next - u) * (xs[i] - ys[j]).abs().powf(eta);
        u = next;
        match cmp {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
            }
        }
    }
    acc
}

fn directions(dim: usize, opts: &WassersteinOptions) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    (0..opts.slices.max(1))
        .map(|_| loop {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = norm(&v);
            if n > 1e-12 {
                break v.into_iter().map(|x| x / n).collect();
            }
        })
        .collect()
}

fn project(mu: &EmpiricalMeasure, dir: &[f64]) -> Vec<f64> {
    mu.atoms
        .chunks_exact(mu.dim)
        .map(|x| x.iter().zip(dir).map(|(a, b)| a * b).sum())
        .collect()
}

/// Sliced `W_η`: `(mean over directions of W_η^η of the projections)^{1/η}`.
fn sliced(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, eta: f64, opts: &WassersteinOptions) -> f64 {
    let dirs = directions(mu.dim, opts);
    let n = mu.len() as f64;
    let total: f64 = dirs
        .iter()
        .map(|d| sorted_cost(project(mu, d), project(nu, d), eta) / n)
        .sum();
    (total / dirs.len() as f64).powf(1.0 / eta)
}

fn assignment_cost(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, eta: f64) -> f64 {
    let n = mu.len();
    let mut cost = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            cost[i * n + j] = dist(mu.atom(i), nu.atom(j)).powf(eta);
        }
    }
    let assignment = hungarian(&cost, n);
    assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * n + j])
        .sum()
}

/// Minimum-cost perfect matching on a dense `n × n` cost matrix
/// (shortest augmenting paths with potentials, O(n³)).
/// Returns `assignment[row] = column`.
pub(crate) fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    // 1-based arrays, column 0 is the virtual source
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if matched_row[j] > 0 {
            assignment[matched_row[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Per-time comparison of marginal distances with the pathwise bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathBoundReport {
    pub times: Vec<f64>,
    /// `W_η(μ_t, ν_t)` at each grid time.
    pub marginal: Vec<f64>,
    /// `((1/N) Σ_n sup_t |x_n(t) - y_n(t)|^η)^{1/η}` under the index coupling.
    pub pathwise: f64,
    /// `max_t (marginal - pathwise)`; non-positive up to rounding.
    pub max_violation: f64,
    pub holds: bool,
}

/// Checks `W_η(μ_t, ν_t) ≤ W_η(μ, ν)` on path space, using the coupling
/// that pairs paths by index as the admissible path-space coupling.
///
/// `a` and `b` are particle-major buffers `[particle][time][component]`.
pub fn path_wasserstein_bound_check(
    times: &[f64],
    a: &[f64],
    b: &[f64],
    particles: usize,
    dim: usize,
    eta: f64,
    opts: &WassersteinOptions,
) -> Result<PathBoundReport> {
    let steps = times.len();
    let expected = particles * steps * dim;
    if a.len() != expected || b.len() != expected {
        return Err(Error::GridMismatch(format!(
            "expected {expected} values per ensemble ({particles} × {steps} × {dim}), got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if particles == 0 || dim == 0 {
        return invalid("need at least one particle and one component");
    }
    let mut sup_cost = 0.0;
    for n in 0..particles {
        let mut worst: f64 = 0.0;
        for j in 0..steps {
            let off = (n * steps + j) * dim;
            worst = worst.max(dist(&a[off..off + dim], &b[off..off + dim]));
        }
        sup_cost += worst.powf(eta);
    }
    let pathwise = (sup_cost / particles as f64).powf(1.0 / eta);
    let mut marginal = Vec::with_capacity(steps);
    for j in 0..steps {
        let gather = |buf: &[f64]| {
            let mut out = Vec::with_capacity(particles * dim);
            for n in 0..particles {
                let off = (n * steps + j) * dim;
                out.extend_from_slice(&buf[off..off + dim]);
            }
            EmpiricalMeasure::new(dim, out)
        };
        let w = wasserstein_with(&gather(a)?, &gather(b)?, eta, opts)?;
        marginal.push(w.distance);
    }
    let max_violation = marginal
        .iter()
        .map(|m| m - pathwise)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(PathBoundReport {
        times: times.to_vec(),
        marginal,
        pathwise,
        max_violation,
        holds: max_violation <= 1e-12 * (1.0 + pathwise),
    })
}
