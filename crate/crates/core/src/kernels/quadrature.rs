//! Adaptive Gauss–Kronrod quadrature with an optional power substitution for
//! integrable endpoint singularities.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Tolerances and limits for every kernel integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
    /// Map `u = U v^r` near a known power singularity so the integrand is
    /// bounded in `v` before adaptive refinement starts.
    pub singularity_substitution: bool,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            abs_tol: 1e-14,
            rel_tol: 1e-11,
            max_subdivisions: 500,
            singularity_substitution: true,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0) || !(self.rel_tol > 0.0) {
            return invalid("quadrature tolerances must be positive");
        }
        if self.max_subdivisions < 1 {
            return invalid("max_subdivisions must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum QuadFailure {
    NotConverged { estimate: f64, error: f64 },
    NonFinite,
}

const XGK: [f64; 11] = [
    0.995_657_163_025_808_1,
    0.973_906_528_517_171_7,
    0.930_157_491_355_708_2,
    0.865_063_366_688_984_5,
    0.780_817_726_586_416_9,
    0.679_409_568_299_024_4,
    0.562_757_134_668_604_7,
    0.433_395_394_129_247_2,
    0.294_392_862_701_460_2,
    0.148_874_338_981_631_2,
    0.0,
];
const WG: [f64; 5] = [
    0.066_671_344_308_688_14,
    0.149_451_349_150_580_6,
    0.219_086_362_515_982_04,
    0.269_266_719_309_996_35,
    0.295_524_224_714_752_87,
];
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874,
    0.032_558_162_307_964_73,
    0.054_755_896_574_352,
    0.075_039_674_810_919_95,
    0.093_125_454_583_697_6,
    0.109_387_158_802_297_64,
    0.123_491_976_262_065_85,
    0.134_709_217_311_473_33,
    0.142_775_938_577_060_08,
    0.147_739_104_901_338_5,
    0.149_445_554_002_916_9,
];

/// One 21-point Kronrod panel with its embedded 10-point Gauss estimate.
/// Returns `(kronrod, |kronrod - gauss|)`.
pub(crate) fn gk21<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let centre = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(centre);
    let mut kronrod = WGK[10] * fc;
    let mut gauss = 0.0;
    for k in 0..10 {
        let dx = half * XGK[k];
        let pair = f(centre - dx) + f(centre + dx);
        kronrod += WGK[k] * pair;
        if k % 2 == 1 {
            gauss += WG[k / 2] * pair;
        }
    }
    kronrod *= half;
    gauss *= half;
    (kronrod, (kronrod - gauss).abs())
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error.total_cmp(&other.error) == Ordering::Equal
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Globally adaptive bisection: always split the panel with the largest error
/// estimate until the summed error meets the tolerance.
pub(crate) fn adaptive<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    cfg: &QuadratureConfig,
) -> std::result::Result<f64, QuadFailure> {
    if a == b {
        return Ok(0.0);
    }
    let (v, e) = gk21(f, a, b);
    if !v.is_finite() || !e.is_finite() {
        return Err(QuadFailure::NonFinite);
    }
    let mut heap = BinaryHeap::new();
    heap.push(Panel {
        a,
        b,
        value: v,
        error: e,
    });
    let mut total = v;
    let mut total_err = e;
    let mut splits = 0usize;
    loop {
        if total_err <= cfg.abs_tol.max(cfg.rel_tol * total.abs()) {
            return Ok(total);
        }
        if splits >= cfg.max_subdivisions {
            break;
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if !(mid > worst.a && mid < worst.b) {
            // panel has collapsed to adjacent floats
            heap.push(worst);
            break;
        }
        let (lv, le) = gk21(f, worst.a, mid);
        let (rv, re) = gk21(f, mid, worst.b);
        if !(lv.is_finite() && rv.is_finite() && le.is_finite() && re.is_finite()) {
            return Err(QuadFailure::NonFinite);
        }
        total += lv + rv - worst.value;
        total_err += le + re - worst.error;
        heap.push(Panel {
            a: worst.a,
            b: mid,
            value: lv,
            error: le,
        });
        heap.push(Panel {
            a: mid,
            b: worst.b,
            value: rv,
            error: re,
        });
        splits += 1;
    }
    // re-sum to shed accumulated cancellation in the running totals
    let estimate: f64 = heap.iter().map(|p| p.value).sum();
    let error: f64 = heap.iter().map(|p| p.error).sum();
    if error <= cfg.abs_tol.max(cfg.rel_tol * estimate.abs()) {
        return Ok(estimate);
    }
    Err(QuadFailure::NotConverged { estimate, error })
}

/// `∫_0^upper g(u) du` for `g(u) ~ u^{-exponent}` as `u → 0`, `exponent < 1`.
///
/// With substitution enabled the integral becomes
/// `∫_0^1 g(U v^r) r U v^{r-1} dv` with `r = 1/(1 - exponent)`, which removes
/// the leading power singularity.
pub(crate) fn integrate_from_singular_origin<F: Fn(f64) -> f64>(
    g: &F,
    upper: f64,
    exponent: f64,
    cfg: &QuadratureConfig,
) -> std::result::Result<f64, QuadFailure> {
    if upper == 0.0 {
        return Ok(0.0);
    }
    if exponent <= 0.0 || !cfg.singularity_substitution {
        return adaptive(g, 0.0, upper, cfg);
    }
    let r = 1.0 / (1.0 - exponent);
    let h = |v: f64| {
        if v <= 0.0 {
            return 0.0;
        }
        let vr1 = v.powf(r - 1.0);
        g(upper * vr1 * v) * r * upper * vr1
    };
    adaptive(&h, 0.0, 1.0, cfg)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` by Newton iteration on `P_n`.
pub(crate) fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pn1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}
