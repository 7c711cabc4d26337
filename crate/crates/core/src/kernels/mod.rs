//! Volterra kernels `K(s, t)` on the triangle `0 ≤ s < t ≤ T`.
//!
//! Kernels may be singular on the diagonal (`Fractional`, `Gamma`). All
//! integrals are taken in the lag variable `u = t - s`, where the singularity
//! sits at `u = 0`; catalog kernels use closed-form antiderivatives whenever
//! one exists.

mod certify;
pub(crate) mod quadrature;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use quadrature::{adaptive, integrate_from_singular_origin, QuadFailure};

pub use certify::{
    certify, check_short_integrability, default_gamma_grid, dyadic_pair_grid, p_min, CertifyOptions,
    KernelCertificate, KernelRole, Verdict,
};
pub use quadrature::QuadratureConfig;

/// One term `c · exp(-θ u)` of an exponential-sum kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpTerm {
    pub c: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum KernelSpec {
    /// `K ≡ c`.
    Constant { c: f64 },
    /// Riemann–Liouville type `c (t - s)^{-α}`, `α ∈ (0, 1)`.
    Fractional { c: f64, alpha: f64 },
    /// `exp(-β (t - s)) (t - s)^{α - 1} / Γ(α)`.
    Gamma { alpha: f64, beta: f64 },
    /// `Σ c_i exp(-θ_i (t - s))`.
    ExpSum { terms: Vec<ExpTerm> },
    /// `K̃(t - s)` for a Lipschitz `K̃` sampled uniformly on `[0, horizon]`
    /// and linearly interpolated.
    LipschitzConvolution {
        horizon: f64,
        samples: Vec<f64>,
        lipschitz: f64,
    },
    /// Values on a grid of `Δ_T`: `columns[j][i] = K(times[i], times[j])`
    /// for `i ≤ j`. Linear in `s` along a column, linear in `t` between columns.
    Tabulated {
        times: Vec<f64>,
        columns: Vec<Vec<f64>>,
    },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            KernelSpec::Constant { c } => {
                if !c.is_finite() {
                    return invalid("constant kernel value must be finite");
                }
            }
            KernelSpec::Fractional { c, alpha } => {
                if !c.is_finite() {
                    return invalid("fractional kernel scale must be finite");
                }
                if !(*alpha > 0.0 && *alpha < 1.0) {
                    return invalid(format!("fractional exponent must lie in (0,1), got {alpha}"));
                }
            }
            KernelSpec::Gamma { alpha, beta } => {
                if !(*alpha > 0.0 && *alpha < 1.0) {
                    return invalid(format!("gamma kernel α must lie in (0,1), got {alpha}"));
                }
                if !(*beta >= 0.0) || !beta.is_finite() {
                    return invalid(format!("gamma kernel β must be ≥ 0, got {beta}"));
                }
            }
            KernelSpec::ExpSum { terms } => {
                if terms.is_empty() {
                    return invalid("exponential-sum kernel needs at least one term");
                }
                for term in terms {
                    if !(term.c > 0.0) || !term.c.is_finite() {
                        return invalid(format!("exponential-sum weights must be > 0, got {}", term.c));
                    }
                    if !(term.theta >= 0.0) || !term.theta.is_finite() {
                        return invalid(format!("exponential-sum rates must be ≥ 0, got {}", term.theta));
                    }
                }
            }
            KernelSpec::LipschitzConvolution {
                horizon,
                samples,
                lipschitz,
            } => {
                if !(*horizon > 0.0) {
                    return invalid("kernel horizon must be positive");
                }
                if samples.len() < 2 || samples.iter().any(|v| !v.is_finite()) {
                    return invalid("Lipschitz kernel needs at least two finite samples");
                }
                let h = horizon / (samples.len() - 1) as f64;
                let steepest = samples
                    .windows(2)
                    .map(|w| (w[1] - w[0]).abs() / h)
                    .fold(0.0, f64::max);
                if steepest > lipschitz * (1.0 + 1e-12) {
                    return invalid(format!(
                        "sampled slope {steepest} exceeds declared Lipschitz bound {lipschitz}"
                    ));
                }
            }
            KernelSpec::Tabulated { times, columns } => {
                if times.len() < 2 || times[0] != 0.0 {
                    return invalid("tabulated kernel grid must start at 0 and have ≥ 2 times");
                }
                if times.windows(2).any(|w| !(w[1] > w[0])) {
                    return invalid("tabulated kernel times must be strictly increasing");
                }
                if columns.len() != times.len() {
                    return invalid("tabulated kernel needs one column per grid time");
                }
                for (j, col) in columns.iter().enumerate() {
                    if col.len() != j + 1 || col.iter().any(|v| !v.is_finite()) {
                        return invalid(format!(
                            "column {j} must hold {} finite values covering s ≤ t_j",
                            j + 1
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Largest time the kernel is defined for, if it carries one.
    pub fn horizon(&self) -> Option<f64> {
        match self {
            KernelSpec::LipschitzConvolution { horizon, .. } => Some(*horizon),
            KernelSpec::Tabulated { times, .. } => times.last().copied(),
            _ => None,
        }
    }

    pub fn is_convolution(&self) -> bool {
        !matches!(self, KernelSpec::Tabulated { .. })
    }

    /// Exponent `a` with `|K(s,t)| ~ (t-s)^{-a}` on the diagonal; 0 when bounded.
    pub fn singular_exponent(&self) -> f64 {
        match self {
            KernelSpec::Fractional { alpha, .. } => *alpha,
            KernelSpec::Gamma { alpha, .. } => 1.0 - alpha,
            _ => 0.0,
        }
    }

    pub fn label(&self) -> String {
        match self {
            KernelSpec::Constant { c } => format!("constant(c={c})"),
            KernelSpec::Fractional { c, alpha } => format!("fractional(c={c},alpha={alpha})"),
            KernelSpec::Gamma { alpha, beta } => format!("gamma(alpha={alpha},beta={beta})"),
            KernelSpec::ExpSum { terms } => format!("exp_sum({} terms)", terms.len()),
            KernelSpec::LipschitzConvolution { samples, .. } => {
                format!("lipschitz_convolution({} samples)", samples.len())
            }
            KernelSpec::Tabulated { times, .. } => format!("tabulated({} times)", times.len()),
        }
    }

    /// `K(s, t)` for `0 ≤ s < t` (and `t ≤ horizon` when the kernel has one).
    pub fn eval(&self, s: f64, t: f64) -> Result<f64> {
        if !(s >= 0.0) || !(s < t) || !t.is_finite() {
            return Err(Error::Domain(format!(
                "kernel evaluated at (s, t) = ({s}, {t}); need 0 ≤ s < t"
            )));
        }
        if let Some(h) = self.horizon() {
            if t > h * (1.0 + 1e-12) {
                return Err(Error::Domain(format!("t = {t} exceeds kernel horizon {h}")));
            }
        }
        Ok(self.value(s, t))
    }

    /// Unchecked evaluation used in inner loops.
    pub(crate) fn value(&self, s: f64, t: f64) -> f64 {
        match self {
            KernelSpec::Tabulated { times, columns } => tabulated_value(times, columns, s, t),
            _ => self.lag_value(t - s),
        }
    }

    /// `K̃(u)` for convolution kernels.
    fn lag_value(&self, u: f64) -> f64 {
        match self {
            KernelSpec::Constant { c } => *c,
            KernelSpec::Fractional { c, alpha } => c * u.powf(-alpha),
            KernelSpec::Gamma { alpha, beta } => {
                (-beta * u).exp() * u.powf(alpha - 1.0) / libm::tgamma(*alpha)
            }
            KernelSpec::ExpSum { terms } => terms.iter().map(|e| e.c * (-e.theta * u).exp()).sum(),
            KernelSpec::LipschitzConvolution {
                horizon, samples, ..
            } => {
                let n = samples.len() - 1;
                let h = horizon / n as f64;
                let x = (u / h).clamp(0.0, n as f64);
                let k = (x.floor() as usize).min(n - 1);
                let w = x - k as f64;
                samples[k] * (1.0 - w) + samples[k + 1] * w
            }
            KernelSpec::Tabulated { .. } => unreachable!("tabulated kernels are not convolutions"),
        }
    }

    /// `K(t - u, t)`, taking the lag directly for convolution kernels so
    /// that `u` near 0 is not lost to rounding in `t - u`.
    fn value_at_lag(&self, t: f64, u: f64) -> f64 {
        match self {
            KernelSpec::Tabulated { times, columns } => tabulated_value(times, columns, t - u, t),
            _ => self.lag_value(u),
        }
    }

    /// `K(s, t') - K(s, t)` with `u = t - s` and `h = t' - t`, written to avoid
    /// cancellation for the power-law kernels when `h ≪ u`.
    fn increment_value(&self, u: f64, t: f64, t2: f64) -> f64 {
        let h = t2 - t;
        match self {
            KernelSpec::Fractional { c, alpha } => {
                c * u.powf(-alpha) * (-alpha * (h / u).ln_1p()).exp_m1()
            }
            KernelSpec::Gamma { alpha, beta } => {
                let base = (-beta * u).exp() * u.powf(alpha - 1.0) / libm::tgamma(*alpha);
                base * (-beta * h + (alpha - 1.0) * (h / u).ln_1p()).exp_m1()
            }
            _ => self.value_at_lag(t2, u + h) - self.value_at_lag(t, u),
        }
    }

    fn check_triangle(&self, a: f64, b: f64, t: f64) -> Result<()> {
        if !(0.0 <= a && a <= b && b <= t) || !t.is_finite() {
            return Err(Error::Domain(format!(
                "integration bounds need 0 ≤ a ≤ b ≤ t, got a={a}, b={b}, t={t}"
            )));
        }
        if let Some(h) = self.horizon() {
            if t > h * (1.0 + 1e-12) {
                return Err(Error::Domain(format!("t = {t} exceeds kernel horizon {h}")));
            }
        }
        Ok(())
    }

    fn closed_form_abs_power(&self, u0: f64, u1: f64, q: f64) -> Option<Result<f64>> {
        match self {
            KernelSpec::Constant { c } => Some(Ok(c.abs().powf(q) * (u1 - u0))),
            KernelSpec::Fractional { c, alpha } => {
                Some(power_integral(c.abs().powf(q), alpha * q, u0, u1))
            }
            KernelSpec::ExpSum { terms } => {
                if q == 1.0 {
                    Some(Ok(terms.iter().map(|e| e.c * exp_integral(e.theta, u0, u1)).sum()))
                } else if q == 2.0 {
                    let mut acc = 0.0;
                    for a in terms {
                        for b in terms {
                            acc += a.c * b.c * exp_integral(a.theta + b.theta, u0, u1);
                        }
                    }
                    Some(Ok(acc))
                } else if terms.len() == 1 {
                    let e = terms[0];
                    Some(Ok(e.c.powf(q) * exp_integral(q * e.theta, u0, u1)))
                } else {
                    None
                }
            }
            _ => None,
        }
    }

    fn closed_form_signed(&self, u0: f64, u1: f64) -> Option<Result<f64>> {
        match self {
            KernelSpec::Constant { c } => Some(Ok(c * (u1 - u0))),
            KernelSpec::Fractional { c, alpha } => {
                Some(power_integral(1.0, *alpha, u0, u1).map(|v| c * v))
            }
            KernelSpec::ExpSum { terms } => Some(Ok(terms
                .iter()
                .map(|e| e.c * exp_integral(e.theta, u0, u1))
                .sum())),
            _ => None,
        }
    }
}

fn tabulated_column(times: &[f64], col: &[f64], j: usize, s: f64) -> f64 {
    if s >= times[j] {
        return col[j];
    }
    // times[i] ≤ s < times[i+1], i < j
    let i = times[..=j].partition_point(|&x| x <= s).saturating_sub(1);
    let w = (s - times[i]) / (times[i + 1] - times[i]);
    col[i] * (1.0 - w) + col[i + 1] * w
}

fn tabulated_value(times: &[f64], columns: &[Vec<f64>], s: f64, t: f64) -> f64 {
    let last = times.len() - 1;
    let j = times.partition_point(|&x| x <= t).saturating_sub(1).min(last);
    if j == last || t == times[j] {
        return tabulated_column(times, &columns[j], j, s);
    }
    let w = (t - times[j]) / (times[j + 1] - times[j]);
    tabulated_column(times, &columns[j], j, s) * (1.0 - w)
        + tabulated_column(times, &columns[j + 1], j + 1, s) * w
}

/// `∫_{u0}^{u1} u^{-a} du`.
fn power_integral(scale: f64, a: f64, u0: f64, u1: f64) -> Result<f64> {
    let e = 1.0 - a;
    if u0 == 0.0 {
        if e <= 0.0 {
            return Err(Error::Divergence(format!(
                "∫_0 u^(-{a}) du diverges: exponent test 1 - {a} = {e} ≤ 0"
            )));
        }
        return Ok(scale * u1.powf(e) / e);
    }
    if e == 0.0 {
        return Ok(scale * (u1 / u0).ln());
    }
    // u0^e (exp(e ln(u1/u0)) - 1) / e keeps precision when u1 ≈ u0
    Ok(scale * u0.powf(e) * (e * (u1 / u0).ln()).exp_m1() / e)
}

/// `∫_{u0}^{u1} exp(-r u) du`.
fn exp_integral(rate: f64, u0: f64, u1: f64) -> f64 {
    if rate == 0.0 {
        return u1 - u0;
    }
    (-rate * u0).exp() * (-(-rate * (u1 - u0)).exp_m1()) / rate
}

/// Integrates `g(u)` over `[u0, u1]`, with `g ~ u^{-exponent}` near 0.
fn integrate_lag<F: Fn(f64) -> f64>(
    g: &F,
    u0: f64,
    u1: f64,
    exponent: f64,
    cfg: &QuadratureConfig,
    what: &str,
) -> Result<f64> {
    if u0 > 0.0 {
        return adaptive(g, u0, u1, cfg).map_err(|e| quad_error(e, what));
    }
    if exponent >= 1.0 {
        let probe = adaptive(g, 0.0, u1, cfg);
        let observed = match probe {
            Ok(_) => "refinement stalled on the singular panel",
            Err(QuadFailure::NotConverged { .. }) => "adaptive refinement did not converge",
            Err(QuadFailure::NonFinite) => "integrand is non-finite",
        };
        return Err(Error::Divergence(format!(
            "{what}: singular exponent {exponent} ≥ 1 at the diagonal (exponent test 1 - a = {} ≤ 0); {observed}",
            1.0 - exponent
        )));
    }
    integrate_from_singular_origin(g, u1, exponent, cfg).map_err(|e| quad_error(e, what))
}

fn quad_error(e: QuadFailure, what: &str) -> Error {
    match e {
        QuadFailure::NotConverged { estimate, error } => Error::Divergence(format!(
            "{what}: adaptive quadrature did not converge (estimate {estimate:e}, error {error:e})"
        )),
        QuadFailure::NonFinite => Error::Divergence(format!("{what}: non-finite integrand")),
    }
}

/// `∫_a^b |K(s, t)|^q ds` for `0 ≤ a ≤ b ≤ t`, `q ≥ 1`.
pub fn integrate_abs_power(
    kernel: &KernelSpec,
    a: f64,
    b: f64,
    t: f64,
    q: f64,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    kernel.check_triangle(a, b, t)?;
    if !(q >= 1.0) || !q.is_finite() {
        return Err(Error::Domain(format!("power q must be ≥ 1, got {q}")));
    }
    if a == b {
        return Ok(0.0);
    }
    let (u0, u1) = (t - b, t - a);
    if let Some(v) = kernel.closed_form_abs_power(u0, u1, q) {
        return v;
    }
    let g = |u: f64| kernel.value_at_lag(t, u).abs().powf(q);
    integrate_lag(
        &g,
        u0,
        u1,
        kernel.singular_exponent() * q,
        cfg,
        "∫|K(s,t)|^q ds",
    )
}

/// `∫_a^b K(s, t) ds` (signed).
pub fn integrate(
    kernel: &KernelSpec,
    a: f64,
    b: f64,
    t: f64,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    kernel.check_triangle(a, b, t)?;
    if a == b {
        return Ok(0.0);
    }
    let (u0, u1) = (t - b, t - a);
    if let Some(v) = kernel.closed_form_signed(u0, u1) {
        return v;
    }
    let g = |u: f64| kernel.value_at_lag(t, u);
    integrate_lag(&g, u0, u1, kernel.singular_exponent(), cfg, "∫K(s,t) ds")
}

/// `∫_0^t |K(s, t') - K(s, t)|^q ds` for `0 ≤ t ≤ t'`, `q ≥ 1`.
pub fn integrate_increment(
    kernel: &KernelSpec,
    t: f64,
    t2: f64,
    q: f64,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    kernel.check_triangle(0.0, t, t2)?;
    if !(q >= 1.0) || !q.is_finite() {
        return Err(Error::Domain(format!("power q must be ≥ 1, got {q}")));
    }
    if t == t2 || t == 0.0 || matches!(kernel, KernelSpec::Constant { .. }) {
        return Ok(0.0);
    }
    let g = |u: f64| kernel.increment_value(u, t, t2).abs().powf(q);
    integrate_lag(
        &g,
        0.0,
        t,
        kernel.singular_exponent() * q,
        cfg,
        "∫|K(s,t')-K(s,t)|^q ds",
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> QuadratureConfig {
        QuadratureConfig::default()
    }

    /// Γ(x) from the Stirling series after shifting the argument past 20.
    fn gamma_oracle(x: f64) -> f64 {
        let mut shift = 1.0;
        let mut z = x;
        while z < 20.0 {
            shift *= z;
            z += 1.0;
        }
        let series = 1.0 / (12.0 * z) - 1.0 / (360.0 * z.powi(3)) + 1.0 / (1260.0 * z.powi(5))
            - 1.0 / (1680.0 * z.powi(7));
        let ln_gamma = (z - 0.5) * z.ln() - z + 0.5 * (2.0 * std::f64::consts::PI).ln() + series;
        ln_gamma.exp() / shift
    }

    #[test]
    fn eval_examples() {
        let k = KernelSpec::Constant { c: 1.0 };
        assert_eq!(k.eval(0.3, 0.7).unwrap(), 1.0);
        let k = KernelSpec::Fractional { c: 1.0, alpha: 0.5 };
        assert_eq!(k.eval(0.0, 0.25).unwrap(), 2.0);
        let k = KernelSpec::Gamma {
            alpha: 0.75,
            beta: 1.0,
        };
        let expected = (-1.0f64).exp() / gamma_oracle(0.75);
        assert!((k.eval(0.0, 1.0).unwrap() - expected).abs() < 1e-13);
    }

    #[test]
    fn gamma_oracle_is_sane() {
        assert!((gamma_oracle(0.5) - std::f64::consts::PI.sqrt()).abs() < 1e-13);
        assert!((gamma_oracle(5.0) - 24.0).abs() < 1e-11);
    }

    #[test]
    fn eval_rejects_points_off_the_triangle() {
        let k = KernelSpec::Fractional { c: 1.0, alpha: 0.5 };
        assert!(matches!(k.eval(0.5, 0.5), Err(Error::Domain(_))));
        assert!(matches!(k.eval(0.6, 0.5), Err(Error::Domain(_))));
        assert!(matches!(k.eval(-0.1, 0.5), Err(Error::Domain(_))));
        let lip = KernelSpec::LipschitzConvolution {
            horizon: 1.0,
            samples: vec![1.0, 0.5],
            lipschitz: 0.5,
        };
        assert!(matches!(lip.eval(0.0, 2.0), Err(Error::Domain(_))));
    }

    #[test]
    fn validation_catches_bad_parameters() {
        assert!(KernelSpec::Fractional { c: 1.0, alpha: 1.0 }.validate().is_err());
        assert!(KernelSpec::Fractional { c: 1.0, alpha: 0.0 }.validate().is_err());
        assert!(KernelSpec::ExpSum {
            terms: vec![ExpTerm { c: -1.0, theta: 1.0 }]
        }
        .validate()
        .is_err());
        assert!(KernelSpec::LipschitzConvolution {
            horizon: 1.0,
            samples: vec![0.0, 2.0],
            lipschitz: 1.0
        }
        .validate()
        .is_err());
        assert!(KernelSpec::Tabulated {
            times: vec![0.0, 1.0],
            columns: vec![vec![1.0]]
        }
        .validate()
        .is_err());
    }

    #[test]
    fn abs_power_examples() {
        let k = KernelSpec::Fractional { c: 1.0, alpha: 0.25 };
        let v = integrate_abs_power(&k, 0.0, 1.0, 1.0, 1.0, &cfg()).unwrap();
        assert!((v - 4.0 / 3.0).abs() < 1e-14);

        let k = KernelSpec::Constant { c: 2.0 };
        let v = integrate_abs_power(&k, 0.2, 0.5, 1.0, 2.0, &cfg()).unwrap();
        assert!((v - 1.2).abs() < 1e-14);
    }

    #[test]
    fn abs_power_divergence_is_reported() {
        let k = KernelSpec::Fractional { c: 1.0, alpha: 0.6 };
        let r = integrate_abs_power(&k, 0.9, 1.0, 1.0, 3.0, &cfg());
        assert!(matches!(r, Err(Error::Divergence(_))), "{r:?}");
        // the same integrand defeats plain adaptive refinement
        let g = |u: f64| u.powf(-1.8);
        assert!(matches!(
            adaptive(&g, 0.0, 0.1, &cfg()),
            Err(QuadFailure::NotConverged { .. })
        ));
        // away from the diagonal the integral is finite
        assert!(integrate_abs_power(&k, 0.0, 0.9, 1.0, 3.0, &cfg()).is_ok());

        let g = KernelSpec::Gamma {
            alpha: 0.3,
            beta: 1.0,
        };
        assert!(matches!(
            integrate_abs_power(&g, 0.0, 1.0, 1.0, 2.0, &cfg()),
            Err(Error::Divergence(_))
        ));
    }

    #[test]
    fn closed_form_matches_quadrature_for_fractional() {
        let k = KernelSpec::Fractional { c: 1.7, alpha: 0.3 };
        for &q in &[1.0, 1.5, 2.0, 3.0] {
            for &t in &[0.1, 0.5, 1.0] {
                let closed = integrate_abs_power(&k, 0.0, t, t, q, &cfg()).unwrap();
                let exact = 1.7f64.powf(q) * t.powf(1.0 - 0.3 * q) / (1.0 - 0.3 * q);
                assert!((closed - exact).abs() <= 1e-13 * exact);
                let g = |u: f64| (1.7 * u.powf(-0.3)).powf(q);
                let quad =
                    integrate_from_singular_origin(&g, t, 0.3 * q, &cfg()).unwrap();
                assert!((quad - exact).abs() <= 1e-10 * exact, "q={q} t={t}");
            }
        }
    }

    #[test]
    fn exp_sum_closed_forms_match_quadrature() {
        let k = KernelSpec::ExpSum {
            terms: vec![
                ExpTerm { c: 1.0, theta: 0.5 },
                ExpTerm { c: 0.5, theta: 3.0 },
            ],
        };
        for &q in &[1.0, 2.0] {
            let closed = integrate_abs_power(&k, 0.1, 0.8, 1.0, q, &cfg()).unwrap();
            let g = |u: f64| k.value(1.0 - u, 1.0).powf(q);
            let quad = adaptive(&g, 0.2, 0.9, &cfg()).unwrap();
            assert!((closed - quad).abs() < 1e-12, "q={q}");
        }
    }

    #[test]
    fn increment_examples() {
        let k = KernelSpec::Gamma {
            alpha: 0.8,
            beta: 1.0,
        };
        assert_eq!(integrate_increment(&k, 0.4, 0.4, 2.0, &cfg()).unwrap(), 0.0);
        let c = KernelSpec::Constant { c: 3.0 };
        assert_eq!(integrate_increment(&c, 0.2, 0.9, 2.0, &cfg()).unwrap(), 0.0);
    }

    /// Midpoint rule with 10⁶ panels after `u = t - s` and `u = v²`.
    fn increment_oracle(alpha: f64, t: f64, t2: f64, q: f64) -> f64 {
        let panels = 1_000_000;
        let vmax = t.sqrt();
        let dv = vmax / panels as f64;
        let mut acc = 0.0;
        for k in 0..panels {
            let v = (k as f64 + 0.5) * dv;
            let u = v * v;
            let d = (u + (t2 - t)).powf(-alpha) - u.powf(-alpha);
            acc += d.abs().powf(q) * 2.0 * v;
        }
        acc * dv
    }

    #[test]
    fn increment_matches_fixed_grid_oracle() {
        let k = KernelSpec::Fractional { c: 1.0, alpha: 0.25 };
        let v = integrate_increment(&k, 0.5, 1.0, 2.0, &cfg()).unwrap();
        let oracle = increment_oracle(0.25, 0.5, 1.0, 2.0);
        assert!((v - oracle).abs() <= 1e-6 * oracle, "{v} vs {oracle}");
    }

    #[test]
    fn tabulated_kernel_reproduces_linear_kernel() {
        // K(s,t) = 1 + s + 2t is bilinear, so interpolation is exact
        let times: Vec<f64> = (0..=4).map(|i| i as f64 * 0.25).collect();
        let columns: Vec<Vec<f64>> = times
            .iter()
            .enumerate()
            .map(|(j, &t)| times[..=j].iter().map(|&s| 1.0 + s + 2.0 * t).collect())
            .collect();
        let k = KernelSpec::Tabulated { times, columns };
        k.validate().unwrap();
        let v = k.eval(0.3, 0.8).unwrap();
        assert!((v - (1.0 + 0.3 + 1.6)).abs() < 1e-14);
        let integral = integrate(&k, 0.1, 0.6, 0.9, &cfg()).unwrap();
        let exact = 0.5 * (1.0 + 1.8) + 0.5 * (0.6f64.powi(2) - 0.1f64.powi(2));
        assert!((integral - exact).abs() < 1e-12);
    }

    #[test]
    fn lipschitz_kernel_interpolates() {
        let k = KernelSpec::LipschitzConvolution {
            horizon: 1.0,
            samples: vec![1.0, 0.5, 0.0],
            lipschitz: 1.0,
        };
        k.validate().unwrap();
        assert!((k.eval(0.2, 0.45).unwrap() - 0.75).abs() < 1e-14);
    }
}
