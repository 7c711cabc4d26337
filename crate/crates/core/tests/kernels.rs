use mvsve::kernels::{
    certify, check_short_integrability, integrate_abs_power, p_min, CertifyOptions, KernelSpec,
    QuadratureConfig,
};

fn certify_diffusion(k: &KernelSpec, eps: f64) -> mvsve::KernelCertificate {
    let opts = CertifyOptions::new(1.0, 2.0, vec![eps]);
    certify(&KernelSpec::Constant { c: 1.0 }, k, &opts).unwrap().1
}

#[test]
fn fractional_quarter_gets_one_twelfth() {
    let c = certify_diffusion(&KernelSpec::Fractional { c: 1.0, alpha: 0.25 }, 1.0);
    assert!(c.is_certified(), "{:?}", c.reasons);
    // (1 - α(2+ε)) / (2+ε) = 0.25 / 3
    assert!((c.gamma.unwrap() - 1.0 / 12.0).abs() < 1e-12);
    assert_eq!(c.epsilon, Some(1.0));
    let pm = c.p_min.unwrap();
    assert!(pm > f64::max(5.0 * 12.0, 6.0) - 1e-12);
    assert!((pm - p_min(2.0, 1.0 / 12.0, 1.0)).abs() < 1e-9);
    assert!(c.worst_residual.unwrap() <= 1e-12);
}

#[test]
fn gamma_kernel_gets_one_fifth() {
    let c = certify_diffusion(&KernelSpec::Gamma { alpha: 0.8, beta: 1.0 }, 0.5);
    assert!(c.is_certified(), "{:?}", c.reasons);
    // (1 - (1 - α)(2 + ε)) / (2 + ε) = 0.5 / 2.5
    assert!((c.gamma.unwrap() - 0.2).abs() < 1e-12);
}

#[test]
fn constant_kernel_gets_one_over_two_plus_eps() {
    for eps in [0.5, 1.0, 2.0] {
        let c = certify_diffusion(&KernelSpec::Constant { c: 3.0 }, eps);
        assert!(c.is_certified());
        assert!((c.gamma.unwrap() - 1.0 / (2.0 + eps)).abs() < 1e-12, "ε = {eps}");
    }
}

#[test]
fn strongly_singular_fractional_is_rejected() {
    let c = certify_diffusion(&KernelSpec::Fractional { c: 1.0, alpha: 0.6 }, 1.0);
    assert!(!c.is_certified());
    assert!(c.gamma.is_none());
    assert!(c.reasons.iter().any(|r| r.contains("diverg")), "{:?}", c.reasons);
}

#[test]
fn certified_kernel_is_short_integrable() {
    let c = certify_diffusion(&KernelSpec::Fractional { c: 1.0, alpha: 0.25 }, 1.0);
    let times: Vec<f64> = (1..=40).map(|k| 2f64.powi(-k / 4)).collect();
    let worst = check_short_integrability(&c, &times, &QuadratureConfig::default()).unwrap();
    assert!(worst <= 1.0 + 1e-9, "{worst}");
}

#[test]
fn certificates_are_reproducible() {
    let k = KernelSpec::Gamma { alpha: 0.75, beta: 1.0 };
    let a = certify_diffusion(&k, 1.0);
    let b = certify_diffusion(&k, 1.0);
    assert_eq!(a, b);
    assert_eq!(a.grid_hash, b.grid_hash);
}

#[test]
fn divergent_power_integral() {
    let k = KernelSpec::Fractional { c: 1.0, alpha: 0.6 };
    let err = integrate_abs_power(&k, 0.9, 1.0, 1.0, 3.0, &QuadratureConfig::default()).unwrap_err();
    assert!(matches!(err, mvsve::Error::Divergence(_)));
}
