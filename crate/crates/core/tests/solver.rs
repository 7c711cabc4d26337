use mvsve::kernels::{KernelSpec, QuadratureConfig};
use mvsve::models::ModelSpec;
use mvsve::solver::{
    precompute_weights, reconstruct, simulate, simulate_kernels, InitialLaw, Partition, SimMode,
    SimulationOptions,
};
use mvsve::{CoefficientModel, EmpiricalMeasure, ParticleEnsemble};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn run(
    model: &ModelSpec,
    kb: &KernelSpec,
    ks: &KernelSpec,
    steps: usize,
    initial: &InitialLaw,
    opts: &SimulationOptions,
) -> ParticleEnsemble {
    let p = Partition::uniform(1.0, steps).unwrap();
    simulate_kernels(model, kb, ks, &p, &QuadratureConfig::default(), initial, opts).unwrap()
}

fn terminal(ens: &ParticleEnsemble) -> Vec<f64> {
    (0..ens.particles).map(|n| ens.value(n, ens.steps())[0]).collect()
}

/// Sample mean of `v` and its standard error.
fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

#[test]
fn worker_count_does_not_change_results() {
    let model = ModelSpec::ScalarInteraction {
        beta: -0.5,
        vol_base: 0.3,
        vol_slope: 0.2,
        vol_cap: 2.0,
    };
    let kf = KernelSpec::Fractional { c: 1.0, alpha: 0.25 };
    let init = InitialLaw::Gaussian { mean: vec![0.1], cov: vec![vec![0.2]] };
    for mode in [SimMode::IntegratedKernel, SimMode::LeftPoint, SimMode::VarianceMatched] {
        let opts = SimulationOptions::new(300, 17, mode);
        let runs: Vec<ParticleEnsemble> = [1, 4, 8]
            .iter()
            .map(|&threads| {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()
                    .unwrap()
                    .install(|| run(&model, &kf, &kf, 40, &init, &opts))
            })
            .collect();
        assert_eq!(runs[0], runs[1], "{mode}");
        assert_eq!(runs[0], runs[2], "{mode}");
    }
}

#[test]
fn permuting_labels_permutes_paths() {
    let model = ModelSpec::MeanFieldOu { theta: 1.0, sigma0: 0.7, dim: 2 };
    let k = KernelSpec::Gamma { alpha: 0.8, beta: 1.0 };
    let init = InitialLaw::Gaussian {
        mean: vec![0.0, 1.0],
        cov: vec![vec![1.0, 0.3], vec![0.3, 0.5]],
    };
    let n = 50;
    let base = run(&model, &k, &k, 20, &init, &SimulationOptions::new(n, 5, SimMode::IntegratedKernel));
    let perm: Vec<u64> = (0..n as u64).map(|i| (i * 17 + 3) % n as u64).collect();
    let mut opts = SimulationOptions::new(n, 5, SimMode::IntegratedKernel);
    opts.labels = Some(perm.clone());
    let permuted = run(&model, &k, &k, 20, &init, &opts);
    for (slot, &label) in perm.iter().enumerate() {
        let a = permuted.path(slot);
        let b = base.path(label as usize);
        for (x, y) in a.iter().zip(b) {
            // the empirical mean is summed in a different order
            assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()), "{x} vs {y}");
        }
    }
}

/// Plain Euler-Maruyama for `dX = b(X, L(X)) dt + σ(X, L(X)) dB`, drawing
/// increments from the same ChaCha8 addressing as the solver.
fn euler_maruyama(model: &ModelSpec, x0: &[f64], steps: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = x0.len();
    let dt = 1.0 / steps as f64;
    let mut paths = vec![vec![0.0; steps + 1]; n];
    let mut x = x0.to_vec();
    for (p, &v) in paths.iter_mut().zip(x0) {
        p[0] = v;
    }
    for i in 0..steps {
        let t = i as f64 * dt;
        let mu = EmpiricalMeasure::new(1, x.clone()).unwrap();
        let mut next = x.clone();
        for (k, xn) in next.iter_mut().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            rng.set_word_pos(i as u128 * (1 << 24));
            let z: f64 = StandardNormal.sample(&mut rng);
            let (mut b, mut s) = ([0.0], [0.0]);
            model.drift(t, &[x[k]], &mu, &mut b);
            model.diffusion(t, &[x[k]], &mu, &mut s);
            *xn = x[k] + dt * b[0];
            *xn += s[0] * (dt.sqrt() * z);
        }
        x = next;
        for (p, &v) in paths.iter_mut().zip(&x) {
            p[i + 1] = v;
        }
    }
    paths
}

#[test]
fn constant_kernel_scheme_is_euler_maruyama() {
    let k = KernelSpec::Constant { c: 1.0 };
    let atoms: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64 * 0.3 - 1.0]).collect();
    let init = InitialLaw::Empirical { atoms };
    for model in [
        ModelSpec::MeanFieldOu { theta: 1.3, sigma0: 0.8, dim: 1 },
        ModelSpec::ScalarInteraction {
            beta: 0.4,
            vol_base: 0.2,
            vol_slope: 0.5,
            vol_cap: 3.0,
        },
    ] {
        let ens = run(&model, &k, &k, 60, &init, &SimulationOptions::new(200, 9, SimMode::IntegratedKernel));
        let x0: Vec<f64> = (0..ens.particles).map(|n| ens.value(n, 0)[0]).collect();
        let reference = euler_maruyama(&model, &x0, 60, 9);
        for (n, path) in reference.iter().enumerate() {
            for (j, want) in path.iter().enumerate() {
                let got = ens.value(n, j)[0];
                assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "n={n} j={j}: {got} vs {want}");
            }
        }
    }
}

#[test]
fn brownian_terminal_moments() {
    let model = ModelSpec::PureNoise { sigma: 1.0, dim: 1 };
    let k = KernelSpec::Constant { c: 1.0 };
    let var0 = 0.5;
    let init = InitialLaw::Gaussian { mean: vec![0.0], cov: vec![vec![var0]] };
    let ens = run(&model, &k, &k, 50, &init, &SimulationOptions::new(5000, 21, SimMode::IntegratedKernel));
    let xt = terminal(&ens);
    let (m2, se2) = mean_se(&xt.iter().map(|x| x * x).collect::<Vec<_>>());
    let (m4, se4) = mean_se(&xt.iter().map(|x| x.powi(4)).collect::<Vec<_>>());
    let v = var0 + 1.0;
    assert!((m2 - v).abs() <= 3.0 * se2, "{m2} ± {se2}");
    assert!((m4 - 3.0 * v * v).abs() <= 3.0 * se4, "{m4} ± {se4}");
}

#[test]
fn mean_field_ou_tracks_variance_ode() {
    let model = ModelSpec::MeanFieldOu { theta: 1.0, sigma0: 1.0, dim: 1 };
    let k = KernelSpec::Constant { c: 1.0 };
    let init = InitialLaw::Point { value: vec![0.0] };
    let ens = run(&model, &k, &k, 50, &init, &SimulationOptions::new(4000, 4, SimMode::IntegratedKernel));
    for j in [10, 25, 50] {
        let t = ens.times()[j];
        let xs: Vec<f64> = (0..ens.particles).map(|n| ens.value(n, j)[0]).collect();
        let (m, se_m) = mean_se(&xs);
        let (v, se_v) = mean_se(&xs.iter().map(|x| (x - m).powi(2)).collect::<Vec<_>>());
        assert!(m.abs() <= 3.0 * se_m, "t={t}: mean {m}");
        let target = (1.0 - (-2.0 * t).exp()) / 2.0;
        assert!((v - target).abs() <= 3.0 * se_v, "t={t}: var {v} vs {target} ± {se_v}");
    }
}

#[test]
fn variance_matched_fractional_terminal_variance() {
    let model = ModelSpec::PureNoise { sigma: 1.0, dim: 1 };
    let kb = KernelSpec::Constant { c: 1.0 };
    let ks = KernelSpec::Fractional { c: 1.0, alpha: 0.25 };
    let init = InitialLaw::Point { value: vec![0.0] };
    let ens = run(&model, &kb, &ks, 64, &init, &SimulationOptions::new(4000, 8, SimMode::VarianceMatched));
    let xt = terminal(&ens);
    let (v, se) = mean_se(&xt.iter().map(|x| x * x).collect::<Vec<_>>());
    // ∫_0^1 (1 - s)^{-1/2} ds
    let exact = 2.0;
    assert!((v - exact).abs() <= 3.0 * se, "{v} vs {exact} ± {se}");
}

#[test]
fn zero_coefficients_freeze_the_state() {
    let model = ModelSpec::PureNoise { sigma: 0.0, dim: 2 };
    let k = KernelSpec::Fractional { c: 1.0, alpha: 0.4 };
    let init = InitialLaw::Gaussian { mean: vec![1.0, -1.0], cov: vec![vec![1.0, 0.0], vec![0.0, 1.0]] };
    let ens = run(&model, &k, &k, 16, &init, &SimulationOptions::new(10, 2, SimMode::LeftPoint));
    for n in 0..ens.particles {
        for j in 0..=ens.steps() {
            assert_eq!(ens.value(n, j), ens.value(n, 0));
        }
    }
}

#[test]
fn blow_up_is_reported_with_its_step() {
    let model = ModelSpec::ScalarInteraction {
        beta: 1e300,
        vol_base: 0.0,
        vol_slope: 0.0,
        vol_cap: 1.0,
    };
    let k = KernelSpec::Constant { c: 1.0 };
    let init = InitialLaw::Empirical { atoms: vec![vec![-1e10], vec![1e10]] };
    let p = Partition::uniform(1.0, 10).unwrap();
    let w = precompute_weights(&k, &k, &p, &QuadratureConfig::default()).unwrap();
    let err = simulate(&model, &w, &init, &SimulationOptions::new(8, 1, SimMode::IntegratedKernel)).unwrap_err();
    assert!(matches!(err, mvsve::Error::NonFiniteState { .. }), "{err}");
}

#[test]
fn reconstruction_holds_across_kernels_and_modes() {
    let model = ModelSpec::ScalarInteraction {
        beta: -0.3,
        vol_base: 0.5,
        vol_slope: 0.1,
        vol_cap: f64::INFINITY,
    };
    let init = InitialLaw::Point { value: vec![0.5] };
    let kernels = [
        KernelSpec::Fractional { c: 1.0, alpha: 0.25 },
        KernelSpec::Gamma { alpha: 0.75, beta: 1.0 },
        KernelSpec::Constant { c: 2.0 },
    ];
    for k in &kernels {
        for mode in [SimMode::IntegratedKernel, SimMode::LeftPoint, SimMode::VarianceMatched] {
            let p = Partition::uniform(1.0, 32).unwrap();
            let w = precompute_weights(k, k, &p, &QuadratureConfig::default()).unwrap();
            let ens = simulate(&model, &w, &init, &SimulationOptions::new(30, 6, mode)).unwrap();
            let r = reconstruct(&ens, &w).unwrap();
            assert!(r.passes && r.max_residual <= 1e-10, "{} {mode}: {}", k.label(), r.max_residual);
        }
    }
}

fn kernel_strategy() -> impl Strategy<Value = KernelSpec> {
    prop_oneof![
        (0.1f64..3.0, 0.05f64..0.49).prop_map(|(c, alpha)| KernelSpec::Fractional { c, alpha }),
        (0.55f64..0.99, 0.0f64..3.0).prop_map(|(alpha, beta)| KernelSpec::Gamma { alpha, beta }),
        (-2.0f64..2.0).prop_map(|c| KernelSpec::Constant { c }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cauchy_schwarz_weight_invariant(
        k in kernel_strategy(),
        gaps in proptest::collection::vec(0.05f64..1.0, 2..12),
    ) {
        let mut times = vec![0.0];
        for g in &gaps {
            times.push(times.last().unwrap() + g);
        }
        let p = Partition::from_times(times).unwrap();
        let w = precompute_weights(&k, &k, &p, &QuadratureConfig::default()).unwrap();
        for i in 0..p.steps() {
            for j in i + 1..=p.steps() {
                let (v, q) = (w.v_sigma(i, j), w.q_sigma(i, j));
                prop_assert!(q >= 0.0);
                prop_assert!(q * p.dt(i) >= v * v * (1.0 - 1e-9), "i={} j={} q={} v={}", i, j, q, v);
            }
        }
        prop_assert!(w.cauchy_schwarz_defect() <= 1e-9);
    }
}
