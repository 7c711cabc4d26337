use std::path::{Path, PathBuf};
use std::process::Command;

use mvsve::diagnostics::DiagnosticsReport;
use mvsve::KernelCertificate;
use mvsve_cli::config::ExperimentConfig;
use mvsve_cli::io::{read_ensemble, EnsembleMeta};
use proptest::prelude::*;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mvsve"))
}

fn run(dir: &Path, args: &[&str]) -> i32 {
    let out = bin().current_dir(dir).args(args).output().unwrap();
    if !out.status.success() {
        eprintln!(
            "{args:?}\nstdout:\n{}\nstderr:\n{}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        );
    }
    out.status.code().unwrap()
}

fn repo_configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

struct Exp {
    model: &'static str,
    kernel_b: &'static str,
    kernel_sigma: &'static str,
    steps: usize,
    particles: usize,
    initial: &'static str,
    extra: &'static str,
}

impl Default for Exp {
    fn default() -> Self {
        Self {
            model: "name = \"pure_noise\"\nsigma = 1.0",
            kernel_b: "type = \"constant\"\nc = 1.0",
            kernel_sigma: "type = \"constant\"\nc = 1.0",
            steps: 50,
            particles: 1000,
            initial: "type = \"point\"\nvalue = [0.0]",
            extra: "",
        }
    }
}

impl Exp {
    fn write(&self, dir: &Path, name: &str) -> PathBuf {
        let text = format!(
            "[model]\n{}\n\n[kernel_b]\n{}\n\n[kernel_sigma]\n{}\n\n[simulation]\nhorizon = 1.0\nsteps = {}\nparticles = {}\nseed = 3\n\n[initial]\n{}\n\n[output]\ndir = \"out\"\n{}\n",
            self.model, self.kernel_b, self.kernel_sigma, self.steps, self.particles, self.initial, self.extra
        );
        let path = dir.join(name);
        std::fs::write(&path, text).unwrap();
        path
    }
}

#[test]
fn shipped_configs_are_valid_and_round_trip() {
    let mut names: Vec<_> = std::fs::read_dir(repo_configs())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    names.sort();
    assert_eq!(names.len(), 3);
    let mut models = Vec::new();
    for path in names {
        let cfg = ExperimentConfig::load(&path).unwrap();
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, back, "{}", path.display());
        models.push(format!("{:?}", cfg.model).split_whitespace().next().unwrap().to_string());
    }
    models.sort();
    assert_eq!(models, ["MeanFieldOu", "PureNoise", "ScalarInteraction"]);
}

#[test]
fn certify_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let frac = Exp {
        kernel_sigma: "type = \"fractional\"\nc = 1.0\nalpha = 0.25",
        ..Default::default()
    }
    .write(d, "frac.toml");
    assert_eq!(run(d, &["certify", "--config", frac.to_str().unwrap()]), 0);
    let c: KernelCertificate = mvsve_cli::io::read_json(&d.join("out/certificate_sigma.json")).unwrap();
    assert!((c.gamma.unwrap() - 1.0 / 12.0).abs() < 1e-12);
    assert_eq!(c.epsilon, Some(1.0));

    let bad = Exp {
        kernel_sigma: "type = \"fractional\"\nc = 1.0\nalpha = 0.6",
        ..Default::default()
    }
    .write(d, "bad.toml");
    assert_eq!(run(d, &["certify", "--config", bad.to_str().unwrap(), "--out", "bad"]), 2);
    let c: KernelCertificate = mvsve_cli::io::read_json(&d.join("bad/certificate_sigma.json")).unwrap();
    assert!(c.reasons.iter().any(|r| r.contains("diverg")), "{:?}", c.reasons);

    let constant = Exp::default().write(d, "const.toml");
    assert_eq!(run(d, &["certify", "--config", constant.to_str().unwrap(), "--out", "c"]), 0);
}

#[test]
fn simulate_shapes_determinism_and_formats() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = Exp::default().write(d, "bm.toml");
    let cfg = cfg.to_str().unwrap();
    // no certificates yet
    assert_eq!(run(d, &["simulate", "--config", cfg]), 1);
    assert_eq!(run(d, &["certify", "--config", cfg]), 0);
    assert_eq!(run(d, &["simulate", "--config", cfg]), 0);
    let first = std::fs::read(d.join("out/ensemble.csv")).unwrap();
    let text = String::from_utf8(first.clone()).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,particle,component,X,A,M"));
    assert_eq!(lines.count(), 1000 * 51);
    assert_eq!(run(d, &["simulate", "--config", cfg]), 0);
    assert_eq!(std::fs::read(d.join("out/ensemble.csv")).unwrap(), first);

    let (meta, from_csv) = read_ensemble(&d.join("out/meta.json")).unwrap();
    assert!(meta.certificates.is_some());
    assert!(meta.reconstruction_residual <= 1e-10);

    assert_eq!(run(d, &["simulate", "--config", cfg, "--force", "--format", "bin", "--out", "b"]), 0);
    let (meta_b, from_bin) = read_ensemble(&d.join("b/meta.json")).unwrap();
    assert!(meta_b.certificates.is_none());
    assert_eq!(from_csv.x, from_bin.x);
    assert_eq!(from_csv.a, from_bin.a);
    assert_eq!(from_csv.mart, from_bin.mart);
    assert_eq!(std::fs::metadata(d.join("b/ensemble.bin")).unwrap().len(), 1000 * 51 * 48);

    assert_eq!(run(d, &["simulate", "--config", cfg, "--seed", "99", "--out", "s"]), 1);
    assert_eq!(run(d, &["simulate", "--config", cfg, "--seed", "99", "--out", "s", "--force"]), 0);
    assert_ne!(std::fs::read(d.join("s/ensemble.csv")).unwrap(), first);
}

#[test]
fn ou_terminal_variance_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = Exp {
        model: "name = \"mean_field_ou\"\ntheta = 1.0\nsigma0 = 1.0",
        particles: 4000,
        ..Default::default()
    }
    .write(d, "ou.toml");
    assert_eq!(run(d, &["simulate", "--force", "--config", cfg.to_str().unwrap()]), 0);
    let (_, ens) = read_ensemble(&d.join("out/meta.json")).unwrap();
    let xs: Vec<f64> = (0..ens.particles).map(|n| ens.value(n, ens.steps())[0]).collect();
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let sq: Vec<f64> = xs.iter().map(|x| (x - m).powi(2)).collect();
    let v = sq.iter().sum::<f64>() / n;
    let se = (sq.iter().map(|s| (s - v).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    let target = (1.0 - (-2.0f64).exp()) / 2.0;
    assert!((v - target).abs() <= 3.0 * se, "{v} vs {target} ± {se}");
}

#[test]
fn diagnose_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let bm = Exp {
        steps: 128,
        particles: 2000,
        ..Default::default()
    }
    .write(d, "bm.toml");
    let bm = bm.to_str().unwrap();
    assert_eq!(run(d, &["certify", "--config", bm]), 0);
    assert_eq!(run(d, &["simulate", "--config", bm]), 0);
    assert_eq!(run(d, &["diagnose", "--config", bm]), 0);
    let report: DiagnosticsReport = mvsve_cli::io::read_json(&d.join("out/report.json")).unwrap();
    assert!(report.all_pass() && report.martingale.is_some() && report.holder.is_some());
    assert!(report.verdicts.iter().any(|v| v.section.starts_with("increments")));
    assert!(d.join("out/report.txt").is_file());
    assert!(d.join("out/plots/increments_p2.dat").is_file());
    assert!(d.join("out/plots/diagnostics.gp").is_file());

    // the generator in this config has a drift the ensemble never had
    let wrong = Exp {
        model: "name = \"mean_field_ou\"\ntheta = 5.0\nsigma0 = 1.0",
        steps: 128,
        particles: 2000,
        initial: "type = \"gaussian\"\nmean = [0.0]\ncov = [[1.0]]",
        ..Default::default()
    }
    .write(d, "wrong.toml");
    let ou_out = d.join("ou");
    let ou_cfg = Exp {
        model: "name = \"pure_noise\"\nsigma = 1.0",
        steps: 128,
        particles: 2000,
        initial: "type = \"gaussian\"\nmean = [0.0]\ncov = [[1.0]]",
        ..Default::default()
    }
    .write(d, "noise.toml");
    assert_eq!(run(d, &["simulate", "--force", "--config", ou_cfg.to_str().unwrap(), "--out", "ou"]), 0);
    assert_eq!(
        run(d, &["diagnose", "--config", wrong.to_str().unwrap(), "--ensemble", ou_out.to_str().unwrap(), "--out", "wrong"]),
        2
    );
    let report: DiagnosticsReport = mvsve_cli::io::read_json(&d.join("wrong/report.json")).unwrap();
    assert!(!report.martingale.unwrap().passes);

    let empty = Exp {
        steps: 128,
        particles: 2000,
        extra: "\n[diagnostics]\nmoments = false\nincrements = false\nholder = false\nmartingale = false\nplot_data = false",
        ..Default::default()
    }
    .write(d, "empty.toml");
    assert_eq!(run(d, &["diagnose", "--config", empty.to_str().unwrap(), "--ensemble", "out", "--out", "e"]), 0);
    let report: DiagnosticsReport = mvsve_cli::io::read_json(&d.join("e/report.json")).unwrap();
    assert!(report.verdicts.is_empty());
}

#[test]
fn convergence_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let bm = Exp {
        extra: "\n[convergence]\nmesh_ladder = [8, 16, 32]\nmesh_particles = 300\nparticle_ladder = [100, 400]\nparticle_steps = 8\nfrozen_test = \"one\"",
        ..Default::default()
    }
    .write(d, "bm.toml");
    assert_eq!(run(d, &["convergence", "--config", bm.to_str().unwrap()]), 0);
    let r: DiagnosticsReport = mvsve_cli::io::read_json(&d.join("out/convergence.json")).unwrap();
    assert!(r.refinement.unwrap().mesh.iter().all(|l| l.distance < 1e-12));

    let short = Exp {
        extra: "\n[convergence]\nmesh_ladder = [8, 16]\nmesh_particles = 30\nparticle_ladder = [10, 40]\nparticle_steps = 8",
        ..Default::default()
    }
    .write(d, "short.toml");
    assert_eq!(run(d, &["convergence", "--config", short.to_str().unwrap(), "--out", "s"]), 1);
}

#[test]
fn blow_up_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = Exp {
        model: "name = \"scalar_interaction\"\nbeta = 1e300\nvol_base = 0.0",
        particles: 4,
        initial: "type = \"gaussian\"\nmean = [0.0]\ncov = [[1e20]]",
        ..Default::default()
    }
    .write(d, "boom.toml");
    assert_eq!(run(d, &["simulate", "--force", "--config", cfg.to_str().unwrap()]), 3);
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(run(d, &["simulate"]), 1);
    assert_eq!(run(d, &["frobnicate"]), 1);
    assert_eq!(run(d, &["simulate", "--config", "missing.toml"]), 1);
    let cfg = Exp::default().write(d, "x.toml");
    assert_eq!(run(d, &["simulate", "--config", cfg.to_str().unwrap(), "--format", "xml"]), 1);
    assert_eq!(run(d, &["simulate", "--config", cfg.to_str().unwrap(), "--threads", "0", "--force"]), 1);
    assert_eq!(run(d, &["report", "--out", "nothing-here"]), 1);
    assert_eq!(run(d, &["--help"]), 0);
}

#[test]
fn report_aggregates_results() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = Exp { steps: 64, particles: 500, ..Default::default() }.write(d, "bm.toml");
    let cfg = cfg.to_str().unwrap();
    assert_eq!(run(d, &["certify", "--config", cfg]), 0);
    assert_eq!(run(d, &["simulate", "--config", cfg]), 0);
    assert_eq!(run(d, &["diagnose", "--config", cfg]), 0);
    assert_eq!(run(d, &["report", "--config", cfg]), 0);
    let text = std::fs::read_to_string(d.join("out/summary.txt")).unwrap();
    assert!(text.contains("certificate_b.json") && text.contains("meta.json") && text.contains("report.json"));
    let meta: EnsembleMeta = mvsve_cli::io::read_json(&d.join("out/meta.json")).unwrap();
    assert_eq!(meta.times.len(), 65);
}

fn kernel_toml() -> impl Strategy<Value = String> {
    prop_oneof![
        (-3.0f64..3.0).prop_map(|c| format!("type = \"constant\"\nc = {c:?}")),
        (0.1f64..2.0, 0.01f64..0.99).prop_map(|(c, a)| format!("type = \"fractional\"\nc = {c:?}\nalpha = {a:?}")),
        (0.01f64..0.99, 0.0f64..4.0).prop_map(|(a, b)| format!("type = \"gamma\"\nalpha = {a:?}\nbeta = {b:?}")),
    ]
}

fn model_toml() -> impl Strategy<Value = String> {
    prop_oneof![
        (-2.0f64..2.0, 1usize..4).prop_map(|(s, d)| format!("name = \"pure_noise\"\nsigma = {s:?}\ndim = {d}")),
        (0.0f64..3.0, 0.0f64..2.0).prop_map(|(t, s)| format!("name = \"mean_field_ou\"\ntheta = {t:?}\nsigma0 = {s:?}")),
        (-1.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0).prop_map(|(b, a, s)| format!(
            "name = \"scalar_interaction\"\nbeta = {b:?}\nvol_base = {a:?}\nvol_slope = {s:?}"
        )),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_round_trips(
        model in model_toml(),
        kb in kernel_toml(),
        ks in kernel_toml(),
        steps in 1usize..500,
        particles in 2usize..100_000,
        seed in any::<u64>(),
        mode in prop_oneof![Just("integrated-kernel"), Just("left-point"), Just("variance-matched")],
        eta in 1.0f64..4.0,
        bin in any::<bool>(),
    ) {
        let text = format!(
            "[model]\n{model}\n[kernel_b]\n{kb}\n[kernel_sigma]\n{ks}\n[simulation]\nhorizon = 2.5\nsteps = {steps}\nparticles = {particles}\nseed = {seed}\nmode = \"{mode}\"\neta = {eta:?}\n[initial]\ntype = \"point\"\nvalue = [0.0]\n[output]\nformat = \"{}\"\n",
            if bin { "bin" } else { "csv" }
        );
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        let again = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        prop_assert_eq!(&cfg, &again);
        prop_assert_eq!(cfg.to_toml().unwrap(), again.to_toml().unwrap());
    }
}
