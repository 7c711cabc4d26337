//! One-shot diagnostics over an ensemble and a readable summary.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::holder::{holder_estimate, HolderEstimate, MIN_HOLDER_STEPS};
use super::increments::{dyadic_lags, increment_scaling, IncrementFit, IncrementOptions};
use super::martingale::{
    default_time_pairs, martingale_defect, standard_bank, MartingaleOptions, MartingaleReport,
};
use super::moments::{moment_report, MomentStability, MomentTable};
use super::refinement::{FrozenIntegralReport, RefinementReport};
use crate::error::{Error, Result};
use crate::models::CoefficientModel;
use crate::solver::ParticleEnsemble;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnosticsConfig {
    pub moment_orders: Vec<f64>,
    pub increment_orders: Vec<f64>,
    /// Target Hölder-type exponent, usually the smallest certified `γ` of
    /// the two kernels. Without it the increment and Hölder sections are
    /// reported but not judged.
    pub gamma: Option<f64>,
    pub increment_tolerance: f64,
    pub holder_tolerance: f64,
    pub increments: IncrementOptions,
    /// Orders `p` for the Hölder bound `(γp - 1)/p`; empty skips the estimator.
    pub holder_orders: Vec<f64>,
    pub martingale: MartingaleOptions,
    pub run_martingale: bool,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            moment_orders: vec![2.0, 4.0],
            increment_orders: vec![2.0, 4.0],
            gamma: None,
            increment_tolerance: 0.1,
            holder_tolerance: 0.1,
            increments: IncrementOptions::default(),
            holder_orders: vec![2.0, 4.0],
            martingale: MartingaleOptions::default(),
            run_martingale: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionVerdict {
    pub section: String,
    pub passed: bool,
    /// The rule applied, in words.
    pub threshold: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedSection {
    pub section: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub particles: usize,
    pub steps: usize,
    pub mode: String,
    pub moments: Option<MomentTable>,
    pub increments: Vec<IncrementFit>,
    pub holder: Option<HolderEstimate>,
    pub martingale: Option<MartingaleReport>,
    pub refinement: Option<RefinementReport>,
    pub frozen_integral: Option<FrozenIntegralReport>,
    pub moment_stability: Option<MomentStability>,
    pub verdicts: Vec<SectionVerdict>,
    pub skipped: Vec<SkippedSection>,
}

impl DiagnosticsReport {
    pub fn all_pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    /// Adds a refinement study and its verdict.
    pub fn attach_refinement(&mut self, report: RefinementReport) {
        self.verdicts.push(SectionVerdict {
            section: "refinement".into(),
            passed: report.passes,
            threshold: format!(
                "terminal W_{} between consecutive levels strictly decreasing (floor {:e})",
                report.eta, report.floor
            ),
        });
        self.refinement = Some(report);
    }

    /// Adds a frozen-integral convergence check and its verdict.
    pub fn attach_frozen_integral(&mut self, report: FrozenIntegralReport) {
        self.verdicts.push(SectionVerdict {
            section: "frozen-integral".into(),
            passed: report.decreasing,
            threshold: format!("sup-time RMS error decreasing in mesh (floor {:e})", report.floor),
        });
        self.frozen_integral = Some(report);
    }

    /// Adds a cross-level moment comparison and its verdict.
    pub fn attach_moment_stability(&mut self, report: MomentStability) {
        self.verdicts.push(SectionVerdict {
            section: "moment-stability".into(),
            passed: report.passes,
            threshold: format!(
                "pairwise sup-moment differences within {} combined standard errors",
                report.z_threshold
            ),
        });
        self.moment_stability = Some(report);
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "ensemble: {} particles, {} steps, mode {}",
            self.particles, self.steps, self.mode
        );
        if let Some(m) = &self.moments {
            let _ = writeln!(s, "\nmoments (sup over t):");
            for sup in &m.sup {
                let _ = writeln!(
                    s,
                    "  q = {:<4} sup E|X|^q = {:.6e} ± {:.2e} at t = {:.4}",
                    sup.q, sup.estimate, sup.se, sup.t
                );
            }
        }
        if !self.increments.is_empty() {
            let _ = writeln!(s, "\nincrement scaling log E|ΔX|^p vs log h:");
            for f in &self.increments {
                if f.degenerate {
                    let _ = writeln!(s, "  p = {:<4} all increments vanish", f.p);
                } else {
                    let _ = writeln!(
                        s,
                        "  p = {:<4} slope {:.4}  r² {:.4}  lags {}..{}",
                        f.p,
                        f.slope,
                        f.r2,
                        f.lags.first().unwrap_or(&0),
                        f.lags.last().unwrap_or(&0)
                    );
                }
            }
        }
        if let Some(h) = &self.holder {
            let _ = writeln!(s, "\nHölder exponent ({}):", h.method);
            match (h.exponent, h.spread) {
                (Some(e), Some((lo, hi))) => {
                    let _ = writeln!(s, "  median {e:.4}  10-90% [{lo:.4}, {hi:.4}]");
                }
                _ => {
                    let _ = writeln!(s, "  paths are constant");
                }
            }
            if let Some(m) = h.max_ratio_exponent {
                let _ = writeln!(s, "  max-increment slope {m:.4}");
            }
        }
        if let Some(m) = &self.martingale {
            let _ = writeln!(
                s,
                "\nmartingale defect: {} statistics, max |z| = {:.3} (threshold {})",
                m.rows.len(),
                m.max_abs_z,
                m.z_threshold
            );
        }
        if let Some(r) = &self.refinement {
            let _ = writeln!(s, "\nrefinement (terminal W_{}):", r.eta);
            for l in &r.mesh {
                let _ = writeln!(s, "  steps {:>6} -> {:<6} {:.6e}", l.from, l.to, l.distance);
            }
            for l in &r.particles {
                let _ = writeln!(s, "  N     {:>6} -> {:<6} {:.6e}", l.from, l.to, l.distance);
            }
        }
        if let Some(r) = &self.frozen_integral {
            let _ = writeln!(s, "\nfrozen integral, sup-time RMS error vs finest level:");
            for (m, d) in r.levels.iter().zip(&r.sup_difference) {
                let _ = writeln!(s, "  steps {m:>6}  {d:.6e}");
            }
        }
        if let Some(m) = &self.moment_stability {
            let _ = writeln!(s, "\nsup-moment differences across levels:");
            for c in &m.comparisons {
                let _ = writeln!(
                    s,
                    "  q = {:<4} steps {:>5} vs {:<5} diff {:+.4e}  z {:+.3}",
                    c.q, c.steps_a, c.steps_b, c.difference, c.z
                );
            }
        }
        if !self.skipped.is_empty() {
            let _ = writeln!(s, "\nskipped:");
            for k in &self.skipped {
                let _ = writeln!(s, "  {}: {}", k.section, k.reason);
            }
        }
        let _ = writeln!(s, "\nverdicts:");
        for v in &self.verdicts {
            let _ = writeln!(
                s,
                "  [{}] {}: {}",
                if v.passed { "pass" } else { "FAIL" },
                v.section,
                v.threshold
            );
        }
        s
    }
}

/// Runs the per-ensemble diagnostics. Sections that cannot run on this
/// ensemble (too few steps, no accumulators) are listed as skipped.
pub fn diagnose(
    ensemble: &ParticleEnsemble,
    model: &dyn CoefficientModel,
    cfg: &DiagnosticsConfig,
) -> Result<DiagnosticsReport> {
    let mut report = DiagnosticsReport {
        particles: ensemble.particles,
        steps: ensemble.steps(),
        mode: ensemble.mode.to_string(),
        ..Default::default()
    };

    if !cfg.moment_orders.is_empty() {
        let moments = moment_report(ensemble, &cfg.moment_orders)?;
        report.verdicts.push(SectionVerdict {
            section: "moments".into(),
            passed: moments.all_finite(),
            threshold: "every estimate finite".into(),
        });
        report.moments = Some(moments);
    }

    let lags = dyadic_lags(ensemble.steps());
    for &p in &cfg.increment_orders {
        match increment_scaling(ensemble, p, &lags, &cfg.increments) {
            Ok(fit) => {
                if let Some(g) = cfg.gamma {
                    report.verdicts.push(SectionVerdict {
                        section: format!("increments p={p}"),
                        passed: fit.meets_exponent(g, cfg.increment_tolerance),
                        threshold: format!(
                            "slope ≥ γp - {} = {:.4}",
                            cfg.increment_tolerance,
                            g * p - cfg.increment_tolerance
                        ),
                    });
                }
                report.increments.push(fit);
            }
            Err(Error::InsufficientLags(reason)) => report.skipped.push(SkippedSection {
                section: format!("increments p={p}"),
                reason,
            }),
            Err(e) => return Err(e),
        }
    }

    let holder_wanted = !cfg.holder_orders.is_empty();
    if holder_wanted && ensemble.steps() < MIN_HOLDER_STEPS {
        report.skipped.push(SkippedSection {
            section: "holder".into(),
            reason: format!("needs at least {MIN_HOLDER_STEPS} steps"),
        });
    } else if holder_wanted {
        let h = holder_estimate(ensemble)?;
        if let Some(g) = cfg.gamma {
            for &p in &cfg.holder_orders {
                if g * p > 1.0 {
                    report.verdicts.push(SectionVerdict {
                        section: format!("holder p={p}"),
                        passed: h.meets_bound(g, p, cfg.holder_tolerance),
                        threshold: format!(
                            "exponent ≥ (γp - 1)/p - {} = {:.4}",
                            cfg.holder_tolerance,
                            (g * p - 1.0) / p - cfg.holder_tolerance
                        ),
                    });
                }
            }
        }
        report.holder = Some(h);
    }

    if cfg.run_martingale {
        if ensemble.a.is_none() || ensemble.mart.is_none() {
            report.skipped.push(SkippedSection {
                section: "martingale".into(),
                reason: "ensemble carries no drift/martingale accumulators".into(),
            });
        } else {
            let bank = standard_bank(ensemble.state_dim);
            let pairs = default_time_pairs(ensemble.steps());
            let m = martingale_defect(ensemble, model, &bank, &pairs, &cfg.martingale)?;
            report.verdicts.push(SectionVerdict {
                section: "martingale".into(),
                passed: m.passes,
                threshold: format!("every |z| ≤ {}", m.z_threshold),
            });
            report.martingale = Some(m);
        }
    }
    Ok(report)
}
