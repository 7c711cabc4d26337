//! Monte Carlo moments `E|X(t)|^q` and their stability across mesh levels.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::measures::norm;
use crate::solver::ParticleEnsemble;
use crate::stats::mean_and_se;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub t: f64,
    pub q: f64,
    pub estimate: f64,
    /// Jackknife standard error of `estimate`.
    pub se: f64,
}

/// `sup_t E|X(t)|^q` for one `q`, with the standard error at the maximiser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupMoment {
    pub q: f64,
    pub t: f64,
    pub estimate: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentTable {
    pub particles: usize,
    pub steps: usize,
    pub rows: Vec<MomentRow>,
    pub sup: Vec<SupMoment>,
}

impl MomentTable {
    pub fn sup_for(&self, q: f64) -> Option<&SupMoment> {
        self.sup.iter().find(|s| s.q == q)
    }

    pub fn all_finite(&self) -> bool {
        self.rows.iter().all(|r| r.estimate.is_finite() && r.se.is_finite())
    }
}

/// Estimates `E|X(t_j)|^q` at every grid time for every `q` in `q_list`.
pub fn moment_report(ensemble: &ParticleEnsemble, q_list: &[f64]) -> Result<MomentTable> {
    if q_list.is_empty() || q_list.iter().any(|q| !(*q >= 1.0) || !q.is_finite()) {
        return invalid("moment orders must be finite and ≥ 1");
    }
    let mut rows = Vec::with_capacity(q_list.len() * (ensemble.steps() + 1));
    let mut sup: Vec<SupMoment> = q_list
        .iter()
        .map(|&q| SupMoment {
            q,
            t: 0.0,
            estimate: f64::NEG_INFINITY,
            se: 0.0,
        })
        .collect();
    let mut norms = vec![0.0; ensemble.particles];
    for j in 0..=ensemble.steps() {
        let t = ensemble.times()[j];
        for (n, v) in norms.iter_mut().enumerate() {
            *v = norm(ensemble.value(n, j));
        }
        for (k, &q) in q_list.iter().enumerate() {
            let powers: Vec<f64> = norms.iter().map(|r| r.powf(q)).collect();
            let (estimate, se) = mean_and_se(&powers);
            if estimate > sup[k].estimate {
                sup[k] = SupMoment { q, t, estimate, se };
            }
            rows.push(MomentRow { t, q, estimate, se });
        }
    }
    Ok(MomentTable {
        particles: ensemble.particles,
        steps: ensemble.steps(),
        rows,
        sup,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelComparison {
    pub q: f64,
    pub steps_a: usize,
    pub steps_b: usize,
    pub difference: f64,
    /// `sqrt(se_a² + se_b²)`.
    pub se: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentStability {
    pub comparisons: Vec<LevelComparison>,
    pub z_threshold: f64,
    pub passes: bool,
}

/// Compares `sup_t E|X(t)|^q` pairwise across tables from different mesh
/// levels; passes when every difference is within `z_threshold` combined
/// standard errors.
pub fn compare_levels(tables: &[MomentTable], z_threshold: f64) -> Result<MomentStability> {
    if tables.len() < 2 {
        return invalid("moment comparison needs at least two levels");
    }
    let mut comparisons = Vec::new();
    for (ia, a) in tables.iter().enumerate() {
        for b in &tables[ia + 1..] {
            for sa in &a.sup {
                let Some(sb) = b.sup_for(sa.q) else { continue };
                let difference = sa.estimate - sb.estimate;
                let se = sa.se.hypot(sb.se);
                let z = if se > 0.0 {
                    difference / se
                } else if difference == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                };
                comparisons.push(LevelComparison {
                    q: sa.q,
                    steps_a: a.steps,
                    steps_b: b.steps,
                    difference,
                    se,
                    z,
                });
            }
        }
    }
    let passes = !comparisons.is_empty() && comparisons.iter().all(|c| c.z.abs() <= z_threshold);
    Ok(MomentStability {
        comparisons,
        z_threshold,
        passes,
    })
}
