//! Empirical checks on simulated ensembles.

mod holder;
mod increments;
mod martingale;
mod moments;
mod refinement;
mod report;

pub use holder::{holder_estimate, HolderEstimate, MIN_HOLDER_STEPS};
pub use increments::{dyadic_lags, increment_scaling, IncrementFit, IncrementOptions, PathSource};
pub use martingale::{
    default_time_pairs, martingale_defect, standard_bank, BumpShape, DefectRow, MartingaleOptions,
    MartingaleReport, TestFunction,
};
pub use moments::{
    compare_levels, moment_report, LevelComparison, MomentRow, MomentStability, MomentTable,
    SupMoment,
};
pub use refinement::{
    frozen_integral_convergence, refinement_study, run_mesh_ladder, run_particle_ladder,
    terminal_distances, validate_mesh_ladder, FrozenIntegralReport, LevelDistance,
    RefinementOptions, RefinementReport, RefinementStudy,
};
pub use report::{diagnose, DiagnosticsConfig, DiagnosticsReport, SectionVerdict, SkippedSection};
