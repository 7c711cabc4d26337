//! Simulation and verification toolkit for distribution-dependent (McKean–Vlasov)
//! stochastic Volterra equations
//!
//! ```text
//! X_t = X_0 + ∫_0^t K_b(s,t) b(s, X_s, L(X_s)) ds + ∫_0^t K_σ(s,t) σ(s, X_s, L(X_s)) dB_s
//! ```
//!
//! The crate is split along the pipeline a user walks through:
//!
//! * [`kernels`] evaluates and integrates Volterra kernels (including singular
//!   ones) and certifies them against the Hölder-type increment conditions.
//! * [`measures`] holds empirical measures and Wasserstein distances.
//! * [`models`] defines coefficient pairs `(b, σ)` and empirical growth/continuity checks.
//! * [`solver`] runs the Euler-type scheme as an interacting particle system.
//! * [`diagnostics`] checks moment bounds, increment scaling, Hölder regularity,
//!   the Volterra martingale problem and refinement behaviour on simulated ensembles.

pub mod diagnostics;
pub mod error;
pub mod kernels;
pub mod measures;
pub mod models;
pub mod rng;
pub mod solver;
pub(crate) mod stats;

pub use error::{Error, Result};
pub use kernels::{KernelCertificate, KernelSpec, QuadratureConfig};
pub use measures::EmpiricalMeasure;
pub use models::{CoefficientModel, ModelSpec};
pub use solver::{ParticleEnsemble, Partition, SimMode};

/// Version string embedded in serialized artefacts.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
