//! Strictly positive propensity score (SPPS) models and the inverse
//! probability weighted estimators built on them.
//!
//! The propensity model is `π(x) = ε + (1 − δ − ε) φ(βᵀx)`, which keeps every
//! fitted propensity inside `[ε, 1 − δ]`. With `ε = δ = 0` it reduces to an
//! ordinary binary GLM with link CDF `φ`.
//!
//! Layout:
//! - [`link`] and [`model`]: link CDFs, parameter vector, dataset, likelihood and score.
//! - [`glm`]: the per-block solvers (Newton for `β`, bounded 1-D search for `ε` and `δ`).
//! - [`fit`]: the coordinate-ascent orchestrator and identifiability diagnostics.
//! - [`estimators`] and [`pipeline`]: IPW mean / ATE estimators with and without the
//!   Lunceford–Davidian weight correction.
//! - [`simulation`] and [`bootstrap`]: reproducible replication harnesses.
//! - [`exec`]: rayon-backed replicate mapping with a sequential fallback.

pub mod bootstrap;
pub mod error;
pub mod estimators;
pub mod exec;
pub mod fit;
pub mod glm;
pub mod link;
pub mod model;
pub mod optimize;
pub mod pipeline;
pub mod simulation;

pub use bootstrap::{bootstrap_estimate, bootstrap_statistic, BootstrapConfig, BootstrapReport};
pub use error::{Error, Result};
pub use estimators::{Estimand, EstimateReport, PropensityFit, Variant};
pub use exec::Execution;
pub use fit::{check_identifiability, fit_spps, fit_spps_from, Diagnostics, FitOptions, FitResult};
pub use glm::{SolverControls, StepResult};
pub use link::LinkFunction;
pub use model::{Dataset, Mode, Theta};
pub use pipeline::EstimatorSpec;
pub use simulation::{MseTable, SimulationConfig};
