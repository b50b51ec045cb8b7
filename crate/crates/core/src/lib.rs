//! Data-enriched linear models.
//!
//! `G` groups of observations share a common parameter `beta0` while each
//! group also carries an individual parameter `beta_g`:
//!
//! ```text
//! y_g = X_g (beta0 + beta_g) + noise_g,    g = 1..G
//! ```
//!
//! The estimator minimises the pooled mean squared residual subject to one
//! norm-ball constraint per block and is computed by projected block gradient
//! descent ([`solver::fit`]). Around the solver live a synthetic data
//! generator with the standard experiment presets ([`synthesis`]), Monte-Carlo
//! probes for the cone geometry that governs recovery ([`diagnostics`]),
//! k-fold cross-validation of the constraint radii ([`model_selection`]) and
//! the on-disk formats shared with the command-line tool ([`io`]).

pub mod diagnostics;
pub mod error;
pub mod io;
pub mod model;
pub mod model_selection;
pub mod projection;
pub mod seed;
pub mod solver;
pub mod synthesis;

pub use error::{Error, Result};
pub use model::{
    objective, predict, residuals, weighted_error, ConstraintSpec, GroupedDataset, ParameterStack, WeightScheme,
};
pub use projection::{project, project_l1, project_l2, Constraint, ProjectionKind};
pub use solver::{
    convergence_rate, default_step_sizes, fit, pbgd_step, theoretical_step_sizes, ConvergenceTrace, FitConfig,
    FitResult, StepMode, StepSizes, TraceMetric, TraceRecord, UpdateOrder,
};
pub use synthesis::{generate, preset, run_experiment, Preset, SynthesisSpec, SyntheticInstance};

/// Relative slack allowed when checking `f_g(beta_g) <= d_g`.
pub const FEASIBILITY_RTOL: f64 = 1e-12;
