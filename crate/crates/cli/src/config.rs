//! The run configuration document.
//!
//! Every subcommand reads a `RunConfig`; command-line flags are written into
//! it before anything runs, so the echoed config in `meta.json` is exactly
//! what was executed.

use std::fs;
use std::path::{Path, PathBuf};

use dataenrich::diagnostics::DiagnosticsOptions;
use dataenrich::model_selection::RadiusGrid;
use dataenrich::projection::Constraint;
use dataenrich::solver::{FitConfig, StepMode, UpdateOrder};
use dataenrich::synthesis::SynthesisSpec;
use dataenrich::WeightScheme;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const OUT_ROOT_ENV: &str = "DATAENRICH_OUT_ROOT";

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    /// Dataset directory read by `fit`, `diagnose` and `cv`.
    pub data: Option<PathBuf>,
    pub preset: Option<String>,
    /// Explicit generator spec; used when no preset is named.
    pub synthesis: Option<SynthesisSpec>,
    pub fit: FitSection,
    pub experiment: ExperimentSection,
    pub diagnostics: DiagnosticsSection,
    pub cv: CvSection,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub max_iters: Option<usize>,
    pub stop_tol: Option<f64>,
    pub step_mode: Option<StepMode>,
    pub update_order: Option<UpdateOrder>,
    /// `G+1` entries, block 0 first. Falls back to the dataset's
    /// `constraints.json`, then to no constraints.
    pub constraints: Option<Vec<Constraint>>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub reps: Option<usize>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsSection {
    /// Only estimate Gaussian widths.
    pub widths_only: bool,
    /// Ambient dimension for a full-space width estimate when no dataset is given.
    pub dim: Option<usize>,
    pub width_gaussians: Option<usize>,
    pub width_directions: Option<usize>,
    pub re_trials: Option<usize>,
    pub re_weights: Option<WeightScheme>,
    pub deic_trials: Option<usize>,
    pub lambda_threshold: Option<f64>,
    pub contraction_directions: Option<usize>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSection {
    pub folds: Option<usize>,
    pub shared: Option<Vec<f64>>,
    pub individual: Option<Vec<f64>>,
    /// Explicit grid; overrides `shared`/`individual`.
    pub grid: Option<RadiusGrid>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            fs::read_to_string(path).map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// `--out`, else `$DATAENRICH_OUT_ROOT/<command>`, else `runs/<command>`.
    pub fn out_dir(&self, command: &str) -> PathBuf {
        if let Some(out) = &self.out {
            return out.clone();
        }
        let root = std::env::var_os(OUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
        root.join(command)
    }

    pub fn data_dir(&self) -> Result<&Path, CliError> {
        self.data.as_deref().ok_or_else(|| CliError::usage("no dataset directory given (--data)"))
    }

    /// Solver settings on top of `base`.
    pub fn fit_config(&self, base: FitConfig) -> FitConfig {
        let f = &self.fit;
        FitConfig {
            max_iters: f.max_iters.unwrap_or(base.max_iters),
            stop_tol: f.stop_tol.unwrap_or(base.stop_tol),
            step_mode: f.step_mode.clone().unwrap_or(base.step_mode),
            update_order: f.update_order.unwrap_or(base.update_order),
            record_truth: base.record_truth,
        }
    }

    pub fn diagnostics_options(&self) -> DiagnosticsOptions {
        let d = &self.diagnostics;
        let base = DiagnosticsOptions::default();
        DiagnosticsOptions {
            width_gaussians: d.width_gaussians.unwrap_or(base.width_gaussians),
            width_directions: d.width_directions.unwrap_or(base.width_directions),
            re_trials: d.re_trials.unwrap_or(base.re_trials),
            re_weights: d.re_weights.unwrap_or(base.re_weights),
            deic_trials: d.deic_trials.unwrap_or(base.deic_trials),
            lambda_threshold: d.lambda_threshold.unwrap_or(base.lambda_threshold),
            contraction_directions: d.contraction_directions.unwrap_or(base.contraction_directions),
            seed: self.seed(),
        }
    }
}

/// CLI solver defaults: the library defaults with the shared block updated
/// after the individual ones.
pub fn cli_fit_defaults() -> FitConfig {
    FitConfig { update_order: UpdateOrder::GaussSeidel, ..FitConfig::default() }
}
