//! Projected block gradient descent.
//!
//! Starting from the zero stack, every iteration takes one gradient step on
//! each individual block and on the shared block, then projects each block
//! back onto its constraint ball:
//!
//! ```text
//! beta_g <- P_g( beta_g + mu_g X_g^T (y_g - X_g (beta0 + beta_g)) )
//! beta0  <- P_0( beta0  + mu_0 sum_g X_g^T (y_g - X_g (beta0 + beta_g)) )
//! ```
//!
//! With [`UpdateOrder::Jacobi`] both updates read the iterate from the start
//! of the iteration. [`UpdateOrder::GaussSeidel`] recomputes the residuals
//! with the freshly updated individual blocks before the shared step.

use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    group_fitted, weighted_error, xt_dot, ConstraintSpec, GroupedDataset, ParameterStack, WeightScheme,
};
use crate::projection::project;
use crate::FEASIBILITY_RTOL;

/// Learning rates `mu_0` (shared block) and `mu_1..mu_G`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSizes {
    pub mu0: f64,
    pub mus: Vec<f64>,
}

impl StepSizes {
    pub fn new(mu0: f64, mus: Vec<f64>) -> Result<Self> {
        let steps = Self { mu0, mus };
        steps.validate()?;
        Ok(steps)
    }

    pub fn validate(&self) -> Result<()> {
        for (g, &mu) in std::iter::once(&self.mu0).chain(&self.mus).enumerate() {
            if !(mu.is_finite() && mu > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "step size for block {g} must be positive and finite, got {mu}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepMode {
    /// `mu_0 = 1/n`, `mu_g = 1/sqrt(n n_g)`.
    SimplifiedPaper,
    /// Step sizes from cone widths `omega(A_0..A_G)`, per-group constants
    /// `c_0g` and the confidence parameter `tau`.
    Theoretical {
        widths: Vec<f64>,
        c0g: Vec<f64>,
        tau: f64,
    },
    Manual(StepSizes),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateOrder {
    #[default]
    Jacobi,
    GaussSeidel,
}

#[derive(Clone, Debug)]
pub struct FitConfig {
    /// Number of update sweeps `T`.
    pub max_iters: usize,
    /// Stop once the relative change of the stacked parameter stays below this
    /// for 3 consecutive iterations. Zero disables early stopping.
    pub stop_tol: f64,
    pub step_mode: StepMode,
    pub update_order: UpdateOrder,
    /// Ground truth for per-iteration error traces; never used by the updates.
    pub record_truth: Option<ParameterStack>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iters: 1000,
            stop_tol: 0.0,
            step_mode: StepMode::SimplifiedPaper,
            update_order: UpdateOrder::Jacobi,
            record_truth: None,
        }
    }
}

/// Metrics of the iterate after `iter` update sweeps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub objective: f64,
    /// `||beta_g - beta_g*||^2 / ||beta_g*||^2` for `g = 0..=G` (plain squared
    /// error for a zero truth block).
    pub rel_errors: Option<Vec<f64>>,
    /// `sum_g sqrt(n_g/n) ||beta_g - beta_g*||`.
    pub weighted_error: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    /// Objective at the zero initialisation.
    pub initial_objective: f64,
    pub records: Vec<TraceRecord>,
}

impl ConvergenceTrace {
    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// `(iter, value)` pairs of one metric column; records missing it are skipped.
    pub fn series(&self, metric: TraceMetric) -> Vec<(usize, f64)> {
        self.records.iter().filter_map(|r| metric.extract(r).map(|v| (r.iter, v))).collect()
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub estimate: ParameterStack,
    pub trace: ConvergenceTrace,
    pub iterations_run: usize,
    /// Early stopping fired.
    pub converged: bool,
    pub step_sizes: StepSizes,
    /// Number of (iteration, block) pairs where a recorded iterate broke its
    /// constraint by more than the relative feasibility tolerance.
    pub feasibility_violations: usize,
}

/// A column of a [`ConvergenceTrace`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceMetric {
    Objective,
    RelError(usize),
    MaxRelError,
    WeightedError,
}

impl TraceMetric {
    fn extract(&self, r: &TraceRecord) -> Option<f64> {
        match *self {
            TraceMetric::Objective => Some(r.objective),
            TraceMetric::RelError(g) => r.rel_errors.as_ref().and_then(|e| e.get(g).copied()),
            TraceMetric::MaxRelError => r.rel_errors.as_ref().map(|e| e.iter().copied().fold(0.0, f64::max)),
            TraceMetric::WeightedError => r.weighted_error,
        }
    }
}

pub fn default_step_sizes(dataset: &GroupedDataset) -> StepSizes {
    let n = dataset.n_total() as f64;
    StepSizes { mu0: 1.0 / n, mus: dataset.counts().iter().map(|&ng| 1.0 / (n * ng as f64).sqrt()).collect() }
}

/// Step sizes that guarantee contraction with high probability:
///
/// ```text
/// mu_0 = 1/(4n) min_g (1 + c_0g (w_0g + tau)/sqrt(n_g))^-2
/// mu_g = 1/(2 sqrt(n n_g)) (1 + c_0g (w_0g + tau)/sqrt(n_g))^-1
/// ```
///
/// where `w_0g = omega(A_0) + omega(A_g)`.
pub fn theoretical_step_sizes(dataset: &GroupedDataset, widths: &[f64], c0g: &[f64], tau: f64) -> Result<StepSizes> {
    let g_count = dataset.num_groups();
    if widths.len() != g_count + 1 {
        return Err(Error::Shape(format!("need G+1 = {} widths, got {}", g_count + 1, widths.len())));
    }
    if c0g.len() != g_count {
        return Err(Error::Shape(format!("need G = {g_count} constants c_0g, got {}", c0g.len())));
    }
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    if let Some(w) = widths.iter().chain(c0g).find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::InvalidArgument(format!("widths and constants must be nonnegative, got {w}")));
    }

    let n = dataset.n_total() as f64;
    let factors: Vec<f64> = dataset
        .counts()
        .iter()
        .enumerate()
        .map(|(i, &ng)| 1.0 + c0g[i] * (widths[0] + widths[i + 1] + tau) / (ng as f64).sqrt())
        .collect();
    let min_term = factors.iter().map(|f| f.powi(-2)).fold(f64::INFINITY, f64::min);
    let mus = dataset.counts().iter().zip(&factors).map(|(&ng, f)| 1.0 / (2.0 * (n * ng as f64).sqrt() * f)).collect();
    Ok(StepSizes { mu0: min_term / (4.0 * n), mus })
}

fn resolve_steps(dataset: &GroupedDataset, mode: &StepMode) -> Result<StepSizes> {
    let steps = match mode {
        StepMode::SimplifiedPaper => default_step_sizes(dataset),
        StepMode::Theoretical { widths, c0g, tau } => theoretical_step_sizes(dataset, widths, c0g, *tau)?,
        StepMode::Manual(s) => {
            if s.mus.len() != dataset.num_groups() {
                return Err(Error::Shape(format!(
                    "{} individual step sizes for {} groups",
                    s.mus.len(),
                    dataset.num_groups()
                )));
            }
            s.clone()
        }
    };
    steps.validate()?;
    Ok(steps)
}

struct GroupPass {
    grad: Array1<f64>,
    sq_residual: f64,
}

/// Residuals and `X_g^T r_g` for every group at the given blocks.
fn group_gradients(dataset: &GroupedDataset, beta0: &Array1<f64>, betas: &[Array1<f64>]) -> Vec<GroupPass> {
    dataset
        .groups()
        .par_iter()
        .zip(betas.par_iter())
        .map(|(grp, beta_g)| {
            let mut r = grp.y.clone();
            r -= &group_fitted(grp.x.view(), beta0, beta_g);
            GroupPass { sq_residual: r.dot(&r), grad: xt_dot(grp.x.view(), r.view()) }
        })
        .collect()
}

fn rel_errors(estimate: &ParameterStack, truth: &ParameterStack) -> Vec<f64> {
    estimate
        .blocks()
        .zip(truth.blocks())
        .map(|(e, t)| {
            let d = e - t;
            let denom = t.dot(t);
            let err = d.dot(&d);
            if denom > 0.0 {
                err / denom
            } else {
                err
            }
        })
        .collect()
}

fn check_grad(grad: &Array1<f64>, iteration: usize, block: usize) -> Result<()> {
    if grad.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence { iteration, block })
    }
}

/// One update sweep from `current`, given the group passes at `current`.
fn sweep(
    dataset: &GroupedDataset,
    constraints: &ConstraintSpec,
    steps: &StepSizes,
    order: UpdateOrder,
    current: &ParameterStack,
    passes: &[GroupPass],
    t: usize,
) -> Result<ParameterStack> {
    let p = dataset.dim();
    let betas: Vec<Array1<f64>> = passes
        .par_iter()
        .zip(current.betas.par_iter())
        .enumerate()
        .map(|(i, (pass, beta_g))| {
            check_grad(&pass.grad, t, i + 1)?;
            let mut step = beta_g.clone();
            step.scaled_add(steps.mus[i], &pass.grad);
            project(constraints.get(i + 1), step.view()).map_err(|_| Error::Divergence { iteration: t, block: i + 1 })
        })
        .collect::<Result<_>>()?;

    // Shared block, with the gradient summed in ascending group order.
    let fresh = match order {
        UpdateOrder::Jacobi => None,
        UpdateOrder::GaussSeidel => Some(group_gradients(dataset, &current.beta0, &betas)),
    };
    let shared_grad = fresh.as_deref().unwrap_or(passes).iter().fold(Array1::zeros(p), |mut acc, pass| {
        acc += &pass.grad;
        acc
    });
    check_grad(&shared_grad, t, 0)?;
    let mut step = current.beta0.clone();
    step.scaled_add(steps.mu0, &shared_grad);
    let beta0 = project(constraints.get(0), step.view()).map_err(|_| Error::Divergence { iteration: t, block: 0 })?;
    Ok(ParameterStack { beta0, betas })
}

/// A single update sweep from an arbitrary iterate.
pub fn pbgd_step(
    dataset: &GroupedDataset,
    constraints: &ConstraintSpec,
    steps: &StepSizes,
    order: UpdateOrder,
    current: &ParameterStack,
) -> Result<ParameterStack> {
    if constraints.num_groups() != dataset.num_groups()
        || current.num_groups() != dataset.num_groups()
        || current.dim() != dataset.dim()
        || steps.mus.len() != dataset.num_groups()
    {
        return Err(Error::Shape("iterate, constraints or step sizes do not match the dataset".into()));
    }
    steps.validate()?;
    let passes = group_gradients(dataset, &current.beta0, &current.betas);
    sweep(dataset, constraints, steps, order, current, &passes, 1)
}

pub fn fit(dataset: &GroupedDataset, constraints: &ConstraintSpec, config: &FitConfig) -> Result<FitResult> {
    let g_count = dataset.num_groups();
    let p = dataset.dim();
    if constraints.num_groups() != g_count {
        return Err(Error::Shape(format!(
            "{} constraints for G+1 = {} blocks",
            constraints.num_groups() + 1,
            g_count + 1
        )));
    }
    if config.max_iters == 0 {
        return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
    }
    if config.stop_tol.is_nan() || config.stop_tol < 0.0 {
        return Err(Error::InvalidArgument(format!("stop_tol must be nonnegative, got {}", config.stop_tol)));
    }
    if let Some(truth) = &config.record_truth {
        if truth.num_groups() != g_count || truth.dim() != p {
            return Err(Error::Shape("record_truth does not match the dataset shape".into()));
        }
    }
    let steps = resolve_steps(dataset, &config.step_mode)?;
    let counts = dataset.counts();
    let n = dataset.n_total() as f64;

    let mut current = ParameterStack::zeros(g_count, p);
    let mut trace = ConvergenceTrace::default();
    let mut violations = 0;
    let mut quiet_iters = 0;
    let mut converged = false;
    let mut iterations_run = 0;

    let mut passes = group_gradients(dataset, &current.beta0, &current.betas);
    trace.initial_objective = passes.iter().map(|p| p.sq_residual).sum::<f64>() / n;

    for t in 1..=config.max_iters {
        let next = sweep(dataset, constraints, &steps, config.update_order, &current, &passes, t)?;
        violations += constraints
            .entries()
            .iter()
            .zip(next.blocks())
            .filter(|(c, b)| !c.is_satisfied(b.view(), FEASIBILITY_RTOL))
            .count();

        let change = next.distance(&current) / current.norm().max(f64::MIN_POSITIVE);
        current = next;
        iterations_run = t;

        passes = group_gradients(dataset, &current.beta0, &current.betas);
        let objective = sum_squares_of(&passes) / n;
        if !objective.is_finite() {
            return Err(Error::Divergence { iteration: t, block: 0 });
        }
        let (rel, weighted) = match &config.record_truth {
            Some(truth) => (
                Some(rel_errors(&current, truth)),
                Some(weighted_error(&current, truth, &counts, WeightScheme::SqrtFraction)?),
            ),
            None => (None, None),
        };
        trace.records.push(TraceRecord { iter: t, objective, rel_errors: rel, weighted_error: weighted });

        if config.stop_tol > 0.0 {
            quiet_iters = if change < config.stop_tol { quiet_iters + 1 } else { 0 };
            if quiet_iters >= 3 {
                converged = true;
                break;
            }
        }
    }

    Ok(FitResult {
        estimate: current,
        trace,
        iterations_run,
        converged,
        step_sizes: steps,
        feasibility_violations: violations,
    })
}

fn sum_squares_of(passes: &[GroupPass]) -> f64 {
    passes.iter().fold(0.0, |acc, p| acc + p.sq_residual)
}

/// Empirical contraction factor of a trace column: `exp` of the
/// least-squares slope of `ln(value)` against the iteration index, using the
/// records after `burn_in` whose value is positive.
pub fn convergence_rate(trace: &ConvergenceTrace, metric: TraceMetric, burn_in: usize) -> Result<f64> {
    let points: Vec<(f64, f64)> =
        trace.series(metric).into_iter().filter(|&(it, _)| it > burn_in).map(|(it, v)| (it as f64, v)).collect();
    series_contraction(&points)
}

/// Contraction factor of an arbitrary `(t, e_t)` series; nonpositive values
/// are dropped (they carry no rate information).
pub fn series_contraction(points: &[(f64, f64)]) -> Result<f64> {
    let logs: Vec<(f64, f64)> =
        points.iter().filter(|(_, v)| *v > 0.0 && v.is_finite()).map(|&(t, v)| (t, v.ln())).collect();
    if logs.len() < 2 {
        return Err(Error::RateUndefined(format!("{} positive records after burn-in, need at least 2", logs.len())));
    }
    let m = logs.len() as f64;
    let t_mean = logs.iter().map(|p| p.0).sum::<f64>() / m;
    let l_mean = logs.iter().map(|p| p.1).sum::<f64>() / m;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &(t, l) in &logs {
        sxy += (t - t_mean) * (l - l_mean);
        sxx += (t - t_mean) * (t - t_mean);
    }
    if sxx == 0.0 {
        return Err(Error::RateUndefined("all records share one iteration index".into()));
    }
    Ok((sxy / sxx).exp())
}
