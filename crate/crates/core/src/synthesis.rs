//! Synthetic instances of the data-enriched model and the four standard
//! experiment presets.
//!
//! Designs have i.i.d. isotropic rows (standard Gaussian by default).
//! Individual parameters are `s`-sparse with `N(0, 1)` nonzeros on uniformly
//! random supports; the shared parameter is either dense (rescaled to a target
//! norm, left unconstrained) or sparse (constrained by an l1 ball). Every
//! constrained block gets the ball whose radius is the truth's own norm.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::distr::Distribution;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ConstraintSpec, GroupedDataset, ParameterStack};
use crate::projection::{l1_norm, l2_norm, Constraint};
use crate::seed;
use crate::solver::{fit, FitConfig, StepMode, TraceMetric, UpdateOrder};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SampleSizes {
    Uniform(usize),
    PerGroup(Vec<usize>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    L1,
    L2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Beta0Kind {
    /// `N(0,1)` entries rescaled so the chosen norm equals `target`; the
    /// shared block is then left unconstrained.
    Dense { norm: NormKind, target: f64 },
    /// `s0` nonzeros, constrained by an l1 ball at the truth's radius.
    Sparse { s0: usize },
}

/// Row distribution of the designs. All three are zero-mean, unit-variance
/// and isotropic.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignDistribution {
    #[default]
    Gaussian,
    Rademacher,
    /// Uniform on `[-sqrt(3), sqrt(3)]`.
    Uniform,
}

impl DesignDistribution {
    fn sample(&self, rng: &mut seed::Rng) -> f64 {
        match self {
            DesignDistribution::Gaussian => StandardNormal.sample(rng),
            DesignDistribution::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            DesignDistribution::Uniform => rng.random_range(-3f64.sqrt()..3f64.sqrt()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupNoise {
    /// Group index in `1..=G`.
    pub group: usize,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisSpec {
    pub p: usize,
    pub groups: usize,
    pub samples: SampleSizes,
    /// Nonzeros per individual parameter.
    pub sparsity: usize,
    pub beta0: Beta0Kind,
    #[serde(default)]
    pub noise_sigma: f64,
    /// Per-group noise levels that replace `noise_sigma`.
    #[serde(default)]
    pub group_noise: Vec<GroupNoise>,
    #[serde(default)]
    pub design: DesignDistribution,
    #[serde(default)]
    pub seed: u64,
}

impl SynthesisSpec {
    pub fn sample_sizes(&self) -> Vec<usize> {
        match &self.samples {
            SampleSizes::Uniform(n) => vec![*n; self.groups],
            SampleSizes::PerGroup(v) => v.clone(),
        }
    }

    pub fn group_sigma(&self, g: usize) -> f64 {
        self.group_noise.iter().rev().find(|gn| gn.group == g).map_or(self.noise_sigma, |gn| gn.sigma)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.p == 0 || self.groups == 0 {
            return bad("p and G must be positive".into());
        }
        let sizes = self.sample_sizes();
        if sizes.len() != self.groups {
            return bad(format!("{} sample sizes for {} groups", sizes.len(), self.groups));
        }
        if let Some(i) = sizes.iter().position(|&n| n == 0) {
            return bad(format!("group {} has zero samples", i + 1));
        }
        if self.sparsity == 0 || self.sparsity > self.p {
            return bad(format!("individual sparsity {} must be in 1..={}", self.sparsity, self.p));
        }
        match self.beta0 {
            Beta0Kind::Sparse { s0 } if s0 == 0 || s0 > self.p => {
                return bad(format!("shared sparsity {s0} must be in 1..={}", self.p));
            }
            Beta0Kind::Dense { target, .. } if !(target.is_finite() && target > 0.0) => {
                return bad(format!("dense beta0 norm target must be positive, got {target}"));
            }
            _ => {}
        }
        let sigmas = std::iter::once(self.noise_sigma).chain(self.group_noise.iter().map(|g| g.sigma));
        if sigmas.into_iter().any(|s| !(s.is_finite() && s >= 0.0)) {
            return bad("noise levels must be nonnegative".into());
        }
        if let Some(gn) = self.group_noise.iter().find(|gn| gn.group == 0 || gn.group > self.groups) {
            return bad(format!("noise override for group {} outside 1..={}", gn.group, self.groups));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticInstance {
    pub dataset: GroupedDataset,
    pub truth: ParameterStack,
    pub constraints: ConstraintSpec,
    /// Noise vectors actually added to each `y_g`.
    pub noise: Vec<Array1<f64>>,
    pub spec: SynthesisSpec,
}

// Stream tags below the master seed.
const TRUTH: u64 = 1;
const DESIGN: u64 = 2;
const NOISE: u64 = 3;

fn sparse_normal(p: usize, s: usize, rng: &mut seed::Rng) -> Array1<f64> {
    let mut v = Array1::zeros(p);
    for i in rand::seq::index::sample(rng, p, s) {
        v[i] = StandardNormal.sample(rng);
    }
    v
}

pub fn generate(spec: &SynthesisSpec) -> Result<SyntheticInstance> {
    spec.validate()?;
    let p = spec.p;

    let (beta0, c0) = match spec.beta0 {
        Beta0Kind::Dense { norm, target } => {
            let mut rng = seed::rng(spec.seed, &[TRUTH, 0]);
            let mut v = Array1::from_shape_simple_fn(p, || StandardNormal.sample(&mut rng));
            let current = match norm {
                NormKind::L1 => l1_norm(v.view()),
                NormKind::L2 => l2_norm(v.view()),
            };
            v *= target / current;
            (v, Constraint::Unconstrained)
        }
        Beta0Kind::Sparse { s0 } => {
            let v = sparse_normal(p, s0, &mut seed::rng(spec.seed, &[TRUTH, 0]));
            let c = Constraint::l1(l1_norm(v.view()))?;
            (v, c)
        }
    };
    let betas: Vec<Array1<f64>> = (1..=spec.groups)
        .map(|g| sparse_normal(p, spec.sparsity, &mut seed::rng(spec.seed, &[TRUTH, g as u64])))
        .collect();

    let mut constraints = vec![c0];
    for b in &betas {
        constraints.push(Constraint::l1(l1_norm(b.view()))?);
    }
    let constraints = ConstraintSpec::new(constraints, spec.groups)?;

    let sizes = spec.sample_sizes();
    let parts: Vec<(Array2<f64>, Array1<f64>, Array1<f64>)> = (1..=spec.groups)
        .into_par_iter()
        .map(|g| {
            let ng = sizes[g - 1];
            let mut rng = seed::rng(spec.seed, &[DESIGN, g as u64]);
            let x = Array2::from_shape_simple_fn((ng, p), || spec.design.sample(&mut rng));
            let sigma = spec.group_sigma(g);
            let noise = if sigma > 0.0 {
                let mut rng = seed::rng(spec.seed, &[NOISE, g as u64]);
                Array1::from_shape_simple_fn(ng, || {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    sigma * z
                })
            } else {
                Array1::zeros(ng)
            };
            let mut y = x.dot(&(&beta0 + &betas[g - 1]));
            y += &noise;
            (x, y, noise)
        })
        .collect();

    let mut noise = Vec::with_capacity(parts.len());
    let mut groups = Vec::with_capacity(parts.len());
    for (x, y, w) in parts {
        groups.push((x, y));
        noise.push(w);
    }

    Ok(SyntheticInstance {
        dataset: GroupedDataset::new(groups)?,
        truth: ParameterStack::new(beta0, betas)?,
        constraints,
        noise,
        spec: spec.clone(),
    })
}

/// The four synthetic experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// p=100, G=10, s=10, n_g=60, dense unconstrained shared parameter.
    FigA,
    /// `FigA` with unit Gaussian noise on group 1 only.
    FigB,
    /// `FigA` with n_g=150.
    FigC,
    /// p=1000, G=100, s=10, 100-sparse shared parameter, n_g=150.
    FigD,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::FigA, Preset::FigB, Preset::FigC, Preset::FigD];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::FigA => "fig_a",
            Preset::FigB => "fig_b",
            Preset::FigC => "fig_c",
            Preset::FigD => "fig_d",
        }
    }

    pub fn spec(&self, seed: u64) -> SynthesisSpec {
        let small = |n_g: usize| SynthesisSpec {
            p: 100,
            groups: 10,
            samples: SampleSizes::Uniform(n_g),
            sparsity: 10,
            beta0: Beta0Kind::Dense { norm: NormKind::L1, target: 100.0 },
            noise_sigma: 0.0,
            group_noise: Vec::new(),
            design: DesignDistribution::Gaussian,
            seed,
        };
        match self {
            Preset::FigA => small(60),
            Preset::FigB => SynthesisSpec { group_noise: vec![GroupNoise { group: 1, sigma: 1.0 }], ..small(60) },
            Preset::FigC => small(150),
            Preset::FigD => SynthesisSpec {
                p: 1000,
                groups: 100,
                samples: SampleSizes::Uniform(150),
                sparsity: 10,
                beta0: Beta0Kind::Sparse { s0: 100 },
                noise_sigma: 0.0,
                group_noise: Vec::new(),
                design: DesignDistribution::Gaussian,
                seed,
            },
        }
    }

    /// Simplified steps, with the shared update taken after the individual
    /// ones: the simultaneous order is unstable at these steps on fig_a and fig_c.
    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            max_iters: match self {
                Preset::FigD => 1000,
                _ => 2000,
            },
            stop_tol: 0.0,
            step_mode: StepMode::SimplifiedPaper,
            update_order: UpdateOrder::GaussSeidel,
            record_truth: None,
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| Error::UnknownPreset(s.to_string()))
    }
}

/// Spec and recommended solver configuration for a named preset.
pub fn preset(name: &str, seed: u64) -> Result<(SynthesisSpec, FitConfig)> {
    let p: Preset = name.parse()?;
    Ok((p.spec(seed), p.fit_config()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub repetition: usize,
    pub seed: u64,
    pub iterations_run: usize,
    pub final_rel_errors: Vec<f64>,
    pub final_weighted_error: f64,
    pub feasibility_violations: usize,
}

/// Pointwise averages over repetitions of the per-iteration errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub iters: Vec<usize>,
    /// `mean_rel_errors[g][k]`: normalised squared error of block `g` at
    /// `iters[k]`, averaged over repetitions.
    pub mean_rel_errors: Vec<Vec<f64>>,
    pub mean_weighted_error: Vec<f64>,
    pub mean_objective: Vec<f64>,
    pub runs: Vec<RunSummary>,
}

impl ExperimentResult {
    pub fn num_blocks(&self) -> usize {
        self.mean_rel_errors.len()
    }

    /// Last averaged error of every block.
    pub fn final_rel_errors(&self) -> Vec<f64> {
        self.mean_rel_errors.iter().map(|c| *c.last().unwrap_or(&f64::NAN)).collect()
    }

    pub fn final_weighted_error(&self) -> f64 {
        *self.mean_weighted_error.last().unwrap_or(&f64::NAN)
    }

    /// Empirical contraction factor of block `g`'s averaged error curve.
    pub fn block_rate(&self, g: usize, burn_in: usize) -> Result<f64> {
        let pts: Vec<(f64, f64)> = self
            .iters
            .iter()
            .zip(&self.mean_rel_errors[g])
            .filter(|(it, _)| **it > burn_in)
            .map(|(&it, &v)| (it as f64, v))
            .collect();
        crate::solver::series_contraction(&pts)
    }

    /// First iteration at which block `g`'s averaged error is at or below `level`.
    pub fn iterations_to_reach(&self, g: usize, level: f64) -> Option<usize> {
        self.iters.iter().zip(&self.mean_rel_errors[g]).find(|(_, &v)| v <= level).map(|(&it, _)| it)
    }

    pub fn total_feasibility_violations(&self) -> usize {
        self.runs.iter().map(|r| r.feasibility_violations).sum()
    }
}

/// Generate and fit `repetitions` independent instances of `spec` (seeds
/// derived from `seed`) and average their error traces pointwise. Runs that
/// stop early contribute their last value to later iterations.
pub fn run_experiment(
    spec: &SynthesisSpec,
    config: &FitConfig,
    repetitions: usize,
    seed: u64,
) -> Result<ExperimentResult> {
    if repetitions == 0 {
        return Err(Error::InvalidArgument("repetitions must be at least 1".into()));
    }
    let traces = (0..repetitions)
        .into_par_iter()
        .map(|rep| {
            let rep_seed = seed::derive(seed, &[rep as u64]);
            let inst = generate(&SynthesisSpec { seed: rep_seed, ..spec.clone() })?;
            let cfg = FitConfig { record_truth: Some(inst.truth.clone()), ..config.clone() };
            let res = fit(&inst.dataset, &inst.constraints, &cfg)?;
            let last = res.trace.last().expect("fit records at least one iteration");
            let summary = RunSummary {
                repetition: rep,
                seed: rep_seed,
                iterations_run: res.iterations_run,
                final_rel_errors: last.rel_errors.clone().unwrap_or_default(),
                final_weighted_error: last.weighted_error.unwrap_or(f64::NAN),
                feasibility_violations: res.feasibility_violations,
            };
            Ok((res.trace, summary))
        })
        .collect::<Result<Vec<_>>>()?;

    let blocks = spec.groups + 1;
    let len = traces.iter().map(|(t, _)| t.records.len()).max().unwrap_or(0);
    let reps = repetitions as f64;
    let mut mean_rel = vec![vec![0.0; len]; blocks];
    let mut mean_weighted = vec![0.0; len];
    let mut mean_obj = vec![0.0; len];
    for (trace, _) in &traces {
        for k in 0..len {
            let rec = &trace.records[k.min(trace.records.len() - 1)];
            let rel = rec.rel_errors.as_ref().expect("truth recorded");
            for g in 0..blocks {
                mean_rel[g][k] += rel[g] / reps;
            }
            mean_weighted[k] += rec.weighted_error.unwrap_or(f64::NAN) / reps;
            mean_obj[k] += rec.objective / reps;
        }
    }

    Ok(ExperimentResult {
        iters: (1..=len).collect(),
        mean_rel_errors: mean_rel,
        mean_weighted_error: mean_weighted,
        mean_objective: mean_obj,
        runs: traces.into_iter().map(|(_, s)| s).collect(),
    })
}

/// [`run_experiment`] with a preset's spec and solver configuration.
pub fn run_preset(preset: Preset, repetitions: usize, seed: u64) -> Result<ExperimentResult> {
    run_experiment(&preset.spec(seed), &preset.fit_config(), repetitions, seed)
}

/// Normalised error column of block `g` from a single fit.
pub fn block_series(trace: &crate::solver::ConvergenceTrace, g: usize) -> Vec<(usize, f64)> {
    trace.series(TraceMetric::RelError(g))
}
