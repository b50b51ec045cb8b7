//! Monte-Carlo probes of the cone geometry behind recovery and convergence.
//!
//! Every quantity here is a supremum or infimum over error cones. They are
//! estimated from sampled directions, so each estimate is one-sided: sampled
//! suprema are lower bounds of the true value, sampled infima are upper
//! bounds. [`Bound`] labels which one a number is.
//!
//! All probes are deterministic in `(inputs, seed)`: trial `t` draws from its
//! own stream `seed -> [.., t]`, so a run with more trials sees the same
//! samples as a shorter run plus some extra ones.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis};
use rand::distr::Distribution;
use rand::Rng as _;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{group_fitted, GroupedDataset, ParameterStack, WeightScheme};
use crate::projection::{l1_norm, l2_norm, Constraint};
use crate::seed::{self, Rng};
use crate::solver::StepSizes;

/// Consecutive rejected candidates before a sampler gives up.
pub const MAX_REJECTIONS: usize = 10_000;

/// Step of the first-order descent test, relative to the reference norm.
pub const DESCENT_TEST_STEP: f64 = 1e-6;

/// An error cone `C = cone{ d : f(b* + d) <= f(b*) }`, described by how to
/// sample unit directions from it.
#[derive(Clone, Debug, PartialEq)]
pub enum ConeSampler {
    /// All of `R^p`.
    FullSpace(usize),
    /// A finite set of rays, stored normalised.
    ExplicitRays(Vec<Array1<f64>>),
    /// Descent cone of the l1 norm at the reference point.
    L1DescentCone(Array1<f64>),
    /// Descent cone of the l2 norm at the reference point (a half-space).
    L2DescentCone(Array1<f64>),
}

/// Which side of the true value an estimate sits on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    Exact,
    LowerBound,
    UpperBound,
}

fn gaussian(p: usize, rng: &mut Rng) -> Array1<f64> {
    Array1::from_shape_simple_fn(p, || StandardNormal.sample(rng))
}

fn normalized(mut v: Array1<f64>) -> Option<Array1<f64>> {
    let n = l2_norm(v.view());
    if n > 0.0 && n.is_finite() {
        v /= n;
        Some(v)
    } else {
        None
    }
}

impl ConeSampler {
    pub fn rays(rays: Vec<Array1<f64>>) -> Result<Self> {
        let Some(p) = rays.first().map(|r| r.len()) else {
            return Err(Error::InvalidArgument("ray list is empty".into()));
        };
        let rays = rays
            .into_iter()
            .map(|r| {
                if r.len() != p {
                    return Err(Error::Shape(format!("ray of length {} among rays of length {p}", r.len())));
                }
                normalized(r).ok_or_else(|| Error::InvalidArgument("zero ray".into()))
            })
            .collect::<Result<_>>()?;
        Ok(ConeSampler::ExplicitRays(rays))
    }

    pub fn l1_descent(reference: Array1<f64>) -> Result<Self> {
        if l1_norm(reference.view()) == 0.0 {
            return Err(Error::InvalidArgument("descent cone needs a nonzero reference point".into()));
        }
        Ok(ConeSampler::L1DescentCone(reference))
    }

    pub fn l2_descent(reference: Array1<f64>) -> Result<Self> {
        if l2_norm(reference.view()) == 0.0 {
            return Err(Error::InvalidArgument("descent cone needs a nonzero reference point".into()));
        }
        Ok(ConeSampler::L2DescentCone(reference))
    }

    /// Error cone of a block constrained by `constraint` whose true value is
    /// `truth`. A truth strictly inside its ball (or no constraint at all)
    /// leaves every direction feasible.
    pub fn from_constraint(constraint: &Constraint, truth: &Array1<f64>) -> Result<Self> {
        let p = truth.len();
        match *constraint {
            Constraint::Unconstrained => Ok(ConeSampler::FullSpace(p)),
            Constraint::L1Ball(d) if l1_norm(truth.view()) >= d * (1.0 - 1e-12) => Self::l1_descent(truth.clone()),
            Constraint::L2Ball(d) if l2_norm(truth.view()) >= d * (1.0 - 1e-12) => Self::l2_descent(truth.clone()),
            _ => Ok(ConeSampler::FullSpace(p)),
        }
    }

    /// One sampler per block for a constrained model with known truth.
    pub fn for_blocks(constraints: &crate::model::ConstraintSpec, truth: &ParameterStack) -> Result<Vec<Self>> {
        constraints.entries().iter().zip(truth.blocks()).map(|(c, b)| Self::from_constraint(c, b)).collect()
    }

    pub fn dim(&self) -> usize {
        match self {
            ConeSampler::FullSpace(p) => *p,
            ConeSampler::ExplicitRays(r) => r[0].len(),
            ConeSampler::L1DescentCone(b) | ConeSampler::L2DescentCone(b) => b.len(),
        }
    }

    /// Membership of a direction. Descent cones use the first-order test
    /// `f(b* + t u) <= f(b*)` with `t = 1e-6 f(b*)`.
    pub fn contains(&self, u: &Array1<f64>) -> bool {
        match self {
            ConeSampler::FullSpace(_) => true,
            ConeSampler::ExplicitRays(rays) => match normalized(u.clone()) {
                Some(u) => rays.iter().any(|r| r.dot(&u) >= 1.0 - 1e-12),
                None => false,
            },
            ConeSampler::L1DescentCone(b) => {
                let d = l1_norm(b.view());
                let t = DESCENT_TEST_STEP * d / l2_norm(u.view()).max(f64::MIN_POSITIVE);
                let moved: f64 = b.iter().zip(u).map(|(bi, ui)| (bi + t * ui).abs()).sum();
                moved <= d
            }
            ConeSampler::L2DescentCone(b) => {
                let d = l2_norm(b.view());
                let t = DESCENT_TEST_STEP * d / l2_norm(u.view()).max(f64::MIN_POSITIVE);
                let moved = b.iter().zip(u).map(|(bi, ui)| (bi + t * ui).powi(2)).sum::<f64>().sqrt();
                moved <= d
            }
        }
    }

    fn candidate(&self, rng: &mut Rng) -> Option<Array1<f64>> {
        match self {
            ConeSampler::FullSpace(p) => normalized(gaussian(*p, rng)),
            ConeSampler::ExplicitRays(rays) => Some(rays[rng.random_range(0..rays.len())].clone()),
            ConeSampler::L1DescentCone(b) => {
                // On-support part arbitrary; off-support l1 mass no larger than
                // the first-order decrease it buys on the support.
                let mut u: Array1<f64> = Array1::zeros(b.len());
                let mut decrease = 0.0;
                for (i, &bi) in b.iter().enumerate() {
                    if bi != 0.0 {
                        let h: f64 = StandardNormal.sample(rng);
                        u[i] = h;
                        decrease -= bi.signum() * h;
                    }
                }
                if decrease < 0.0 {
                    u.mapv_inplace(|v| -v);
                    decrease = -decrease;
                }
                let off: Vec<usize> = (0..b.len()).filter(|&i| b[i] == 0.0).collect();
                if !off.is_empty() && decrease > 0.0 {
                    let z: Vec<f64> = off.iter().map(|_| StandardNormal.sample(rng)).collect();
                    let mass: f64 = z.iter().map(|v: &f64| v.abs()).sum();
                    let budget = rng.random::<f64>() * decrease;
                    for (&i, zi) in off.iter().zip(&z) {
                        u[i] = zi * budget / mass;
                    }
                }
                normalized(u)
            }
            ConeSampler::L2DescentCone(b) => {
                let bhat = normalized(b.clone())?;
                let mut u = gaussian(b.len(), rng);
                let c = u.dot(&bhat);
                if c > 0.0 {
                    u.scaled_add(-2.0 * c, &bhat);
                }
                normalized(u)
            }
        }
    }

    /// A unit direction from the cone, verified against [`Self::contains`].
    pub fn sample_direction(&self, rng: &mut Rng) -> Result<Array1<f64>> {
        for _ in 0..MAX_REJECTIONS {
            if let Some(u) = self.candidate(rng) {
                if self.contains(&u) {
                    return Ok(u);
                }
            }
        }
        Err(Error::SamplerExhausted { attempts: MAX_REJECTIONS })
    }

    /// `sup { <g, u> : u in cone, ||u|| = 1 }` when it has a closed form.
    ///
    /// For descent cones this is `||P_C(g)||`, the norm of the projection onto
    /// the cone, which equals the distance from `g` to the polar cone. For the
    /// l1 case that distance is a one-dimensional convex minimisation over the
    /// scale `t >= 0` of the subdifferential. `None` when the projection is
    /// zero (then the supremum over the sphere is not positive and has no
    /// simple form).
    pub fn exact_support(&self, g: &Array1<f64>) -> Option<f64> {
        match self {
            ConeSampler::FullSpace(_) => Some(l2_norm(g.view())),
            ConeSampler::ExplicitRays(rays) => Some(rays.iter().map(|r| r.dot(g)).fold(f64::NEG_INFINITY, f64::max)),
            ConeSampler::L2DescentCone(b) => {
                let bhat = normalized(b.clone())?;
                let c = g.dot(&bhat).max(0.0);
                let mut proj = g.clone();
                proj.scaled_add(-c, &bhat);
                let n = l2_norm(proj.view());
                (n > 0.0).then_some(n)
            }
            ConeSampler::L1DescentCone(b) => {
                let dist = l1_polar_distance(b, g);
                (dist > 0.0).then_some(dist)
            }
        }
    }
}

/// `dist(g, cone(subdiff ||.||_1 at b))`.
fn l1_polar_distance(b: &Array1<f64>, g: &Array1<f64>) -> f64 {
    let value = |t: f64| -> f64 {
        b.iter()
            .zip(g)
            .map(|(&bi, &gi)| if bi != 0.0 { (gi - t * bi.signum()).powi(2) } else { (gi.abs() - t).max(0.0).powi(2) })
            .sum()
    };
    let slope =
        |t: f64| -> f64 {
            b.iter()
                .zip(g)
                .map(|(&bi, &gi)| {
                    if bi != 0.0 {
                        -2.0 * bi.signum() * (gi - t * bi.signum())
                    } else {
                        -2.0 * (gi.abs() - t).max(0.0)
                    }
                })
                .sum()
        };
    if slope(0.0) >= 0.0 {
        return value(0.0).sqrt();
    }
    let (mut lo, mut hi) = (0.0, g.iter().fold(0.0f64, |m, v| m.max(v.abs())) + 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if slope(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    value(0.5 * (lo + hi)).sqrt()
}

/// Direct rejection sampling from isotropic proposals: the fraction of
/// Gaussian directions that pass the membership test.
pub fn rejection_acceptance_rate(sampler: &ConeSampler, trials: usize, seed: u64) -> f64 {
    let mut rng = seed::rng(seed, &[0]);
    let p = sampler.dim();
    let accepted =
        (0..trials).filter(|_| normalized(gaussian(p, &mut rng)).is_some_and(|u| sampler.contains(&u))).count();
    accepted as f64 / trials.max(1) as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WidthEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub n_gaussians: usize,
    pub bound: Bound,
}

/// `omega(A) = E sup_{u in A} <g, u>` over `n_gaussians` draws. The supremum
/// for each draw is the best of `n_directions` sampled cone directions,
/// replaced by the exact maximiser where the cone admits one.
pub fn gaussian_width_mc(
    sampler: &ConeSampler,
    n_gaussians: usize,
    n_directions: usize,
    seed: u64,
) -> Result<WidthEstimate> {
    if n_gaussians == 0 {
        return Err(Error::InvalidArgument("need at least one Gaussian draw".into()));
    }
    let p = sampler.dim();
    let sups = (0..n_gaussians)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::rng(seed, &[i as u64]);
            let g = gaussian(p, &mut rng);
            let mut best = f64::NEG_INFINITY;
            for _ in 0..n_directions {
                best = best.max(sampler.sample_direction(&mut rng)?.dot(&g));
            }
            let exact = sampler.exact_support(&g);
            if let Some(e) = exact {
                best = best.max(e);
            }
            if best == f64::NEG_INFINITY {
                return Err(Error::InvalidArgument("no directions sampled and no exact supremum available".into()));
            }
            Ok((best, exact.is_some()))
        })
        .collect::<Result<Vec<_>>>()?;

    let m = sups.len() as f64;
    let mean = sups.iter().map(|s| s.0).sum::<f64>() / m;
    let var = if sups.len() > 1 { sups.iter().map(|s| (s.0 - mean).powi(2)).sum::<f64>() / (m - 1.0) } else { 0.0 };
    let all_exact = sups.iter().all(|s| s.1);
    Ok(WidthEstimate {
        mean,
        std_err: (var / m).sqrt(),
        n_gaussians,
        bound: if all_exact { Bound::Exact } else { Bound::LowerBound },
    })
}

/// Restricted-eigenvalue probe: the smallest value of `(1/n) ||X delta||^2`
/// over sampled `delta` normalised to `sum_g w_g ||delta_g|| = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReProbe {
    /// Squared form, `inf (1/n) ||X delta||^2`.
    pub kappa: f64,
    /// Unsquared form, `inf (1/sqrt(n)) ||X delta||`.
    pub kappa_sqrt: f64,
    pub trials: usize,
    pub weights: WeightScheme,
    pub bound: Bound,
}

/// `(1/n) ||X delta||^2 / (sum_g w_g ||delta_g||)^2`, the quadratic form at
/// `delta` rescaled onto the normalised set.
pub fn re_quotient(dataset: &GroupedDataset, delta: &ParameterStack, weights: WeightScheme) -> Result<f64> {
    if delta.num_groups() != dataset.num_groups() || delta.dim() != dataset.dim() {
        return Err(Error::Shape("direction does not match the dataset shape".into()));
    }
    let quad = dataset
        .groups()
        .iter()
        .zip(&delta.betas)
        .map(|(grp, d)| {
            let v = group_fitted(grp.x.view(), &delta.beta0, d);
            v.dot(&v)
        })
        .sum::<f64>()
        / dataset.n_total() as f64;
    let w = weights.weights(&dataset.counts());
    let scale: f64 = delta.blocks().zip(&w).map(|(b, w)| w * l2_norm(b.view())).sum();
    if scale == 0.0 {
        return Err(Error::InvalidArgument("zero direction".into()));
    }
    Ok(quad / (scale * scale))
}

fn check_samplers(samplers: &[ConeSampler], blocks: usize, p: usize) -> Result<()> {
    if samplers.len() != blocks {
        return Err(Error::Shape(format!("{} cone samplers for {blocks} blocks", samplers.len())));
    }
    if let Some(s) = samplers.iter().find(|s| s.dim() != p) {
        return Err(Error::Shape(format!("cone of dimension {} in a model of dimension {p}", s.dim())));
    }
    Ok(())
}

pub fn re_probe(
    dataset: &GroupedDataset,
    samplers: &[ConeSampler],
    weights: WeightScheme,
    trials: usize,
    seed: u64,
) -> Result<ReProbe> {
    re_probe_with(dataset, samplers, weights, trials, seed, &[])
}

/// [`re_probe`] that also evaluates caller-supplied directions (assumed to lie
/// in the cones).
pub fn re_probe_with(
    dataset: &GroupedDataset,
    samplers: &[ConeSampler],
    weights: WeightScheme,
    trials: usize,
    seed: u64,
    candidates: &[ParameterStack],
) -> Result<ReProbe> {
    let g_count = dataset.num_groups();
    check_samplers(samplers, g_count + 1, dataset.dim())?;
    let w = weights.weights(&dataset.counts());
    let n = dataset.n_total() as f64;

    let sampled = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::rng(seed, &[t as u64]);
            let dirs: Vec<Array1<f64>> =
                samplers.iter().map(|s| s.sample_direction(&mut rng)).collect::<Result<_>>()?;
            let images: Vec<(Array1<f64>, Array1<f64>)> = dataset
                .groups()
                .iter()
                .enumerate()
                .map(|(i, grp)| (grp.x.dot(&dirs[0]), grp.x.dot(&dirs[i + 1])))
                .collect();
            let quad = |a: &[f64]| -> f64 {
                let total: f64 = a.iter().zip(&w).map(|(a, w)| a * w).sum();
                images
                    .iter()
                    .enumerate()
                    .map(|(i, (z0, zg))| {
                        let v = z0 * a[0] + zg * a[i + 1];
                        v.dot(&v)
                    })
                    .sum::<f64>()
                    / n
                    / (total * total)
            };

            // Random magnitudes.
            let random: Vec<f64> = (0..=g_count).map(|_| Exp1.sample(&mut rng)).collect();
            // Each individual block at the magnitude that best cancels the shared one.
            let mut coupled = vec![1.0];
            coupled.extend(images.iter().map(|(z0, zg)| {
                let zz = zg.dot(zg);
                if zz > 0.0 {
                    (-z0.dot(zg) / zz).max(0.0)
                } else {
                    0.0
                }
            }));
            Ok(quad(&random).min(quad(&coupled)))
        })
        .collect::<Result<Vec<f64>>>()?;

    let mut kappa = sampled.into_iter().fold(f64::INFINITY, f64::min);
    for c in candidates {
        kappa = kappa.min(re_quotient(dataset, c, weights)?);
    }
    if !kappa.is_finite() {
        return Err(Error::InvalidArgument("re_probe needs at least one trial or candidate".into()));
    }
    Ok(ReProbe { kappa, kappa_sqrt: kappa.sqrt(), trials, weights, bound: Bound::UpperBound })
}

/// Incoherence between the shared cone and each individual cone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeicEstimate {
    /// Per group, `min ||d_0 + d_g|| / (||d_0|| + ||d_g||)` over sampled pairs.
    pub per_group: Vec<f64>,
    /// Smallest per-group value among groups at or above the threshold
    /// (0 when none are).
    pub lambda_min: f64,
    /// `sum_{g in I} n_g / n` with `I` the groups at or above the threshold.
    pub rho_fraction: f64,
    pub threshold: f64,
    pub bound: Bound,
}

/// Minimum of `||a u + b v|| / (a + b)` over magnitudes `a, b >= 0`; attained
/// at `a = b`, giving `sqrt((1 + <u, v>) / 2)` for unit `u, v`.
fn pair_ratio(u: &Array1<f64>, v: &Array1<f64>) -> f64 {
    ((1.0 + u.dot(v)) / 2.0).clamp(0.0, 1.0).sqrt()
}

pub fn deic_probe(
    sampler0: &ConeSampler,
    samplers: &[ConeSampler],
    counts: &[usize],
    trials: usize,
    lambda_threshold: f64,
    seed: u64,
) -> Result<DeicEstimate> {
    if trials == 0 {
        return Err(Error::InvalidArgument("deic_probe needs at least one trial".into()));
    }
    if !(lambda_threshold > 0.0 && lambda_threshold < 1.0) {
        return Err(Error::InvalidArgument(format!("threshold must be in (0, 1), got {lambda_threshold}")));
    }
    if counts.len() != samplers.len() {
        return Err(Error::Shape(format!("{} counts for {} group cones", counts.len(), samplers.len())));
    }
    check_samplers(samplers, samplers.len(), sampler0.dim())?;

    let per_group = samplers
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            if let (ConeSampler::ExplicitRays(r0), ConeSampler::ExplicitRays(rg)) = (sampler0, s) {
                return Ok(r0.iter().flat_map(|u| rg.iter().map(move |v| pair_ratio(u, v))).fold(1.0, f64::min));
            }
            let mut best: f64 = 1.0;
            for t in 0..trials {
                let mut rng = seed::rng(seed, &[i as u64 + 1, t as u64]);
                let u = sampler0.sample_direction(&mut rng)?;
                let v = s.sample_direction(&mut rng)?;
                best = best.min(pair_ratio(&u, &v));
            }
            Ok(best)
        })
        .collect::<Result<Vec<f64>>>()?;

    let n: usize = counts.iter().sum();
    let passing: Vec<usize> = (0..per_group.len()).filter(|&i| per_group[i] >= lambda_threshold).collect();
    let lambda_min = passing.iter().map(|&i| per_group[i]).fold(f64::INFINITY, f64::min);
    Ok(DeicEstimate {
        lambda_min: if passing.is_empty() { 0.0 } else { lambda_min },
        rho_fraction: passing.iter().map(|&i| counts[i]).sum::<usize>() as f64 / n as f64,
        per_group,
        threshold: lambda_threshold,
        bound: Bound::UpperBound,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupContraction {
    /// `sup_{u,v in B_g} v^T (I - mu_g X_g^T X_g) u`.
    pub rho: f64,
    /// `mu_g sup_{v in B_g, u in B_0} -v^T X_g^T X_g u`.
    pub phi: f64,
    /// `mu_g sup_{v in B_g} v^T X_g^T w_g / ||w_g||`.
    pub eta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionEstimate {
    /// The shared block's `rho_0` with the stacked design and `mu_0`.
    pub rho0: f64,
    pub per_group: Vec<GroupContraction>,
    /// `max(rho_0 + sum_g sqrt(n_g/n) phi_g, max_g [rho_g + sqrt(n/n_g) (mu_0/mu_g) phi_g])`.
    pub derived_rho: f64,
    pub directions: usize,
    pub bound: Bound,
}

fn sample_block(sampler: &ConeSampler, k: usize, seed: u64, block: u64) -> Result<Array2<f64>> {
    let mut rng = seed::rng(seed, &[block]);
    let mut m = Array2::zeros((k, sampler.dim()));
    for mut row in m.axis_iter_mut(Axis(0)) {
        row.assign(&sampler.sample_direction(&mut rng)?);
    }
    Ok(m)
}

/// Monte-Carlo lower bounds of the contraction constants. `directions` unit
/// vectors are drawn per cone and every pair among them is evaluated; the
/// suprema run over `cone ∩ unit ball`, so they are never below zero.
pub fn contraction_probe(
    dataset: &GroupedDataset,
    samplers: &[ConeSampler],
    steps: &StepSizes,
    noise: Option<&[Array1<f64>]>,
    directions: usize,
    seed: u64,
) -> Result<ContractionEstimate> {
    let g_count = dataset.num_groups();
    check_samplers(samplers, g_count + 1, dataset.dim())?;
    steps.validate()?;
    if steps.mus.len() != g_count {
        return Err(Error::Shape(format!("{} step sizes for {g_count} groups", steps.mus.len())));
    }
    if directions == 0 {
        return Err(Error::InvalidArgument("need at least one direction per cone".into()));
    }
    if let Some(noise) = noise {
        if noise.len() != g_count {
            return Err(Error::Shape(format!("{} noise vectors for {g_count} groups", noise.len())));
        }
        for (i, (w, grp)) in noise.iter().zip(dataset.groups()).enumerate() {
            if w.len() != grp.y.len() {
                return Err(Error::GroupShape { group: i + 1, what: "noise", expected: grp.y.len(), found: w.len() });
            }
        }
    }

    let dirs: Vec<Array2<f64>> = (0..=g_count)
        .into_par_iter()
        .map(|b| sample_block(&samplers[b], directions, seed, b as u64))
        .collect::<Result<_>>()?;
    let sup = |m: &Array2<f64>| m.iter().copied().fold(0.0f64, f64::max);

    // Images of the shared directions under every X_g: n_g x K.
    let shared_images: Vec<Array2<f64>> = dataset.groups().par_iter().map(|grp| grp.x.dot(&dirs[0].t())).collect();

    let mut gram0 = dirs[0].dot(&dirs[0].t());
    for z in &shared_images {
        gram0.scaled_add(-steps.mu0, &z.t().dot(z));
    }
    let rho0 = sup(&gram0);

    let per_group: Vec<GroupContraction> = dataset
        .groups()
        .par_iter()
        .enumerate()
        .map(|(i, grp)| {
            let u = &dirs[i + 1];
            let mu = steps.mus[i];
            let z = grp.x.dot(&u.t());
            let mut gram = u.dot(&u.t());
            gram.scaled_add(-mu, &z.t().dot(&z));
            let cross = z.t().dot(&shared_images[i]);
            let phi = mu * cross.iter().map(|v| -v).fold(0.0f64, f64::max);
            let eta = match noise {
                Some(noise) if l2_norm(noise[i].view()) > 0.0 => {
                    let w = &noise[i] / l2_norm(noise[i].view());
                    mu * z.t().dot(&w).iter().copied().fold(0.0f64, f64::max)
                }
                _ => 0.0,
            };
            GroupContraction { rho: sup(&gram), phi, eta }
        })
        .collect();

    let n = dataset.n_total() as f64;
    let counts = dataset.counts();
    let shared_term = rho0 + per_group.iter().zip(&counts).map(|(c, &ng)| (ng as f64 / n).sqrt() * c.phi).sum::<f64>();
    let group_term = per_group
        .iter()
        .zip(&counts)
        .zip(&steps.mus)
        .map(|((c, &ng), mu)| c.rho + (n / ng as f64).sqrt() * (steps.mu0 / mu) * c.phi)
        .fold(f64::NEG_INFINITY, f64::max);

    Ok(ContractionEstimate {
        rho0,
        per_group,
        derived_rho: shared_term.max(group_term),
        directions,
        bound: Bound::LowerBound,
    })
}

/// `gamma = max_g n / n_g`.
pub fn balance_condition_number(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    counts.iter().map(|&ng| n as f64 / ng as f64).fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsOptions {
    pub width_gaussians: usize,
    pub width_directions: usize,
    pub re_trials: usize,
    pub re_weights: WeightScheme,
    pub deic_trials: usize,
    pub lambda_threshold: f64,
    pub contraction_directions: usize,
    pub seed: u64,
}

impl Default for DiagnosticsOptions {
    fn default() -> Self {
        Self {
            width_gaussians: 1000,
            width_directions: 10,
            re_trials: 1000,
            re_weights: WeightScheme::Fraction,
            deic_trials: 1000,
            lambda_threshold: 0.05,
            contraction_directions: 200,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub widths: Vec<WidthEstimate>,
    pub re: ReProbe,
    pub deic: DeicEstimate,
    pub contraction: ContractionEstimate,
    pub gamma: f64,
    pub options: DiagnosticsOptions,
}

/// Run every probe on one model.
pub fn diagnose(
    dataset: &GroupedDataset,
    samplers: &[ConeSampler],
    steps: &StepSizes,
    noise: Option<&[Array1<f64>]>,
    options: &DiagnosticsOptions,
) -> Result<DiagnosticsReport> {
    let seed = options.seed;
    let widths = samplers
        .iter()
        .enumerate()
        .map(|(b, s)| {
            gaussian_width_mc(s, options.width_gaussians, options.width_directions, seed::derive(seed, &[1, b as u64]))
        })
        .collect::<Result<_>>()?;
    let re = re_probe(dataset, samplers, options.re_weights, options.re_trials, seed::derive(seed, &[2]))?;
    let deic = deic_probe(
        &samplers[0],
        &samplers[1..],
        &dataset.counts(),
        options.deic_trials,
        options.lambda_threshold,
        seed::derive(seed, &[3]),
    )?;
    let contraction =
        contraction_probe(dataset, samplers, steps, noise, options.contraction_directions, seed::derive(seed, &[4]))?;
    Ok(DiagnosticsReport {
        widths,
        re,
        deic,
        contraction,
        gamma: balance_condition_number(&dataset.counts()),
        options: options.clone(),
    })
}

impl DiagnosticsReport {
    /// Flat `key -> value` view, one entry per number.
    pub fn to_flat(&self) -> BTreeMap<String, serde_json::Value> {
        use serde_json::json;
        let mut m = BTreeMap::new();
        for (b, w) in self.widths.iter().enumerate() {
            m.insert(format!("width_{b}_mean"), json!(w.mean));
            m.insert(format!("width_{b}_std_err"), json!(w.std_err));
            m.insert(format!("width_{b}_bound"), json!(w.bound));
        }
        m.insert("re_kappa".into(), json!(self.re.kappa));
        m.insert("re_kappa_sqrt".into(), json!(self.re.kappa_sqrt));
        m.insert("re_bound".into(), json!(self.re.bound));
        m.insert("re_weights".into(), json!(self.re.weights));
        for (g, l) in self.deic.per_group.iter().enumerate() {
            m.insert(format!("deic_lambda_{}", g + 1), json!(l));
        }
        m.insert("deic_lambda_min".into(), json!(self.deic.lambda_min));
        m.insert("deic_rho_fraction".into(), json!(self.deic.rho_fraction));
        m.insert("deic_threshold".into(), json!(self.deic.threshold));
        m.insert("deic_bound".into(), json!(self.deic.bound));
        m.insert("contraction_rho0".into(), json!(self.contraction.rho0));
        for (g, c) in self.contraction.per_group.iter().enumerate() {
            m.insert(format!("contraction_rho_{}", g + 1), json!(c.rho));
            m.insert(format!("contraction_phi_{}", g + 1), json!(c.phi));
            m.insert(format!("contraction_eta_{}", g + 1), json!(c.eta));
        }
        m.insert("contraction_derived_rho".into(), json!(self.contraction.derived_rho));
        m.insert("contraction_bound".into(), json!(self.contraction.bound));
        m.insert("gamma".into(), json!(self.gamma));
        m.insert("seed".into(), json!(self.options.seed));
        m.insert("width_gaussians".into(), json!(self.options.width_gaussians));
        m.insert("re_trials".into(), json!(self.options.re_trials));
        m.insert("deic_trials".into(), json!(self.options.deic_trials));
        m.insert("contraction_directions".into(), json!(self.options.contraction_directions));
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn l1_descent_membership() {
        let cone = ConeSampler::l1_descent(array![1.0, 0.0]).unwrap();
        assert!(cone.contains(&array![-1.0, 0.0]));
        assert!(!cone.contains(&array![1.0, 0.0]));
        assert!(cone.contains(&array![-1.0, 0.5]));
        assert!(!cone.contains(&array![-1.0, 1.5]));
        assert!(ConeSampler::FullSpace(3).contains(&array![0.2, -4.0, 1.0]));
    }

    #[test]
    fn sampled_directions_are_unit_members() {
        let mut rng = seed::rng(1, &[]);
        let mut beta = Array1::zeros(40);
        beta[3] = 2.0;
        beta[17] = -0.5;
        for cone in [
            ConeSampler::FullSpace(40),
            ConeSampler::l1_descent(beta.clone()).unwrap(),
            ConeSampler::l2_descent(beta.clone()).unwrap(),
        ] {
            for _ in 0..200 {
                let u = cone.sample_direction(&mut rng).unwrap();
                assert_abs_diff_eq!(l2_norm(u.view()), 1.0, epsilon = 1e-12);
                assert!(cone.contains(&u));
            }
        }
    }

    #[test]
    fn acceptance_drops_with_dimension() {
        let rate = |p: usize| {
            let mut b = Array1::zeros(p);
            b[0] = 1.0;
            b[1] = -1.0;
            rejection_acceptance_rate(&ConeSampler::l1_descent(b).unwrap(), 4000, 3)
        };
        let (small, large) = (rate(4), rate(40));
        assert!(small > large, "{small} vs {large}");
    }

    #[test]
    fn single_ray_width_is_zero_mean() {
        let cone = ConeSampler::rays(vec![array![0.6, 0.8, 0.0]]).unwrap();
        let w = gaussian_width_mc(&cone, 20000, 1, 5).unwrap();
        assert!(w.mean.abs() < 3.0 * w.std_err, "{w:?}");
        assert_eq!(w.bound, Bound::Exact);
    }

    #[test]
    fn l1_exact_support_dominates_samples() {
        let mut b = Array1::zeros(20);
        b[2] = 1.0;
        b[9] = -2.0;
        let cone = ConeSampler::l1_descent(b).unwrap();
        let mut rng = seed::rng(8, &[]);
        for _ in 0..50 {
            let g = gaussian(20, &mut rng);
            let exact = cone.exact_support(&g).unwrap_or(0.0);
            for _ in 0..50 {
                let u = cone.sample_direction(&mut rng).unwrap();
                assert!(u.dot(&g) <= exact + 1e-9);
            }
        }
    }

    #[test]
    fn deic_on_rays() {
        let u = array![1.0, 0.0];
        let v = array![0.0, 1.0];
        let same = ConeSampler::rays(vec![u.clone()]).unwrap();
        let est = deic_probe(&same, std::slice::from_ref(&same), &[10], 5, 0.05, 0).unwrap();
        assert_abs_diff_eq!(est.per_group[0], 1.0, epsilon = 1e-12);
        assert_eq!(est.rho_fraction, 1.0);

        let opposite = ConeSampler::rays(vec![-&u]).unwrap();
        let est = deic_probe(&same, &[opposite], &[10], 5, 0.05, 0).unwrap();
        assert!(est.per_group[0] < 1e-6);
        assert_eq!(est.rho_fraction, 0.0);
        assert_eq!(est.lambda_min, 0.0);

        let orth = ConeSampler::rays(vec![v]).unwrap();
        let est = deic_probe(&same, &[orth], &[10], 5, 0.05, 0).unwrap();
        assert_abs_diff_eq!(est.per_group[0], std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-12);
        assert!(deic_probe(&same, std::slice::from_ref(&same), &[1], 5, 1.5, 0).is_err());
    }

    #[test]
    fn zero_step_contraction() {
        let ds = GroupedDataset::new(vec![(array![[1.0, 2.0], [0.0, 1.0]], array![0.0, 0.0])]).unwrap();
        let cones = vec![ConeSampler::FullSpace(2), ConeSampler::FullSpace(2)];
        // Step sizes must be positive, so emulate mu_g -> 0 with a tiny value.
        let steps = StepSizes::new(1e-300, vec![1e-300]).unwrap();
        let est = contraction_probe(&ds, &cones, &steps, None, 50, 1).unwrap();
        assert!(est.per_group[0].rho <= 1.0 + 1e-12);
        assert!(est.per_group[0].rho > 0.9);
        assert!(est.per_group[0].phi < 1e-290);
        assert_eq!(est.per_group[0].eta, 0.0);
    }

    #[test]
    fn scaled_identity_single_ray_contracts_to_zero() {
        let ng = 4;
        let x = Array2::eye(ng) * (ng as f64).sqrt();
        let ds = GroupedDataset::new(vec![(x, Array1::zeros(ng))]).unwrap();
        // X^T X = n_g I, so the step 1/n_g gives I - mu X^T X = 0.
        let ray = ConeSampler::rays(vec![array![1.0, 0.0, 0.0, 0.0]]).unwrap();
        let steps = StepSizes::new(0.25, vec![0.25]).unwrap();
        let est = contraction_probe(&ds, &[ray.clone(), ray], &steps, None, 3, 0).unwrap();
        assert_abs_diff_eq!(est.per_group[0].rho, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn balance() {
        assert_eq!(balance_condition_number(&[60; 10]), 10.0);
        assert_eq!(balance_condition_number(&[1, 3]), 4.0);
    }
}
