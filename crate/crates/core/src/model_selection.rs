//! K-fold cross-validation over constraint radii.
//!
//! Folds are stratified within each group, so every training split still
//! contains every group. The default grid scales a set of base radii with
//! one multiplier for the shared block and one for all individual blocks.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{predict, ConstraintSpec, GroupedDataset};
use crate::projection::Constraint;
use crate::seed;
use crate::solver::{fit, FitConfig, FitResult};

/// Two MSE values closer than this (relative) count as tied.
pub const TIE_RTOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiusGrid {
    /// `d_0 = s0 * base_0`, `d_g = s * base_g` for every pair `(s0, s)`.
    TwoScale { shared: Vec<f64>, individual: Vec<f64> },
    /// Explicit radius lists, `G+1` entries each.
    PerGroup(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvPlan {
    pub folds: usize,
    pub grid: RadiusGrid,
    /// Reference radii for `TwoScale`, one per block `0..=G`.
    pub base_radii: Vec<f64>,
    pub folds_seed: u64,
}

impl CvPlan {
    pub fn two_scale(base_radii: Vec<f64>, shared: Vec<f64>, individual: Vec<f64>, folds_seed: u64) -> Self {
        Self { folds: 10, grid: RadiusGrid::TwoScale { shared, individual }, base_radii, folds_seed }
    }
}

/// One candidate setting of the radii.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    /// `(shared scale, individual scale)` for two-scale grids.
    pub scales: Option<(f64, f64)>,
    pub constraints: ConstraintSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub point: GridPoint,
    pub fold_mse: Vec<f64>,
    pub mean_mse: f64,
    pub std_mse: f64,
}

#[derive(Clone, Debug)]
pub struct CvResult {
    pub table: Vec<CvRow>,
    /// Index into `table`.
    pub best: usize,
    pub refit: FitResult,
}

impl CvResult {
    pub fn best_row(&self) -> &CvRow {
        &self.table[self.best]
    }
}

/// Fold index of every sample, per group. Within a group the samples are
/// shuffled with a stream derived from `seed` and dealt round-robin.
pub fn fold_assignment(counts: &[usize], folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {folds}")));
    }
    counts
        .iter()
        .enumerate()
        .map(|(i, &ng)| {
            if ng < folds {
                return Err(Error::GroupTooSmall { group: i + 1, samples: ng, folds });
            }
            let mut order: Vec<usize> = (0..ng).collect();
            order.shuffle(&mut seed::rng(seed, &[i as u64 + 1]));
            let mut fold_of = vec![0; ng];
            for (pos, &sample) in order.iter().enumerate() {
                fold_of[sample] = pos % folds;
            }
            Ok(fold_of)
        })
        .collect()
}

fn grid_points(template: &ConstraintSpec, plan: &CvPlan) -> Result<Vec<GridPoint>> {
    let blocks = template.num_groups() + 1;
    let build = |radii: &[f64]| -> Result<ConstraintSpec> {
        let entries = template
            .entries()
            .iter()
            .zip(radii)
            .map(|(c, &r)| c.with_radius(r))
            .collect::<Result<Vec<Constraint>>>()?;
        ConstraintSpec::new(entries, blocks - 1)
    };
    let points = match &plan.grid {
        RadiusGrid::TwoScale { shared, individual } => {
            if shared.is_empty() || individual.is_empty() {
                return Err(Error::InvalidArgument("radius grid is empty".into()));
            }
            if plan.base_radii.len() != blocks {
                return Err(Error::Shape(format!("{} base radii for {blocks} blocks", plan.base_radii.len())));
            }
            let mut pts = Vec::with_capacity(shared.len() * individual.len());
            for &s0 in shared {
                for &s in individual {
                    let radii: Vec<f64> =
                        plan.base_radii.iter().enumerate().map(|(g, b)| b * if g == 0 { s0 } else { s }).collect();
                    pts.push(GridPoint { scales: Some((s0, s)), constraints: build(&radii)? });
                }
            }
            pts
        }
        RadiusGrid::PerGroup(lists) => {
            if lists.is_empty() {
                return Err(Error::InvalidArgument("radius grid is empty".into()));
            }
            lists
                .iter()
                .map(|radii| {
                    if radii.len() != blocks {
                        return Err(Error::Shape(format!("{} radii for {blocks} blocks", radii.len())));
                    }
                    Ok(GridPoint { scales: None, constraints: build(radii)? })
                })
                .collect::<Result<_>>()?
        }
    };
    Ok(points)
}

/// Held-out MSE of one fit on the samples of fold `k`, pooled over groups.
fn held_out_mse(dataset: &GroupedDataset, folds: &[Vec<usize>], k: usize, fit: &FitResult) -> Result<f64> {
    let mut sq = 0.0;
    let mut count = 0;
    for (i, grp) in dataset.groups().iter().enumerate() {
        let rows: Vec<usize> = (0..grp.y.len()).filter(|&r| folds[i][r] == k).collect();
        let x = grp.x.select(ndarray::Axis(0), &rows);
        let pred = predict(x.view(), &fit.estimate, i + 1)?;
        for (&r, yhat) in rows.iter().zip(pred.iter()) {
            sq += (grp.y[r] - yhat).powi(2);
        }
        count += rows.len();
    }
    Ok(sq / count as f64)
}

fn split(folds: &[Vec<usize>], k: usize) -> Vec<Vec<usize>> {
    folds.iter().map(|f| (0..f.len()).filter(|&r| f[r] != k).collect()).collect()
}

pub fn kfold_cv(
    dataset: &GroupedDataset,
    constraints_template: &ConstraintSpec,
    plan: &CvPlan,
    fit_config: &FitConfig,
) -> Result<CvResult> {
    if constraints_template.num_groups() != dataset.num_groups() {
        return Err(Error::Shape("constraint template does not match the number of groups".into()));
    }
    let folds = fold_assignment(&dataset.counts(), plan.folds, plan.folds_seed)?;
    let points = grid_points(constraints_template, plan)?;
    let train_sets: Vec<GroupedDataset> =
        (0..plan.folds).map(|k| dataset.select_rows(&split(&folds, k))).collect::<Result<_>>()?;

    let tasks: Vec<(usize, usize)> = (0..points.len()).flat_map(|p| (0..plan.folds).map(move |k| (p, k))).collect();
    let fold_mse: Vec<f64> = tasks
        .par_iter()
        .map(|&(p, k)| {
            let res = fit(&train_sets[k], &points[p].constraints, fit_config)?;
            held_out_mse(dataset, &folds, k, &res)
        })
        .collect::<Result<_>>()?;

    let table: Vec<CvRow> = points
        .into_iter()
        .enumerate()
        .map(|(p, point)| {
            let mse = fold_mse[p * plan.folds..(p + 1) * plan.folds].to_vec();
            let k = mse.len() as f64;
            let mean = mse.iter().sum::<f64>() / k;
            let var = mse.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (k - 1.0);
            CvRow { point, fold_mse: mse, mean_mse: mean, std_mse: var.sqrt() }
        })
        .collect();

    let best = select_best(&table);
    let refit = fit(dataset, &table[best].point.constraints, fit_config)?;
    Ok(CvResult { table, best, refit })
}

/// Smallest mean MSE; ties go to the smaller total radius, then to the
/// earlier grid point.
fn select_best(table: &[CvRow]) -> usize {
    let min = table.iter().map(|r| r.mean_mse).fold(f64::INFINITY, f64::min);
    let tied = |m: f64| m - min <= TIE_RTOL * min.abs().max(m.abs());
    let mut best = None::<usize>;
    for (i, row) in table.iter().enumerate() {
        if !tied(row.mean_mse) {
            continue;
        }
        best = match best {
            Some(b) if table[b].point.constraints.total_radius() <= row.point.constraints.total_radius() => Some(b),
            _ => Some(i),
        };
    }
    best.unwrap_or(0)
}

/// Base radii from an unconstrained pilot fit: the norm of each pilot block
/// under the template's constraint function (1 for unconstrained blocks).
pub fn pilot_radii(dataset: &GroupedDataset, template: &ConstraintSpec, config: &FitConfig) -> Result<Vec<f64>> {
    let pilot = fit(dataset, &ConstraintSpec::unconstrained(dataset.num_groups()), config)?;
    Ok(template
        .entries()
        .iter()
        .zip(pilot.estimate.blocks())
        .map(|(c, b)| match c {
            Constraint::Unconstrained => 1.0,
            _ => c.norm_of(b.view()).max(f64::MIN_POSITIVE),
        })
        .collect())
}
