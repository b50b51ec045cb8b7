//! Data types of the data-enriched model and the quantities evaluated on them.
//!
//! The stacked `n x (G+1)p` design is never materialised; everything runs
//! group by group over the per-group `X_g`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projection::{l2_norm, Constraint};

/// One group's design and response.
#[derive(Clone, Debug, PartialEq)]
pub struct Group {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
}

/// Per-group designs `X_g` (`n_g x p`) and responses `y_g`.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupedDataset {
    p: usize,
    groups: Vec<Group>,
    n: usize,
}

impl GroupedDataset {
    pub fn new(groups: Vec<(Array2<f64>, Array1<f64>)>) -> Result<Self> {
        let Some((first, _)) = groups.first() else {
            return Err(Error::InvalidArgument("dataset needs at least one group".into()));
        };
        let p = first.ncols();
        if p == 0 {
            return Err(Error::InvalidArgument("dimension p must be positive".into()));
        }
        let mut n = 0;
        for (i, (x, y)) in groups.iter().enumerate() {
            let group = i + 1;
            if x.ncols() != p {
                return Err(Error::GroupShape { group, what: "X columns", expected: p, found: x.ncols() });
            }
            if x.nrows() == 0 {
                return Err(Error::InvalidArgument(format!("group {group} has no samples")));
            }
            if y.len() != x.nrows() {
                return Err(Error::GroupShape { group, what: "y", expected: x.nrows(), found: y.len() });
            }
            n += x.nrows();
        }
        let groups = groups.into_iter().map(|(x, y)| Group { x, y }).collect();
        Ok(Self { p, groups, n })
    }

    /// Number of groups `G`.
    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    /// Total sample count `n = sum n_g`.
    pub fn n_total(&self) -> usize {
        self.n
    }

    /// Sample counts `n_1..n_G`.
    pub fn counts(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.x.nrows()).collect()
    }

    /// Groups in order; slice index `i` is group `i + 1`.
    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    /// Group `g` in `1..=G`.
    pub fn group(&self, g: usize) -> &Group {
        &self.groups[g - 1]
    }

    /// Keep only the listed rows of every group (`rows[i]` for group `i + 1`).
    pub fn select_rows(&self, rows: &[Vec<usize>]) -> Result<Self> {
        if rows.len() != self.groups.len() {
            return Err(Error::Shape(format!(
                "row selection covers {} groups, dataset has {}",
                rows.len(),
                self.groups.len()
            )));
        }
        let groups = self
            .groups
            .iter()
            .zip(rows)
            .map(|(g, idx)| (g.x.select(ndarray::Axis(0), idx), g.y.select(ndarray::Axis(0), idx)))
            .collect();
        Self::new(groups)
    }

    fn check_params(&self, params: &ParameterStack) -> Result<()> {
        if params.num_groups() != self.num_groups() {
            return Err(Error::Shape(format!(
                "parameters have {} individual blocks, dataset has {} groups",
                params.num_groups(),
                self.num_groups()
            )));
        }
        for g in 0..=params.num_groups() {
            let len = params.block(g).len();
            if len != self.p {
                return Err(Error::GroupShape { group: g, what: "parameter block", expected: self.p, found: len });
            }
        }
        Ok(())
    }
}

/// `beta0` followed by `beta_1..beta_G`, the `(G+1)p` stacked parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterStack {
    pub beta0: Array1<f64>,
    pub betas: Vec<Array1<f64>>,
}

impl ParameterStack {
    pub fn new(beta0: Array1<f64>, betas: Vec<Array1<f64>>) -> Result<Self> {
        let p = beta0.len();
        for (i, b) in betas.iter().enumerate() {
            if b.len() != p {
                return Err(Error::GroupShape { group: i + 1, what: "parameter block", expected: p, found: b.len() });
            }
        }
        Ok(Self { beta0, betas })
    }

    pub fn zeros(num_groups: usize, p: usize) -> Self {
        Self { beta0: Array1::zeros(p), betas: vec![Array1::zeros(p); num_groups] }
    }

    pub fn num_groups(&self) -> usize {
        self.betas.len()
    }

    pub fn dim(&self) -> usize {
        self.beta0.len()
    }

    /// Block `g`, with `g = 0` the shared parameter.
    pub fn block(&self, g: usize) -> &Array1<f64> {
        if g == 0 {
            &self.beta0
        } else {
            &self.betas[g - 1]
        }
    }

    pub fn block_mut(&mut self, g: usize) -> &mut Array1<f64> {
        if g == 0 {
            &mut self.beta0
        } else {
            &mut self.betas[g - 1]
        }
    }

    /// Blocks `0..=G` in order.
    pub fn blocks(&self) -> impl Iterator<Item = &Array1<f64>> {
        std::iter::once(&self.beta0).chain(self.betas.iter())
    }

    /// Euclidean norm of the whole stack.
    pub fn norm(&self) -> f64 {
        self.blocks().map(|b| b.dot(b)).sum::<f64>().sqrt()
    }

    /// Euclidean distance between two stacks of equal shape.
    pub fn distance(&self, other: &Self) -> f64 {
        self.blocks()
            .zip(other.blocks())
            .map(|(a, b)| {
                let d = a - b;
                d.dot(&d)
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Rows `beta0, beta_1, ..., beta_G` as a `(G+1) x p` matrix.
    pub fn to_matrix(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.num_groups() + 1, self.dim()));
        for (mut row, b) in m.rows_mut().into_iter().zip(self.blocks()) {
            row.assign(b);
        }
        m
    }

    pub fn from_matrix(m: ArrayView2<f64>) -> Result<Self> {
        if m.nrows() < 2 {
            return Err(Error::Shape(format!("parameter matrix needs at least 2 rows, got {}", m.nrows())));
        }
        let beta0 = m.row(0).to_owned();
        let betas = m.rows().into_iter().skip(1).map(|r| r.to_owned()).collect();
        Ok(Self { beta0, betas })
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.num_groups() != other.num_groups() || self.dim() != other.dim() {
            return Err(Error::Shape(format!(
                "parameter stacks differ: G={} p={} vs G={} p={}",
                self.num_groups(),
                self.dim(),
                other.num_groups(),
                other.dim()
            )));
        }
        Ok(())
    }
}

/// One constraint per block, `g = 0..=G`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    entries: Vec<Constraint>,
}

impl ConstraintSpec {
    pub fn new(entries: Vec<Constraint>, num_groups: usize) -> Result<Self> {
        if entries.len() != num_groups + 1 {
            return Err(Error::Shape(format!(
                "constraint list has {} entries, expected G+1 = {}",
                entries.len(),
                num_groups + 1
            )));
        }
        for c in &entries {
            c.validate()?;
        }
        Ok(Self { entries })
    }

    pub fn unconstrained(num_groups: usize) -> Self {
        Self { entries: vec![Constraint::Unconstrained; num_groups + 1] }
    }

    pub fn entries(&self) -> &[Constraint] {
        &self.entries
    }

    pub fn get(&self, g: usize) -> &Constraint {
        &self.entries[g]
    }

    pub fn num_groups(&self) -> usize {
        self.entries.len() - 1
    }

    /// Sum of the finite radii; used to order equally good candidates.
    pub fn total_radius(&self) -> f64 {
        self.entries.iter().filter_map(|c| c.radius()).sum()
    }

    pub fn is_feasible(&self, params: &ParameterStack, rtol: f64) -> bool {
        self.entries.iter().zip(params.blocks()).all(|(c, b)| c.is_satisfied(b.view(), rtol))
    }
}

/// Block weights of the error sets: `sqrt(n_g/n)` or `n_g/n`, with the
/// shared block taking `n_0 = n` and therefore weight 1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    #[default]
    SqrtFraction,
    Fraction,
}

impl WeightScheme {
    /// Weights for blocks `0..=G` given `n_1..n_G`.
    pub fn weights(&self, counts: &[usize]) -> Vec<f64> {
        let n: usize = counts.iter().sum();
        std::iter::once(1.0)
            .chain(counts.iter().map(|&ng| {
                let frac = ng as f64 / n as f64;
                match self {
                    WeightScheme::SqrtFraction => frac.sqrt(),
                    WeightScheme::Fraction => frac,
                }
            }))
            .collect()
    }
}

/// `X_g (beta0 + beta_g)` for a single group.
pub(crate) fn group_fitted(x: ArrayView2<f64>, beta0: &Array1<f64>, beta_g: &Array1<f64>) -> Array1<f64> {
    let combined = beta0 + beta_g;
    x.dot(&combined)
}

/// `X^T r` accumulated row by row, which keeps memory access contiguous for
/// row-major `X`.
pub(crate) fn xt_dot(x: ArrayView2<f64>, r: ArrayView1<f64>) -> Array1<f64> {
    let mut out = Array1::zeros(x.ncols());
    for (row, &ri) in x.rows().into_iter().zip(r.iter()) {
        out.scaled_add(ri, &row);
    }
    out
}

/// `r_g = y_g - X_g (beta0 + beta_g)` for every group.
pub fn residuals(dataset: &GroupedDataset, params: &ParameterStack) -> Result<Vec<Array1<f64>>> {
    dataset.check_params(params)?;
    Ok(dataset
        .groups
        .par_iter()
        .zip(params.betas.par_iter())
        .map(|(grp, beta_g)| {
            let mut r = grp.y.clone();
            r -= &group_fitted(grp.x.view(), &params.beta0, beta_g);
            r
        })
        .collect())
}

/// `(1/n) sum_g ||r_g||^2`, reduced in ascending group order.
pub fn objective(dataset: &GroupedDataset, params: &ParameterStack) -> Result<f64> {
    let res = residuals(dataset, params)?;
    Ok(sum_squares(&res) / dataset.n_total() as f64)
}

pub(crate) fn sum_squares(res: &[Array1<f64>]) -> f64 {
    res.iter().map(|r| r.dot(r)).fold(0.0, |acc, s| acc + s)
}

/// `X_new (beta0 + beta_g)`, or `X_new beta0` when `group_index == 0`.
pub fn predict(x_new: ArrayView2<f64>, params: &ParameterStack, group_index: usize) -> Result<Array1<f64>> {
    if x_new.ncols() != params.dim() {
        return Err(Error::Shape(format!(
            "new design has {} columns, parameters have dimension {}",
            x_new.ncols(),
            params.dim()
        )));
    }
    if group_index > params.num_groups() {
        return Err(Error::InvalidArgument(format!(
            "group index {group_index} out of range 0..={}",
            params.num_groups()
        )));
    }
    Ok(if group_index == 0 {
        x_new.dot(&params.beta0)
    } else {
        group_fitted(x_new, &params.beta0, &params.betas[group_index - 1])
    })
}

/// `sum_g w_g ||estimate_g - truth_g||_2` over blocks `0..=G`.
pub fn weighted_error(
    estimate: &ParameterStack,
    truth: &ParameterStack,
    counts: &[usize],
    scheme: WeightScheme,
) -> Result<f64> {
    estimate.check_same_shape(truth)?;
    if counts.len() != estimate.num_groups() {
        return Err(Error::Shape(format!("{} sample counts for {} groups", counts.len(), estimate.num_groups())));
    }
    let weights = scheme.weights(counts);
    Ok(estimate
        .blocks()
        .zip(truth.blocks())
        .zip(&weights)
        .map(|((e, t), w)| {
            let mut sq = 0.0;
            Zip::from(e).and(t).for_each(|a, b| sq += (a - b) * (a - b));
            w * sq.sqrt()
        })
        .sum())
}

/// `||v||_2`.
pub fn norm2(v: ArrayView1<f64>) -> f64 {
    l2_norm(v)
}
