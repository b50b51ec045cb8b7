//! Euclidean projections onto the norm balls used as block constraints.

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Constraint set for one parameter block: `{ beta : f(beta) <= radius }`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "radius", rename_all = "snake_case")]
pub enum Constraint {
    Unconstrained,
    L1Ball(f64),
    L2Ball(f64),
}

/// The projection operator is fully described by the constraint it projects onto.
pub type ProjectionKind = Constraint;

impl Constraint {
    pub fn l1(radius: f64) -> Result<Self> {
        check_radius(radius)?;
        Ok(Constraint::L1Ball(radius))
    }

    pub fn l2(radius: f64) -> Result<Self> {
        check_radius(radius)?;
        Ok(Constraint::L2Ball(radius))
    }

    pub fn radius(&self) -> Option<f64> {
        match *self {
            Constraint::Unconstrained => None,
            Constraint::L1Ball(d) | Constraint::L2Ball(d) => Some(d),
        }
    }

    /// Same norm, different radius. `Unconstrained` stays unconstrained.
    pub fn with_radius(&self, radius: f64) -> Result<Self> {
        match self {
            Constraint::Unconstrained => Ok(Constraint::Unconstrained),
            Constraint::L1Ball(_) => Constraint::l1(radius),
            Constraint::L2Ball(_) => Constraint::l2(radius),
        }
    }

    /// The constraint function `f(v)`; zero for the unconstrained case.
    pub fn norm_of(&self, v: ArrayView1<f64>) -> f64 {
        match self {
            Constraint::Unconstrained => 0.0,
            Constraint::L1Ball(_) => l1_norm(v),
            Constraint::L2Ball(_) => l2_norm(v),
        }
    }

    /// `f(v) <= d * (1 + rtol)`.
    pub fn is_satisfied(&self, v: ArrayView1<f64>, rtol: f64) -> bool {
        match self.radius() {
            None => true,
            Some(d) => self.norm_of(v) <= d * (1.0 + rtol),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.radius() {
            None => Ok(()),
            Some(d) => check_radius(d),
        }
    }
}

fn check_radius(d: f64) -> Result<()> {
    if d.is_finite() && d > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("ball radius must be positive and finite, got {d}")))
    }
}

fn check_finite(v: ArrayView1<f64>) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("projection input".into()))
    }
}

pub(crate) fn l1_norm(v: ArrayView1<f64>) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

pub(crate) fn l2_norm(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}

/// Projection onto `{ ||x||_1 <= d }`.
///
/// Sort-based exact threshold: with `u` the magnitudes in decreasing order,
/// `theta = (sum_{j<=k} u_j - d) / k` for the largest `k` with
/// `u_k > theta`, then `x_i = sign(v_i) max(|v_i| - theta, 0)`.
pub fn project_l1(v: ArrayView1<f64>, d: f64) -> Result<Array1<f64>> {
    check_radius(d)?;
    check_finite(v)?;
    if l1_norm(v) <= d {
        return Ok(v.to_owned());
    }

    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_unstable_by(|a, b| b.total_cmp(a));

    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &u) in mags.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - d) / (j + 1) as f64;
        if u > candidate {
            theta = candidate;
        } else {
            break;
        }
    }

    let mut out = v.mapv(|x| x.signum() * (x.abs() - theta).max(0.0));
    // Rounding in the cumulative sum can leave the result a few ulps outside.
    let norm = l1_norm(out.view());
    if norm > d {
        out *= d / norm;
    }
    Ok(out)
}

/// Projection onto `{ ||x||_2 <= d }`: radial rescaling.
pub fn project_l2(v: ArrayView1<f64>, d: f64) -> Result<Array1<f64>> {
    check_radius(d)?;
    check_finite(v)?;
    let norm = l2_norm(v);
    if norm <= d {
        Ok(v.to_owned())
    } else {
        Ok(v.mapv(|x| x * (d / norm)))
    }
}

pub fn project(kind: &ProjectionKind, v: ArrayView1<f64>) -> Result<Array1<f64>> {
    match *kind {
        Constraint::Unconstrained => {
            check_finite(v)?;
            Ok(v.to_owned())
        }
        Constraint::L1Ball(d) => project_l1(v, d),
        Constraint::L2Ball(d) => project_l2(v, d),
    }
}
