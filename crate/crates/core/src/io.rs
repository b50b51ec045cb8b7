//! On-disk formats.
//!
//! A dataset directory holds `manifest.json`, header-free `X_<g>.csv`
//! (`n_g x p`) and `y_<g>.csv` (`n_g x 1`) for `g = 1..G`, and optionally
//! `params.csv` with the true stack (`(G+1) x p`, row 0 the shared block).
//! Numbers are written with 17 significant digits so they read back exactly.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GroupedDataset, ParameterStack};
use crate::model_selection::CvResult;
use crate::solver::ConvergenceTrace;
use crate::synthesis::ExperimentResult;

pub const MANIFEST: &str = "manifest.json";
pub const PARAMS: &str = "params.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(rename = "G")]
    pub groups: usize,
    pub p: usize,
    pub n_g: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct StoredDataset {
    pub dataset: GroupedDataset,
    pub truth: Option<ParameterStack>,
    pub manifest: Manifest,
}

/// 17 significant digits.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v:.16e}")
    }
}

pub fn write_matrix_csv(path: &Path, m: ArrayView2<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for row in m.rows() {
        w.write_record(row.iter().map(|v| format_float(*v)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path)?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse_err = |msg: String| Error::Parse { path: path.to_path_buf(), line: line + 1, msg };
        if *cols.get_or_insert(rec.len()) != rec.len() {
            return Err(parse_err(format!("expected {} fields, found {}", cols.unwrap(), rec.len())));
        }
        for field in rec.iter() {
            data.push(field.parse::<f64>().map_err(|e| parse_err(format!("`{field}`: {e}")))?);
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, cols.unwrap_or(0)), data).map_err(|e| Error::Shape(e.to_string()))
}

fn read_column_csv(path: &Path) -> Result<Array1<f64>> {
    let m = read_matrix_csv(path)?;
    if m.ncols() != 1 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("expected 1 column, found {}", m.ncols()),
        });
    }
    Ok(m.column(0).to_owned())
}

fn x_path(dir: &Path, g: usize) -> PathBuf {
    dir.join(format!("X_{g}.csv"))
}

fn y_path(dir: &Path, g: usize) -> PathBuf {
    dir.join(format!("y_{g}.csv"))
}

pub fn write_dataset(
    dir: &Path,
    dataset: &GroupedDataset,
    truth: Option<&ParameterStack>,
    noise_sigma: Option<f64>,
    seed: Option<u64>,
) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let manifest =
        Manifest { groups: dataset.num_groups(), p: dataset.dim(), n_g: dataset.counts(), noise_sigma, seed };
    write_json(&dir.join(MANIFEST), &manifest)?;
    for (i, grp) in dataset.groups().iter().enumerate() {
        write_matrix_csv(&x_path(dir, i + 1), grp.x.view())?;
        write_matrix_csv(&y_path(dir, i + 1), grp.y.view().insert_axis(ndarray::Axis(1)))?;
    }
    if let Some(t) = truth {
        write_params_csv(&dir.join(PARAMS), t)?;
    }
    Ok(manifest)
}

pub fn read_dataset(dir: &Path) -> Result<StoredDataset> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST))?)?;
    if manifest.n_g.len() != manifest.groups {
        return Err(Error::Shape(format!(
            "manifest lists {} group sizes for G = {}",
            manifest.n_g.len(),
            manifest.groups
        )));
    }
    let mut groups = Vec::with_capacity(manifest.groups);
    for g in 1..=manifest.groups {
        let x = read_matrix_csv(&x_path(dir, g))?;
        let y = read_column_csv(&y_path(dir, g))?;
        if x.nrows() != manifest.n_g[g - 1] {
            return Err(Error::GroupShape {
                group: g,
                what: "X rows",
                expected: manifest.n_g[g - 1],
                found: x.nrows(),
            });
        }
        if x.ncols() != manifest.p {
            return Err(Error::GroupShape { group: g, what: "X columns", expected: manifest.p, found: x.ncols() });
        }
        groups.push((x, y));
    }
    let dataset = GroupedDataset::new(groups)?;
    let params = dir.join(PARAMS);
    let truth = if params.exists() {
        let t = read_params_csv(&params)?;
        if t.num_groups() != manifest.groups || t.dim() != manifest.p {
            return Err(Error::Shape(format!("{} does not match the manifest", params.display())));
        }
        Some(t)
    } else {
        None
    };
    Ok(StoredDataset { dataset, truth, manifest })
}

pub fn write_params_csv(path: &Path, params: &ParameterStack) -> Result<()> {
    write_matrix_csv(path, params.to_matrix().view())
}

pub fn read_params_csv(path: &Path) -> Result<ParameterStack> {
    ParameterStack::from_matrix(read_matrix_csv(path)?.view())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

/// Columns `iter, objective, err_rel_0..err_rel_G, weighted_err`; error
/// columns are `NaN` when no truth was recorded.
pub fn write_trace_csv(path: &Path, trace: &ConvergenceTrace, num_groups: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["iter".to_string(), "objective".to_string()];
    header.extend((0..=num_groups).map(|g| format!("err_rel_{g}")));
    header.push("weighted_err".into());
    w.write_record(&header)?;
    for rec in &trace.records {
        let mut row = vec![rec.iter.to_string(), format_float(rec.objective)];
        match &rec.rel_errors {
            Some(e) => row.extend(e.iter().map(|v| format_float(*v))),
            None => row.extend((0..=num_groups).map(|_| format_float(f64::NAN))),
        }
        row.push(format_float(rec.weighted_error.unwrap_or(f64::NAN)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `block_<g>.csv` (`iter, err_rel`) per block plus `averaged.csv` with every
/// block's column, the weighted error and the objective.
pub fn write_experiment(dir: &Path, result: &ExperimentResult) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (g, col) in result.mean_rel_errors.iter().enumerate() {
        let mut w = csv::Writer::from_path(dir.join(format!("block_{g}.csv")))?;
        w.write_record(["iter", "err_rel"])?;
        for (it, v) in result.iters.iter().zip(col) {
            w.write_record([it.to_string(), format_float(*v)])?;
        }
        w.flush()?;
    }
    let mut w = csv::Writer::from_path(dir.join("averaged.csv"))?;
    let mut header = vec!["iter".to_string(), "objective".to_string()];
    header.extend((0..result.num_blocks()).map(|g| format!("err_rel_{g}")));
    header.push("weighted_err".into());
    w.write_record(&header)?;
    for (k, it) in result.iters.iter().enumerate() {
        let mut row = vec![it.to_string(), format_float(result.mean_objective[k])];
        row.extend(result.mean_rel_errors.iter().map(|c| format_float(c[k])));
        row.push(format_float(result.mean_weighted_error[k]));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Two-scale grids get `scale0, scale_ind`; explicit grids get one
/// `radius_<g>` column per block (empty for unconstrained blocks).
pub fn write_cv_table(path: &Path, result: &CvResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let two_scale = result.table.iter().all(|r| r.point.scales.is_some());
    let blocks = result.table.first().map_or(0, |r| r.point.constraints.entries().len());
    let mut header: Vec<String> = if two_scale {
        vec!["scale0".into(), "scale_ind".into()]
    } else {
        (0..blocks).map(|g| format!("radius_{g}")).collect()
    };
    header.extend(["mean_mse".into(), "std_mse".into()]);
    w.write_record(&header)?;
    for row in &result.table {
        let mut rec: Vec<String> = match row.point.scales {
            Some((s0, s)) if two_scale => vec![format_float(s0), format_float(s)],
            _ => row
                .point
                .constraints
                .entries()
                .iter()
                .map(|c| c.radius().map(format_float).unwrap_or_default())
                .collect(),
        };
        rec.extend([format_float(row.mean_mse), format_float(row.std_mse)]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
