use std::path::Path;
use std::time::Instant;

use dataenrich::diagnostics::{self, ConeSampler, WidthEstimate};
use dataenrich::io::{self, StoredDataset};
use dataenrich::model::ConstraintSpec;
use dataenrich::model_selection::{kfold_cv, pilot_radii, CvPlan, RadiusGrid};
use dataenrich::projection::Constraint;
use dataenrich::solver::{self, StepMode, StepSizes};
use dataenrich::synthesis::{self, SynthesisSpec};
use dataenrich::{residuals, seed, FitConfig, GroupedDataset, ParameterStack};
use serde_json::{json, Value};

use crate::config::{cli_fit_defaults, RunConfig};
use crate::CliError;

pub const CONSTRAINTS: &str = "constraints.json";
const DEFAULT_REPS: usize = 10;
const DEFAULT_FOLDS: usize = 10;
const DEFAULT_SCALES: [f64; 3] = [0.5, 1.0, 2.0];

fn write_meta(out: &Path, command: &str, cfg: &RunConfig, start: Instant, extra: Value) -> Result<(), CliError> {
    let meta = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed(),
        "threads": rayon::current_num_threads(),
        "config": cfg,
        "wall_time_s": start.elapsed().as_secs_f64(),
        "result": extra,
    });
    io::write_json(&out.join("meta.json"), &meta)?;
    Ok(())
}

fn prepare_out(cfg: &RunConfig, command: &str) -> Result<std::path::PathBuf, CliError> {
    let out = cfg.out_dir(command);
    std::fs::create_dir_all(&out)
        .map_err(|e| CliError { kind: crate::ErrorKind::Io, msg: format!("cannot create {}: {e}", out.display()) })?;
    Ok(out)
}

/// The generator spec named by the config: a preset, else an explicit
/// `synthesis` section. `--seed` replaces the spec's seed.
fn synthesis_spec(cfg: &RunConfig) -> Result<(SynthesisSpec, FitConfig), CliError> {
    match (&cfg.preset, &cfg.synthesis) {
        (Some(name), _) => Ok(synthesis::preset(name, cfg.seed())?),
        (None, Some(spec)) => {
            let mut spec = spec.clone();
            if let Some(s) = cfg.seed {
                spec.seed = s;
            }
            spec.validate()?;
            Ok((spec, cli_fit_defaults()))
        }
        (None, None) => Err(CliError::usage("name a preset or give a `synthesis` section in --config")),
    }
}

fn read_constraints_file(path: &Path, groups: usize) -> Result<ConstraintSpec, CliError> {
    let text = std::fs::read_to_string(path)?;
    let entries: Vec<Constraint> =
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    Ok(ConstraintSpec::new(entries, groups)?)
}

/// Config constraints, else the dataset's `constraints.json`, else `fallback`.
fn resolve_constraints(
    cfg: &RunConfig,
    dir: &Path,
    groups: usize,
    fallback: ConstraintSpec,
) -> Result<ConstraintSpec, CliError> {
    if let Some(entries) = &cfg.fit.constraints {
        return Ok(ConstraintSpec::new(entries.clone(), groups)?);
    }
    let file = dir.join(CONSTRAINTS);
    if file.exists() {
        return read_constraints_file(&file, groups);
    }
    Ok(fallback)
}

fn load(cfg: &RunConfig) -> Result<(&Path, StoredDataset), CliError> {
    let dir = cfg.data_dir()?;
    if !dir.is_dir() {
        return Err(CliError::config(format!("dataset directory {} does not exist", dir.display())));
    }
    Ok((dir, io::read_dataset(dir)?))
}

fn ensure_finite(params: &ParameterStack, what: &str) -> Result<(), CliError> {
    if params.blocks().all(|b| b.iter().all(|v| v.is_finite())) {
        Ok(())
    } else {
        Err(CliError::numerical(format!("non-finite values in {what}")))
    }
}

pub fn generate(cfg: &RunConfig) -> Result<(), CliError> {
    let start = Instant::now();
    let (spec, _) = synthesis_spec(cfg)?;
    let inst = synthesis::generate(&spec)?;
    let out = prepare_out(cfg, "generate")?;
    let manifest = io::write_dataset(&out, &inst.dataset, Some(&inst.truth), Some(spec.noise_sigma), Some(spec.seed))?;
    io::write_json(&out.join(CONSTRAINTS), &inst.constraints.entries())?;
    io::write_json(&out.join("spec.json"), &spec)?;
    let n: usize = manifest.n_g.iter().sum();
    write_meta(&out, "generate", cfg, start, json!({ "n": n, "G": manifest.groups, "p": manifest.p }))?;
    println!("wrote {} (G = {}, p = {}, n = {n})", out.display(), manifest.groups, manifest.p);
    Ok(())
}

pub fn fit(cfg: &RunConfig) -> Result<(), CliError> {
    let start = Instant::now();
    let (dir, stored) = load(cfg)?;
    let groups = stored.dataset.num_groups();
    let constraints = resolve_constraints(cfg, dir, groups, ConstraintSpec::unconstrained(groups))?;
    let mut base = cli_fit_defaults();
    base.record_truth = stored.truth.clone();
    let fit_cfg = cfg.fit_config(base);
    let res = solver::fit(&stored.dataset, &constraints, &fit_cfg)?;
    ensure_finite(&res.estimate, "the estimate")?;

    let out = prepare_out(cfg, "fit")?;
    io::write_params_csv(&out.join(io::PARAMS), &res.estimate)?;
    io::write_trace_csv(&out.join("trace.csv"), &res.trace, groups)?;
    let last = res.trace.last();
    write_meta(
        &out,
        "fit",
        cfg,
        start,
        json!({
            "converged": res.converged,
            "iterations_run": res.iterations_run,
            "objective": last.map_or(res.trace.initial_objective, |r| r.objective),
            "weighted_error": last.and_then(|r| r.weighted_error),
            "step_sizes": res.step_sizes,
            "feasibility_violations": res.feasibility_violations,
            "constraints": constraints.entries(),
        }),
    )?;
    println!(
        "{} iterations, objective {:.6e}, converged: {}",
        res.iterations_run,
        last.map_or(res.trace.initial_objective, |r| r.objective),
        res.converged
    );
    Ok(())
}

pub fn experiment(cfg: &RunConfig) -> Result<(), CliError> {
    let start = Instant::now();
    let (spec, base) = synthesis_spec(cfg)?;
    let fit_cfg = cfg.fit_config(base);
    let reps = cfg.experiment.reps.unwrap_or(DEFAULT_REPS);
    let res = synthesis::run_experiment(&spec, &fit_cfg, reps, cfg.seed())?;
    if !res.final_weighted_error().is_finite() {
        return Err(CliError::numerical("non-finite error trace"));
    }
    let out = prepare_out(cfg, "experiment")?;
    io::write_experiment(&out, &res)?;
    io::write_json(&out.join("runs.json"), &res.runs)?;
    write_meta(
        &out,
        "experiment",
        cfg,
        start,
        json!({
            "repetitions": reps,
            "run_seeds": res.runs.iter().map(|r| r.seed).collect::<Vec<_>>(),
            "final_rel_errors": res.final_rel_errors(),
            "final_weighted_error": res.final_weighted_error(),
            "feasibility_violations": res.total_feasibility_violations(),
        }),
    )?;
    println!("{reps} runs, final mean weighted error {:.3e}", res.final_weighted_error());
    Ok(())
}

fn step_sizes(dataset: &GroupedDataset, mode: &StepMode) -> Result<StepSizes, CliError> {
    Ok(match mode {
        StepMode::SimplifiedPaper => solver::default_step_sizes(dataset),
        StepMode::Theoretical { widths, c0g, tau } => solver::theoretical_step_sizes(dataset, widths, c0g, *tau)?,
        StepMode::Manual(s) => s.clone(),
    })
}

fn print_widths(widths: &[WidthEstimate]) {
    println!("{:>5}  {:>12}  {:>10}  bound", "block", "width", "std_err");
    for (b, w) in widths.iter().enumerate() {
        println!("{b:>5}  {:>12.5}  {:>10.5}  {:?}", w.mean, w.std_err, w.bound);
    }
}

pub fn diagnose(cfg: &RunConfig) -> Result<(), CliError> {
    let start = Instant::now();
    let opts = cfg.diagnostics_options();

    if cfg.diagnostics.widths_only {
        let samplers = match (&cfg.data, cfg.diagnostics.dim) {
            (Some(_), _) => {
                let (dir, stored) = load(cfg)?;
                let truth = stored
                    .truth
                    .as_ref()
                    .ok_or_else(|| CliError::config(format!("{} has no params.csv", dir.display())))?;
                let groups = stored.dataset.num_groups();
                let constraints = resolve_constraints(cfg, dir, groups, ConstraintSpec::unconstrained(groups))?;
                ConeSampler::for_blocks(&constraints, truth)?
            }
            (None, Some(p)) if p > 0 => vec![ConeSampler::FullSpace(p)],
            _ => return Err(CliError::usage("--widths needs --data or a positive --dim")),
        };
        let widths: Vec<WidthEstimate> = samplers
            .iter()
            .enumerate()
            .map(|(b, s)| {
                diagnostics::gaussian_width_mc(
                    s,
                    opts.width_gaussians,
                    opts.width_directions,
                    seed::derive(opts.seed, &[1, b as u64]),
                )
            })
            .collect::<Result<_, _>>()?;
        let out = prepare_out(cfg, "diagnose")?;
        let mut w = csv_writer(&out.join("widths.csv"))?;
        w.write_record(["block", "mean", "std_err", "n_gaussians", "bound"]).map_err(csv_err)?;
        for (b, e) in widths.iter().enumerate() {
            w.write_record([
                b.to_string(),
                io::format_float(e.mean),
                io::format_float(e.std_err),
                e.n_gaussians.to_string(),
                serde_json::to_value(e.bound)?.as_str().unwrap_or_default().to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        write_meta(&out, "diagnose", cfg, start, json!({ "widths": widths }))?;
        print_widths(&widths);
        return Ok(());
    }

    let (dir, stored) = load(cfg)?;
    let truth =
        stored.truth.as_ref().ok_or_else(|| CliError::config(format!("{} has no params.csv", dir.display())))?;
    let groups = stored.dataset.num_groups();
    let constraints = resolve_constraints(cfg, dir, groups, ConstraintSpec::unconstrained(groups))?;
    let samplers = ConeSampler::for_blocks(&constraints, truth)?;
    let steps = step_sizes(&stored.dataset, &cfg.fit_config(cli_fit_defaults()).step_mode)?;
    let noise = residuals(&stored.dataset, truth)?;
    let report = diagnostics::diagnose(&stored.dataset, &samplers, &steps, Some(&noise), &opts)?;
    let flat = report.to_flat();

    let out = prepare_out(cfg, "diagnose")?;
    io::write_json(&out.join("report.json"), &flat)?;
    write_meta(&out, "diagnose", cfg, start, json!({ "report": "report.json" }))?;
    let key_width = flat.keys().map(String::len).max().unwrap_or(0);
    for (k, v) in &flat {
        println!("{k:<key_width$}  {v}");
    }
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(csv_err)
}

fn csv_err(e: csv::Error) -> CliError {
    dataenrich::Error::from(e).into()
}

pub fn cv(cfg: &RunConfig) -> Result<(), CliError> {
    let start = Instant::now();
    let (dir, stored) = load(cfg)?;
    let dataset = &stored.dataset;
    let groups = dataset.num_groups();
    let template =
        resolve_constraints(cfg, dir, groups, ConstraintSpec::new(vec![Constraint::L1Ball(1.0); groups + 1], groups)?)?;
    let fit_cfg = cfg.fit_config(cli_fit_defaults());

    let grid = cfg.cv.grid.clone().unwrap_or_else(|| RadiusGrid::TwoScale {
        shared: cfg.cv.shared.clone().unwrap_or_else(|| DEFAULT_SCALES.to_vec()),
        individual: cfg.cv.individual.clone().unwrap_or_else(|| DEFAULT_SCALES.to_vec()),
    });
    let base_radii = match grid {
        RadiusGrid::TwoScale { .. } => pilot_radii(dataset, &template, &fit_cfg)?,
        RadiusGrid::PerGroup(_) => Vec::new(),
    };
    let plan = CvPlan { folds: cfg.cv.folds.unwrap_or(DEFAULT_FOLDS), grid, base_radii, folds_seed: cfg.seed() };
    let res = kfold_cv(dataset, &template, &plan, &fit_cfg)?;
    ensure_finite(&res.refit.estimate, "the refit estimate")?;
    let best = res.best_row();
    if !best.mean_mse.is_finite() {
        return Err(CliError::numerical("non-finite cross-validation error"));
    }

    let out = prepare_out(cfg, "cv")?;
    io::write_cv_table(&out.join("cv.csv"), &res)?;
    io::write_params_csv(&out.join(io::PARAMS), &res.refit.estimate)?;
    write_meta(
        &out,
        "cv",
        cfg,
        start,
        json!({
            "folds": plan.folds,
            "base_radii": plan.base_radii,
            "best": {
                "scales": best.point.scales,
                "constraints": best.point.constraints.entries(),
                "mean_mse": best.mean_mse,
                "std_mse": best.std_mse,
            },
        }),
    )?;
    match best.point.scales {
        Some((s0, s)) => println!("best: scale0 = {s0}, scale_ind = {s}, mean mse {:.6e}", best.mean_mse),
        None => println!("best: grid row {}, mean mse {:.6e}", res.best, best.mean_mse),
    }
    Ok(())
}
