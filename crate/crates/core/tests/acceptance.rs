//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (no test harness) so every line is printed even
//! when an earlier criterion fails. The process exits 0 unless
//! `ACCEPTANCE_STRICT` is set, in which case any FAIL makes it exit 1.
//!
//! The fig_d criterion fits ten 1000 x 100-group models and dominates the
//! runtime (several minutes on one core).

use std::time::Instant;

use dataenrich::diagnostics::*;
use dataenrich::synthesis::{run_experiment, ExperimentResult, SampleSizes};
use dataenrich::*;
use ndarray::Array1;
use rand::{Rng, SeedableRng};
use statrs::function::gamma::ln_gamma;

const SEED: u64 = 1;
const REPS: usize = 10;

const FIG_D_REL_ERR: f64 = 1e-6;
const FIG_D_MIN_PASSING: usize = 9;
const FIG_A_BURN_IN: usize = 50;
const FIG_A_MAX_RATE: f64 = 0.995;
const FIG_A_WEIGHTED_ERR: f64 = 1e-5;
const FIG_B_FACTOR: f64 = 5.0;
const FIG_C_LEVEL: f64 = 1e-4;
const PROJ_INSTANCES: usize = 1000;
const PROJ_MAX_DIM: usize = 50;
const PROJ_ORACLE_TOL: f64 = 1e-9;
const PROJ_PROPERTY_TOL: f64 = 1e-12;
const WIDTH_GAUSSIANS: usize = 10_000;
const WIDTH_SIGMAS: f64 = 3.0;
const DEIC_TOL: f64 = 1e-3;
const RE_CANCEL_TOL: f64 = 1e-9;
const TREND_SIZES: [usize; 5] = [60, 90, 120, 180, 240];
const TREND_SEEDS: usize = 5;
const CONTRACTION_DIRECTIONS: usize = 200;

const ORDER: [&str; 10] = ["1", "2", "3", "4", "5", "6", "7", "8", "(i)", "(ii)"];

#[derive(Default)]
struct Report {
    lines: Vec<(&'static str, bool, String)>,
}

impl Report {
    fn line(&mut self, id: &'static str, ok: bool, detail: String) {
        eprintln!("  done {id}");
        self.lines.push((id, ok, detail));
    }

    fn print(&mut self) -> usize {
        self.lines.sort_by_key(|(id, _, _)| ORDER.iter().position(|o| o == id));
        for (id, ok, detail) in &self.lines {
            println!("[{}] {id:<4} {detail}", if *ok { "PASS" } else { "FAIL" });
        }
        self.lines.iter().filter(|l| !l.1).count()
    }
}

fn experiment(preset: Preset) -> ExperimentResult {
    let t = Instant::now();
    let res = synthesis::run_preset(preset, REPS, SEED).expect("experiment runs");
    eprintln!("  ({preset}: {REPS} runs in {:.1?})", t.elapsed());
    res
}

/// First iteration at which every block's averaged error is at or below `level`.
fn iterations_to_reach_all(res: &ExperimentResult, level: f64) -> Option<usize> {
    (0..res.iters.len()).find(|&k| res.mean_rel_errors.iter().all(|c| c[k] <= level)).map(|k| res.iters[k])
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len().is_multiple_of(2) {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    }
}

fn criterion_1(report: &mut Report) -> ExperimentResult {
    let res = experiment(Preset::FigD);
    let worst: Vec<f64> = res.runs.iter().map(|r| r.final_rel_errors.iter().copied().fold(0.0, f64::max)).collect();
    let passing = worst.iter().filter(|w| **w < FIG_D_REL_ERR).count();
    report.line(
        "1",
        passing >= FIG_D_MIN_PASSING,
        format!(
            "fig_d: {passing}/{REPS} runs with every block below {FIG_D_REL_ERR:e} (need {FIG_D_MIN_PASSING}); \
             worst block per run {:?}",
            worst.iter().map(|w| format!("{w:.2e}")).collect::<Vec<_>>()
        ),
    );
    res
}

fn criterion_2(report: &mut Report, fig_a: &ExperimentResult) {
    let rates: Vec<f64> =
        (0..fig_a.num_blocks()).map(|g| fig_a.block_rate(g, FIG_A_BURN_IN).unwrap_or(f64::INFINITY)).collect();
    let worst_rate = rates.iter().copied().fold(0.0, f64::max);
    let weighted = fig_a.final_weighted_error();
    report.line(
        "2",
        worst_rate < FIG_A_MAX_RATE && weighted < FIG_A_WEIGHTED_ERR,
        format!(
            "fig_a: max block rate {worst_rate:.5} (need < {FIG_A_MAX_RATE}), final weighted error {weighted:.3e} \
             (need < {FIG_A_WEIGHTED_ERR:e}) after {} iterations",
            fig_a.iters.len()
        ),
    );
    let per_run: Vec<String> = fig_a.runs.iter().map(|r| format!("{:.1e}", r.final_weighted_error)).collect();
    eprintln!("  fig_a per-run final weighted error {per_run:?}");
}

fn criterion_3(report: &mut Report) -> ExperimentResult {
    let res = experiment(Preset::FigB);
    let fin = res.final_rel_errors();
    let others: Vec<f64> = fin.iter().enumerate().filter(|(g, _)| *g != 1).map(|(_, v)| *v).collect();
    let med = median(others.clone());
    let max = others.iter().copied().fold(0.0, f64::max);
    report.line(
        "3",
        fin[1] >= FIG_B_FACTOR * med,
        format!(
            "fig_b: beta_1 final error {:.3e} = {:.1} x median of the others {med:.3e} (need >= {FIG_B_FACTOR}); \
             largest other {max:.3e}",
            fin[1],
            fin[1] / med
        ),
    );
    res
}

fn criterion_4(report: &mut Report, fig_a: &ExperimentResult) -> ExperimentResult {
    let fig_c = experiment(Preset::FigC);
    let a = iterations_to_reach_all(fig_a, FIG_C_LEVEL);
    let c = iterations_to_reach_all(&fig_c, FIG_C_LEVEL);
    let ok = match (a, c) {
        (Some(a), Some(c)) => c < a,
        (None, Some(_)) => true,
        _ => false,
    };
    let rate = |r: &ExperimentResult| {
        (0..r.num_blocks()).map(|g| r.block_rate(g, FIG_A_BURN_IN).unwrap_or(f64::NAN)).fold(0.0, f64::max)
    };
    report.line(
        "4",
        ok,
        format!(
            "iterations until every block is below {FIG_C_LEVEL:e}: n_g=150 {c:?} vs n_g=60 {a:?}; \
             max block rate {:.5} vs {:.5}",
            rate(&fig_c),
            rate(fig_a)
        ),
    );
    fig_c
}

/// Threshold found by bisection on `sum max(|v_i| - theta, 0) = d`.
fn bisection_l1(v: &Array1<f64>, d: f64) -> Array1<f64> {
    let mass = |t: f64| v.iter().map(|x| (x.abs() - t).max(0.0)).sum::<f64>();
    if mass(0.0) <= d {
        return v.clone();
    }
    let (mut lo, mut hi) = (0.0, v.iter().fold(0.0f64, |m, x| m.max(x.abs())));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) > d {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    v.mapv(|x| x.signum() * (x.abs() - t).max(0.0))
}

fn criterion_5(report: &mut Report) {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(SEED);
    let (mut oracle_err, mut idem_err, mut expansion) = (0.0f64, 0.0f64, f64::NEG_INFINITY);
    for _ in 0..PROJ_INSTANCES {
        let p = rng.random_range(1..=PROJ_MAX_DIM);
        let scale = 10f64.powf(rng.random_range(-2.0..2.0));
        let v = Array1::from_shape_fn(p, |_| scale * rng.random_range(-1.0..1.0));
        let w = Array1::from_shape_fn(p, |_| scale * rng.random_range(-1.0..1.0));
        let d = scale * rng.random_range(0.01..(p as f64));
        let pv = project_l1(v.view(), d).unwrap();
        let pw = project_l1(w.view(), d).unwrap();
        let oracle = bisection_l1(&v, d);
        oracle_err =
            oracle_err.max(pv.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale.max(1.0));
        let again = project_l1(pv.view(), d).unwrap();
        idem_err = idem_err.max(again.iter().zip(&pv).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale.max(1.0));
        let dist = |a: &Array1<f64>, b: &Array1<f64>| (a - b).mapv(|x| x * x).sum().sqrt();
        expansion = expansion.max((dist(&pv, &pw) - dist(&v, &w)) / scale.max(1.0));
    }
    report.line(
        "5",
        oracle_err <= PROJ_ORACLE_TOL && idem_err <= PROJ_PROPERTY_TOL && expansion <= PROJ_PROPERTY_TOL,
        format!(
            "l1 projection on {PROJ_INSTANCES} instances: max oracle deviation {oracle_err:.2e} (tol {PROJ_ORACLE_TOL:e}), \
             idempotence {idem_err:.2e}, expansion {expansion:.2e} (tol {PROJ_PROPERTY_TOL:e})"
        ),
    );
}

fn criterion_6(report: &mut Report, experiments: &[(&str, &ExperimentResult)]) {
    let counts: Vec<String> =
        experiments.iter().map(|(n, r)| format!("{n}={}", r.total_feasibility_violations())).collect();
    let total: usize = experiments.iter().map(|(_, r)| r.total_feasibility_violations()).sum();
    let runs: usize = experiments.iter().map(|(_, r)| r.runs.len()).sum();
    report.line(
        "6",
        total == 0,
        format!("feasibility violations over {runs} experiment runs: {total} ({})", counts.join(", ")),
    );
}

fn chi_mean(p: usize) -> f64 {
    let p = p as f64;
    2f64.sqrt() * (ln_gamma((p + 1.0) / 2.0) - ln_gamma(p / 2.0)).exp()
}

fn criterion_7(report: &mut Report) {
    let mut ok = true;
    let mut parts = Vec::new();
    for p in [1, 100] {
        let est = gaussian_width_mc(&ConeSampler::FullSpace(p), WIDTH_GAUSSIANS, 0, SEED).unwrap();
        let z = (est.mean - chi_mean(p)).abs() / est.std_err;
        ok &= z <= WIDTH_SIGMAS;
        parts.push(format!("p={p}: {:.4} +- {:.4} vs {:.4} ({z:.2} SE)", est.mean, est.std_err, chi_mean(p)));
    }
    report.line("7", ok, format!("full-space width, within {WIDTH_SIGMAS} SE: {}", parts.join("; ")));
}

fn criterion_8(report: &mut Report) {
    let e = |p: usize, i: usize| Array1::from_shape_fn(p, |j| if i == j { 1.0 } else { 0.0 });
    let rays = |v: Vec<Array1<f64>>| ConeSampler::rays(v).unwrap();
    let deic = |c0: ConeSampler, cg: ConeSampler| deic_probe(&c0, &[cg], &[1], 1, 0.05, SEED).unwrap().per_group[0];
    let u = Array1::from(vec![0.6, -0.8, 0.0, 0.0]);
    let parallel = deic(rays(vec![u.clone()]), rays(vec![u.clone()]));
    let opposite = deic(rays(vec![u.clone()]), rays(vec![-&u]));
    let orthogonal = deic(rays(vec![e(4, 0), e(4, 1)]), rays(vec![e(4, 2), e(4, 3)]));
    let half = 0.5f64.sqrt();

    let p = 5;
    let ds = GroupedDataset::new(vec![(ndarray::Array2::eye(p) * (p as f64).sqrt(), Array1::zeros(p))]).unwrap();
    let w = Array1::from_shape_fn(p, |i| (i as f64 + 1.0).cos());
    let re = re_probe(&ds, &[rays(vec![w.clone()]), rays(vec![-&w])], WeightScheme::Fraction, 100, SEED).unwrap().kappa;

    report.line(
        "8",
        (parallel - 1.0).abs() <= DEIC_TOL
            && opposite.abs() <= DEIC_TOL
            && (orthogonal - half).abs() <= DEIC_TOL
            && re < RE_CANCEL_TOL,
        format!(
            "deic parallel {parallel:.6}, opposite {opposite:.6}, orthogonal {orthogonal:.6} (tol {DEIC_TOL:e}); \
             re cancellation {re:.2e} (need < {RE_CANCEL_TOL:e})"
        ),
    );
}

fn property_i(report: &mut Report) {
    let (base, cfg) = synthesis::preset("fig_b", SEED).unwrap();
    let means: Vec<f64> = TREND_SIZES
        .iter()
        .map(|&n_g| {
            let spec = SynthesisSpec { samples: SampleSizes::Uniform(n_g), ..base.clone() };
            run_experiment(&spec, &cfg, TREND_SEEDS, SEED).unwrap().final_weighted_error()
        })
        .collect();
    let monotone = means.windows(2).all(|w| w[1] < w[0]);
    report.line(
        "(i)",
        monotone,
        format!(
            "noisy fig_b weighted error over n_g {:?}, mean of {TREND_SEEDS} seeds: {:?}",
            TREND_SIZES,
            means.iter().map(|m| format!("{m:.4}")).collect::<Vec<_>>()
        ),
    );
}

fn property_ii(report: &mut Report, fig_a: &ExperimentResult) {
    let (spec, cfg) = synthesis::preset("fig_a", SEED).unwrap();
    let mut checked = 0;
    let mut violations = 0;
    let mut derived = Vec::new();
    for run in &fig_a.runs {
        let inst = generate(&SynthesisSpec { seed: run.seed, ..spec.clone() }).unwrap();
        let res =
            fit(&inst.dataset, &inst.constraints, &FitConfig { record_truth: Some(inst.truth.clone()), ..cfg.clone() })
                .unwrap();
        let empirical = (0..=inst.dataset.num_groups())
            .map(|g| convergence_rate(&res.trace, TraceMetric::RelError(g), FIG_A_BURN_IN).unwrap_or(0.0))
            .fold(0.0, f64::max);
        if empirical >= 1.0 {
            continue;
        }
        checked += 1;
        let samplers = ConeSampler::for_blocks(&inst.constraints, &inst.truth).unwrap();
        let c =
            contraction_probe(&inst.dataset, &samplers, &res.step_sizes, None, CONTRACTION_DIRECTIONS, SEED).unwrap();
        if c.derived_rho >= 1.0 {
            violations += 1;
        }
        derived.push(format!("{:.3}/{:.4}", c.derived_rho, empirical));
    }
    report.line(
        "(ii)",
        checked > 0 && violations == 0,
        format!(
            "derived rho < 1 on {}/{checked} fig_a instances with empirical rate < 1 \
             ({CONTRACTION_DIRECTIONS} directions; derived/empirical {derived:?})",
            checked - violations
        ),
    );
}

fn main() {
    let start = Instant::now();
    let mut report = Report::default();

    criterion_5(&mut report);
    criterion_7(&mut report);
    criterion_8(&mut report);
    let fig_a = experiment(Preset::FigA);
    criterion_2(&mut report, &fig_a);
    let fig_b = criterion_3(&mut report);
    let fig_c = criterion_4(&mut report, &fig_a);
    property_i(&mut report);
    property_ii(&mut report, &fig_a);
    let fig_d = criterion_1(&mut report);
    criterion_6(&mut report, &[("fig_a", &fig_a), ("fig_b", &fig_b), ("fig_c", &fig_c), ("fig_d", &fig_d)]);

    let failures = report.print();
    println!("acceptance: {failures} failing, {:.1?} total", start.elapsed());
    if failures > 0 && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
