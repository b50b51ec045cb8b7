use dataenrich::model::ConstraintSpec;
use dataenrich::solver::series_contraction;
use dataenrich::synthesis::{Beta0Kind, DesignDistribution, SampleSizes};
use dataenrich::*;
use ndarray::array;

fn small_spec(seed: u64) -> SynthesisSpec {
    SynthesisSpec {
        p: 4,
        groups: 2,
        samples: SampleSizes::Uniform(50),
        sparsity: 1,
        beta0: Beta0Kind::Sparse { s0: 1 },
        noise_sigma: 0.0,
        group_noise: vec![],
        design: DesignDistribution::Gaussian,
        seed,
    }
}

/// The generator's designs with `beta0* = [1, 0, 0, 0]`, one-sparse individual
/// parts off the shared support, responses rebuilt to match and constraints
/// tight at the truth. An individual part on coordinate 0 with the opposite
/// sign would let the blocks trade mass and leave several exact solutions.
fn recovery_problem(seed: u64) -> (GroupedDataset, ParameterStack, ConstraintSpec) {
    let inst = generate(&small_spec(seed)).unwrap();
    let betas = vec![array![0.0, 0.6, 0.0, 0.0], array![0.0, 0.0, 0.0, -0.8]];
    let truth = ParameterStack::new(array![1.0, 0.0, 0.0, 0.0], betas).unwrap();
    let groups = inst
        .dataset
        .groups()
        .iter()
        .zip(&truth.betas)
        .map(|(g, b)| (g.x.clone(), g.x.dot(&(&truth.beta0 + b))))
        .collect();
    let constraints =
        ConstraintSpec::new(truth.blocks().map(|b| Constraint::L1Ball(b.iter().map(|v| v.abs()).sum())).collect(), 2)
            .unwrap();
    (GroupedDataset::new(groups).unwrap(), truth, constraints)
}

fn recovery_error(seed: u64, cfg: &FitConfig) -> f64 {
    let (ds, truth, constraints) = recovery_problem(seed);
    let res = fit(&ds, &constraints, cfg).unwrap();
    assert_eq!(res.feasibility_violations, 0);
    weighted_error(&res.estimate, &truth, &ds.counts(), WeightScheme::SqrtFraction).unwrap()
}

#[test]
fn noiseless_recovery_of_a_small_model() {
    let cfg = FitConfig { max_iters: 500, update_order: UpdateOrder::GaussSeidel, ..Default::default() };
    for seed in 0..5 {
        let err = recovery_error(seed, &cfg);
        assert!(err < 1e-6, "seed {seed}: weighted error {err}");
    }
}

#[test]
fn simultaneous_updates_recover_with_theorem_steps() {
    // Zero constants give mu_0 = 1/(4n) and mu_g = 1/(2 sqrt(n n_g)).
    let cfg = FitConfig {
        max_iters: 2000,
        step_mode: StepMode::Theoretical { widths: vec![0.0; 3], c0g: vec![0.0; 2], tau: 1.0 },
        update_order: UpdateOrder::Jacobi,
        ..Default::default()
    };
    for seed in 0..5 {
        let err = recovery_error(seed, &cfg);
        assert!(err < 1e-6, "seed {seed}: weighted error {err}");
    }
}

#[test]
fn exact_interior_solution_is_fixed() {
    let (ds, truth, _) = recovery_problem(7);
    let loose = ConstraintSpec::new(
        truth.blocks().map(|b| Constraint::L1Ball(2.0 * b.iter().map(|v| v.abs()).sum::<f64>() + 1.0)).collect(),
        2,
    )
    .unwrap();
    let steps = default_step_sizes(&ds);
    for order in [UpdateOrder::Jacobi, UpdateOrder::GaussSeidel] {
        let next = pbgd_step(&ds, &loose, &steps, order, &truth).unwrap();
        assert!(next.distance(&truth) <= 1e-12 * truth.norm(), "{order:?}");
    }
}

#[test]
fn orders_share_fixed_points() {
    let mode = StepMode::Theoretical { widths: vec![0.0; 3], c0g: vec![0.0; 2], tau: 1.0 };
    for seed in 0..3 {
        let (ds, truth, constraints) = recovery_problem(seed);
        let steps = theoretical_step_sizes(&ds, &[0.0; 3], &[0.0; 2], 1.0).unwrap();
        // The truth sits on the boundary of every ball and has zero gradient.
        for order in [UpdateOrder::Jacobi, UpdateOrder::GaussSeidel] {
            let next = pbgd_step(&ds, &constraints, &steps, order, &truth).unwrap();
            assert!(next.distance(&truth) <= 1e-12 * truth.norm());
        }
        // A limit point of one order is a fixed point of the other, here with
        // radii that cut off the exact solution.
        let tight =
            ConstraintSpec::new(vec![Constraint::L1Ball(0.5), Constraint::L2Ball(0.3), Constraint::Unconstrained], 2)
                .unwrap();
        for (run, check) in
            [(UpdateOrder::GaussSeidel, UpdateOrder::Jacobi), (UpdateOrder::Jacobi, UpdateOrder::GaussSeidel)]
        {
            let cfg = FitConfig { max_iters: 5000, update_order: run, step_mode: mode.clone(), ..Default::default() };
            let limit = fit(&ds, &tight, &cfg).unwrap().estimate;
            let own = pbgd_step(&ds, &tight, &steps, run, &limit).unwrap();
            assert!(own.distance(&limit) <= 1e-10 * limit.norm(), "{run:?} did not settle");
            let moved = pbgd_step(&ds, &tight, &steps, check, &limit).unwrap();
            assert!(moved.distance(&limit) <= 1e-9 * limit.norm(), "{run:?} -> {check:?}");
        }
    }
}

#[test]
fn runs_are_bit_identical_across_thread_counts() {
    let inst = generate(&Preset::FigA.spec(3)).unwrap();
    let cfg = FitConfig { max_iters: 40, record_truth: Some(inst.truth.clone()), ..Default::default() };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| fit(&inst.dataset, &inst.constraints, &cfg).unwrap())
    };
    let a = run(1);
    let b = run(4);
    let c = run(1);
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.trace, c.trace);
    assert_eq!(a.estimate, b.estimate);
}

#[test]
fn every_iterate_is_feasible() {
    for preset in [Preset::FigA, Preset::FigB] {
        let inst = generate(&preset.spec(11)).unwrap();
        for order in [UpdateOrder::Jacobi, UpdateOrder::GaussSeidel] {
            let cfg = FitConfig { max_iters: 200, update_order: order, ..Default::default() };
            let res = fit(&inst.dataset, &inst.constraints, &cfg).unwrap();
            assert_eq!(res.feasibility_violations, 0);
            assert!(inst.constraints.is_feasible(&res.estimate, FEASIBILITY_RTOL));
        }
    }
}

#[test]
fn larger_groups_converge_geometrically() {
    let inst = generate(&Preset::FigC.spec(5)).unwrap();
    let cfg = FitConfig { max_iters: 600, record_truth: Some(inst.truth.clone()), ..Preset::FigC.fit_config() };
    let res = fit(&inst.dataset, &inst.constraints, &cfg).unwrap();
    for g in 0..=10 {
        let rate = convergence_rate(&res.trace, TraceMetric::RelError(g), 50).unwrap();
        assert!(rate < 0.99, "block {g}: rate {rate}");
    }
}

#[test]
fn constant_series_has_unit_rate() {
    let pts: Vec<(f64, f64)> = (1..20).map(|t| (t as f64, 3.5)).collect();
    assert!((series_contraction(&pts).unwrap() - 1.0).abs() < 1e-12);
    let zeros: Vec<(f64, f64)> = (1..20).map(|t| (t as f64, 0.0)).collect();
    assert!(matches!(series_contraction(&zeros), Err(Error::RateUndefined(_))));
}

#[test]
fn step_rejects_mismatched_shapes() {
    let (ds, truth, constraints) = recovery_problem(0);
    let steps = StepSizes::new(0.01, vec![0.01]).unwrap();
    assert!(pbgd_step(&ds, &constraints, &steps, UpdateOrder::Jacobi, &truth).is_err());
    let wrong = ParameterStack::zeros(2, 3);
    assert!(pbgd_step(&ds, &constraints, &default_step_sizes(&ds), UpdateOrder::Jacobi, &wrong).is_err());
}
