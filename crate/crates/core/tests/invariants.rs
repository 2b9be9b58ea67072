use aee_core::integrators::{aee_terminal, limit_u_solve, reference_solve, Model, ModelSpec};
use aee_core::lab::{
    convergence_order_fit, empirical_moments, limit_tables, run_error_sweep, run_limit_ensemble, two_sample_ks,
    Ensemble, EnsembleKind, ErrorRun,
};
use aee_core::nemytskii::{NemytskiiOperator, Nonlinearity, NoiseSpec};
use aee_core::noise::{build_noise_table, GridSpec};
use aee_core::oracles::linear_limit_covariance;
use aee_core::spectral::{phi1, AssumptionParams, SineTransform, SpectralField, SpectralOperator};
use proptest::prelude::*;

fn field(n: usize) -> impl Strategy<Value = SpectralField> {
    prop::collection::vec(-2.0f64..2.0, n).prop_map(SpectralField::new)
}

fn model(n: usize, nl: Nonlinearity) -> Model {
    let op = SpectralOperator::dirichlet_laplacian(n).unwrap();
    Model::new(ModelSpec {
        noise: NoiseSpec::power_law(&op, 2.0).unwrap(),
        op,
        nl,
        params: AssumptionParams::default(),
        t_end: 1.0,
        x0: SpectralField::basis(n, 0),
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sine_transform_round_trips(v in field(32)) {
        let tr = SineTransform::new(32).unwrap();
        let back = tr.to_spectral(&tr.to_physical(&v).unwrap()).unwrap();
        prop_assert!(back.sub(&v).norm() <= 1e-13 * v.norm().max(1.0));
    }

    #[test]
    fn semigroup_composes(v in field(24), s in 0.0f64..0.2, t in 0.0f64..0.2) {
        let op = SpectralOperator::dirichlet_laplacian(24).unwrap();
        let a = op.semigroup_apply(s, &op.semigroup_apply(t, &v).unwrap()).unwrap();
        let b = op.semigroup_apply(s + t, &v).unwrap();
        prop_assert!(a.sub(&b).norm() <= 1e-14 * v.norm().max(1.0));
    }

    #[test]
    fn phi1_is_a_decreasing_average(x in 0.0f64..1e3, y in 0.0f64..1e3) {
        let (p, q) = (phi1(x), phi1(y));
        prop_assert!(p > 0.0 && p <= 1.0);
        if x < y {
            prop_assert!(p >= q);
        }
    }

    #[test]
    fn projection_is_idempotent(v in field(16), k in 1usize..=16) {
        let p = v.project(k).unwrap();
        prop_assert_eq!(p.project(k).unwrap(), p.clone());
        prop_assert!(p.norm() <= v.norm());
    }

    #[test]
    fn nemytskii_jacobian_matches_central_difference(base in field(16), dir in field(16)) {
        let nem = NemytskiiOperator::new(Nonlinearity::Sine(1.0), 16).unwrap();
        let eps = 1e-6;
        let fd = nem
            .apply(&base.add(&dir.scaled(eps)))
            .unwrap()
            .sub(&nem.apply(&base.add(&dir.scaled(-eps))).unwrap())
            .scaled(0.5 / eps);
        let jac = nem.jacobian_apply(&base, &dir).unwrap();
        prop_assert!(fd.sub(&jac).norm() <= 1e-7 * dir.norm().max(1e-3));
    }

    #[test]
    fn nemytskii_is_lipschitz(u in field(16), v in field(16), a in 0.1f64..3.0) {
        let nl = Nonlinearity::Sine(a);
        let nem = NemytskiiOperator::new(nl, 16).unwrap();
        let lhs = nem.apply(&u).unwrap().sub(&nem.apply(&v).unwrap()).norm();
        prop_assert!(lhs <= nl.lipschitz() * u.sub(&v).norm() * (1.0 + 1e-12) + 1e-14);
    }

    #[test]
    fn nemytskii_hessian_is_symmetric_and_bilinear(
        base in field(16),
        u in field(16),
        w1 in field(16),
        w2 in field(16),
        c in -2.0f64..2.0,
    ) {
        let nem = NemytskiiOperator::new(Nonlinearity::Sine(1.0), 16).unwrap();
        let h = |x: &SpectralField, y: &SpectralField| nem.hessian_apply(&base, x, y).unwrap();
        let combined = w1.scaled(c).add(&w2);
        let lhs = h(&u, &combined);
        let rhs = h(&u, &w1).scaled(c).add(&h(&u, &w2));
        let scale = u.norm() * (w1.norm() + w2.norm()) + 1.0;
        prop_assert!(lhs.sub(&rhs).norm() <= 1e-12 * scale);
        prop_assert!(h(&u, &w1).sub(&h(&w1, &u)).norm() <= 1e-13 * scale);
    }

    #[test]
    fn coarsening_agrees_with_brute_force_aggregation(
        seed in any::<u64>(),
        m in 1usize..6,
        factor in prop::sample::select(vec![1usize, 2, 4]),
    ) {
        let op = SpectralOperator::dirichlet_laplacian(6).unwrap();
        let noise = NoiseSpec::power_law(&op, 2.0).unwrap();
        let grid = GridSpec::new(1.0, m, 8).unwrap();
        let table = build_noise_table(grid, &noise, &op, seed, 0).unwrap();
        let coarse = table.coarsen(factor).unwrap();
        let steps = coarse.grid().fine_steps();
        for i in 0..6 {
            for k in 0..steps {
                let db = table.aggregate_increment(i, steps, k).unwrap();
                let conv = table.aggregate_convolution(i, steps, k).unwrap();
                prop_assert!((coarse.db(i, k) - db).abs() <= 1e-12 * (1.0 + db.abs()));
                prop_assert!((coarse.conv(i, k) - conv).abs() <= 1e-12 * (1.0 + conv.abs()));
            }
        }
        // coarsening twice composes
        if factor == 2 {
            let twice = coarse.coarsen(2).unwrap();
            let once = table.coarsen(4).unwrap();
            for (a, b) in twice.db_step(0).iter().zip(once.db_step(0)) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn ks_statistic_is_symmetric_and_bounded(
        a in prop::collection::vec(-5.0f64..5.0, 2..40),
        b in prop::collection::vec(-5.0f64..5.0, 2..40),
    ) {
        let ab = two_sample_ks(&a, &b).unwrap();
        let ba = two_sample_ks(&b, &a).unwrap();
        prop_assert_eq!(ab.statistic, ba.statistic);
        prop_assert!((0.0..=1.0).contains(&ab.statistic));
        prop_assert!((0.0..=1.0).contains(&ab.p_value));
    }

    #[test]
    fn planted_power_law_is_recovered(c in 0.01f64..10.0, p in 0.3f64..2.5) {
        let pairs: Vec<(usize, f64)> = [8usize, 16, 32, 64, 128]
            .iter()
            .map(|&m| (m, c * (m as f64).powf(-p)))
            .collect();
        let fit = convergence_order_fit(&pairs).unwrap();
        prop_assert!((fit.order - p).abs() <= 1e-10);
        prop_assert!(fit.max_abs_residual <= 1e-10);
    }

    #[test]
    fn sample_covariance_is_positive_semidefinite(
        rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 4..30),
    ) {
        let e = Ensemble::new(rows, EnsembleKind::Other, 0).unwrap();
        let mo = empirical_moments(&e).unwrap();
        let eig = mo.cov.clone().symmetric_eigenvalues();
        prop_assert!(eig.iter().all(|&l| l >= -1e-12 * mo.cov.norm().max(1.0)));
    }
}

#[test]
fn ks_p_value_falls_as_samples_separate() {
    let a: Vec<f64> = (0..200).map(|i| (i as f64 + 0.5) / 200.0).collect();
    let mut last = f64::INFINITY;
    for shift in [0.0, 0.05, 0.1, 0.2, 0.4] {
        let b: Vec<f64> = a.iter().map(|x| x + shift).collect();
        let p = two_sample_ks(&a, &b).unwrap().p_value;
        assert!(p <= last, "p = {p} after {last} at shift {shift}");
        last = p;
    }
    assert!(last < 1e-10);
}

// A single path gives a ratio of two random norms that is not concentrated
// (values from 0.4 to 14 are typical), so the O(1/R) rate is checked in mean
// square over coupled paths.
#[test]
fn doubling_the_refinement_halves_reference_changes() {
    let model = model(16, Nonlinearity::Sine(1.0));
    let spec = model.spec();
    let grid = GridSpec::new(1.0, 8, 64).unwrap();
    let (mut coarse, mut fine) = (0.0, 0.0);
    for stream in 0..200 {
        let r64 = build_noise_table(grid, &spec.noise, &spec.op, 17, stream).unwrap();
        let x = |f| reference_solve(&model, &r64.coarsen(f).unwrap()).unwrap().terminal().clone();
        let (x16, x32, x64) = (x(4), x(2), x(1));
        coarse += x32.sub(&x16).norm().powi(2);
        fine += x64.sub(&x32).norm().powi(2);
    }
    let ratio = (coarse / fine).sqrt();
    assert!(ratio > 1.7 && ratio < 2.3, "successive-difference ratio {ratio}");
}

#[test]
fn halving_the_limit_step_barely_moves_u() {
    let model = model(16, Nonlinearity::Linear(0.5));
    let oracle = linear_limit_covariance(&model, 1.0).unwrap();
    let spread = (0..16).map(|i| oracle.var_u(i)).sum::<f64>().sqrt();
    let fine = GridSpec::new(1.0, 16, 64).unwrap();
    for r in 0..4 {
        let (w, wt) = limit_tables(&model, fine, 9, r).unwrap();
        let u = |a: &_, b: &_| {
            let xref = reference_solve(&model, a).unwrap();
            limit_u_solve(&model, a, b, &xref).unwrap().terminal().clone()
        };
        let u_fine = u(&w, &wt);
        let u_coarse = u(&w.coarsen(2).unwrap(), &wt.coarsen(2).unwrap());
        let change = u_fine.sub(&u_coarse).norm();
        assert!(change <= 0.05 * spread, "replica {r}: |dU| = {change:e}, oracle spread {spread:e}");
    }
}

#[test]
fn doubling_replicas_shrinks_standard_errors_by_root_two() {
    let model = model(8, Nonlinearity::Linear(0.5));
    let grid = GridSpec::new(1.0, 8, 8).unwrap();
    let full = run_limit_ensemble(&model, grid, 4000, 4, 31).unwrap();
    let half = full.truncated(2000).unwrap();
    let (a, b) = (empirical_moments(&half).unwrap(), empirical_moments(&full).unwrap());
    for i in 0..4 {
        let ratio = a.mean_se[i] / b.mean_se[i];
        let want = std::f64::consts::SQRT_2;
        assert!((ratio / want - 1.0).abs() < 0.3, "coordinate {i}: SE ratio {ratio}");
    }
}

#[test]
fn ensembles_do_not_depend_on_the_thread_count() {
    let model = model(16, Nonlinearity::Sine(1.0));
    let grid = GridSpec::new(1.0, 16, 4).unwrap();
    let runs = [ErrorRun { m: 4, modes: 16 }, ErrorRun { m: 16, modes: 16 }];
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| run_error_sweep(&model, grid, &runs, 24, 5, 77).unwrap())
    };
    let (one, three) = (run(1), run(3));
    assert_eq!(one.rms, three.rms);
    for (a, b) in one.ensembles.iter().zip(&three.ensembles) {
        assert_eq!(a.samples(), b.samples());
    }
}

#[test]
fn terminal_galerkin_error_is_reproducible_per_stream() {
    let model = model(16, Nonlinearity::Sine(1.0));
    let spec = model.spec();
    let grid = GridSpec::new(1.0, 8, 4).unwrap();
    let a = build_noise_table(grid, &spec.noise, &spec.op, 5, 3).unwrap();
    let b = build_noise_table(grid, &spec.noise, &spec.op, 5, 3).unwrap();
    let c = build_noise_table(grid, &spec.noise, &spec.op, 5, 4).unwrap();
    let xa = aee_terminal(&model, &a, 8, 16).unwrap();
    assert_eq!(xa, aee_terminal(&model, &b, 8, 16).unwrap());
    assert_ne!(xa, aee_terminal(&model, &c, 8, 16).unwrap());
}
