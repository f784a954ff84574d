use kmeflow::flow::{
    assemble_correction_vector, assemble_gram, assemble_h_vector, flow_step, run_flow,
    run_flow_observed, solve_weights_detailed, FlowConfig, Preconditioner,
};
use kmeflow::linalg::{asymmetry, min_eigenvalue};
use kmeflow::metrics::moments;
use kmeflow::models::{toy_problem, ToyCase};
use kmeflow::{ensemble_covariance, Ensemble, Exec, KernelSpec};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn kernel() -> impl Strategy<Value = KernelSpec> {
    prop_oneof![
        (0.3..4.0f64).prop_map(|s| KernelSpec::Rbf { bandwidth: s }),
        Just(KernelSpec::Quadratic),
    ]
}

/// Ensemble of `n ∈ [2, 25]` particles in `d ∈ [1, 4]`.
fn ensemble() -> impl Strategy<Value = DMatrix<f64>> {
    (2usize..=25, 1usize..=4).prop_flat_map(|(n, d)| {
        prop::collection::vec(-2.0..2.0f64, n * d).prop_map(move |v| DMatrix::from_row_slice(n, d, &v))
    })
}

/// Random SPD matrix `AAᵀ + 0.1 I`.
fn spd(d: usize, seed: &[f64]) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |i, j| seed[(i * d + j) % seed.len()]);
    &a * a.transpose() + DMatrix::identity(d, d) * 0.1
}

fn quad_h(x: &[f64]) -> f64 {
    0.5 * x.iter().map(|v| (v - 0.3) * (v - 0.3)).sum::<f64>()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn gram_is_symmetric_psd_and_solves_accurately(
        x in ensemble(),
        k in kernel(),
        cseed in prop::collection::vec(-1.0..1.0f64, 16),
        eps in prop::sample::select(vec![1e-10, 1e-8, 1e-6, 1e-3]),
    ) {
        let n = x.nrows();
        let e = Ensemble::new(x).unwrap();
        let c = spd(e.dim(), &cseed);
        let g = assemble_gram(&e, &k, &c).unwrap();
        prop_assert_eq!(asymmetry(&g), 0.0);
        prop_assert!(min_eigenvalue(&g).unwrap() >= -1e-8 * n as f64 * g.amax().max(1.0));

        let h: Vec<f64> = (0..n).map(|i| quad_h(&e.particle(i))).collect();
        let f = assemble_h_vector(&e, &k, &h).unwrap();
        let w = solve_weights_detailed(&g, &f, eps).unwrap();
        prop_assert!(w.residual <= 1e-8 * (1.0 + f.norm()), "residual {} for |f| {}", w.residual, f.norm());
    }

    #[test]
    fn constant_likelihood_is_an_exact_no_op(x in ensemble(), k in kernel(), c in -5.0..5.0f64) {
        let cfg = FlowConfig::new(4, 1e-6);
        let out = run_flow(&x, &k, &cfg, &|_: &[f64]| c).unwrap();
        prop_assert_eq!(out.positions(), &x);
        prop_assert_eq!(out.time(), 1.0);
    }

    #[test]
    fn h_vector_ignores_constant_shifts(x in ensemble(), k in kernel(), shift in -50.0..50.0f64) {
        let e = Ensemble::new(x).unwrap();
        let h: Vec<f64> = (0..e.len()).map(|i| quad_h(&e.particle(i))).collect();
        let shifted: Vec<f64> = h.iter().map(|v| v + shift).collect();
        let a = assemble_h_vector(&e, &k, &h).unwrap();
        let b = assemble_h_vector(&e, &k, &shifted).unwrap();
        prop_assert!((a - b).amax() <= 1e-10 * (1.0 + shift.abs()));
    }

    #[test]
    fn dynamics_are_permutation_equivariant(x in ensemble(), k in kernel(), rot in 1usize..24) {
        let n = x.nrows();
        let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
        let xp = DMatrix::from_fn(n, x.ncols(), |i, c| x[(perm[i], c)]);
        let cfg = FlowConfig::new(3, 1e-4).with_exec(Exec::sequential());
        let a = run_flow(&x, &k, &cfg, &quad_h).unwrap();
        let b = run_flow(&xp, &k, &cfg, &quad_h).unwrap();
        let scale = 1.0 + a.positions().amax();
        for i in 0..n {
            for c in 0..x.ncols() {
                prop_assert!((b.positions()[(i, c)] - a.positions()[(perm[i], c)]).abs() <= 1e-9 * scale);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    /// Regularization damps the velocity: with `G = QΛQᵀ`, `‖α‖` and the drift
    /// norm shrink as `ε` grows.
    #[test]
    fn drift_magnitude_is_non_increasing_in_epsilon(x in ensemble(), sigma in 0.5..3.0f64) {
        let e = Ensemble::new(x).unwrap();
        let k = KernelSpec::Rbf { bandwidth: sigma };
        let mut last = f64::INFINITY;
        for eps in [1e-10, 1e-8, 1e-6, 1e-4, 1e-2] {
            let cfg = FlowConfig::new(1, eps).with_preconditioner(Preconditioner::Identity);
            let (next, _) = flow_step(&e, &k, &cfg, &quad_h, 1.0).unwrap();
            let drift = (next.positions() - e.positions()).norm();
            prop_assert!(drift <= last * (1.0 + 1e-6) + 1e-12, "eps {eps}: {drift} > {last}");
            last = drift;
        }
    }
}

#[test]
fn gram_examples() {
    let one = Ensemble::from_rows(&[vec![1.0]]).unwrap();
    let c = DMatrix::from_element(1, 1, 1.0);
    assert_eq!(assemble_gram(&one, &KernelSpec::Rbf { bandwidth: 0.7 }, &c).unwrap()[(0, 0)], 0.0);
    assert_eq!(assemble_gram(&one, &KernelSpec::Quadratic, &c).unwrap()[(0, 0)], 16.0);
}

#[test]
fn h_vector_examples() {
    let e = Ensemble::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
    let k = KernelSpec::Rbf { bandwidth: 1.0 };
    let v = assemble_h_vector(&e, &k, &[0.0, 1.0]).unwrap();
    let want = ((-0.5f64).exp() - 1.0) / 4.0;
    assert!((v[0] - want).abs() < 1e-15);
    assert!((v[1] + want).abs() < 1e-15);
    assert_eq!(assemble_h_vector(&e, &k, &[2.5, 2.5]).unwrap(), DVector::zeros(2));
    assert!(assemble_h_vector(&e, &k, &[1.0, f64::NAN]).is_err());
}

#[test]
fn correction_vector_examples() {
    let one = Ensemble::from_rows(&[vec![1.0]]).unwrap();
    let v = assemble_correction_vector(&one, &KernelSpec::Quadratic, &DMatrix::from_element(1, 1, 1.0)).unwrap();
    assert_eq!(v[0], 4.0);

    let e = Ensemble::from_rows(&vec![vec![0.4, -1.0]; 5]).unwrap();
    let v0 = DMatrix::from_fn(5, 2, |i, c| (i + c) as f64);
    let z = assemble_correction_vector(&e, &KernelSpec::Rbf { bandwidth: 1.0 }, &v0).unwrap();
    assert_eq!(z, DVector::zeros(5));
    let zero = assemble_correction_vector(&e, &KernelSpec::Quadratic, &DMatrix::zeros(5, 2)).unwrap();
    assert_eq!(zero, DVector::zeros(5));
}

#[test]
fn one_step_mean_shift_tracks_kalman_bucy() {
    let p = toy_problem(ToyCase::GaussToGauss).unwrap();
    let x0 = p.prior.sample_sobol(2000, 0).unwrap();
    let e = Ensemble::new(x0).unwrap();
    let dt = 1.0 / 50.0;
    let cfg = FlowConfig::new(50, 1e-10);
    let h = |x: &[f64]| p.nll(x);
    let (next, _) = flow_step(&e, &KernelSpec::Quadratic, &cfg, &h, dt).unwrap();
    let kme_shift = next.mean()[0] - e.mean()[0];

    // Kalman-Bucy Euler step: v(x) = -½ C (x + μ) for H = R = 1, β = 0.
    let c = ensemble_covariance(&e).unwrap()[(0, 0)];
    let mu = e.mean()[0];
    let kb_shift = dt * (-0.5 * c * (2.0 * mu));
    assert!((next.mean()[0] - 2.0).abs() < (mu - 2.0).abs());
    assert!((kme_shift - kb_shift).abs() <= 0.1 * kb_shift.abs(), "{kme_shift} vs {kb_shift}");
}

#[test]
fn gaussian_toy_reaches_the_posterior() {
    let p = toy_problem(ToyCase::GaussToGauss).unwrap();
    let x0 = p.prior.sample_sobol(500, 1).unwrap();
    let cfg = FlowConfig::new(50, 1e-9);
    let mut worst: f64 = 0.0;
    let out = run_flow_observed(&x0, &KernelSpec::Rbf { bandwidth: 5.0 }, &cfg, &|x: &[f64]| p.nll(x), |s| {
        worst = worst.max(s.residual / (1.0 + s.f_norm));
    })
    .unwrap();
    let m = moments(out.positions()).unwrap();
    assert!((1.85..=2.15).contains(&m.mean[0]), "mean {}", m.mean[0]);
    assert!((0.38..=0.62).contains(&m.cov_unbiased[(0, 0)]), "var {}", m.cov_unbiased[(0, 0)]);
    assert!(worst <= 1e-8);
}

#[test]
fn zero_likelihood_leaves_particles_in_place() {
    let x = DMatrix::from_fn(30, 2, |i, c| ((i * 7 + c * 3) % 11) as f64 * 0.2);
    for k in [KernelSpec::Rbf { bandwidth: 1.0 }, KernelSpec::Quadratic] {
        let out = run_flow(&x, &k, &FlowConfig::new(10, 1e-8), &|_: &[f64]| 0.0).unwrap();
        assert_eq!(out.positions(), &x);
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let x = DMatrix::from_fn(4, 1, |i, _| i as f64);
    let h = |_: &[f64]| 0.0;
    let k = KernelSpec::Quadratic;
    assert!(run_flow(&x, &k, &FlowConfig::new(0, 1e-6), &h).is_err());
    assert!(run_flow(&x, &k, &FlowConfig::new(5, 0.0), &h).is_err());
    let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
    let cfg = FlowConfig::new(5, 1e-6).with_preconditioner(Preconditioner::Fixed(asym));
    assert!(cfg.validate().is_err());
    let single = DMatrix::from_element(1, 1, 0.0);
    assert!(run_flow(&single, &k, &FlowConfig::new(5, 1e-6), &h).is_err());
}

#[test]
fn divergence_reports_the_step() {
    let x = DMatrix::from_fn(10, 1, |i, _| i as f64 * 0.1);
    let h = |x: &[f64]| 1e200 * x[0] * x[0];
    let err = run_flow(&x, &KernelSpec::Quadratic, &FlowConfig::new(5, 1e-12), &h).unwrap_err();
    assert!(matches!(err, kmeflow::Error::Divergence { step: 0, .. }), "{err}");
}

#[test]
fn sequential_and_parallel_agree_in_deterministic_mode() {
    let p = toy_problem(ToyCase::MixtureToMixture).unwrap();
    let x0 = p.prior.sample_sobol(300, 2).unwrap();
    let k = KernelSpec::Rbf { bandwidth: 5.0 };
    let h = |x: &[f64]| p.nll(x);
    let seq = FlowConfig::new(5, 1e-9).with_exec(Exec::sequential().with_deterministic(true));
    let par = FlowConfig::new(5, 1e-9).with_exec(Exec::parallel().with_deterministic(true));
    let a = run_flow(&x0, &k, &seq, &h).unwrap();
    let b = run_flow(&x0, &k, &par, &h).unwrap();
    assert_eq!(a.positions(), b.positions());
}
