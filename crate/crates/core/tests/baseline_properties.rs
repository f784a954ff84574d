use kmeflow::baselines::{enkf_analysis, kalman_bucy_velocity, run_kalman_bucy_flow, GaussianObservationModel};
use kmeflow::metrics::{moments, skewness};
use kmeflow::models::{Gaussian, PriorSpec};
use kmeflow::sampling::SeededRng;
use kmeflow::{Ensemble, Exec};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn scalar(h: f64, r: f64, beta: f64) -> GaussianObservationModel {
    GaussianObservationModel::new(
        DMatrix::from_element(1, 1, h),
        DMatrix::from_element(1, 1, r),
        DVector::from_element(1, beta),
    )
    .unwrap()
}

/// Multiples of 1/8 in [-4, 4]: every product and sum below stays exact in binary.
fn dyadic() -> impl Strategy<Value = f64> {
    (-32i32..=32).prop_map(|k| k as f64 / 8.0)
}

fn dyadic_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(dyadic(), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// With dyadic data of small magnitude every operation in the affine field is
    /// exact, so `v(x₁) + v(x₂) - v(x₃) = v(x₁ + x₂ - x₃)` holds bitwise.
    #[test]
    fn kalman_bucy_velocity_is_affine(
        x1 in dyadic_vec(2), x2 in dyadic_vec(2), x3 in dyadic_vec(2),
        mean in dyadic_vec(2), beta in dyadic_vec(2), c in dyadic_vec(3),
    ) {
        let model = GaussianObservationModel::new(
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DVector::from_vec(beta),
        ).unwrap();
        let cov = DMatrix::from_row_slice(2, 2, &[c[0].abs(), c[1], c[1], c[2].abs()]);
        let mean = DVector::from_vec(mean);
        let v = |x: &[f64]| kalman_bucy_velocity(&model, x, &mean, &cov).unwrap();
        let combo: Vec<f64> = (0..2).map(|i| x1[i] + x2[i] - x3[i]).collect();
        let (a, b, c3, d) = (v(&x1), v(&x2), v(&x3), v(&combo));
        for i in 0..2 {
            prop_assert_eq!(a[i] + b[i] - c3[i], d[i]);
        }
    }
}

#[test]
fn nll_examples() {
    assert_eq!(scalar(1.0, 1.0, 0.0).nll(&[2.0]).unwrap(), 2.0);
    assert_eq!(scalar(2.0, 1.0, 4.0).nll(&[2.0]).unwrap(), 0.0);
    let iso = GaussianObservationModel::isotropic(DVector::zeros(3), 0.2).unwrap();
    assert!((iso.nll(&[1.0, 1.0, 1.0]).unwrap() - 7.5).abs() < 1e-12);
    assert!(scalar(1.0, 1.0, 0.0).nll(&[1.0, 2.0]).is_err());
    assert!(GaussianObservationModel::new(
        DMatrix::identity(1, 1),
        DMatrix::from_element(1, 1, 0.0),
        DVector::zeros(1)
    )
    .is_err());
}

#[test]
fn velocity_examples() {
    let m = scalar(1.0, 1.0, 0.0);
    let one = DMatrix::from_element(1, 1, 1.0);
    let zero = DVector::zeros(1);
    assert_eq!(kalman_bucy_velocity(&m, &[2.0], &zero, &one).unwrap(), vec![-1.0]);
    let m2 = scalar(1.0, 1.0, 1.5);
    let mean = DVector::from_element(1, 0.5);
    assert_eq!(kalman_bucy_velocity(&m2, &[2.5], &mean, &one).unwrap(), vec![0.0]);

    let id = GaussianObservationModel::isotropic(DVector::zeros(2), 1.0).unwrap();
    let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]));
    let v = kalman_bucy_velocity(&id, &[1.0, 1.0], &DVector::from_element(2, 1.0), &cov).unwrap();
    assert_eq!(v, vec![-2.0, -1.0]);
}

fn prior_samples(n: usize, mean: f64, var: f64, block: u64) -> DMatrix<f64> {
    PriorSpec::Gaussian(Gaussian::scalar(mean, var).unwrap())
        .sample_sobol(n, block)
        .unwrap()
}

#[test]
fn kalman_bucy_flow_reaches_gaussian_posterior() {
    let out = run_kalman_bucy_flow(&prior_samples(2000, 4.0, 1.0, 0), &scalar(1.0, 1.0, 0.0), 50).unwrap();
    let m = moments(out.positions()).unwrap();
    assert!((m.mean[0] - 2.0).abs() <= 0.1, "mean {}", m.mean[0]);
    assert!((m.cov_unbiased[(0, 0)] - 0.5).abs() <= 0.1, "var {}", m.cov_unbiased[(0, 0)]);
}

#[test]
fn kalman_bucy_flow_keeps_gaussian_shape() {
    let out = run_kalman_bucy_flow(&prior_samples(5000, 4.0, 1.0, 0), &scalar(1.0, 1.0, 0.0), 50).unwrap();
    let xs: Vec<f64> = out.positions().column(0).iter().copied().collect();
    assert!(skewness(&xs).abs() <= 0.1, "skewness {}", skewness(&xs));
}

#[test]
fn kalman_bucy_flow_trivial_cases() {
    let x = prior_samples(50, 1.0, 2.0, 0);
    let blind = scalar(0.0, 1.0, 0.0);
    assert_eq!(run_kalman_bucy_flow(&x, &blind, 20).unwrap().positions(), &x);

    let still = DMatrix::from_element(6, 1, 3.0);
    let on_target = scalar(2.0, 1.0, 6.0);
    assert_eq!(run_kalman_bucy_flow(&still, &on_target, 20).unwrap().positions(), &still);
}

#[test]
fn enkf_trivial_cases() {
    let x = prior_samples(200, 4.0, 1.0, 0);
    let e = Ensemble::new(x.clone()).unwrap();
    let deaf = scalar(1.0, 1e12, 0.0);
    let out = enkf_analysis(&e, &deaf, &SeededRng::new(3, 0), &Exec::default()).unwrap();
    assert!((out.positions() - &x).amax() <= 1e-3);

    let still = Ensemble::new(DMatrix::from_element(5, 1, 4.0)).unwrap();
    let out = enkf_analysis(&still, &scalar(1.0, 1.0, 0.0), &SeededRng::new(3, 0), &Exec::default()).unwrap();
    assert_eq!(out.positions(), still.positions());
}

#[test]
fn enkf_reaches_gaussian_posterior() {
    let e = Ensemble::new(prior_samples(5000, 4.0, 1.0, 0)).unwrap();
    let out = enkf_analysis(&e, &scalar(1.0, 1.0, 0.0), &SeededRng::new(11, 0), &Exec::default()).unwrap();
    let m = moments(out.positions()).unwrap();
    assert!((1.9..=2.1).contains(&m.mean[0]), "mean {}", m.mean[0]);
    assert!((0.45..=0.55).contains(&m.cov_unbiased[(0, 0)]), "var {}", m.cov_unbiased[(0, 0)]);
}

#[test]
fn enkf_is_unbiased_over_seeds() {
    let model = scalar(1.0, 1.0, 0.0);
    let means: Vec<f64> = (0..50u64)
        .map(|s| {
            // iid forecasts: Sobol blocks would share one deterministic moment error.
            let mut rng = SeededRng::new(s, 0);
            let forecast = Ensemble::new(Gaussian::scalar(4.0, 1.0).unwrap().sample(5000, &mut rng)).unwrap();
            let out = enkf_analysis(&forecast, &model, &SeededRng::new(s, 7), &Exec::default()).unwrap();
            out.mean()[0]
        })
        .collect();
    let n = means.len() as f64;
    let grand = means.iter().sum::<f64>() / n;
    let sd = (means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let se = sd / n.sqrt();
    assert!((grand - 2.0).abs() <= 2.0 * se, "grand mean {grand}, se {se}");
}

#[test]
fn enkf_is_reproducible_and_schedule_independent() {
    let e = Ensemble::new(prior_samples(300, 4.0, 1.0, 0)).unwrap();
    let m = scalar(1.0, 1.0, 0.0);
    let a = enkf_analysis(&e, &m, &SeededRng::new(5, 1), &Exec::sequential()).unwrap();
    let b = enkf_analysis(&e, &m, &SeededRng::new(5, 1), &Exec::parallel()).unwrap();
    assert_eq!(a.positions(), b.positions());
}
