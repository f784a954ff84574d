//! Gaussian-structured baselines: the mean-field Kalman-Bucy velocity and a
//! stochastic ensemble Kalman filter analysis step.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::ensemble::{ensemble_covariance, Ensemble};
use crate::error::{check_dim, Error, Result};
use crate::exec::Exec;
use crate::linalg::validate_spd;
use crate::sampling::SeededRng;

/// Name of the EnKF variant, recorded in experiment metadata.
pub const ENKF_VARIANT: &str = "stochastic-perturbed-observations";

/// Linear observation `β = Hx + ξ` with `ξ ~ N(0, R)`.
#[derive(Clone, Debug)]
pub struct GaussianObservationModel {
    h: DMatrix<f64>,
    r: DMatrix<f64>,
    beta: DVector<f64>,
    r_chol: Cholesky<f64, Dyn>,
    /// `Hᵀ R⁻¹`
    ht_rinv: DMatrix<f64>,
}

impl GaussianObservationModel {
    pub fn new(h: DMatrix<f64>, r: DMatrix<f64>, beta: DVector<f64>) -> Result<Self> {
        let m = h.nrows();
        check_dim(m, r.nrows())?;
        check_dim(m, beta.len())?;
        validate_spd(&r, "observation noise covariance R")?;
        if h.iter().chain(beta.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "observation model has non-finite entries".into(),
            ));
        }
        let r_chol = Cholesky::new(r.clone())
            .ok_or_else(|| Error::InvalidArgument("R is not positive definite".into()))?;
        let ht_rinv = r_chol.solve(&h).transpose();
        Ok(GaussianObservationModel {
            h,
            r,
            beta,
            r_chol,
            ht_rinv,
        })
    }

    /// `H = I_d`, `R = r·I_d`.
    pub fn isotropic(beta: DVector<f64>, r: f64) -> Result<Self> {
        let d = beta.len();
        Self::new(DMatrix::identity(d, d), DMatrix::identity(d, d) * r, beta)
    }

    pub fn state_dim(&self) -> usize {
        self.h.ncols()
    }

    pub fn obs_dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn beta(&self) -> &DVector<f64> {
        &self.beta
    }

    /// Same `H` and `R` with a new observation.
    pub fn with_beta(&self, beta: DVector<f64>) -> Result<Self> {
        check_dim(self.obs_dim(), beta.len())?;
        Ok(GaussianObservationModel {
            beta,
            ..self.clone()
        })
    }

    /// `½ (Hx - β)ᵀ R⁻¹ (Hx - β)`.
    pub fn nll(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.state_dim(), x.len())?;
        Ok(self.nll_unchecked(x))
    }

    pub(crate) fn nll_unchecked(&self, x: &[f64]) -> f64 {
        let mut r = -&self.beta;
        for (c, xc) in x.iter().enumerate() {
            r.axpy(*xc, &self.h.column(c), 1.0);
        }
        // ½‖L⁻¹r‖² is nonnegative by construction.
        let w = self
            .r_chol
            .l_dirty()
            .solve_lower_triangular(&r)
            .expect("Cholesky factor has a positive diagonal");
        0.5 * w.norm_squared()
    }

    /// The affine field `x ↦ Mx + c` equal to the Kalman-Bucy velocity for the given moments.
    pub fn kalman_bucy_field(
        &self,
        mean: &DVector<f64>,
        cov: &DMatrix<f64>,
    ) -> Result<KalmanBucyField> {
        let d = self.state_dim();
        check_dim(d, mean.len())?;
        check_dim(d, cov.nrows())?;
        check_dim(d, cov.ncols())?;
        // v(x) = -½ C Hᵀ R⁻¹ (H(x + μ) - 2β)
        let p = cov * &self.ht_rinv * -0.5;
        let m = &p * &self.h;
        let offset = &p * (&self.h * mean - &self.beta * 2.0);
        Ok(KalmanBucyField { m, offset })
    }
}

/// `v(x) = Mx + c`.
#[derive(Clone, Debug)]
pub struct KalmanBucyField {
    m: DMatrix<f64>,
    offset: DVector<f64>,
}

impl KalmanBucyField {
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let d = self.offset.len();
        (0..d)
            .map(|r| {
                let mut acc = self.offset[r];
                for (c, xc) in x.iter().enumerate() {
                    acc += self.m[(r, c)] * xc;
                }
                acc
            })
            .collect()
    }

    /// Velocities of every particle as an `N × d` matrix.
    pub fn eval_ensemble(&self, positions: &DMatrix<f64>) -> DMatrix<f64> {
        let mut v = positions * self.m.transpose();
        for mut row in v.row_iter_mut() {
            row += self.offset.transpose();
        }
        v
    }
}

/// Mean-field Kalman-Bucy velocity `-½ C Hᵀ R⁻¹ (H(x + μ) - 2β)`.
pub fn kalman_bucy_velocity(
    model: &GaussianObservationModel,
    x: &[f64],
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    check_dim(model.state_dim(), x.len())?;
    Ok(model.kalman_bucy_field(mean, cov)?.eval(x))
}

/// Euler integration of the mean-field Kalman-Bucy ODE over `t ∈ [0, 1]`,
/// with mean and covariance taken from the current ensemble at every step.
pub fn run_kalman_bucy_flow(
    prior_samples: &DMatrix<f64>,
    model: &GaussianObservationModel,
    n_steps: usize,
) -> Result<Ensemble> {
    if n_steps == 0 {
        return Err(Error::InvalidArgument("n_steps must be at least 1".into()));
    }
    let mut e = Ensemble::new(prior_samples.clone())?;
    check_dim(model.state_dim(), e.dim())?;
    if e.len() < 2 {
        return Err(Error::DegenerateEnsemble(e.len()));
    }
    let dt = 1.0 / n_steps as f64;
    for step in 0..n_steps {
        let field = model.kalman_bucy_field(&e.mean(), &ensemble_covariance(&e)?)?;
        let v = field.eval_ensemble(e.positions());
        let next = e.positions() + v * dt;
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::Divergence {
                step,
                max_alpha: 0.0,
                reason: "non-finite position in Kalman-Bucy flow".into(),
            });
        }
        e = e.with_positions(next, (step + 1) as f64 * dt);
    }
    Ok(e)
}

/// Stochastic EnKF analysis with perturbed observations.
///
/// Particle `i` draws its perturbation from `rng.derive(i)`, so the result does
/// not depend on how particles are scheduled.
pub fn enkf_analysis(
    forecast: &Ensemble,
    model: &GaussianObservationModel,
    rng: &SeededRng,
    exec: &Exec,
) -> Result<Ensemble> {
    let n = forecast.len();
    let d = forecast.dim();
    check_dim(model.state_dim(), d)?;
    if n < 2 {
        return Err(Error::DegenerateEnsemble(n));
    }
    let c = ensemble_covariance(forecast)?;
    let hc = model.h() * &c;
    let s = &hc * model.h().transpose() + model.r();
    let s_chol = Cholesky::new(s).ok_or_else(|| {
        Error::Numerical("innovation covariance HCHᵀ + R is not positive definite".into())
    })?;
    // K = C Hᵀ S⁻¹ = (S⁻¹ H C)ᵀ
    let gain = s_chol.solve(&hc).transpose();
    let noise_l = model.r_chol.l();
    let m = model.obs_dim();
    let x = forecast.positions();
    let rows = exec.map(n, |i| {
        let mut prng = rng.derive(i as u64);
        let z = DVector::from_fn(m, |_, _| prng.standard_normal());
        let mut innov = model.beta() + &noise_l * z;
        for c in 0..d {
            innov.axpy(-x[(i, c)], &model.h().column(c), 1.0);
        }
        let dx = &gain * innov;
        (0..d).map(|c| x[(i, c)] + dx[c]).collect::<Vec<_>>()
    });
    let next = DMatrix::from_fn(n, d, |i, c| rows[i][c]);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("EnKF analysis produced non-finite positions".into()));
    }
    Ok(forecast.with_positions(next, forecast.time()))
}
