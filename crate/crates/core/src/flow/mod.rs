//! Kernel-mean-embedding particle flow.
//!
//! Each step assembles the Gram matrix `G`, the likelihood vector `hᵏ` and the
//! baseline correction `v^{0,k}`, solves `(1/N)(G + εI)α = hᵏ + v^{0,k}` and
//! moves every particle with forward Euler:
//!
//! `Xⁱ ← Xⁱ - (Δt/N) C Σ_j α_j ∇_{Xⁱ}k(Xⁱ, Xʲ) + Δt v⁰(Xⁱ)`.

mod tables;

use nalgebra::{DMatrix, DVector};

use crate::baselines::GaussianObservationModel;
use crate::ensemble::{ensemble_covariance, Ensemble};
use crate::error::{check_dim, Error, Result};
use crate::exec::Exec;
use crate::kernels::KernelSpec;
use crate::linalg::{validate_spd, ShiftedFactor, SolveMethod};

pub use tables::KernelTables;

/// Target bound on the solve residual, relative to `1 + ‖f‖₂`.
pub const RESIDUAL_TOL: f64 = 1e-8;

/// Particle speeds above this abort the flow.
pub const DEFAULT_MAX_SPEED: f64 = 1e6;

const MAX_REFINEMENTS: usize = 3;

/// How the drift preconditioner `C_t` is chosen.
#[derive(Clone, Debug, PartialEq)]
pub enum Preconditioner {
    /// Unbiased covariance of the current ensemble, recomputed every step.
    EnsembleCovariance,
    Identity,
    Fixed(DMatrix<f64>),
}

/// Baseline velocity `v⁰`.
#[derive(Clone, Debug)]
pub enum Baseline {
    None,
    /// Mean-field Kalman-Bucy velocity with moments from the current ensemble.
    KalmanBucy(GaussianObservationModel),
}

#[derive(Clone, Debug)]
pub struct FlowConfig {
    pub n_steps: usize,
    pub epsilon: f64,
    pub preconditioner: Preconditioner,
    pub baseline: Baseline,
    pub max_speed: f64,
    pub exec: Exec,
}

impl FlowConfig {
    pub fn new(n_steps: usize, epsilon: f64) -> Self {
        FlowConfig {
            n_steps,
            epsilon,
            preconditioner: Preconditioner::EnsembleCovariance,
            baseline: Baseline::None,
            max_speed: DEFAULT_MAX_SPEED,
            exec: Exec::default(),
        }
    }

    pub fn with_preconditioner(mut self, p: Preconditioner) -> Self {
        self.preconditioner = p;
        self
    }

    pub fn with_baseline(mut self, b: Baseline) -> Self {
        self.baseline = b;
        self
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::InvalidArgument("n_steps must be at least 1".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be positive and finite, got {}",
                self.epsilon
            )));
        }
        if !(self.max_speed > 0.0) {
            return Err(Error::InvalidArgument("max_speed must be positive".into()));
        }
        if let Preconditioner::Fixed(c) = &self.preconditioner {
            validate_spd(c, "fixed preconditioner")?;
        }
        Ok(())
    }

    fn check_dims(&self, d: usize) -> Result<()> {
        if let Preconditioner::Fixed(c) = &self.preconditioner {
            check_dim(d, c.nrows())?;
        }
        if let Baseline::KalmanBucy(m) = &self.baseline {
            check_dim(d, m.state_dim())?;
        }
        Ok(())
    }
}

/// Diagnostics of one flow step.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowStep {
    pub step: usize,
    pub alpha: DVector<f64>,
    /// Largest particle speed of the kernel drift.
    pub drift_norm: f64,
    /// Largest particle speed of the baseline velocity.
    pub baseline_norm: f64,
    /// `‖(1/N)(G + εI)α - f‖₂`.
    pub residual: f64,
    pub f_norm: f64,
    pub max_alpha: f64,
    pub solve_method: SolveMethod,
}

impl FlowStep {
    pub const CSV_HEADER: &'static str = "step,residual,drift_norm,baseline_norm,max_alpha";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e}",
            self.step, self.residual, self.drift_norm, self.baseline_norm, self.max_alpha
        )
    }

    /// Whether the residual meets `RESIDUAL_TOL·(1 + ‖f‖₂)`.
    pub fn residual_ok(&self) -> bool {
        self.residual <= RESIDUAL_TOL * (1.0 + self.f_norm)
    }
}

/// Negative log-likelihood evaluated at a particle position.
pub type Nll<'a> = &'a (dyn Fn(&[f64]) -> f64 + Sync);

/// Gram matrix of the flow operator for the given preconditioner `c`.
pub fn assemble_gram(e: &Ensemble, k: &KernelSpec, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    KernelTables::new(e, k, &Exec::default())?.gram(c)
}

/// Likelihood vector from `h` evaluated at every particle.
pub fn assemble_h_vector(e: &Ensemble, k: &KernelSpec, h_values: &[f64]) -> Result<DVector<f64>> {
    KernelTables::new(e, k, &Exec::default())?.h_vector(h_values)
}

/// Baseline correction vector from `v⁰` evaluated at every particle (`N × d`).
pub fn assemble_correction_vector(
    e: &Ensemble,
    k: &KernelSpec,
    v0_values: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    KernelTables::new(e, k, &Exec::default())?.correction_vector(v0_values)
}

/// Solution of the regularized system together with solve diagnostics.
#[derive(Clone, Debug)]
pub struct Weights {
    pub alpha: DVector<f64>,
    pub residual: f64,
    pub method: SolveMethod,
}

fn residual_of(g: &DMatrix<f64>, epsilon: f64, alpha: &DVector<f64>, f: &DVector<f64>) -> DVector<f64> {
    let n = f.len() as f64;
    (g * alpha + alpha * epsilon) / n - f
}

/// Solves `(1/N)(G + εI)α = f`, refining iteratively while the residual exceeds
/// `RESIDUAL_TOL·(1 + ‖f‖₂)`.
pub fn solve_weights_detailed(g: &DMatrix<f64>, f: &DVector<f64>, epsilon: f64) -> Result<Weights> {
    let n = f.len();
    if !g.is_square() {
        return Err(Error::InvalidArgument("G must be square".into()));
    }
    check_dim(n, g.nrows())?;
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    if f.iter().all(|&v| v == 0.0) {
        return Ok(Weights {
            alpha: DVector::zeros(n),
            residual: 0.0,
            method: SolveMethod::Cholesky,
        });
    }
    let factor = ShiftedFactor::new(g, epsilon)?;
    let scale = n as f64;
    let mut alpha = factor.solve(f)? * scale;
    let bound = RESIDUAL_TOL * (1.0 + f.norm());
    let mut r = residual_of(g, epsilon, &alpha, f);
    let mut residual = r.norm();
    for _ in 0..MAX_REFINEMENTS {
        if residual <= bound {
            break;
        }
        let candidate = &alpha - factor.solve(&r)? * scale;
        let r_next = residual_of(g, epsilon, &candidate, f);
        let next = r_next.norm();
        if next >= residual {
            break;
        }
        alpha = candidate;
        r = r_next;
        residual = next;
    }
    if residual > bound {
        log::debug!(
            "solve residual {residual:e} above {bound:e} (n = {n}, epsilon = {epsilon:e})"
        );
    }
    Ok(Weights {
        alpha,
        residual,
        method: factor.method(),
    })
}

/// `α` solving `(1/N)(G + εI)α = f`.
pub fn solve_weights(g: &DMatrix<f64>, f: &DVector<f64>, epsilon: f64) -> Result<DVector<f64>> {
    Ok(solve_weights_detailed(g, f, epsilon)?.alpha)
}

fn max_row_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|r| r.norm()).fold(0.0, f64::max)
}

fn preconditioner(e: &Ensemble, p: &Preconditioner) -> Result<DMatrix<f64>> {
    Ok(match p {
        Preconditioner::EnsembleCovariance => ensemble_covariance(e)?,
        Preconditioner::Identity => DMatrix::identity(e.dim(), e.dim()),
        Preconditioner::Fixed(c) => c.clone(),
    })
}

/// One Euler step of the flow with step size `dt`.
pub fn flow_step(
    e: &Ensemble,
    k: &KernelSpec,
    cfg: &FlowConfig,
    h: Nll<'_>,
    dt: f64,
) -> Result<(Ensemble, FlowStep)> {
    flow_step_indexed(e, k, cfg, h, dt, 0)
}

fn flow_step_indexed(
    e: &Ensemble,
    k: &KernelSpec,
    cfg: &FlowConfig,
    h: Nll<'_>,
    dt: f64,
    step: usize,
) -> Result<(Ensemble, FlowStep)> {
    cfg.validate()?;
    cfg.check_dims(e.dim())?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let n = e.len();
    let exec = &cfg.exec;
    let c = preconditioner(e, &cfg.preconditioner)?;
    let tables = KernelTables::new(e, k, exec)?;

    let h_values = exec.map(n, |i| h(&e.particle(i)));
    let mut f = tables.h_vector(&h_values)?;

    let v0 = match &cfg.baseline {
        Baseline::None => None,
        Baseline::KalmanBucy(model) => {
            let cov = ensemble_covariance(e)?;
            let field = model.kalman_bucy_field(&e.mean(), &cov)?;
            Some(field.eval_ensemble(e.positions()))
        }
    };
    if let Some(v0) = &v0 {
        f += tables.correction_vector(v0)?;
    }

    let g = tables.gram(&c).map_err(|err| with_step(err, step))?;
    let w = solve_weights_detailed(&g, &f, cfg.epsilon).map_err(|err| with_step(err, step))?;
    let max_alpha = w.alpha.amax();

    let drift = tables.drift(&w.alpha, &c)?;
    let drift_norm = max_row_norm(&drift);
    let mut velocity = drift;
    let baseline_norm = match &v0 {
        Some(v0) => {
            velocity += v0;
            max_row_norm(v0)
        }
        None => 0.0,
    };
    let speed = max_row_norm(&velocity);
    if !speed.is_finite() || speed > cfg.max_speed {
        return Err(Error::Divergence {
            step,
            max_alpha,
            reason: format!("particle speed {speed:e} exceeds {:e}", cfg.max_speed),
        });
    }
    let next = e.positions() + velocity * dt;
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence {
            step,
            max_alpha,
            reason: "non-finite particle position".into(),
        });
    }
    let diag = FlowStep {
        step,
        f_norm: f.norm(),
        alpha: w.alpha,
        drift_norm,
        baseline_norm,
        residual: w.residual,
        max_alpha,
        solve_method: w.method,
    };
    Ok((e.with_positions(next, e.time() + dt), diag))
}

fn with_step(err: Error, step: usize) -> Error {
    match err {
        Error::Divergence {
            max_alpha, reason, ..
        } => Error::Divergence {
            step,
            max_alpha,
            reason,
        },
        other => other,
    }
}

/// Runs the flow from `t = 0` to `t = 1` with `Δt = 1/N_steps`.
pub fn run_flow(
    prior_samples: &DMatrix<f64>,
    k: &KernelSpec,
    cfg: &FlowConfig,
    h: Nll<'_>,
) -> Result<Ensemble> {
    run_flow_observed(prior_samples, k, cfg, h, |_| {})
}

/// [`run_flow`] that hands every step's diagnostics to `observe`.
pub fn run_flow_observed<F: FnMut(&FlowStep)>(
    prior_samples: &DMatrix<f64>,
    k: &KernelSpec,
    cfg: &FlowConfig,
    h: Nll<'_>,
    mut observe: F,
) -> Result<Ensemble> {
    cfg.validate()?;
    let mut e = Ensemble::new(prior_samples.clone())?;
    if e.len() < 2 {
        return Err(Error::DegenerateEnsemble(e.len()));
    }
    if is_collapsed(&e) {
        log::warn!("all {} particles coincide; the kernel flow cannot move them", e.len());
    }
    let dt = 1.0 / cfg.n_steps as f64;
    for step in 0..cfg.n_steps {
        let (mut next, diag) = flow_step_indexed(&e, k, cfg, h, dt, step)?;
        observe(&diag);
        next.set_time(if step + 1 == cfg.n_steps {
            1.0
        } else {
            (step + 1) as f64 * dt
        });
        e = next;
    }
    Ok(e)
}

fn is_collapsed(e: &Ensemble) -> bool {
    let x = e.positions();
    x.row_iter().all(|r| r == x.row(0))
}
