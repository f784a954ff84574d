//! Lorenz-63 twin experiment: truth, noisy observations, noisy ensemble
//! forecasts and the sequential forecast/inference loop.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::baselines::{enkf_analysis, GaussianObservationModel};
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::flow::{run_flow, Baseline, FlowConfig};
use crate::kernels::KernelSpec;
use crate::metrics::rmse_spacetime;
use crate::models::{Gaussian, NllFn, PriorSpec};
use crate::sampling::SeededRng;

/// Stream tags for the per-replicate generators.
const OBSERVATION_TAG: u64 = 0x6f62_7365_7276;
const FILTER_TAG: u64 = 0x6669_6c74_6572;

#[derive(Clone, Debug, PartialEq)]
pub struct Lorenz63Params {
    pub sigma: f64,
    pub rho: f64,
    pub beta_l: f64,
    /// RK4 step `δt`.
    pub dt_inner: f64,
    /// Time between observations `Δt`.
    pub dt_obs: f64,
    /// Diagonal of the observation noise covariance.
    pub obs_noise_var: [f64; 3],
    /// Diagonal of the per-step forecast noise covariance.
    pub forecast_noise_var: [f64; 3],
    pub n_cycles: usize,
    pub x0: [f64; 3],
}

impl Default for Lorenz63Params {
    fn default() -> Self {
        let dt_inner = 0.001;
        let q = 4.0 * dt_inner / 5.0;
        Lorenz63Params {
            sigma: 10.0,
            rho: 28.0,
            beta_l: 8.0 / 3.0,
            dt_inner,
            dt_obs: 0.05,
            obs_noise_var: [0.2; 3],
            forecast_noise_var: [q; 3],
            n_cycles: 100,
            x0: [-0.587, -0.563, 16.870],
        }
    }
}

impl Lorenz63Params {
    /// Number of RK4 steps between observations.
    pub fn steps_per_cycle(&self) -> Result<usize> {
        if !(self.dt_inner > 0.0 && self.dt_obs > 0.0) {
            return Err(Error::InvalidArgument("time steps must be positive".into()));
        }
        let ratio = self.dt_obs / self.dt_inner;
        let steps = ratio.round();
        if steps < 1.0 || (ratio - steps).abs() > 1e-9 * ratio {
            return Err(Error::InvalidArgument(format!(
                "dt_obs / dt_inner must be a positive integer, got {ratio}"
            )));
        }
        Ok(steps as usize)
    }

    pub fn validate(&self) -> Result<()> {
        self.steps_per_cycle()?;
        if self.n_cycles == 0 {
            return Err(Error::InvalidArgument("n_cycles must be at least 1".into()));
        }
        let vars = self.obs_noise_var.iter().chain(&self.forecast_noise_var);
        if vars.clone().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("noise variances must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

pub fn lorenz_rhs(p: &Lorenz63Params, s: &[f64; 3]) -> [f64; 3] {
    let [x, y, z] = *s;
    [p.sigma * (y - x), x * (p.rho - z) - y, x * y - p.beta_l * z]
}

fn axpy(s: &[f64; 3], a: f64, k: &[f64; 3]) -> [f64; 3] {
    [s[0] + a * k[0], s[1] + a * k[1], s[2] + a * k[2]]
}

/// Classical fourth-order Runge-Kutta step.
pub fn rk4_step(p: &Lorenz63Params, s: &[f64; 3], dt: f64) -> Result<[f64; 3]> {
    let k1 = lorenz_rhs(p, s);
    let k2 = lorenz_rhs(p, &axpy(s, 0.5 * dt, &k1));
    let k3 = lorenz_rhs(p, &axpy(s, 0.5 * dt, &k2));
    let k4 = lorenz_rhs(p, &axpy(s, dt, &k3));
    let w = dt / 6.0;
    let next: [f64; 3] =
        std::array::from_fn(|c| s[c] + w * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]));
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence {
            step: 0,
            max_alpha: 0.0,
            reason: "non-finite state in RK4 step".into(),
        });
    }
    Ok(next)
}

/// Deterministic truth on the inner grid and noisy observations at `t_j = jΔt`, `j = 1..n_cycles`.
pub fn generate_truth_and_observations(
    p: &Lorenz63Params,
    rng: &mut SeededRng,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    p.validate()?;
    let steps = p.steps_per_cycle()?;
    let total = p.n_cycles * steps;
    let mut truth = DMatrix::zeros(total + 1, 3);
    let mut s = p.x0;
    for c in 0..3 {
        truth[(0, c)] = s[c];
    }
    for k in 1..=total {
        s = rk4_step(p, &s, p.dt_inner)?;
        for c in 0..3 {
            truth[(k, c)] = s[c];
        }
    }
    let sd = p.obs_noise_var.map(f64::sqrt);
    let mut obs = DMatrix::zeros(p.n_cycles, 3);
    for j in 0..p.n_cycles {
        for c in 0..3 {
            obs[(j, c)] = truth[((j + 1) * steps, c)] + sd[c] * rng.standard_normal();
        }
    }
    Ok((truth, obs))
}

/// Propagates every member over one observation interval, adding forecast noise
/// after each RK4 step. Member `i` draws its noise from `rng.derive(i)`.
pub fn forecast_ensemble(
    p: &Lorenz63Params,
    e: &Ensemble,
    rng: &SeededRng,
    exec: &Exec,
) -> Result<Ensemble> {
    if e.dim() != 3 {
        return Err(Error::DimensionMismatch {
            expected: 3,
            got: e.dim(),
        });
    }
    let steps = p.steps_per_cycle()?;
    let sd = p.forecast_noise_var.map(f64::sqrt);
    let x = e.positions();
    let rows = exec.map(e.len(), |i| -> Result<[f64; 3]> {
        let mut prng = rng.derive(i as u64);
        let mut s = [x[(i, 0)], x[(i, 1)], x[(i, 2)]];
        for _ in 0..steps {
            s = rk4_step(p, &s, p.dt_inner)?;
            for c in 0..3 {
                s[c] += sd[c] * prng.standard_normal();
            }
        }
        Ok(s)
    });
    let mut next = DMatrix::zeros(e.len(), 3);
    for (i, r) in rows.into_iter().enumerate() {
        let s = r?;
        for c in 0..3 {
            next[(i, c)] = s[c];
        }
    }
    Ensemble::at_time(next, e.time())
}

#[derive(Clone, Debug)]
pub enum AssimilationMethod {
    Enkf,
    Kme { kernel: KernelSpec, flow: FlowConfig },
    KmeKalman { kernel: KernelSpec, flow: FlowConfig },
    /// Forecast only; the control run.
    NoAssimilation,
}

impl AssimilationMethod {
    pub fn name(&self) -> &'static str {
        match self {
            AssimilationMethod::Enkf => "enkf",
            AssimilationMethod::Kme { .. } => "kme",
            AssimilationMethod::KmeKalman { .. } => "kme-kalman",
            AssimilationMethod::NoAssimilation => "none",
        }
    }
}

#[derive(Clone)]
pub struct AssimilationScenario {
    pub params: Lorenz63Params,
    pub method: AssimilationMethod,
    pub ensemble_size: usize,
    /// Diagonal prior variance around `x0`.
    pub prior_var: f64,
    pub n_replicates: usize,
    pub seed: u64,
    pub max_retries: usize,
    /// Any `‖Xⁱ‖` above this counts as divergence.
    pub divergence_threshold: f64,
    /// Observation variances assumed by the inference step; defaults to the
    /// generating `params.obs_noise_var`.
    pub likelihood_var: Option<[f64; 3]>,
    /// Replaces the observation likelihood in the kernel flows.
    pub h_override: Option<NllFn>,
    pub exec: Exec,
}

impl AssimilationScenario {
    pub fn new(method: AssimilationMethod, ensemble_size: usize) -> Self {
        AssimilationScenario {
            params: Lorenz63Params::default(),
            method,
            ensemble_size,
            prior_var: 0.01,
            n_replicates: 1,
            seed: 0,
            max_retries: 5,
            divergence_threshold: 1e3,
            likelihood_var: None,
            h_override: None,
            exec: Exec::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.ensemble_size < 2 {
            return Err(Error::DegenerateEnsemble(self.ensemble_size));
        }
        if self.n_replicates == 0 {
            return Err(Error::InvalidArgument("n_replicates must be at least 1".into()));
        }
        if !(self.prior_var > 0.0) {
            return Err(Error::InvalidArgument("prior variance must be positive".into()));
        }
        match &self.method {
            AssimilationMethod::Kme { kernel, flow } | AssimilationMethod::KmeKalman { kernel, flow } => {
                kernel.validate()?;
                flow.validate()
            }
            _ => Ok(()),
        }
    }

    fn observation_model(&self, beta: DVector<f64>) -> Result<GaussianObservationModel> {
        let var = self.likelihood_var.unwrap_or(self.params.obs_noise_var);
        let r = DMatrix::from_diagonal(&DVector::from_row_slice(&var));
        GaussianObservationModel::new(DMatrix::identity(3, 3), r, beta)
    }
}

/// Observations shared by every method for replicate `r`.
pub fn replicate_observations(sc: &AssimilationScenario, replicate: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let mut rng = SeededRng::new(sc.seed, replicate as u64).derive(OBSERVATION_TAG);
    generate_truth_and_observations(&sc.params, &mut rng)
}

#[derive(Clone, Debug)]
pub struct ReplicateResult {
    pub replicate: usize,
    /// RMSE of the posterior means against the observations.
    pub rmse: f64,
    pub retries: usize,
    pub wall_time_s: f64,
    /// Per-cycle posterior means, `n_cycles × 3`.
    pub means: DMatrix<f64>,
    pub forecast_means: DMatrix<f64>,
    pub observations: DMatrix<f64>,
}

#[derive(Clone, Debug)]
pub struct AssimilationResult {
    pub method: &'static str,
    pub ensemble_size: usize,
    pub replicates: Vec<ReplicateResult>,
}

impl AssimilationResult {
    pub fn mean_rmse(&self) -> f64 {
        self.replicates.iter().map(|r| r.rmse).sum::<f64>() / self.replicates.len() as f64
    }

    pub fn total_retries(&self) -> usize {
        self.replicates.iter().map(|r| r.retries).sum()
    }
}

struct Trace {
    means: DMatrix<f64>,
    forecast_means: DMatrix<f64>,
}

fn is_divergence(err: &Error) -> bool {
    matches!(err, Error::Divergence { .. })
}

fn check_bounded(e: &Ensemble, threshold: f64, cycle: usize) -> Result<()> {
    let worst = e
        .positions()
        .row_iter()
        .map(|r| r.norm())
        .fold(0.0, |a: f64, b| if b.is_nan() { f64::INFINITY } else { a.max(b) });
    if worst > threshold {
        return Err(Error::Divergence {
            step: cycle,
            max_alpha: f64::NAN,
            reason: format!("ensemble member norm {worst:e} exceeds {threshold:e} in cycle {cycle}"),
        });
    }
    Ok(())
}

fn run_cycles(
    sc: &AssimilationScenario,
    prior: &DMatrix<f64>,
    obs: &DMatrix<f64>,
    filter: &SeededRng,
) -> Result<Trace> {
    let n_cycles = sc.params.n_cycles;
    let mut e = Ensemble::new(prior.clone())?;
    let mut means = DMatrix::zeros(n_cycles, 3);
    let mut forecast_means = DMatrix::zeros(n_cycles, 3);
    for j in 0..n_cycles {
        let forecast = forecast_ensemble(&sc.params, &e, &filter.derive(2 * j as u64), &sc.exec)
            .map_err(|err| match err {
                Error::Divergence { max_alpha, reason, .. } => Error::Divergence {
                    step: j,
                    max_alpha,
                    reason: format!("forecast: {reason}"),
                },
                other => other,
            })?;
        check_bounded(&forecast, sc.divergence_threshold, j)?;
        let beta = DVector::from_fn(3, |c, _| obs[(j, c)]);
        let model = sc.observation_model(beta)?;
        let analysis = match &sc.method {
            AssimilationMethod::NoAssimilation => forecast.clone(),
            AssimilationMethod::Enkf => {
                enkf_analysis(&forecast, &model, &filter.derive(2 * j as u64 + 1), &sc.exec)?
            }
            AssimilationMethod::Kme { kernel, flow } | AssimilationMethod::KmeKalman { kernel, flow } => {
                let cfg = match &sc.method {
                    AssimilationMethod::KmeKalman { .. } => {
                        flow.clone().with_baseline(Baseline::KalmanBucy(model.clone()))
                    }
                    _ => flow.clone().with_baseline(Baseline::None),
                };
                let out = match &sc.h_override {
                    Some(h) => run_flow(forecast.positions(), kernel, &cfg, &|x: &[f64]| h(x)),
                    None => run_flow(forecast.positions(), kernel, &cfg, &|x: &[f64]| {
                        model.nll_unchecked(x)
                    }),
                };
                out.map_err(|err| match err {
                    Error::Divergence { step, max_alpha, reason } => Error::Divergence {
                        step: j,
                        max_alpha,
                        reason: format!("flow step {step}: {reason}"),
                    },
                    other => other,
                })?
            }
        };
        check_bounded(&analysis, sc.divergence_threshold, j)?;
        let fm = forecast.mean();
        let am = analysis.mean();
        for c in 0..3 {
            forecast_means[(j, c)] = fm[c];
            means[(j, c)] = am[c];
        }
        e = analysis;
    }
    Ok(Trace {
        means,
        forecast_means,
    })
}

/// Runs one replicate, restarting it with fresh filter noise on divergence.
pub fn run_replicate(sc: &AssimilationScenario, replicate: usize) -> Result<ReplicateResult> {
    sc.validate()?;
    let start = Instant::now();
    let (_, obs) = replicate_observations(sc, replicate)?;
    let x0 = DVector::from_row_slice(&sc.params.x0);
    let prior = PriorSpec::Gaussian(Gaussian::new(x0, DMatrix::identity(3, 3) * sc.prior_var)?)
        .sample_sobol(sc.ensemble_size, replicate as u64)?;
    let base = SeededRng::new(sc.seed, replicate as u64).derive(FILTER_TAG);
    let mut last = String::new();
    for attempt in 0..=sc.max_retries {
        match run_cycles(sc, &prior, &obs, &base.derive(attempt as u64)) {
            Ok(trace) => {
                return Ok(ReplicateResult {
                    replicate,
                    rmse: rmse_spacetime(&trace.means, &obs)?,
                    retries: attempt,
                    wall_time_s: start.elapsed().as_secs_f64(),
                    means: trace.means,
                    forecast_means: trace.forecast_means,
                    observations: obs,
                });
            }
            Err(err) if is_divergence(&err) => {
                log::warn!(
                    "{} N={} replicate {replicate} attempt {attempt} diverged: {err}",
                    sc.method.name(),
                    sc.ensemble_size
                );
                last = err.to_string();
            }
            Err(err) => return Err(err),
        }
    }
    Err(Error::RetriesExhausted {
        replicate,
        attempts: sc.max_retries + 1,
        last,
    })
}

/// All replicates of a scenario; replicates run in parallel under a parallel `exec`.
pub fn run_assimilation(sc: &AssimilationScenario) -> Result<AssimilationResult> {
    sc.validate()?;
    let replicates = sc
        .exec
        .map(sc.n_replicates, |r| run_replicate(sc, r))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(AssimilationResult {
        method: sc.method.name(),
        ensemble_size: sc.ensemble_size,
        replicates,
    })
}
