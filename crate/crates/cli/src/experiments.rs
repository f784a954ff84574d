//! The four studies: toy flows, skew-normal dimension scan, RBF bandwidth
//! sweep and Lorenz-63 assimilation.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use nalgebra::DMatrix;

use kmeflow::flow::{run_flow_observed, Baseline, FlowConfig, FlowStep};
use kmeflow::lorenz63::{
    run_replicate, AssimilationMethod, AssimilationScenario, Lorenz63Params, ReplicateResult,
};
use kmeflow::metrics::{mmd2_with, moments, skewness, w2_1d};
use kmeflow::models::{
    bandwidth_problem, skew_normal_problem, toy_problem, InferenceProblem, ToyCase,
};
use kmeflow::sampling::SeededRng;
use kmeflow::{Exec, KernelSpec};

use crate::config::{
    config_error, BaselineName, Config, ConfigError, Experiment, Format, KernelName, MethodName,
};
use crate::output::{write_config, write_table, Metadata, Table, Value};

/// Stream tag of the reference-posterior draws.
const REFERENCE_TAG: u64 = 0x7265_6665_7265;

/// Dimension of the bandwidth-sweep problem.
pub const SWEEP_DIM: usize = 10;

pub fn exec_for(cfg: &Config) -> Exec {
    Exec::parallel().with_deterministic(cfg.deterministic.unwrap_or(false))
}

fn first_column(x: &DMatrix<f64>) -> Vec<f64> {
    x.column(0).iter().copied().collect()
}

fn mean_and_stderr(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, None);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some((var / n).sqrt()))
}

/// Sobol block of replicate `r`, so different seeds use disjoint stretches.
fn replicate_block(seed: u64, n_replicates: usize, r: usize) -> Result<u64> {
    seed.checked_mul(n_replicates as u64)
        .and_then(|b| b.checked_add(r as u64))
        .ok_or_else(|| {
            anyhow!(ConfigError(format!(
                "seed {seed} is too large for {n_replicates} replicates"
            )))
        })
}

fn kernel_spec(name: KernelName, bandwidth: f64) -> Result<KernelSpec> {
    Ok(match name {
        KernelName::Rbf => KernelSpec::rbf(bandwidth)?,
        KernelName::Quadratic => KernelSpec::Quadratic,
    })
}

/// Median pairwise distance between the rows of `x`.
pub fn median_heuristic(x: &DMatrix<f64>) -> f64 {
    let n = x.nrows();
    let mut dist = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in 0..i {
            dist.push((x.row(i) - x.row(j)).norm());
        }
    }
    let mid = dist.len() / 2;
    let (_, m, _) = dist.select_nth_unstable_by(mid, f64::total_cmp);
    *m
}

fn nll_of(p: &InferenceProblem) -> impl Fn(&[f64]) -> f64 + Sync + '_ {
    move |x: &[f64]| p.nll(x)
}

// ---------------------------------------------------------------- toy

#[derive(Clone, Debug)]
pub struct ToySettings {
    pub case: ToyCase,
    pub kernel: KernelSpec,
    pub epsilon: f64,
    pub n_steps: usize,
    pub ensemble_size: usize,
    pub baseline: BaselineName,
    pub seed: u64,
    pub exec: Exec,
}

impl ToySettings {
    /// The published setting of `case` with seed 0.
    pub fn preset(case: ToyCase) -> ToySettings {
        let (kernel, epsilon) = match case {
            ToyCase::GaussToGauss | ToyCase::MixtureToMixture => {
                (KernelSpec::Rbf { bandwidth: 5.0 }, 1e-9)
            }
            ToyCase::GaussToMixture => (KernelSpec::Rbf { bandwidth: 0.95 }, 1e-8),
        };
        ToySettings {
            case,
            kernel,
            epsilon,
            n_steps: 50,
            ensemble_size: 500,
            baseline: BaselineName::None,
            seed: 0,
            exec: Exec::default(),
        }
    }

    pub fn from_config(cfg: &Config, case: ToyCase) -> Result<ToySettings> {
        let mut s = ToySettings::preset(case);
        match (cfg.kernel, cfg.bandwidth) {
            (Some(KernelName::Quadratic), _) => s.kernel = KernelSpec::Quadratic,
            (Some(KernelName::Rbf), b) => {
                s.kernel = KernelSpec::rbf(b.unwrap_or(s.kernel.bandwidth().unwrap_or(5.0)))?
            }
            (None, Some(b)) => s.kernel = KernelSpec::rbf(b)?,
            (None, None) => {}
        }
        s.epsilon = cfg.epsilon.unwrap_or(s.epsilon);
        s.n_steps = cfg.n_steps.unwrap_or(s.n_steps);
        s.ensemble_size = cfg.ensemble_size.unwrap_or(s.ensemble_size);
        s.baseline = cfg.baseline.unwrap_or(s.baseline);
        s.seed = cfg.seed.unwrap_or(0);
        s.exec = exec_for(cfg);
        Ok(s)
    }
}

#[derive(Clone, Debug)]
pub struct ToyOutcome {
    pub settings: ToySettings,
    pub prior: DMatrix<f64>,
    pub posterior: DMatrix<f64>,
    pub reference: Vec<f64>,
    pub mean: f64,
    pub var: f64,
    pub w2: f64,
    pub mmd2: f64,
    pub steps: Vec<FlowStep>,
    pub wall_time_s: f64,
}

/// One toy flow from the Sobol prior block `seed`, scored against as many
/// reference-posterior draws as particles.
pub fn run_toy(s: &ToySettings) -> Result<ToyOutcome> {
    let start = Instant::now();
    let p = toy_problem(s.case)?;
    let mut cfg = FlowConfig::new(s.n_steps, s.epsilon).with_exec(s.exec);
    if s.baseline == BaselineName::KalmanBucy {
        let model = p.gaussian_structure().ok_or_else(|| {
            anyhow!(ConfigError(format!(
                "baseline kalman-bucy needs a Gaussian likelihood; {} has none",
                s.case
            )))
        })?;
        cfg = cfg.with_baseline(Baseline::KalmanBucy(model.clone()));
    }
    let prior = p.prior.sample_sobol(s.ensemble_size, s.seed)?;
    let mut steps = Vec::with_capacity(s.n_steps);
    let h = nll_of(&p);
    let out = run_flow_observed(&prior, &s.kernel, &cfg, &h, |st| steps.push(st.clone()))?;
    let posterior = out.into_positions();
    let reference_target = p
        .reference
        .as_ref()
        .expect("toy problems carry a reference");
    let mut rng = SeededRng::new(s.seed, 0).derive(REFERENCE_TAG);
    let reference = reference_target.sample_first_marginal(s.ensemble_size, &mut rng);
    let m = moments(&posterior)?;
    let xs = first_column(&posterior);
    let ref_matrix = DMatrix::from_column_slice(reference.len(), 1, &reference);
    Ok(ToyOutcome {
        mean: m.mean[0],
        var: m.cov_unbiased[(0, 0)],
        w2: w2_1d(&xs, &reference)?,
        mmd2: mmd2_with(&s.kernel, &posterior, &ref_matrix, &s.exec)?,
        settings: s.clone(),
        prior,
        posterior,
        reference,
        steps,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

pub const TOY_SAMPLE_COLUMNS: &[&str] = &["particle", "x"];
pub const TOY_PDF_COLUMNS: &[&str] = &["x", "pdf", "prior_pdf"];
pub const TOY_METRIC_COLUMNS: &[&str] = &[
    "case",
    "kernel",
    "bandwidth",
    "epsilon",
    "ensemble_size",
    "n_steps",
    "baseline",
    "mean",
    "var",
    "w2",
    "mmd2",
];
pub const FLOW_STEP_COLUMNS: &[&str] = &[
    "step",
    "residual",
    "drift_norm",
    "baseline_norm",
    "max_alpha",
];
const TARGET_GRID_POINTS: usize = 1001;

fn samples_table(name: &'static str, x: &DMatrix<f64>) -> Table {
    let mut t = Table::new(name, TOY_SAMPLE_COLUMNS);
    for (i, v) in x.column(0).iter().enumerate() {
        t.push(vec![i.into(), (*v).into()]);
    }
    t
}

fn toy_tables(o: &ToyOutcome) -> Result<Vec<Table>> {
    let s = &o.settings;
    let p = toy_problem(s.case)?;
    let window = p.prior.window_1d()?;
    let (lo, hi) = (window[0].0, window[window.len() - 1].1);
    let mut pdf = Table::new("target_pdf", TOY_PDF_COLUMNS);
    for k in 0..TARGET_GRID_POINTS {
        let x = lo + (hi - lo) * k as f64 / (TARGET_GRID_POINTS - 1) as f64;
        pdf.push(vec![
            x.into(),
            p.target_pdf(x)?.into(),
            p.prior.logpdf(&[x]).exp().into(),
        ]);
    }
    let mut metrics = Table::new("metrics", TOY_METRIC_COLUMNS);
    metrics.push(vec![
        s.case.name().into(),
        s.kernel.name().into(),
        s.kernel.bandwidth().into(),
        s.epsilon.into(),
        s.ensemble_size.into(),
        s.n_steps.into(),
        s.baseline.name().into(),
        o.mean.into(),
        o.var.into(),
        o.w2.into(),
        o.mmd2.into(),
    ]);
    let mut diag = Table::new("flow_steps", FLOW_STEP_COLUMNS);
    for st in &o.steps {
        diag.push(vec![
            st.step.into(),
            st.residual.into(),
            st.drift_norm.into(),
            st.baseline_norm.into(),
            st.max_alpha.into(),
        ]);
    }
    Ok(vec![
        samples_table("samples_t0", &o.prior),
        samples_table("samples_t1", &o.posterior),
        pdf,
        metrics,
        diag,
    ])
}

// ---------------------------------------------------------------- skew

#[derive(Clone, Debug)]
pub struct SkewSettings {
    pub dims: Vec<usize>,
    pub ensemble_sizes: Vec<usize>,
    pub kernels: Vec<KernelName>,
    /// Fixed RBF bandwidth; `None` uses the median heuristic per replicate.
    pub bandwidth: Option<f64>,
    pub epsilon: f64,
    pub n_steps: usize,
    pub n_replicates: usize,
    pub save_samples: bool,
    pub seed: u64,
    pub exec: Exec,
}

impl SkewSettings {
    pub fn from_config(cfg: &Config) -> SkewSettings {
        SkewSettings {
            dims: cfg.dims.clone().unwrap_or_default(),
            ensemble_sizes: cfg.ensemble_sizes.clone().unwrap_or_default(),
            kernels: cfg.kernels.clone().unwrap_or_default(),
            bandwidth: cfg.bandwidth,
            epsilon: cfg.epsilon.unwrap_or(1e-8),
            n_steps: cfg.n_steps.unwrap_or(50),
            n_replicates: cfg.n_replicates.unwrap_or(10),
            save_samples: cfg.save_samples.unwrap_or(false),
            seed: cfg.seed.unwrap_or(0),
            exec: exec_for(cfg),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SkewRun {
    pub dim: usize,
    pub ensemble_size: usize,
    pub kernel: KernelName,
    pub replicate: usize,
    pub bandwidth: Option<f64>,
    pub w2: f64,
    pub mean: f64,
    pub skewness: f64,
    /// First coordinates at `t = 0` and `t = 1`.
    pub samples: Option<(Vec<f64>, Vec<f64>)>,
}

#[derive(Clone, Debug)]
pub struct SkewCell {
    pub dim: usize,
    pub ensemble_size: usize,
    pub kernel: KernelName,
    /// Mean RBF bandwidth over the replicates.
    pub bandwidth: Option<f64>,
    pub w2_mean: f64,
    pub w2_stderr: Option<f64>,
}

/// Every `(d, N, replicate)` job runs all kernels on the same prior ensemble
/// and the same reference draws, so kernels are compared pairwise.
pub fn run_skew(s: &SkewSettings) -> Result<(Vec<SkewCell>, Vec<SkewRun>)> {
    let mut jobs = Vec::new();
    for &d in &s.dims {
        for &n in &s.ensemble_sizes {
            for r in 0..s.n_replicates {
                jobs.push((d, n, r));
            }
        }
    }
    let cfg = FlowConfig::new(s.n_steps, s.epsilon).with_exec(s.exec);
    let results = s.exec.map(jobs.len(), |j| -> Result<Vec<SkewRun>> {
        let (d, n, r) = jobs[j];
        let p = skew_normal_problem(d)?;
        let x0 = p
            .prior
            .sample_sobol(n, replicate_block(s.seed, s.n_replicates, r)?)?;
        let mut rng = SeededRng::new(s.seed, r as u64).derive(REFERENCE_TAG);
        let reference = p
            .reference
            .as_ref()
            .expect("skew problem has a reference")
            .sample_first_marginal(n, &mut rng);
        let h = nll_of(&p);
        let mut runs = Vec::new();
        for &kernel in &s.kernels {
            let bandwidth = match kernel {
                KernelName::Rbf => Some(s.bandwidth.unwrap_or_else(|| median_heuristic(&x0))),
                KernelName::Quadratic => None,
            };
            let spec = kernel_spec(kernel, bandwidth.unwrap_or(1.0))?;
            let out = run_flow_observed(&x0, &spec, &cfg, &h, |_| {})
                .with_context(|| format!("skew d={d} N={n} {kernel} replicate {r}"))?;
            let xs = first_column(out.positions());
            runs.push(SkewRun {
                dim: d,
                ensemble_size: n,
                kernel,
                replicate: r,
                bandwidth,
                w2: w2_1d(&xs, &reference)?,
                mean: xs.iter().sum::<f64>() / n as f64,
                skewness: skewness(&xs),
                samples: (s.save_samples && r == 0).then(|| (first_column(&x0), xs)),
            });
        }
        Ok(runs)
    });
    let runs: Vec<SkewRun> = results
        .into_iter()
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let mut cells = Vec::new();
    for &d in &s.dims {
        for &n in &s.ensemble_sizes {
            for &kernel in &s.kernels {
                let mine: Vec<&SkewRun> = runs
                    .iter()
                    .filter(|x| x.dim == d && x.ensemble_size == n && x.kernel == kernel)
                    .collect();
                let w2: Vec<f64> = mine.iter().map(|x| x.w2).collect();
                let (w2_mean, w2_stderr) = mean_and_stderr(&w2);
                let bandwidth = match kernel {
                    KernelName::Rbf => Some(
                        mine.iter().filter_map(|x| x.bandwidth).sum::<f64>() / mine.len() as f64,
                    ),
                    KernelName::Quadratic => None,
                };
                cells.push(SkewCell {
                    dim: d,
                    ensemble_size: n,
                    kernel,
                    bandwidth,
                    w2_mean,
                    w2_stderr,
                });
            }
        }
    }
    Ok((cells, runs))
}

pub const SKEW_COLUMNS: &[&str] = &["d", "N", "kernel", "bandwidth", "w2_mean", "w2_stderr"];
pub const SKEW_RUN_COLUMNS: &[&str] = &[
    "d",
    "N",
    "kernel",
    "replicate",
    "bandwidth",
    "w2",
    "mean",
    "skewness",
];
pub const SKEW_SAMPLE_COLUMNS: &[&str] = &["d", "N", "kernel", "particle", "x_t0", "x_t1"];

fn skew_tables(cells: &[SkewCell], runs: &[SkewRun]) -> Vec<Table> {
    let mut summary = Table::new("skew_w2", SKEW_COLUMNS);
    for c in cells {
        summary.push(vec![
            c.dim.into(),
            c.ensemble_size.into(),
            c.kernel.name().into(),
            c.bandwidth.into(),
            c.w2_mean.into(),
            c.w2_stderr.into(),
        ]);
    }
    let mut per_run = Table::new("skew_replicates", SKEW_RUN_COLUMNS);
    let mut samples = Table::new("skew_samples", SKEW_SAMPLE_COLUMNS);
    for r in runs {
        per_run.push(vec![
            r.dim.into(),
            r.ensemble_size.into(),
            r.kernel.name().into(),
            r.replicate.into(),
            r.bandwidth.into(),
            r.w2.into(),
            r.mean.into(),
            r.skewness.into(),
        ]);
        if let Some((x0, x1)) = &r.samples {
            for (i, (a, b)) in x0.iter().zip(x1).enumerate() {
                samples.push(vec![
                    r.dim.into(),
                    r.ensemble_size.into(),
                    r.kernel.name().into(),
                    i.into(),
                    (*a).into(),
                    (*b).into(),
                ]);
            }
        }
    }
    let mut out = vec![summary, per_run];
    if !samples.rows.is_empty() {
        out.push(samples);
    }
    out
}

// ---------------------------------------------------------------- bandwidth sweep

#[derive(Clone, Debug)]
pub struct SweepSettings {
    pub bandwidths: Vec<f64>,
    pub ensemble_size: usize,
    pub epsilon: f64,
    pub n_steps: usize,
    pub n_replicates: usize,
    pub seed: u64,
    pub exec: Exec,
}

impl SweepSettings {
    pub fn from_config(cfg: &Config) -> SweepSettings {
        SweepSettings {
            bandwidths: dedup_bandwidths(cfg.bandwidths.as_deref().unwrap_or_default()),
            ensemble_size: cfg.ensemble_size.unwrap_or(250),
            epsilon: cfg.epsilon.unwrap_or(1e-5),
            n_steps: cfg.n_steps.unwrap_or(50),
            n_replicates: cfg.n_replicates.unwrap_or(10),
            seed: cfg.seed.unwrap_or(0),
            exec: exec_for(cfg),
        }
    }
}

/// Drops repeated bandwidths, keeping the first occurrence.
pub fn dedup_bandwidths(bandwidths: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(bandwidths.len());
    for &b in bandwidths {
        if out.contains(&b) {
            log::warn!("bandwidth {b} listed more than once; running it once");
        } else {
            out.push(b);
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub bandwidth: f64,
    pub w2_mean: f64,
    pub w2_stderr: Option<f64>,
}

pub fn run_bandwidth_sweep(s: &SweepSettings) -> Result<Vec<SweepPoint>> {
    let p = bandwidth_problem(SWEEP_DIM)?;
    let nb = s.bandwidths.len();
    let cfg = FlowConfig::new(s.n_steps, s.epsilon).with_exec(s.exec);
    let w2 = s.exec.map(nb * s.n_replicates, |j| -> Result<f64> {
        let (b, r) = (j / s.n_replicates, j % s.n_replicates);
        let x0 = p
            .prior
            .sample_sobol(s.ensemble_size, replicate_block(s.seed, s.n_replicates, r)?)?;
        let mut rng = SeededRng::new(s.seed, r as u64).derive(REFERENCE_TAG);
        let reference = p
            .reference
            .as_ref()
            .expect("sweep problem has a reference")
            .sample_first_marginal(s.ensemble_size, &mut rng);
        let h = nll_of(&p);
        let out = run_flow_observed(&x0, &KernelSpec::rbf(s.bandwidths[b])?, &cfg, &h, |_| {})
            .with_context(|| format!("bandwidth {} replicate {r}", s.bandwidths[b]))?;
        Ok(w2_1d(&first_column(out.positions()), &reference)?)
    });
    let w2 = w2.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(s.bandwidths
        .iter()
        .enumerate()
        .map(|(b, &bandwidth)| {
            let (w2_mean, w2_stderr) =
                mean_and_stderr(&w2[b * s.n_replicates..(b + 1) * s.n_replicates]);
            SweepPoint {
                bandwidth,
                w2_mean,
                w2_stderr,
            }
        })
        .collect())
}

pub const SWEEP_COLUMNS: &[&str] = &["bandwidth", "N", "w2_mean", "w2_stderr"];

fn sweep_table(points: &[SweepPoint], n: usize) -> Table {
    let mut t = Table::new("bandwidth_w2", SWEEP_COLUMNS);
    for p in points {
        t.push(vec![
            p.bandwidth.into(),
            n.into(),
            p.w2_mean.into(),
            p.w2_stderr.into(),
        ]);
    }
    t
}

// ---------------------------------------------------------------- lorenz

#[derive(Clone, Debug)]
pub struct LorenzSettings {
    pub methods: Vec<MethodName>,
    pub ensemble_sizes: Vec<usize>,
    pub kernel: KernelSpec,
    pub epsilon: f64,
    pub n_steps: usize,
    pub n_replicates: usize,
    pub params: Lorenz63Params,
    pub prior_var: f64,
    pub max_retries: usize,
    pub traces: bool,
    pub seed: u64,
    pub exec: Exec,
}

impl LorenzSettings {
    pub fn from_config(cfg: &Config) -> Result<LorenzSettings> {
        let dt_inner = cfg.dt_inner.unwrap_or(0.001);
        let params = Lorenz63Params {
            dt_inner,
            dt_obs: cfg.dt_obs.unwrap_or(0.05),
            obs_noise_var: [cfg.obs_noise_var.unwrap_or(0.2); 3],
            forecast_noise_var: [cfg.forecast_noise_var.unwrap_or(4.0 * dt_inner / 5.0); 3],
            n_cycles: cfg.n_cycles.unwrap_or(100),
            ..Lorenz63Params::default()
        };
        Ok(LorenzSettings {
            methods: cfg.methods.clone().unwrap_or_default(),
            ensemble_sizes: cfg.ensemble_sizes.clone().unwrap_or_default(),
            kernel: kernel_spec(
                cfg.kernel.unwrap_or(KernelName::Rbf),
                cfg.bandwidth.unwrap_or(6.0),
            )?,
            epsilon: cfg.epsilon.unwrap_or(5e-11),
            n_steps: cfg.n_steps.unwrap_or(50),
            n_replicates: cfg.n_replicates.unwrap_or(20),
            params,
            prior_var: cfg.prior_var.unwrap_or(0.01),
            max_retries: cfg.max_retries.unwrap_or(5),
            traces: cfg.traces.unwrap_or(false),
            seed: cfg.seed.unwrap_or(0),
            exec: exec_for(cfg),
        })
    }

    pub fn scenario(&self, method: MethodName, ensemble_size: usize) -> AssimilationScenario {
        let flow = FlowConfig::new(self.n_steps, self.epsilon).with_exec(self.exec);
        let method = match method {
            MethodName::Enkf => AssimilationMethod::Enkf,
            MethodName::Kme => AssimilationMethod::Kme {
                kernel: self.kernel,
                flow,
            },
            MethodName::KmeKalman => AssimilationMethod::KmeKalman {
                kernel: self.kernel,
                flow,
            },
            MethodName::None => AssimilationMethod::NoAssimilation,
        };
        let mut sc = AssimilationScenario::new(method, ensemble_size);
        sc.params = self.params.clone();
        sc.prior_var = self.prior_var;
        sc.n_replicates = self.n_replicates;
        sc.seed = self.seed;
        sc.max_retries = self.max_retries;
        sc.exec = self.exec;
        sc
    }
}

#[derive(Debug)]
pub struct LorenzCell {
    pub method: MethodName,
    pub ensemble_size: usize,
    pub replicates: Vec<ReplicateResult>,
    /// Replicates that exhausted their retries.
    pub failures: Vec<String>,
}

impl LorenzCell {
    pub fn mean_rmse(&self) -> f64 {
        self.replicates.iter().map(|r| r.rmse).sum::<f64>() / self.replicates.len() as f64
    }
}

/// Runs every `(method, N)` scenario. Failed replicates are collected, not
/// fatal, so completed work is still reported.
pub fn run_lorenz(s: &LorenzSettings) -> Result<Vec<LorenzCell>> {
    let mut cells = Vec::new();
    for &method in &s.methods {
        for &n in &s.ensemble_sizes {
            let sc = s.scenario(method, n);
            sc.validate()?;
            let start = Instant::now();
            let results = s.exec.map(s.n_replicates, |r| run_replicate(&sc, r));
            let mut cell = LorenzCell {
                method,
                ensemble_size: n,
                replicates: Vec::new(),
                failures: Vec::new(),
            };
            for res in results {
                match res {
                    Ok(r) => cell.replicates.push(r),
                    Err(e @ kmeflow::Error::RetriesExhausted { .. }) => {
                        cell.failures.push(e.to_string())
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            log::info!(
                "{method} N={n}: {} replicates in {:.1} s",
                cell.replicates.len(),
                start.elapsed().as_secs_f64()
            );
            cells.push(cell);
        }
    }
    Ok(cells)
}

pub const LORENZ_RMSE_COLUMNS: &[&str] = &[
    "replicate",
    "method",
    "ensemble_size",
    "rmse",
    "retries",
    "wall_time_s",
];
pub const LORENZ_SUMMARY_COLUMNS: &[&str] = &[
    "method",
    "ensemble_size",
    "replicates",
    "rmse_mean",
    "rmse_stderr",
    "total_retries",
    "failed",
];
pub const LORENZ_TRACE_COLUMNS: &[&str] = &[
    "method",
    "ensemble_size",
    "replicate",
    "cycle",
    "obs_x",
    "obs_y",
    "obs_z",
    "mean_x",
    "mean_y",
    "mean_z",
];

fn lorenz_tables(cells: &[LorenzCell], traces: bool, deterministic: bool) -> Vec<Table> {
    let mut rmse = Table::new("lorenz_rmse", LORENZ_RMSE_COLUMNS);
    let mut summary = Table::new("lorenz_summary", LORENZ_SUMMARY_COLUMNS);
    let mut trace = Table::new("lorenz_trace", LORENZ_TRACE_COLUMNS);
    for c in cells {
        for r in &c.replicates {
            let wall = if deterministic {
                Value::Na
            } else {
                r.wall_time_s.into()
            };
            rmse.push(vec![
                r.replicate.into(),
                c.method.name().into(),
                c.ensemble_size.into(),
                r.rmse.into(),
                r.retries.into(),
                wall,
            ]);
            if traces {
                for j in 0..r.means.nrows() {
                    let mut row: Vec<Value> = vec![
                        c.method.name().into(),
                        c.ensemble_size.into(),
                        r.replicate.into(),
                        (j + 1).into(),
                    ];
                    row.extend((0..3).map(|k| Value::from(r.observations[(j, k)])));
                    row.extend((0..3).map(|k| Value::from(r.means[(j, k)])));
                    trace.push(row);
                }
            }
        }
        let values: Vec<f64> = c.replicates.iter().map(|r| r.rmse).collect();
        let (mean, stderr) = if values.is_empty() {
            (None, None)
        } else {
            let (m, s) = mean_and_stderr(&values);
            (Some(m), s)
        };
        summary.push(vec![
            c.method.name().into(),
            c.ensemble_size.into(),
            c.replicates.len().into(),
            mean.into(),
            stderr.into(),
            c.replicates.iter().map(|r| r.retries).sum::<usize>().into(),
            c.failures.len().into(),
        ]);
    }
    let mut out = vec![rmse, summary];
    if traces {
        out.push(trace);
    }
    out
}

// ---------------------------------------------------------------- driver

fn write_all(
    dir: &Path,
    meta: &Metadata,
    tables: &[Table],
    format: Format,
) -> Result<Vec<PathBuf>> {
    tables
        .iter()
        .map(|t| write_table(dir, meta, t, format))
        .collect()
}

/// Runs a resolved configuration and writes its outputs. Returns the files written.
pub fn run(cfg: &Config) -> Result<Vec<PathBuf>> {
    let experiment = cfg
        .experiment
        .expect("resolved configs name their experiment");
    let dir = cfg
        .output_dir
        .clone()
        .expect("resolved configs have an output directory");
    let format = cfg.format.unwrap_or(Format::Csv);
    let meta = Metadata::new(experiment.name(), cfg);
    let mut files = vec![write_config(&dir, cfg)?];
    match experiment {
        Experiment::Toy => {
            let problem = cfg.problem.as_deref().unwrap_or("gauss-to-gauss");
            let cases: Vec<ToyCase> = if problem == "all" {
                ToyCase::ALL.to_vec()
            } else {
                vec![problem
                    .parse()
                    .map_err(|e: kmeflow::Error| anyhow!(ConfigError(e.to_string())))?]
            };
            for case in cases {
                let s = ToySettings::from_config(cfg, case)?;
                let o = run_toy(&s).with_context(|| format!("toy case {case}"))?;
                log::info!(
                    "{case}: mean {:.4} var {:.4} w2 {:.4} in {:.2} s",
                    o.mean,
                    o.var,
                    o.w2,
                    o.wall_time_s
                );
                let sub = if problem == "all" {
                    dir.join(case.name())
                } else {
                    dir.clone()
                };
                files.extend(write_all(&sub, &meta, &toy_tables(&o)?, format)?);
            }
        }
        Experiment::Skew => {
            let s = SkewSettings::from_config(cfg);
            let (cells, runs) = run_skew(&s)?;
            files.extend(write_all(&dir, &meta, &skew_tables(&cells, &runs), format)?);
        }
        Experiment::BandwidthSweep => {
            let s = SweepSettings::from_config(cfg);
            let points = run_bandwidth_sweep(&s)?;
            files.push(write_table(
                &dir,
                &meta,
                &sweep_table(&points, s.ensemble_size),
                format,
            )?);
        }
        Experiment::Lorenz63 => {
            let s = LorenzSettings::from_config(cfg)?;
            let cells = run_lorenz(&s)?;
            let det = cfg.deterministic.unwrap_or(false);
            files.extend(write_all(
                &dir,
                &meta,
                &lorenz_tables(&cells, s.traces, det),
                format,
            )?);
            let failed: Vec<String> = cells.iter().flat_map(|c| c.failures.clone()).collect();
            if !failed.is_empty() {
                return Err(anyhow!(
                    "{} replicate(s) exhausted their retries: {}",
                    failed.len(),
                    failed.join("; ")
                ));
            }
        }
    }
    Ok(files)
}

/// Rejects a problem name that is not a toy case (used for `--case`).
pub fn check_case(name: &str) -> std::result::Result<(), ConfigError> {
    if name == "all" || name.parse::<ToyCase>().is_ok() {
        Ok(())
    } else {
        config_error(format!("unknown toy case {name:?}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_three_points() {
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 3.0]);
        assert_eq!(median_heuristic(&x), 2.0);
    }

    #[test]
    fn duplicate_bandwidths_are_dropped() {
        assert_eq!(
            dedup_bandwidths(&[1.0, 2.0, 1.0, 5.0, 2.0]),
            vec![1.0, 2.0, 5.0]
        );
    }

    #[test]
    fn stderr_needs_two_values() {
        assert_eq!(mean_and_stderr(&[3.0]), (3.0, None));
        let (m, s) = mean_and_stderr(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s.unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn replicate_blocks_do_not_overlap() {
        assert_eq!(replicate_block(0, 10, 3).unwrap(), 3);
        assert_eq!(replicate_block(2, 10, 3).unwrap(), 23);
        assert!(replicate_block(u64::MAX, 10, 0).is_err());
    }
}
