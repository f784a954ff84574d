//! Inference problems: priors, negative log-likelihoods and reference targets.

use std::f64::consts::LN_2;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::baselines::GaussianObservationModel;
use crate::error::{check_dim, Error, Result};
use crate::linalg::validate_spd;
use crate::quadrature::{integrate, union_of_intervals, DEFAULT_MAX_INTERVALS};
use crate::sampling::{normal_inverse_cdf, SeededRng, SobolSampler};
use crate::special::{normal_cdf, normal_log_cdf, normal_pdf};

/// Default absolute tolerance on the normalizing constant.
pub const DEFAULT_QUAD_TOL: f64 = 1e-10;

/// Half-width of the 1D integration window, in prior standard deviations.
pub const WINDOW_SIGMAS: f64 = 10.0;

/// Grid points of a numerically tabulated 1D target.
pub const NUMERIC_GRID_POINTS: usize = 20_001;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug)]
pub struct Gaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: DMatrix<f64>,
    log_norm: f64,
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        check_dim(mean.len(), cov.nrows())?;
        validate_spd(&cov, "covariance")?;
        let chol = Cholesky::new(cov.clone())
            .ok_or_else(|| Error::InvalidArgument("covariance is not positive definite".into()))?
            .l();
        let log_det: f64 = chol.diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        let log_norm = -0.5 * (mean.len() as f64 * LN_2PI + log_det);
        Ok(Gaussian {
            mean,
            cov,
            chol,
            log_norm,
        })
    }

    pub fn scalar(mean: f64, var: f64) -> Result<Self> {
        Self::new(DVector::from_element(1, mean), DMatrix::from_element(1, 1, var))
    }

    /// `N(m·1, v·I_d)`.
    pub fn isotropic(d: usize, mean: f64, var: f64) -> Result<Self> {
        Self::new(DVector::from_element(d, mean), DMatrix::identity(d, d) * var)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Lower Cholesky factor of the covariance.
    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn logpdf(&self, x: &[f64]) -> f64 {
        let r = DVector::from_fn(self.dim(), |i, _| x[i] - self.mean[i]);
        let z = self
            .chol
            .solve_lower_triangular(&r)
            .expect("Cholesky factor has a positive diagonal");
        self.log_norm - 0.5 * z.norm_squared()
    }

    fn transform(&self, z: &[f64], out: &mut [f64]) {
        for r in 0..self.dim() {
            let mut acc = self.mean[r];
            for (c, zc) in z.iter().enumerate().take(r + 1) {
                acc += self.chol[(r, c)] * zc;
            }
            out[r] = acc;
        }
    }

    pub fn sample(&self, n: usize, rng: &mut SeededRng) -> DMatrix<f64> {
        let d = self.dim();
        let mut out = DMatrix::zeros(n, d);
        let mut z = vec![0.0; d];
        let mut x = vec![0.0; d];
        for i in 0..n {
            z.iter_mut().for_each(|v| *v = rng.standard_normal());
            self.transform(&z, &mut x);
            for c in 0..d {
                out[(i, c)] = x[c];
            }
        }
        out
    }

    fn marginal(&self, c: usize) -> (f64, f64) {
        (self.mean[c], self.cov[(c, c)].sqrt())
    }
}

#[derive(Clone, Debug)]
pub struct Mixture {
    weights: Vec<f64>,
    components: Vec<Gaussian>,
}

impl Mixture {
    pub fn new(weights: Vec<f64>, components: Vec<Gaussian>) -> Result<Self> {
        if weights.is_empty() || weights.len() != components.len() {
            return Err(Error::InvalidArgument(format!(
                "mixture needs one weight per component, got {} weights and {} components",
                weights.len(),
                components.len()
            )));
        }
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::InvalidArgument("mixture weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "mixture weights must sum to 1, got {total}"
            )));
        }
        let d = components[0].dim();
        for c in &components {
            check_dim(d, c.dim())?;
        }
        Ok(Mixture {
            weights,
            components,
        })
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[Gaussian] {
        &self.components
    }

    pub fn logpdf(&self, x: &[f64]) -> f64 {
        let terms: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.components)
            .map(|(w, g)| w.ln() + g.logpdf(x))
            .collect();
        log_sum_exp(&terms)
    }

    fn pick(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (k, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return k;
            }
        }
        self.weights.len() - 1
    }

    pub fn sample(&self, n: usize, rng: &mut SeededRng) -> DMatrix<f64> {
        let d = self.dim();
        let mut out = DMatrix::zeros(n, d);
        let mut z = vec![0.0; d];
        let mut x = vec![0.0; d];
        for i in 0..n {
            let g = &self.components[self.pick(rng.uniform())];
            z.iter_mut().for_each(|v| *v = rng.standard_normal());
            g.transform(&z, &mut x);
            for c in 0..d {
                out[(i, c)] = x[c];
            }
        }
        out
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// Prior `π₀`.
#[derive(Clone, Debug)]
pub enum PriorSpec {
    Gaussian(Gaussian),
    Mixture(Mixture),
}

impl PriorSpec {
    pub fn dim(&self) -> usize {
        match self {
            PriorSpec::Gaussian(g) => g.dim(),
            PriorSpec::Mixture(m) => m.dim(),
        }
    }

    pub fn logpdf(&self, x: &[f64]) -> f64 {
        match self {
            PriorSpec::Gaussian(g) => g.logpdf(x),
            PriorSpec::Mixture(m) => m.logpdf(x),
        }
    }

    /// `n` samples from consecutive Sobol points mapped through the inverse normal CDF.
    ///
    /// `block` selects points `1 + block·n ..= (block + 1)·n`. Mixtures spend one
    /// extra leading Sobol coordinate on choosing the component.
    pub fn sample_sobol(&self, n: usize, block: u64) -> Result<DMatrix<f64>> {
        if n == 0 {
            return Err(Error::InvalidArgument("need at least one sample".into()));
        }
        let d = self.dim();
        let extra = usize::from(matches!(self, PriorSpec::Mixture(_)));
        let mut sobol = SobolSampler::new(d + extra)?;
        sobol.seek(1 + block * n as u64)?;
        let mut u = vec![0.0; d + extra];
        let mut z = vec![0.0; d];
        let mut x = vec![0.0; d];
        let mut out = DMatrix::zeros(n, d);
        for i in 0..n {
            sobol.next_into(&mut u);
            for c in 0..d {
                z[c] = normal_inverse_cdf(u[c + extra])?;
            }
            let g = match self {
                PriorSpec::Gaussian(g) => g,
                PriorSpec::Mixture(m) => &m.components[m.pick(u[0])],
            };
            g.transform(&z, &mut x);
            for c in 0..d {
                out[(i, c)] = x[c];
            }
        }
        Ok(out)
    }

    pub fn sample(&self, n: usize, rng: &mut SeededRng) -> DMatrix<f64> {
        match self {
            PriorSpec::Gaussian(g) => g.sample(n, rng),
            PriorSpec::Mixture(m) => m.sample(n, rng),
        }
    }

    /// Integration window for a 1D prior: `μ ± 10σ` per component, merged.
    pub fn window_1d(&self) -> Result<Vec<(f64, f64)>> {
        check_dim(1, self.dim())?;
        let comps: Vec<&Gaussian> = match self {
            PriorSpec::Gaussian(g) => vec![g],
            PriorSpec::Mixture(m) => m.components.iter().collect(),
        };
        Ok(union_of_intervals(
            comps
                .iter()
                .map(|g| {
                    let (m, s) = g.marginal(0);
                    (m - WINDOW_SIGMAS * s, m + WINDOW_SIGMAS * s)
                })
                .collect(),
        ))
    }
}

pub fn prior_logpdf(spec: &PriorSpec, x: &[f64]) -> f64 {
    spec.logpdf(x)
}

/// `-log p(x)` for a Gaussian mixture density `p`.
pub fn mixture_nll(mixture: &Mixture, x: &[f64]) -> f64 {
    -mixture.logpdf(x)
}

pub fn gaussian_nll(model: &GaussianObservationModel, x: &[f64]) -> Result<f64> {
    model.nll(x)
}

/// `(3 - x²)²`, a double-well likelihood that splits a unimodal prior.
pub fn double_well_nll(x: f64) -> f64 {
    let s = 3.0 - x * x;
    s * s
}

/// `-log(2Φ(γ·x))`.
pub fn skew_nll(gamma: &[f64], x: &[f64]) -> Result<f64> {
    check_dim(gamma.len(), x.len())?;
    Ok(skew_nll_unchecked(gamma, x))
}

fn skew_nll_unchecked(gamma: &[f64], x: &[f64]) -> f64 {
    let s: f64 = gamma.iter().zip(x).map(|(g, v)| g * v).sum();
    -(LN_2 + normal_log_cdf(s))
}

/// Density `2φ(x)Φ(αx)` of the standard skew-normal distribution.
pub fn skew_normal_pdf(alpha: f64, x: f64) -> f64 {
    2.0 * normal_pdf(x) * normal_cdf(alpha * x)
}

/// Mean `δ√(2/π)` of the standard skew-normal, `δ = α/√(1+α²)`.
pub fn skew_normal_mean(alpha: f64) -> f64 {
    alpha / (1.0 + alpha * alpha).sqrt() * (2.0 / std::f64::consts::PI).sqrt()
}

/// Standard skew-normal samples via `δ|Z₀| + √(1-δ²) Z₁`.
pub fn sample_skew_normal_1d(alpha: f64, n: usize, rng: &mut SeededRng) -> Vec<f64> {
    let delta = alpha / (1.0 + alpha * alpha).sqrt();
    let rest = (1.0 - delta * delta).sqrt();
    (0..n)
        .map(|_| {
            let z0 = rng.standard_normal();
            let z1 = rng.standard_normal();
            delta * z0.abs() + rest * z1
        })
        .collect()
}

pub type NllFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Negative log-likelihood `h`.
#[derive(Clone)]
pub enum Likelihood {
    Zero,
    Gaussian(GaussianObservationModel),
    /// `-log(2Φ(γ·x))`
    SkewNormal { gamma: Vec<f64> },
    /// `(3 - x²)²` on the first coordinate.
    DoubleWell,
    Custom { name: String, h: NllFn },
}

impl fmt::Debug for Likelihood {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Likelihood::Zero => write!(f, "Zero"),
            Likelihood::Gaussian(m) => f.debug_tuple("Gaussian").field(m).finish(),
            Likelihood::SkewNormal { gamma } => {
                f.debug_struct("SkewNormal").field("gamma", gamma).finish()
            }
            Likelihood::DoubleWell => write!(f, "DoubleWell"),
            Likelihood::Custom { name, .. } => f.debug_struct("Custom").field("name", name).finish(),
        }
    }
}

impl Likelihood {
    pub fn custom<F>(name: &str, h: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Likelihood::Custom {
            name: name.to_string(),
            h: Arc::new(h),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Likelihood::Zero => 0.0,
            Likelihood::Gaussian(m) => m.nll_unchecked(x),
            Likelihood::SkewNormal { gamma } => skew_nll_unchecked(gamma, x),
            Likelihood::DoubleWell => double_well_nll(x[0]),
            Likelihood::Custom { h, .. } => h(x),
        }
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        match self {
            Likelihood::Gaussian(m) => check_dim(d, m.state_dim()),
            Likelihood::SkewNormal { gamma } => check_dim(d, gamma.len()),
            _ => Ok(()),
        }
    }
}

/// Density tabulated on a uniform grid.
#[derive(Clone, Debug)]
pub struct NumericDensity {
    grid: Vec<f64>,
    pdf: Vec<f64>,
    cdf: Vec<f64>,
}

impl NumericDensity {
    pub fn new(grid: Vec<f64>, pdf: Vec<f64>) -> Result<Self> {
        if grid.len() < 2 || grid.len() != pdf.len() {
            return Err(Error::InvalidArgument("density grid needs at least two matching points".into()));
        }
        if pdf.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidArgument("density values must be finite and nonnegative".into()));
        }
        let mut cdf = Vec::with_capacity(grid.len());
        cdf.push(0.0);
        for k in 1..grid.len() {
            let last = cdf[k - 1];
            cdf.push(last + 0.5 * (pdf[k] + pdf[k - 1]) * (grid[k] - grid[k - 1]));
        }
        Ok(NumericDensity { grid, pdf, cdf })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn pdf_values(&self) -> &[f64] {
        &self.pdf
    }

    /// Trapezoid mass of the table.
    pub fn mass(&self) -> f64 {
        *self.cdf.last().expect("grid is non-empty")
    }

    /// Inverse of the piecewise-linear CDF, normalized by the table mass.
    pub fn quantile(&self, u: f64) -> f64 {
        let target = u * self.mass();
        let k = self.cdf.partition_point(|c| *c < target).clamp(1, self.grid.len() - 1);
        let (c0, c1) = (self.cdf[k - 1], self.cdf[k]);
        let frac = if c1 > c0 { (target - c0) / (c1 - c0) } else { 0.5 };
        self.grid[k - 1] + frac * (self.grid[k] - self.grid[k - 1])
    }
}

/// Known posterior used to score samples.
#[derive(Clone, Debug)]
pub enum ReferenceTarget {
    AnalyticGaussian(Gaussian),
    AnalyticMixture(Mixture),
    /// First marginal is standard skew-normal with this shape.
    SkewNormal1D { shape: f64 },
    Numeric1D(NumericDensity),
}

impl ReferenceTarget {
    /// `n` iid draws of the first coordinate of the target.
    pub fn sample_first_marginal(&self, n: usize, rng: &mut SeededRng) -> Vec<f64> {
        match self {
            ReferenceTarget::AnalyticGaussian(g) => {
                let (m, s) = g.marginal(0);
                (0..n).map(|_| m + s * rng.standard_normal()).collect()
            }
            ReferenceTarget::AnalyticMixture(mix) => (0..n)
                .map(|_| {
                    let (m, s) = mix.components[mix.pick(rng.uniform())].marginal(0);
                    m + s * rng.standard_normal()
                })
                .collect(),
            ReferenceTarget::SkewNormal1D { shape } => sample_skew_normal_1d(*shape, n, rng),
            ReferenceTarget::Numeric1D(t) => (0..n).map(|_| t.quantile(rng.uniform())).collect(),
        }
    }

    /// Density of the first marginal.
    pub fn marginal_pdf(&self, x: f64) -> f64 {
        match self {
            ReferenceTarget::AnalyticGaussian(g) => {
                let (m, s) = g.marginal(0);
                normal_pdf((x - m) / s) / s
            }
            ReferenceTarget::AnalyticMixture(mix) => mix
                .weights
                .iter()
                .zip(&mix.components)
                .map(|(w, g)| {
                    let (m, s) = g.marginal(0);
                    w * normal_pdf((x - m) / s) / s
                })
                .sum(),
            ReferenceTarget::SkewNormal1D { shape } => skew_normal_pdf(*shape, x),
            ReferenceTarget::Numeric1D(t) => {
                let g = &t.grid;
                if x < g[0] || x > g[g.len() - 1] {
                    return 0.0;
                }
                let k = g.partition_point(|v| *v < x).clamp(1, g.len() - 1);
                let frac = (x - g[k - 1]) / (g[k] - g[k - 1]);
                t.pdf[k - 1] + frac * (t.pdf[k] - t.pdf[k - 1])
            }
        }
    }
}

/// Prior, likelihood and (optionally) its Gaussian structure and reference posterior.
#[derive(Debug)]
pub struct InferenceProblem {
    pub name: String,
    pub prior: PriorSpec,
    pub likelihood: Likelihood,
    gaussian_structure: Option<GaussianObservationModel>,
    pub reference: Option<ReferenceTarget>,
    log_z: OnceLock<Result<f64>>,
}

impl Clone for InferenceProblem {
    fn clone(&self) -> Self {
        let log_z = OnceLock::new();
        if let Some(v) = self.log_z.get() {
            let _ = log_z.set(v.clone());
        }
        InferenceProblem {
            name: self.name.clone(),
            prior: self.prior.clone(),
            likelihood: self.likelihood.clone(),
            gaussian_structure: self.gaussian_structure.clone(),
            reference: self.reference.clone(),
            log_z,
        }
    }
}

impl InferenceProblem {
    pub fn new(name: &str, prior: PriorSpec, likelihood: Likelihood) -> Result<Self> {
        likelihood.check_dim(prior.dim())?;
        let gaussian_structure = match &likelihood {
            Likelihood::Gaussian(m) => Some(m.clone()),
            _ => None,
        };
        Ok(InferenceProblem {
            name: name.to_string(),
            prior,
            likelihood,
            gaussian_structure,
            reference: None,
            log_z: OnceLock::new(),
        })
    }

    pub fn with_reference(mut self, reference: ReferenceTarget) -> Self {
        self.reference = Some(reference);
        self
    }

    /// Attaches a Gaussian observation model after checking it reproduces `h`
    /// to 1e-10 (relative) at 32 prior draws.
    pub fn with_gaussian_structure(mut self, model: GaussianObservationModel) -> Result<Self> {
        check_dim(self.dim(), model.state_dim())?;
        let probe = self.prior.sample_sobol(32, 0)?;
        for i in 0..probe.nrows() {
            let x: Vec<f64> = probe.row(i).iter().copied().collect();
            let (h, q) = (self.likelihood.eval(&x), model.nll_unchecked(&x));
            if (h - q).abs() > 1e-10 * (1.0 + q.abs()) {
                return Err(Error::InvalidArgument(format!(
                    "likelihood differs from its Gaussian structure at a probe point: {h} vs {q}"
                )));
            }
        }
        self.gaussian_structure = Some(model);
        Ok(self)
    }

    pub fn gaussian_structure(&self) -> Option<&GaussianObservationModel> {
        self.gaussian_structure.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.prior.dim()
    }

    pub fn nll(&self, x: &[f64]) -> f64 {
        self.likelihood.eval(x)
    }

    /// `log ∫ e^{-t h(x)} π₀(x) dx` for a 1D problem, absolute tolerance `tol` on the integral.
    pub fn log_normalizer(&self, t: f64, tol: f64) -> Result<f64> {
        check_dim(1, self.dim())?;
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidArgument(format!("t must lie in [0, 1], got {t}")));
        }
        if t == 0.0 || matches!(self.likelihood, Likelihood::Zero) {
            return Ok(0.0);
        }
        let window = self.prior.window_1d()?;
        let r = integrate(
            |x| (self.prior.logpdf(&[x]) - t * self.likelihood.eval(&[x])).exp(),
            &window,
            tol,
            DEFAULT_MAX_INTERVALS,
        )?;
        if !(r.value > 0.0) {
            return Err(Error::Numerical(format!(
                "normalizing constant is not positive ({})",
                r.value
            )));
        }
        Ok(r.value.ln())
    }

    /// `log Z₁`, computed once at the default tolerance.
    pub fn log_z(&self) -> Result<f64> {
        self.log_z
            .get_or_init(|| self.log_normalizer(1.0, DEFAULT_QUAD_TOL))
            .clone()
    }

    /// Posterior density `e^{-h(x)} π₀(x) / Z₁` of a 1D problem.
    pub fn target_pdf(&self, x: f64) -> Result<f64> {
        let log_z = self.log_z()?;
        Ok((self.prior.logpdf(&[x]) - self.likelihood.eval(&[x]) - log_z).exp())
    }

    /// Posterior density tabulated on `points` uniform nodes spanning the quadrature window.
    pub fn tabulate_target(&self, points: usize) -> Result<NumericDensity> {
        let window = self.prior.window_1d()?;
        let (lo, hi) = (window[0].0, window[window.len() - 1].1);
        let grid: Vec<f64> = (0..points)
            .map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64)
            .collect();
        let pdf = grid
            .iter()
            .map(|&x| self.target_pdf(x))
            .collect::<Result<Vec<_>>>()?;
        NumericDensity::new(grid, pdf)
    }
}

/// One-dimensional toy problems.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ToyCase {
    GaussToGauss,
    MixtureToMixture,
    GaussToMixture,
}

impl ToyCase {
    pub const ALL: [ToyCase; 3] = [
        ToyCase::GaussToGauss,
        ToyCase::MixtureToMixture,
        ToyCase::GaussToMixture,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ToyCase::GaussToGauss => "gauss-to-gauss",
            ToyCase::MixtureToMixture => "mixture-to-mixture",
            ToyCase::GaussToMixture => "gauss-to-mixture",
        }
    }
}

impl fmt::Display for ToyCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ToyCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ToyCase::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown toy case {s:?}")))
    }
}

fn half_square() -> Result<GaussianObservationModel> {
    GaussianObservationModel::isotropic(DVector::zeros(1), 1.0)
}

/// Toy problem presets: prior, likelihood and reference posterior.
pub fn toy_problem(case: ToyCase) -> Result<InferenceProblem> {
    match case {
        ToyCase::GaussToGauss => Ok(InferenceProblem::new(
            case.name(),
            PriorSpec::Gaussian(Gaussian::scalar(4.0, 1.0)?),
            Likelihood::Gaussian(half_square()?),
        )?
        .with_reference(ReferenceTarget::AnalyticGaussian(Gaussian::scalar(2.0, 0.5)?))),
        ToyCase::MixtureToMixture => {
            let prior = Mixture::new(
                vec![0.5, 0.5],
                vec![Gaussian::scalar(4.0, 1.0)?, Gaussian::scalar(-4.0, 1.0)?],
            )?;
            let target = Mixture::new(
                vec![0.5, 0.5],
                vec![Gaussian::scalar(2.0, 0.5)?, Gaussian::scalar(-2.0, 0.5)?],
            )?;
            Ok(InferenceProblem::new(
                case.name(),
                PriorSpec::Mixture(prior),
                Likelihood::Gaussian(half_square()?),
            )?
            .with_reference(ReferenceTarget::AnalyticMixture(target)))
        }
        ToyCase::GaussToMixture => {
            let p = InferenceProblem::new(
                case.name(),
                PriorSpec::Gaussian(Gaussian::scalar(0.5, 1.0)?),
                Likelihood::DoubleWell,
            )?;
            let table = p.tabulate_target(NUMERIC_GRID_POINTS)?;
            Ok(p.with_reference(ReferenceTarget::Numeric1D(table)))
        }
    }
}

/// Shape of the skew-normal likelihood along the first coordinate.
pub const SKEW_GAMMA: f64 = -2.0;

/// Prior `N(0, I_d)`, `h(x) = -log(2Φ(γ·x))` with `γ = (-2, 0, …, 0)`.
pub fn skew_normal_problem(d: usize) -> Result<InferenceProblem> {
    if d == 0 {
        return Err(Error::InvalidArgument("dimension must be at least 1".into()));
    }
    let mut gamma = vec![0.0; d];
    gamma[0] = SKEW_GAMMA;
    Ok(InferenceProblem::new(
        "skew-normal",
        PriorSpec::Gaussian(Gaussian::isotropic(d, 0.0, 1.0)?),
        Likelihood::SkewNormal { gamma },
    )?
    .with_reference(ReferenceTarget::SkewNormal1D { shape: SKEW_GAMMA }))
}

/// Prior `N(1, I_d)`, `h(x) = ½xᵀx`, posterior `N(½·1, ½I_d)`.
pub fn bandwidth_problem(d: usize) -> Result<InferenceProblem> {
    Ok(InferenceProblem::new(
        "bandwidth",
        PriorSpec::Gaussian(Gaussian::isotropic(d, 1.0, 1.0)?),
        Likelihood::Gaussian(GaussianObservationModel::isotropic(DVector::zeros(d), 1.0)?),
    )?
    .with_reference(ReferenceTarget::AnalyticGaussian(Gaussian::isotropic(d, 0.5, 0.5)?)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn normalizer_examples() {
        let zero = InferenceProblem::new(
            "zero",
            PriorSpec::Gaussian(Gaussian::scalar(0.0, 1.0).unwrap()),
            Likelihood::Zero,
        )
        .unwrap();
        assert_eq!(zero.log_normalizer(0.7, 1e-10).unwrap(), 0.0);

        let p = InferenceProblem::new(
            "half-square",
            PriorSpec::Gaussian(Gaussian::scalar(0.0, 1.0).unwrap()),
            Likelihood::Gaussian(half_square().unwrap()),
        )
        .unwrap();
        assert_eq!(p.log_normalizer(0.0, 1e-10).unwrap(), 0.0);
        assert_relative_eq!(
            p.log_normalizer(1.0, 1e-10).unwrap(),
            -0.5 * 2f64.ln(),
            epsilon = 1e-10
        );
        assert!(p.log_normalizer(1.5, 1e-10).is_err());
    }

    #[test]
    fn gaussian_target_density() {
        let p = toy_problem(ToyCase::GaussToGauss).unwrap();
        let want = 1.0 / std::f64::consts::PI.sqrt();
        assert_relative_eq!(p.target_pdf(2.0).unwrap(), want, epsilon = 1e-10);
    }

    #[test]
    fn zero_likelihood_target_is_prior() {
        let p = InferenceProblem::new(
            "zero",
            PriorSpec::Gaussian(Gaussian::scalar(1.0, 2.0).unwrap()),
            Likelihood::Zero,
        )
        .unwrap();
        for x in [-3.0, 0.0, 1.0, 4.5] {
            assert_eq!(p.target_pdf(x).unwrap(), p.prior.logpdf(&[x]).exp());
        }
    }

    #[test]
    fn skew_likelihood_is_normalized() {
        // e^{-h}π₀ is itself the skew-normal density.
        let p = skew_normal_problem(1).unwrap();
        assert!(p.log_z().unwrap().abs() < 1e-10);
    }

    #[test]
    fn skew_nll_examples() {
        assert_eq!(skew_nll(&[1.0], &[0.0]).unwrap(), 0.0);
        assert_eq!(skew_nll(&[-2.0], &[0.0]).unwrap(), 0.0);
        assert_relative_eq!(skew_nll(&[1.0], &[-5.0]).unwrap(), 14.371_851_213_428_78, epsilon = 1e-10);
        assert!(skew_nll(&[1.0, 0.0], &[1.0]).is_err());
        assert!(skew_nll(&[1.0], &[-1e3]).unwrap().is_finite());
    }

    #[test]
    fn logpdf_examples() {
        let std = PriorSpec::Gaussian(Gaussian::scalar(0.0, 1.0).unwrap());
        assert_relative_eq!(prior_logpdf(&std, &[0.0]), -0.5 * LN_2PI, epsilon = 1e-15);
        assert_eq!(double_well_nll(3f64.sqrt()).abs() < 1e-15, true);
        let mix = Mixture::new(
            vec![0.5, 0.5],
            vec![Gaussian::scalar(4.0, 1.0).unwrap(), Gaussian::scalar(-4.0, 1.0).unwrap()],
        )
        .unwrap();
        for x in [0.3, 1.7, 6.0] {
            assert_eq!(mix.logpdf(&[x]), mix.logpdf(&[-x]));
        }
        assert!(mixture_nll(&mix, &[40.0]).is_finite());
    }

    #[test]
    fn mixture_validation() {
        let g = Gaussian::scalar(0.0, 1.0).unwrap();
        assert!(Mixture::new(vec![0.5, 0.6], vec![g.clone(), g.clone()]).is_err());
        assert!(Mixture::new(vec![1.0, 0.0], vec![g.clone(), g.clone()]).is_err());
        assert!(Mixture::new(vec![1.0], vec![g.clone(), g]).is_err());
        assert!(Gaussian::scalar(0.0, -1.0).is_err());
    }

    #[test]
    fn sobol_prior_draws() {
        let p = PriorSpec::Gaussian(Gaussian::scalar(4.0, 1.0).unwrap());
        let x = p.sample_sobol(1, 0).unwrap();
        assert_eq!(x[(0, 0)], 4.0);
        let mix = toy_problem(ToyCase::MixtureToMixture).unwrap();
        let y = mix.prior.sample_sobol(512, 0).unwrap();
        let positive = y.iter().filter(|v| **v > 0.0).count();
        assert_eq!(positive, 256);
    }

    #[test]
    fn gaussian_structure_consistency_check() {
        let model = half_square().unwrap();
        let prior = PriorSpec::Gaussian(Gaussian::scalar(0.0, 1.0).unwrap());
        let ok = InferenceProblem::new("c", prior.clone(), Likelihood::custom("sq", |x| 0.5 * x[0] * x[0]))
            .unwrap()
            .with_gaussian_structure(model.clone());
        assert!(ok.is_ok());
        let bad = InferenceProblem::new("c", prior, Likelihood::custom("sq", |x| x[0] * x[0]))
            .unwrap()
            .with_gaussian_structure(model);
        assert!(bad.is_err());
    }

    #[test]
    fn numeric_quantile_inverts_cdf() {
        let grid: Vec<f64> = (0..=100).map(|k| k as f64 / 100.0).collect();
        let t = NumericDensity::new(grid.clone(), vec![1.0; 101]).unwrap();
        assert_relative_eq!(t.mass(), 1.0, epsilon = 1e-14);
        assert_relative_eq!(t.quantile(0.25), 0.25, epsilon = 1e-12);
    }
}
