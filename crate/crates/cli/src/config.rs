//! Flat experiment configuration: TOML file, named presets and command-line
//! overrides, resolved in that order on top of per-experiment defaults.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Invalid or inconsistent configuration (exit code 2).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

macro_rules! named_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn name(&self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, String> {
                $name::ALL
                    .iter()
                    .copied()
                    .find(|v| v.name() == s)
                    .ok_or_else(|| {
                        let names: Vec<_> = $name::ALL.iter().map(|v| v.name()).collect();
                        format!("unknown value {s:?}, expected one of {}", names.join(", "))
                    })
            }
        }
    };
}

named_enum!(Experiment {
    Toy => "toy",
    Skew => "skew",
    BandwidthSweep => "bandwidth-sweep",
    Lorenz63 => "lorenz63",
});

named_enum!(Format {
    Csv => "csv",
    Json => "json",
});

named_enum!(KernelName {
    Rbf => "rbf",
    Quadratic => "quadratic",
});

named_enum!(BaselineName {
    None => "none",
    KalmanBucy => "kalman-bucy",
});

named_enum!(MethodName {
    Enkf => "enkf",
    Kme => "kme",
    KmeKalman => "kme-kalman",
    None => "none",
});

named_enum!(Preset {
    Fig1 => "fig1",
    Fig2 => "fig2",
    Fig3Dimension => "fig3-dimension",
    Fig3Bandwidth => "fig3-bandwidth",
    Fig4 => "fig4",
});

/// Every configurable key. Unset keys take the experiment's defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub experiment: Option<Experiment>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deterministic: Option<bool>,
    /// Worker threads; unset uses every core.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,

    /// Toy case (`gauss-to-gauss`, `mixture-to-mixture`, `gauss-to-mixture`
    /// or `all`), or `skew-normal` for the skew experiment.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub problem: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelName>,
    /// RBF bandwidth. For `skew`, unset means the median pairwise distance of
    /// the initial ensemble.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ensemble_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineName>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_replicates: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub save_samples: Option<bool>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub dims: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ensemble_sizes: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernels: Option<Vec<KernelName>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bandwidths: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub methods: Option<Vec<MethodName>>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_cycles: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt_inner: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt_obs: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub obs_noise_var: Option<f64>,
    /// Per-step forecast noise variance; unset means `4·dt_inner/5`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub forecast_noise_var: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prior_var: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_retries: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub traces: Option<bool>,
}

macro_rules! for_each_key {
    ($m:ident) => {
        $m!(
            experiment,
            preset,
            seed,
            output_dir,
            format,
            deterministic,
            threads,
            problem,
            kernel,
            bandwidth,
            epsilon,
            n_steps,
            ensemble_size,
            baseline,
            n_replicates,
            save_samples,
            dims,
            ensemble_sizes,
            kernels,
            bandwidths,
            methods,
            n_cycles,
            dt_inner,
            dt_obs,
            obs_noise_var,
            forecast_noise_var,
            prior_var,
            max_retries,
            traces
        )
    };
}

const COMMON_KEYS: &[&str] = &[
    "experiment",
    "preset",
    "seed",
    "output_dir",
    "format",
    "deterministic",
    "threads",
];

fn experiment_keys(e: Experiment) -> &'static [&'static str] {
    match e {
        Experiment::Toy => &[
            "problem",
            "kernel",
            "bandwidth",
            "epsilon",
            "n_steps",
            "ensemble_size",
            "baseline",
        ],
        Experiment::Skew => &[
            "problem",
            "dims",
            "ensemble_sizes",
            "kernels",
            "bandwidth",
            "epsilon",
            "n_steps",
            "n_replicates",
            "save_samples",
        ],
        Experiment::BandwidthSweep => &[
            "bandwidths",
            "ensemble_size",
            "epsilon",
            "n_steps",
            "n_replicates",
        ],
        Experiment::Lorenz63 => &[
            "methods",
            "ensemble_sizes",
            "kernel",
            "bandwidth",
            "epsilon",
            "n_steps",
            "n_replicates",
            "n_cycles",
            "dt_inner",
            "dt_obs",
            "obs_noise_var",
            "forecast_noise_var",
            "prior_var",
            "max_retries",
            "traces",
        ],
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Config::parse(&text).map_err(|e| ConfigError(format!("{}: {}", path.display(), e.0)))
    }

    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError(e.message().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("configuration serializes to JSON")
    }

    /// Keys set in `other` replace those in `self`.
    pub fn overlay(self, other: Config) -> Config {
        macro_rules! pick {
            ($($k:ident),*) => {
                Config { $($k: other.$k.or(self.$k)),* }
            };
        }
        for_each_key!(pick)
    }

    /// Names of the keys that are set.
    pub fn set_keys(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        macro_rules! collect {
            ($($k:ident),*) => {
                $(if self.$k.is_some() { out.push(stringify!($k)); })*
            };
        }
        for_each_key!(collect);
        out
    }

    /// Final configuration for `experiment`: defaults, then the preset, then
    /// `file`, then `flags`. Keys whose default depends on the toy case or on
    /// the data (the skew bandwidth) stay unset.
    pub fn resolve(
        experiment: Experiment,
        file: Config,
        flags: Config,
    ) -> Result<Config, ConfigError> {
        if let Some(e) = file.experiment.filter(|e| *e != experiment) {
            return config_error(format!(
                "config file is for experiment {e}, not {experiment}"
            ));
        }
        let preset = flags.preset.or(file.preset);
        let mut base = defaults(experiment);
        if let Some(p) = preset {
            let pc = preset_config(p);
            if pc.experiment != Some(experiment) {
                return config_error(format!(
                    "preset {p} belongs to {}, not {experiment}",
                    pc.experiment.expect("presets name their experiment")
                ));
            }
            base = base.overlay(pc);
        }
        let mut cfg = base.overlay(file).overlay(flags);
        cfg.experiment = Some(experiment);
        cfg.preset = preset;
        if cfg.output_dir.is_none() {
            cfg.output_dir = Some(PathBuf::from("out").join(experiment.name()));
        }
        if experiment == Experiment::Lorenz63 && cfg.forecast_noise_var.is_none() {
            cfg.forecast_noise_var = cfg.dt_inner.map(|dt| 4.0 * dt / 5.0);
        }
        cfg.check_keys(experiment)?;
        cfg.validate(experiment)?;
        Ok(cfg)
    }

    fn check_keys(&self, experiment: Experiment) -> Result<(), ConfigError> {
        let allowed = experiment_keys(experiment);
        let stray: Vec<_> = self
            .set_keys()
            .into_iter()
            .filter(|k| !COMMON_KEYS.contains(k) && !allowed.contains(k))
            .collect();
        if stray.is_empty() {
            Ok(())
        } else {
            config_error(format!(
                "keys not used by {experiment}: {}",
                stray.join(", ")
            ))
        }
    }

    fn validate(&self, experiment: Experiment) -> Result<(), ConfigError> {
        fn positive(name: &str, v: Option<f64>) -> Result<(), ConfigError> {
            match v {
                Some(x) if !(x > 0.0 && x.is_finite()) => {
                    config_error(format!("{name} must be positive, got {x}"))
                }
                _ => Ok(()),
            }
        }
        fn at_least(name: &str, v: Option<usize>, min: usize) -> Result<(), ConfigError> {
            match v {
                Some(x) if x < min => {
                    config_error(format!("{name} must be at least {min}, got {x}"))
                }
                _ => Ok(()),
            }
        }
        fn non_empty<T>(name: &str, v: &Option<Vec<T>>) -> Result<(), ConfigError> {
            match v {
                Some(x) if x.is_empty() => config_error(format!("{name} must not be empty")),
                _ => Ok(()),
            }
        }
        positive("bandwidth", self.bandwidth)?;
        positive("epsilon", self.epsilon)?;
        positive("dt_inner", self.dt_inner)?;
        positive("dt_obs", self.dt_obs)?;
        positive("prior_var", self.prior_var)?;
        for (name, v) in [
            ("obs_noise_var", self.obs_noise_var),
            ("forecast_noise_var", self.forecast_noise_var),
        ] {
            if let Some(x) = v.filter(|x| !(*x >= 0.0 && x.is_finite())) {
                return config_error(format!("{name} must be nonnegative, got {x}"));
            }
        }
        at_least("n_steps", self.n_steps, 1)?;
        at_least("ensemble_size", self.ensemble_size, 2)?;
        at_least("n_replicates", self.n_replicates, 1)?;
        at_least("n_cycles", self.n_cycles, 1)?;
        at_least("threads", self.threads, 1)?;
        non_empty("dims", &self.dims)?;
        non_empty("ensemble_sizes", &self.ensemble_sizes)?;
        non_empty("kernels", &self.kernels)?;
        non_empty("bandwidths", &self.bandwidths)?;
        non_empty("methods", &self.methods)?;
        for b in self.bandwidths.iter().flatten() {
            positive("bandwidths", Some(*b))?;
        }
        for n in self.ensemble_sizes.iter().flatten() {
            at_least("ensemble_sizes", Some(*n), 2)?;
        }
        for d in self.dims.iter().flatten() {
            if !(1..=kmeflow::sampling::MAX_DIMENSION).contains(d) {
                return config_error(format!(
                    "dims must lie in 1..={}, got {d}",
                    kmeflow::sampling::MAX_DIMENSION
                ));
            }
        }
        match experiment {
            Experiment::Toy => {
                let p = self.problem.as_deref().unwrap_or_default();
                if p != "all" && p.parse::<kmeflow::models::ToyCase>().is_err() {
                    return config_error(format!(
                        "unknown toy problem {p:?}; expected gauss-to-gauss, mixture-to-mixture, gauss-to-mixture or all"
                    ));
                }
            }
            Experiment::Skew => {
                if self.problem.as_deref() != Some("skew-normal") {
                    return config_error(format!(
                        "skew problem must be \"skew-normal\", got {:?}",
                        self.problem
                    ));
                }
            }
            Experiment::Lorenz63 => {
                let (inner, obs) = (self.dt_inner.unwrap_or(1.0), self.dt_obs.unwrap_or(1.0));
                let ratio = obs / inner;
                if (ratio - ratio.round()).abs() > 1e-9 * ratio || ratio.round() < 1.0 {
                    return config_error(format!(
                        "dt_obs / dt_inner must be a positive integer, got {ratio}"
                    ));
                }
            }
            Experiment::BandwidthSweep => {}
        }
        Ok(())
    }
}

/// Settings used when nothing else is given.
pub fn defaults(experiment: Experiment) -> Config {
    let common = Config {
        seed: Some(0),
        format: Some(Format::Csv),
        deterministic: Some(false),
        ..Config::default()
    };
    let specific = match experiment {
        Experiment::Toy => Config {
            problem: Some("gauss-to-gauss".into()),
            n_steps: Some(50),
            ensemble_size: Some(500),
            baseline: Some(BaselineName::None),
            ..Config::default()
        },
        Experiment::Skew => Config {
            problem: Some("skew-normal".into()),
            dims: Some(vec![1, 2, 5, 10, 20, 50]),
            ensemble_sizes: Some(vec![500]),
            kernels: Some(vec![KernelName::Rbf, KernelName::Quadratic]),
            epsilon: Some(1e-8),
            n_steps: Some(50),
            n_replicates: Some(10),
            save_samples: Some(false),
            ..Config::default()
        },
        Experiment::BandwidthSweep => Config {
            bandwidths: Some(vec![0.5, 1.0, 2.0, 3.0, 5.0, 10.0, 20.0, 50.0]),
            ensemble_size: Some(250),
            epsilon: Some(1e-5),
            n_steps: Some(50),
            n_replicates: Some(10),
            ..Config::default()
        },
        Experiment::Lorenz63 => Config {
            methods: Some(vec![
                MethodName::Enkf,
                MethodName::Kme,
                MethodName::KmeKalman,
            ]),
            ensemble_sizes: Some(vec![100, 200, 300, 400, 500]),
            kernel: Some(KernelName::Rbf),
            bandwidth: Some(6.0),
            epsilon: Some(5e-11),
            n_steps: Some(50),
            n_replicates: Some(20),
            n_cycles: Some(100),
            dt_inner: Some(0.001),
            dt_obs: Some(0.05),
            obs_noise_var: Some(0.2),
            prior_var: Some(0.01),
            max_retries: Some(5),
            traces: Some(false),
            ..Config::default()
        },
    };
    common.overlay(specific)
}

/// Parameter sets of the published figures.
pub fn preset_config(p: Preset) -> Config {
    match p {
        Preset::Fig1 => Config {
            experiment: Some(Experiment::Toy),
            problem: Some("all".into()),
            ..Config::default()
        },
        Preset::Fig2 => Config {
            experiment: Some(Experiment::Skew),
            dims: Some(vec![1]),
            ensemble_sizes: Some(vec![200]),
            save_samples: Some(true),
            ..Config::default()
        },
        Preset::Fig3Dimension => Config {
            experiment: Some(Experiment::Skew),
            dims: Some(vec![1, 2, 5, 10, 20, 50]),
            ensemble_sizes: Some(vec![200, 500]),
            ..Config::default()
        },
        Preset::Fig3Bandwidth => Config {
            experiment: Some(Experiment::BandwidthSweep),
            ..Config::default()
        },
        Preset::Fig4 => Config {
            experiment: Some(Experiment::Lorenz63),
            ..Config::default()
        },
    }
}
