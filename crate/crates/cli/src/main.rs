use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use kmeflow_cli::config::{
    BaselineName, Config, ConfigError, Experiment, Format, KernelName, MethodName, Preset,
};
use kmeflow_cli::{experiments, plot};

#[derive(Parser)]
#[command(
    name = "kmeflow",
    version,
    about = "Kernel mean embedding particle flows and filtering experiments"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Master seed for Sobol blocks and random streams.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default out/<experiment>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// TOML configuration file; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Fixed work partition so results are bit-identical for any thread count.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Table format.
    #[arg(long, global = true)]
    format: Option<Format>,
    /// Named parameter set of a published figure.
    #[arg(long, global = true)]
    preset: Option<Preset>,
}

#[derive(Subcommand)]
enum Command {
    /// One-dimensional flows with known posteriors.
    Toy(ToyArgs),
    /// First-marginal W2 error on skew-normal posteriors across dimensions.
    Skew(SkewArgs),
    /// First-marginal W2 error of the RBF flow across bandwidths.
    BandwidthSweep(SweepArgs),
    /// Lorenz-63 data assimilation with EnKF and kernel flows.
    Lorenz63(LorenzArgs),
    /// Draw SVG charts from the tables in an output directory.
    Plot { dir: PathBuf },
}

#[derive(Args)]
struct FlowArgs {
    #[arg(long)]
    kernel: Option<KernelName>,
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    n_steps: Option<usize>,
}

#[derive(Args)]
struct ToyArgs {
    /// gauss-to-gauss, mixture-to-mixture, gauss-to-mixture or all.
    #[arg(long)]
    case: Option<String>,
    #[command(flatten)]
    flow: FlowArgs,
    #[arg(long)]
    ensemble_size: Option<usize>,
    #[arg(long)]
    baseline: Option<BaselineName>,
}

#[derive(Args)]
struct SkewArgs {
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    ensemble_sizes: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    kernels: Option<Vec<KernelName>>,
    /// RBF bandwidth; the median pairwise distance of the prior ensemble when unset.
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    n_steps: Option<usize>,
    #[arg(long)]
    n_replicates: Option<usize>,
    /// Also write the replicate-0 ensembles.
    #[arg(long)]
    save_samples: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_delimiter = ',')]
    bandwidths: Option<Vec<f64>>,
    #[arg(long)]
    ensemble_size: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    n_steps: Option<usize>,
    #[arg(long)]
    n_replicates: Option<usize>,
}

#[derive(Args)]
struct LorenzArgs {
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<MethodName>>,
    #[arg(long, value_delimiter = ',')]
    ensemble_sizes: Option<Vec<usize>>,
    #[command(flatten)]
    flow: FlowArgs,
    #[arg(long)]
    n_replicates: Option<usize>,
    #[arg(long)]
    n_cycles: Option<usize>,
    #[arg(long)]
    dt_inner: Option<f64>,
    #[arg(long)]
    dt_obs: Option<f64>,
    #[arg(long)]
    obs_noise_var: Option<f64>,
    #[arg(long)]
    forecast_noise_var: Option<f64>,
    #[arg(long)]
    prior_var: Option<f64>,
    #[arg(long)]
    max_retries: Option<usize>,
    /// Also write per-cycle observations and analysis means.
    #[arg(long)]
    traces: bool,
}

fn flag(b: bool) -> Option<bool> {
    b.then_some(true)
}

fn flags_of(global: &Global, command: Command) -> (Experiment, Config) {
    let mut c = Config {
        seed: global.seed,
        output_dir: global.out.clone(),
        format: global.format,
        deterministic: flag(global.deterministic),
        threads: global.threads,
        preset: global.preset,
        ..Config::default()
    };
    let experiment = match command {
        Command::Toy(a) => {
            c.problem = a.case;
            c.kernel = a.flow.kernel;
            c.bandwidth = a.flow.bandwidth;
            c.epsilon = a.flow.epsilon;
            c.n_steps = a.flow.n_steps;
            c.ensemble_size = a.ensemble_size;
            c.baseline = a.baseline;
            Experiment::Toy
        }
        Command::Skew(a) => {
            c.dims = a.dims;
            c.ensemble_sizes = a.ensemble_sizes;
            c.kernels = a.kernels;
            c.bandwidth = a.bandwidth;
            c.epsilon = a.epsilon;
            c.n_steps = a.n_steps;
            c.n_replicates = a.n_replicates;
            c.save_samples = flag(a.save_samples);
            Experiment::Skew
        }
        Command::BandwidthSweep(a) => {
            c.bandwidths = a.bandwidths;
            c.ensemble_size = a.ensemble_size;
            c.epsilon = a.epsilon;
            c.n_steps = a.n_steps;
            c.n_replicates = a.n_replicates;
            Experiment::BandwidthSweep
        }
        Command::Lorenz63(a) => {
            c.methods = a.methods;
            c.ensemble_sizes = a.ensemble_sizes;
            c.kernel = a.flow.kernel;
            c.bandwidth = a.flow.bandwidth;
            c.epsilon = a.flow.epsilon;
            c.n_steps = a.flow.n_steps;
            c.n_replicates = a.n_replicates;
            c.n_cycles = a.n_cycles;
            c.dt_inner = a.dt_inner;
            c.dt_obs = a.dt_obs;
            c.obs_noise_var = a.obs_noise_var;
            c.forecast_noise_var = a.forecast_noise_var;
            c.prior_var = a.prior_var;
            c.max_retries = a.max_retries;
            c.traces = flag(a.traces);
            Experiment::Lorenz63
        }
        Command::Plot { .. } => unreachable!("plot takes no experiment flags"),
    };
    (experiment, c)
}

fn set_threads(threads: Option<usize>) -> Result<()> {
    #[cfg(feature = "parallel")]
    if let Some(t) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()?;
    }
    #[cfg(not(feature = "parallel"))]
    if threads.is_some_and(|t| t > 1) {
        log::warn!("built without the parallel feature; --threads is ignored");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Plot { dir } = &cli.command {
        for f in plot::plot_dir(dir)? {
            println!("{}", f.display());
        }
        return Ok(());
    }
    let file = match &cli.global.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let (experiment, flags) = flags_of(&cli.global, cli.command);
    let cfg = Config::resolve(experiment, file, flags)?;
    set_threads(cfg.threads)?;
    for f in experiments::run(&cfg)? {
        println!("{}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<ConfigError>()) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
