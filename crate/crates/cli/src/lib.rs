//! `gossiplab` command-line driver.
//!
//! Settings resolve as built-in defaults, then `--config FILE`, then flags.
//! Every output begins with the resolved settings as `#@ key=value` lines;
//! passing that output back through `--config` repeats the run exactly.
//!
//! Exit codes: 0 on success, 1 on configuration or usage errors, 2 when a
//! run hit its cap or was aborted (the output is still written).

pub mod commands;
pub mod config;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::Outcome;
use crate::config::{ConfigError, ConfigResult, Settings};

pub use commands::{scaling_report, ScalingPoint};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_INCOMPLETE: i32 = 2;

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "GOSSIPLAB_THREADS";

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Core(gossiplab::Error),
    Io(std::io::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "{e}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<gossiplab::Error> for CliError {
    fn from(e: gossiplab::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

/// Declares a subcommand whose settings are all optional string flags.
macro_rules! settings_command {
    ($ty:ident, $name:literal, [$($field:ident = $key:literal : $default:literal, $help:literal;)*]) => {
        #[derive(Debug, Args)]
        pub struct $ty {
            /// Settings file (key=value lines), or an earlier output to repeat.
            #[arg(long, value_name = "FILE")]
            pub config: Option<PathBuf>,
            /// Output file; stdout when absent.
            #[arg(long, short, value_name = "FILE")]
            pub out: Option<PathBuf>,
            $(
                #[arg(long = $key, value_name = "VALUE", help = concat!($help, " [default: ", $default, "]"))]
                pub $field: Option<String>,
            )*
        }

        impl $ty {
            pub const DEFAULTS: &'static [(&'static str, &'static str)] = &[$(($key, $default)),*];

            fn settings(&self) -> ConfigResult<Settings> {
                let mut s = Settings::new($name, Self::DEFAULTS);
                if let Some(path) = &self.config {
                    s.merge_file(path)?;
                }
                $(
                    if let Some(v) = &self.$field {
                        s.set($key, v.clone())?;
                    }
                )*
                Ok(s)
            }
        }
    };
}

settings_command!(TopologyArgs, "topology", [
    kind = "kind": "rgg", "Graph family: rgg, grid or complete";
    n = "n": "50", "Number of nodes";
    radius = "radius": "auto", "RGG connection radius (auto: radius-scale * sqrt(ln n / n))";
    radius_scale = "radius-scale": "2", "Multiplier of the connectivity threshold";
    rows = "rows": "auto", "Grid rows (auto: sqrt n)";
    cols = "cols": "auto", "Grid columns (auto: sqrt n)";
    seed = "seed": "1", "Random seed";
]);

settings_command!(ConvergeArgs, "converge", [
    topology = "topology": "rgg", "Graph family: rgg, grid or complete";
    n = "n": "100", "Number of nodes";
    radius = "radius": "auto", "RGG connection radius";
    radius_scale = "radius-scale": "2", "Multiplier of the connectivity threshold";
    rows = "rows": "auto", "Grid rows";
    cols = "cols": "auto", "Grid columns";
    protocol = "protocol": "pairwise", "pairwise, broadcast, geographic or path-avg";
    gamma = "gamma": "0.5", "Broadcast mixing weight";
    design = "design": "uniform", "Neighbor selection: uniform (1/deg) or lazy (1/(deg+1), self-pick idles)";
    eps = "eps": "0.01", "Target normalized error";
    trials = "trials": "100", "Monte-Carlo trials (at least 20)";
    init = "init": "spike", "Initial vector: spike or split";
    link_loss = "link-loss": "0", "Probability that an exchange is lost";
    max_ticks = "max-ticks": "1000000000", "Tick cap per trial";
    seed = "seed": "1", "Random seed";
]);

settings_command!(ScalingArgs, "scaling", [
    topology = "topology": "complete", "Graph family: rgg, grid or complete";
    ns = "ns": "16,32,64", "Comma-separated network sizes (grid sizes must be squares)";
    radius_scale = "radius-scale": "2", "Multiplier of the connectivity threshold";
    protocol = "protocol": "pairwise", "pairwise, broadcast, geographic or path-avg";
    gamma = "gamma": "0.5", "Broadcast mixing weight";
    eps = "eps": "0.01", "Target normalized error";
    trials = "trials": "20", "Monte-Carlo trials per size (at least 20)";
    init = "init": "spike", "Initial vector: spike or split";
    max_ticks = "max-ticks": "1000000000", "Tick cap per trial";
    seed = "seed": "1", "Random seed";
]);

settings_command!(QuantizedArgs, "quantized", [
    topology = "topology": "rgg", "Graph family: rgg, grid or complete";
    n = "n": "50", "Number of nodes";
    radius = "radius": "auto", "RGG connection radius";
    radius_scale = "radius-scale": "2", "Multiplier of the connectivity threshold";
    rows = "rows": "auto", "Grid rows";
    cols = "cols": "auto", "Grid columns";
    mode = "mode": "async", "async (pairwise gossip) or sync (Metropolis consensus)";
    quantizer = "quantizer": "dither", "none, uniform, dither, integer, zoom or log";
    delta = "delta": "0.01", "Quantizer step (log: sector parameter)";
    rate_bits = "rate-bits": "16", "Bits per uniform or dithered code";
    init = "init": "random", "Initial vector: spike, split or random";
    range = "range": "100", "Random initial values lie in [0, range)";
    eps = "eps": "0.0001", "Target normalized error (async, none or uniform)";
    update = "update": "auto", "Sync update: direct, quantized, preserving (auto: by quantizer)";
    tol = "tol": "1e-12", "Sync runs stop once no value moves more than this";
    max_iter = "max-iter": "10000000", "Tick cap (async) or iteration cap (sync)";
    sample_every = "sample-every": "auto", "Trace sampling period (auto: n)";
    seed = "seed": "1", "Random seed";
]);

settings_command!(EstimateArgs, "estimate", [
    n = "n": "45", "Number of sensors (also the parameter dimension)";
    radius = "radius": "auto", "Deployment radius before the degree cap";
    radius_scale = "radius-scale": "2", "Multiplier of the connectivity threshold";
    max_degree = "max-degree": "6", "Degree cap (longest edges dropped first)";
    theta_sd = "theta-sd": "5", "Standard deviation of the true parameter components";
    noise_sd = "noise-sd": "1", "Observation noise standard deviation";
    a = "a": "1", "Weight numerator in a/(t+1+offset)";
    offset = "offset": "0", "Weight offset";
    b = "b": "0.1", "Consensus gain";
    quantizer = "quantizer": "dither", "dither or none";
    delta = "delta": "0.01", "Dither quantizer step";
    rate_bits = "rate-bits": "16", "Bits per code";
    iterations = "iterations": "5000", "Synchronous iterations";
    sample_every = "sample-every": "100", "Sampling period";
    seed = "seed": "1", "Random seed";
]);

settings_command!(LocalizeArgs, "localize", [
    topology = "topology": "rgg", "Graph family: rgg or grid";
    n = "n": "200", "Number of sensors";
    radius = "radius": "auto", "RGG connection radius";
    radius_scale = "radius-scale": "2", "Multiplier of the connectivity threshold";
    rows = "rows": "auto", "Grid rows";
    cols = "cols": "auto", "Grid columns";
    protocol = "protocol": "pairwise", "pairwise, broadcast, geographic or path-avg";
    gamma = "gamma": "0.5", "Broadcast mixing weight";
    source_x = "source-x": "auto", "Source x (auto: uniform in [0.2, 0.8])";
    source_y = "source-y": "auto", "Source y (auto: uniform in [0.2, 0.8])";
    strength = "strength": "1", "Emitted signal strength";
    path_loss = "path-loss": "2", "Path-loss exponent";
    noise_sd = "noise-sd": "0.01", "Measurement noise standard deviation";
    quantile = "quantile": "0.75", "Detection threshold quantile when threshold is auto";
    threshold = "threshold": "auto", "Detection threshold";
    eps = "eps": "1e-8", "Gossip target normalized error";
    max_ticks = "max-ticks": "1000000000", "Tick cap";
    seed = "seed": "1", "Random seed";
]);

settings_command!(FieldArgs, "field", [
    topology = "topology": "rgg", "Graph family: rgg or grid";
    n = "n": "200", "Number of sensors";
    radius = "radius": "auto", "RGG connection radius";
    radius_scale = "radius-scale": "2", "Multiplier of the connectivity threshold";
    rows = "rows": "auto", "Grid rows";
    cols = "cols": "auto", "Grid columns";
    mode = "mode": "cs", "cs (gossip + shrinkage reconstruction) or mterm (best m-term error)";
    ms = "ms": "auto", "Comma-separated m values for mode=mterm (auto: 0..=n)";
    ks = "ks": "20,50,100", "Comma-separated projection counts for mode=cs";
    protocol = "protocol": "pairwise", "pairwise, broadcast, geographic or path-avg";
    gamma = "gamma": "0.5", "Broadcast mixing weight";
    eps = "eps": "0.0001", "Gossip target normalized error per instance";
    max_ticks = "max-ticks": "1000000000", "Tick cap per instance";
    tau = "tau": "auto", "Regularization (auto: 1e-3 of the largest correlation)";
    ista_tol = "ista-tol": "1e-8", "Relative objective tolerance";
    ista_max_iter = "ista-max-iter": "500000", "Shrinkage iteration cap";
    seed = "seed": "1", "Random seed";
]);

#[derive(Debug, Parser)]
#[command(name = "gossiplab", version, about = "Gossip averaging simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a graph and print it as an edge list.
    Topology(TopologyArgs),
    /// Empirical averaging time against the spectral bound.
    Converge(ConvergeArgs),
    /// Messages to reach ε across network sizes, with the log-log slope.
    Scaling(ScalingArgs),
    /// Quantized consensus trace.
    Quantized(QuantizedArgs),
    /// Distributed linear estimation error per node.
    Estimate(EstimateArgs),
    /// Source localization by gossip against the centralized estimate.
    Localize(LocalizeArgs),
    /// Field compression: m-term errors or compressed-sensing reconstruction.
    Field(FieldArgs),
}

fn configure_threads() {
    if let Some(k) = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        if k > 0 {
            // a second call in the same process keeps the first pool
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build_global();
        }
    }
}

fn emit(settings: &Settings, outcome: &Outcome, out: Option<&PathBuf>) -> std::io::Result<()> {
    let text = format!("{}{}", settings.header(), outcome.body);
    match out {
        Some(path) => std::fs::write(path, text),
        None => std::io::stdout().lock().write_all(text.as_bytes()),
    }
}

fn execute(
    settings: ConfigResult<Settings>,
    out: Option<&PathBuf>,
    run: fn(&mut Settings) -> Result<Outcome, CliError>,
) -> i32 {
    let result = settings.map_err(CliError::from).and_then(|mut s| {
        let outcome = run(&mut s)?;
        emit(&s, &outcome, out)?;
        Ok(outcome)
    });
    match result {
        Ok(Outcome {
            incomplete: None, ..
        }) => EXIT_OK,
        Ok(Outcome {
            incomplete: Some(reason),
            ..
        }) => {
            eprintln!("warning: {reason}");
            EXIT_INCOMPLETE
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}

/// Runs the CLI on `argv` (program name first) and returns the exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    match &cli.command {
        Command::Topology(a) => execute(a.settings(), a.out.as_ref(), commands::topology),
        Command::Converge(a) => execute(a.settings(), a.out.as_ref(), commands::converge),
        Command::Scaling(a) => execute(a.settings(), a.out.as_ref(), commands::scaling),
        Command::Quantized(a) => execute(a.settings(), a.out.as_ref(), commands::quantized),
        Command::Estimate(a) => execute(a.settings(), a.out.as_ref(), commands::estimate),
        Command::Localize(a) => execute(a.settings(), a.out.as_ref(), commands::localize_cmd),
        Command::Field(a) => execute(a.settings(), a.out.as_ref(), commands::field),
    }
}
