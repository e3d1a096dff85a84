//! `condex`: fit, test, simulate and estimate with the conditional extremes
//! model from the command line.

mod commands;

use clap::{Args, Parser, Subcommand, ValueEnum};
use condex::config::RunConfig;
use condex::simstudy::ResidualMethod;
use condex::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "condex", version, about = "Conditional extreme value modelling with a Gaussian-copula residual model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit margins and a conditional model for every site.
    Fit(FitArgs),
    /// Test the Gaussian copula assumption for the residuals.
    Gof(GofArgs),
    /// Simulate extreme events.
    Simulate(SimulateArgs),
    /// Probabilities that at least m other sites are extreme.
    Tau(TauArgs),
    /// Joint exceedance probability of an event.
    Jointprob(JointprobArgs),
    /// Simulation study on symmetric logistic data.
    Simstudy(SimstudyArgs),
    /// Describe a dataset and, optionally, a fitted model.
    Summary(SummaryArgs),
}

/// Run configuration: a JSON file overridden by flags or `CONDEX_*`
/// environment variables.
#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// JSON run configuration.
    #[arg(long, env = "CONDEX_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, env = "CONDEX_MARGINAL_THRESHOLD_QUANTILE")]
    marginal_threshold_quantile: Option<f64>,
    #[arg(long, env = "CONDEX_DEPENDENCE_QUANTILE")]
    dependence_quantile: Option<f64>,
    /// Simulated events per estimate.
    #[arg(long, env = "CONDEX_N_SIM")]
    n_sim: Option<usize>,
    /// Draws for the conditioning-site probabilities.
    #[arg(long, env = "CONDEX_N_MC_ARGMAX")]
    n_mc_argmax: Option<usize>,
    #[arg(long, env = "CONDEX_N_BOOT")]
    n_boot: Option<usize>,
    #[arg(long, env = "CONDEX_CI_LEVEL")]
    ci_level: Option<f64>,
    #[arg(long, env = "CONDEX_GOF_REPS")]
    gof_reps: Option<usize>,
    /// Correlation used for residual pairs never observed together.
    #[arg(long, env = "CONDEX_MISSING_PAIR_CORRELATION")]
    missing_pair_correlation: Option<f64>,
    #[arg(long, env = "CONDEX_QMC_POINTS")]
    qmc_points: Option<usize>,
    #[arg(long, env = "CONDEX_QMC_SHIFTS")]
    qmc_shifts: Option<usize>,
    #[arg(long, env = "CONDEX_QMC_TARGET_ERROR")]
    qmc_target_error: Option<f64>,
}

impl ConfigArgs {
    fn resolve(&self) -> condex::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            None => RunConfig::default(),
        };
        macro_rules! apply {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    cfg.$field = v;
                }
            )*};
        }
        apply!(
            marginal_threshold_quantile,
            dependence_quantile,
            n_sim,
            n_mc_argmax,
            n_boot,
            ci_level,
            gof_reps,
            qmc_points,
            qmc_shifts,
            qmc_target_error
        );
        if self.missing_pair_correlation.is_some() {
            cfg.missing_pair_correlation = self.missing_pair_correlation;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct FitArgs {
    /// CSV with one column per site and a header of site identifiers.
    #[arg(long)]
    data: PathBuf,
    /// Model JSON to write.
    #[arg(long)]
    out: PathBuf,
    /// Write the model even when some conditional fits fail.
    #[arg(long)]
    partial: bool,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct GofArgs {
    #[arg(long)]
    model: PathBuf,
    /// Data the model was fitted to.
    #[arg(long)]
    data: PathBuf,
    /// Conditioning site (identifier or index); every fitted site when omitted.
    #[arg(long)]
    site: Option<String>,
    #[arg(long, env = "CONDEX_SEED")]
    seed: u64,
    /// Pooled QQ data of the normal-scale residuals.
    #[arg(long)]
    qq_out: Option<PathBuf>,
    /// Concurrent pairs of normal-scale residuals.
    #[arg(long)]
    pairs_out: Option<PathBuf>,
    /// Null-distribution samples of T*.
    #[arg(long)]
    null_out: Option<PathBuf>,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Native,
    Laplace,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Marginal non-exceedance probability of the conditioning level.
    #[arg(long)]
    p: f64,
    /// Number of events.
    #[arg(long)]
    n: usize,
    /// Condition on this site; otherwise events with any site extreme.
    #[arg(long)]
    site: Option<String>,
    #[arg(long, value_enum, default_value = "native")]
    scale: ScaleArg,
    /// Events CSV; a JSON sidecar is written next to it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, env = "CONDEX_SEED")]
    seed: u64,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct TauArgs {
    #[arg(long)]
    model: PathBuf,
    /// Conditioning site (identifier or index).
    #[arg(long)]
    site: String,
    /// Probability levels; repeat or separate with commas.
    #[arg(long, value_delimiter = ',', required = true)]
    p: Vec<f64>,
    /// Tidy CSV of tau and the distribution of the number of extreme sites.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Data for bootstrap intervals.
    #[arg(long, requires = "report")]
    data: Option<PathBuf>,
    /// Values of m with bootstrap intervals.
    #[arg(long, value_delimiter = ',', requires = "data")]
    m: Vec<usize>,
    /// Risk report JSON with bootstrap intervals.
    #[arg(long, requires = "data")]
    report: Option<PathBuf>,
    #[arg(long, env = "CONDEX_SEED")]
    seed: u64,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct JointprobArgs {
    #[arg(long)]
    model: PathBuf,
    /// Event JSON: {"cond_site", "p_levels" or "thresholds", "method", "n"}.
    #[arg(long)]
    event: PathBuf,
    /// Data for a bootstrap interval (probability levels only).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, env = "CONDEX_SEED")]
    seed: u64,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Empirical,
    Mvkde,
    GaussianCopula,
}

impl From<MethodArg> for ResidualMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Empirical => ResidualMethod::Empirical,
            MethodArg::Mvkde => ResidualMethod::Mvkde,
            MethodArg::GaussianCopula => ResidualMethod::GaussianCopula,
        }
    }
}

#[derive(Args)]
struct SimstudyArgs {
    #[arg(long, default_value_t = 5)]
    d: usize,
    #[arg(long, default_value_t = 0.75)]
    delta: f64,
    #[arg(long, default_value_t = 5000)]
    n: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [0.99, 0.998, 0.999])]
    p: Vec<f64>,
    #[arg(long, default_value_t = 0.98)]
    dependence_quantile: f64,
    #[arg(long, value_enum, default_value = "gaussian-copula")]
    method: MethodArg,
    /// Estimate the regression instead of fixing alpha = 1, beta = 0.
    #[arg(long)]
    estimate_regression: bool,
    #[arg(long, default_value_t = 25)]
    reps: usize,
    #[arg(long, env = "CONDEX_N_BOOT", default_value_t = 250)]
    n_boot: usize,
    #[arg(long, default_value_t = 100_000)]
    n_mc: usize,
    #[arg(long, env = "CONDEX_CI_LEVEL", default_value_t = 0.95)]
    ci_level: f64,
    /// Table as CSV (values times 1000).
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Full report with per-replicate results.
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long, env = "CONDEX_SEED")]
    seed: u64,
}

#[derive(Args)]
struct SummaryArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
}

/// Exit status for a failure: 2 configuration or input, 3 fitting,
/// 4 numerical.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_)
        | Error::Csv(_)
        | Error::Json(_)
        | Error::Parse { .. }
        | Error::Schema(_)
        | Error::Config(_)
        | Error::Domain(_) => 2,
        Error::InsufficientData(_) | Error::Degenerate(_) | Error::MissingPairs(_) | Error::Fit(_) => 3,
        Error::NotPositiveDefinite | Error::Numerical(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Gof(a) => commands::gof(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Tau(a) => commands::tau(a),
        Command::Jointprob(a) => commands::jointprob(a),
        Command::Simstudy(a) => commands::simstudy(a),
        Command::Summary(a) => commands::summary(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
