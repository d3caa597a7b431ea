//! `eblab`: command-line front end for the shrinkage laboratory.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "eblab", version, about = "Empirical- and hierarchical-Bayes shrinkage laboratory")]
pub struct Cli {
    /// Seed for every random stream used by the command.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output file (standard output when omitted).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Draw a sparse normal-means dataset (columns index, theta, x).
    Simulate(ScenarioArgs),
    /// Fit the marginal by spline Poisson regression and tabulate the Tweedie rule.
    FitTweedie(TweedieArgs),
    /// Fit the grid NPMLE of the prior (columns atom, weight).
    FitNpmle(NpmleArgs),
    /// Run the horseshoe Gibbs sampler (long draws: draw, param, value).
    FitHorseshoe(HorseshoeArgs),
    /// Gamma–Poisson shrinker: type-II ML fit and per-cell EBGM/EB05.
    Mgps(MgpsArgs),
    /// Fuse experimental, observational and calibration estimates of θ.
    Calibrate(CalibrateArgs),
    /// Monte Carlo population predictive in the conjugate normal model.
    PopPredictive(PopArgs),
    /// Mean ℓ2 risk of several methods on shared replicate datasets.
    RiskBench(RiskArgs),
    /// Empirical interval coverage and width on shared replicate datasets.
    CoverageBench(CoverageArgs),
}

#[derive(Args, Debug, Clone)]
pub struct ScenarioArgs {
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    /// Fraction of nonzero means, in (0, 1].
    #[arg(long, default_value_t = 0.05)]
    pub sparsity: f64,
    /// Value of every nonzero mean.
    #[arg(long, default_value_t = 8.0)]
    pub signal: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// CSV with a single `x` column.
    #[arg(long)]
    pub input: PathBuf,
    /// Known noise standard deviation.
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
}

#[derive(Args, Debug, Clone)]
pub struct RuleGridArgs {
    /// Rule grid lower end (default: data minimum).
    #[arg(long)]
    pub grid_lo: Option<f64>,
    /// Rule grid upper end (default: data maximum).
    #[arg(long)]
    pub grid_hi: Option<f64>,
    #[arg(long, default_value_t = 201)]
    pub grid_points: usize,
}

#[derive(Args, Debug)]
pub struct TweedieArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 60)]
    pub bins: usize,
    /// Spline degrees of freedom.
    #[arg(long, default_value_t = 7)]
    pub df: usize,
    #[command(flatten)]
    pub grid: RuleGridArgs,
}

#[derive(Args, Debug)]
pub struct NpmleArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Number of candidate atoms on [min x − σ, max x + σ].
    #[arg(long, default_value_t = 600)]
    pub atoms: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 5000)]
    pub max_iter: usize,
    /// Use plain EM instead of the constrained Newton solver.
    #[arg(long)]
    pub em: bool,
    /// Drop atoms lighter than this before writing (0 keeps all).
    #[arg(long, default_value_t = 0.0)]
    pub prune: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TauSamplerArg {
    Auxiliary,
    Slice,
}

#[derive(Args, Debug, Clone)]
pub struct ChainArgs {
    #[arg(long, default_value_t = 20_000)]
    pub n_iter: usize,
    #[arg(long, default_value_t = 5_000)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 1)]
    pub thin: usize,
}

#[derive(Args, Debug)]
pub struct HorseshoeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub chain: ChainArgs,
    /// Hold τ fixed at this value.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, value_enum, default_value_t = TauSamplerArg::Auxiliary)]
    pub tau_sampler: TauSamplerArg,
    /// Credible level for the JSON interval summary.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
}

#[derive(Args, Debug)]
pub struct MgpsArgs {
    /// CSV with header drug,event,n,e.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Covariate CSV keyed by drug,event; runs the Pólya–Gamma regression.
    #[arg(long)]
    pub covariates: Option<PathBuf>,
    /// Negative-binomial size for the covariate model.
    #[arg(long, default_value_t = 1.0)]
    pub nb_size: f64,
    #[arg(long, default_value_t = 4000)]
    pub n_iter: usize,
    #[arg(long, default_value_t = 1000)]
    pub burn_in: usize,
    /// Where to write the covariate-model draws (long CSV).
    #[arg(long)]
    pub draws_out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CalibMethod {
    /// Conjugate Gibbs sampler.
    Full,
    /// Maximum marginal likelihood plug-in.
    Plugin,
    /// Location-horseshoe bias model.
    Horseshoe,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    /// CSV with header role,estimate,variance (role exp, obs or calib).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = CalibMethod::Full)]
    pub method: CalibMethod,
    #[arg(long, default_value_t = 1e6)]
    pub theta_prior_var: f64,
    #[arg(long, default_value_t = 0.0)]
    pub mu0: f64,
    #[arg(long, default_value_t = 0.01)]
    pub k0: f64,
    #[arg(long, default_value_t = 1.0)]
    pub a0: f64,
    #[arg(long, default_value_t = 0.1)]
    pub b0: f64,
    /// Leave calibration studies out of the bias pool.
    #[arg(long)]
    pub exclude_calibration: bool,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[command(flatten)]
    pub chain: ChainArgs,
    /// Also write the one-line JSON summary here (csv format only).
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PopulationKind {
    Normal,
    TwoPoint,
    Custom,
}

#[derive(Args, Debug)]
pub struct PopArgs {
    #[arg(long, value_enum, default_value_t = PopulationKind::Normal)]
    pub population: PopulationKind,
    /// Normal population mean.
    #[arg(long, default_value_t = 0.0)]
    pub mean: f64,
    /// Component standard deviation (normal and two-point).
    #[arg(long, default_value_t = 1.0)]
    pub sd: f64,
    /// Two-point half-separation.
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    /// CSV with an `x` column to resample (custom population).
    #[arg(long)]
    pub values: Option<PathBuf>,
    /// Observations per replicate dataset.
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    #[arg(long, default_value_t = 2000)]
    pub replicates: usize,
    #[arg(long, default_value_t = 0.0)]
    pub prior_mean: f64,
    #[arg(long, default_value_t = 1.0)]
    pub prior_var: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Pooled density table (csv format only).
    #[arg(long)]
    pub density_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RiskArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Comma-separated: identity, oracle, wide, fmodel, npmle, horseshoe-full, horseshoe-plugin.
    #[arg(long, value_delimiter = ',', default_value = "identity,oracle,npmle,horseshoe-plugin")]
    pub methods: Vec<String>,
    #[arg(long, default_value_t = 50)]
    pub replicates: usize,
    #[arg(long, default_value_t = 2500)]
    pub n_iter: usize,
    #[arg(long, default_value_t = 500)]
    pub burn_in: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Experiment {
    /// Sparse normal means with the chosen interval methods.
    Sparse,
    /// Calibration fusion: full Gibbs against the plug-in.
    Calibration,
}

#[derive(Args, Debug)]
pub struct CoverageArgs {
    #[arg(long, value_enum, default_value_t = Experiment::Sparse)]
    pub experiment: Experiment,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Comma-separated interval methods: identity, oracle, wide, horseshoe-full, horseshoe-plugin.
    #[arg(long, value_delimiter = ',', default_value = "horseshoe-full,horseshoe-plugin")]
    pub methods: Vec<String>,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, default_value_t = 200)]
    pub replicates: usize,
    #[arg(long, default_value_t = 2500)]
    pub n_iter: usize,
    #[arg(long, default_value_t = 500)]
    pub burn_in: usize,
    /// Calibration experiment: true θ.
    #[arg(long, default_value_t = 1.0)]
    pub theta: f64,
    /// Calibration experiment: bias mean.
    #[arg(long, default_value_t = 0.3)]
    pub mu: f64,
    /// Calibration experiment: bias standard deviation.
    #[arg(long, default_value_t = 0.5)]
    pub gamma: f64,
    /// Calibration experiment: observational studies.
    #[arg(long, default_value_t = 5)]
    pub n_obs: usize,
    /// Calibration experiment: calibration studies.
    #[arg(long, default_value_t = 3)]
    pub n_calib: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("eblab: {e}");
            ExitCode::from(if e.is_numeric() { 3 } else { 2 })
        }
    }
}
