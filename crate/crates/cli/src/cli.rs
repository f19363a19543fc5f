use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "nsynth",
    version,
    about = "Synthetic control estimation, inference and diagnostics"
)]
pub struct Cli {
    /// JSON object of flag values; explicit flags win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads for parallel fits (results do not depend on it).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit donor weights and write the effect path.
    Estimate(EstimateArgs),
    /// Placebo permutation test over every unit.
    Placebo(PlaceboArgs),
    /// Convex hull membership of the treated unit, or the sample-size experiment.
    Hull(HullArgs),
    /// Monte Carlo study.
    Simulate(SimulateArgs),
    /// Backdating and leave-one-out robustness checks.
    Robust(RobustArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Osc,
    Esc,
    Psc,
    Nsc,
}

impl From<MethodArg> for nsynth::Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Osc => nsynth::Method::Osc,
            MethodArg::Esc => nsynth::Method::Esc,
            MethodArg::Psc => nsynth::Method::Psc,
            MethodArg::Nsc => nsynth::Method::Nsc,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CvArg {
    Controls,
    Pretreat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MatchArg {
    /// Predictors (when supplied) and every pretreatment outcome.
    All,
    Outcomes,
    Predictors,
}

/// Panel location and treatment.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Wide outcome CSV: `unit,<period>,...`.
    #[arg(long)]
    pub data: PathBuf,
    /// Wide predictor CSV: `unit,<predictor>,...`.
    #[arg(long)]
    pub predictors: Option<PathBuf>,
    #[arg(long)]
    pub treated: String,
    /// First treated period: a time label, or else the number of
    /// pretreatment periods.
    #[arg(long)]
    pub t0: String,
    #[arg(long, value_enum, default_value = "all")]
    pub r#match: MatchArg,
    /// Scale every matching variable to unit variance across units.
    #[arg(long)]
    pub standardize: bool,
}

/// Method and tuning.
#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[arg(long, value_enum, default_value = "nsc")]
    pub method: MethodArg,
    /// Normalised L1 strength in [0, 1], or `auto`.
    #[arg(long)]
    pub a_star: Option<String>,
    /// Normalised L2 strength in [0, 1], or `auto`.
    #[arg(long)]
    pub b_star: Option<String>,
    /// Cross-validation scheme used by `auto`.
    #[arg(long, value_enum, default_value = "controls")]
    pub cv: CvArg,
    #[arg(long, default_value_t = 0.1)]
    pub grid_step: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_iter: usize,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Confidence level of the per-period intervals.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Skip the leave-one-donor-out variance and the intervals.
    #[arg(long)]
    pub no_ci: bool,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Reuse,
    Reselect,
}

#[derive(Debug, Clone, Args)]
pub struct PlaceboArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long, value_enum, default_value = "reuse")]
    pub tuning_policy: PolicyArg,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct HullArgs {
    #[arg(long, required_unless_present = "experiment")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub predictors: Option<PathBuf>,
    #[arg(long, required_unless_present = "experiment")]
    pub treated: Option<String>,
    #[arg(long, required_unless_present = "experiment")]
    pub t0: Option<String>,
    #[arg(long, value_enum, default_value = "all")]
    pub r#match: MatchArg,
    #[arg(long)]
    pub standardize: bool,
    /// Run the minimal-pool-size experiment instead of a single query.
    #[arg(long)]
    pub experiment: bool,
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    #[arg(long, default_value_t = 10_000)]
    pub max_controls: usize,
    /// Matched period counts, e.g. `1-5` or `1,2,4`.
    #[arg(long, default_value = "1-10")]
    pub periods: String,
    #[arg(long, default_value_t = 1)]
    pub r: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScaleArg {
    Desk,
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BiasArg {
    /// Absolute value of the mean error.
    AbsMean,
    /// Mean absolute error.
    MeanAbs,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// `J,T0,r` triples (space or `;` separated), or `paper` for all eight.
    #[arg(long, num_args = 1.., required = true)]
    pub settings: Vec<String>,
    #[arg(long, value_enum, default_value = "desk")]
    pub scale: ScaleArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma separated subset of osc,esc,psc,nsc.
    #[arg(long, default_value = "osc,esc,psc,nsc")]
    pub methods: String,
    #[arg(long, value_enum, default_value = "mean-abs")]
    pub bias: BiasArg,
    #[arg(long)]
    pub no_coverage: bool,
    /// Override the number of parameter sets.
    #[arg(long)]
    pub param_sets: Option<usize>,
    /// Override the number of shock draws per parameter set.
    #[arg(long)]
    pub shock_draws: Option<usize>,
    /// Match on the observed predictors too.
    #[arg(long)]
    pub match_predictors: bool,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RobustMode {
    Backdate,
    Loo,
}

#[derive(Debug, Clone, Args)]
pub struct RobustArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long, value_enum)]
    pub mode: RobustMode,
    /// Backdated first treated period (label or count).
    #[arg(long, required_if_eq("mode", "backdate"))]
    pub new_t0: Option<String>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}
