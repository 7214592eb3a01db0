use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vortes::{Hyperparams, Mode};

#[derive(Debug, Parser)]
#[command(
    name = "vortes",
    version,
    about = "Heteroscedastic Voronoi-tessellation ensemble regression"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write simulated Friedman train/test CSV files
    Simulate(SimulateArgs),
    /// Run the sampler on a training CSV and write the trace and a summary
    Fit(FitArgs),
    /// Summarize a trace into per-row predictions with intervals
    Predict(PredictArgs),
    /// Calibration and accuracy diagnostics of a trace against test data
    Diagnose(DiagnoseArgs),
    /// Choose hyperparameters by k-fold cross-validation on the e-statistic
    Cv(CvArgs),
    /// Run a complete experiment and print its pass/fail table
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Homoscedastic,
    Heteroscedastic,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Homoscedastic => Mode::Homoscedastic,
            ModeArg::Heteroscedastic => Mode::Heteroscedastic,
        }
    }
}

/// Every prior and sampler setting. Unset flags fall back to the config
/// file, then to the built-in defaults shown.
#[derive(Debug, Clone, Default, Args)]
pub struct HyperArgs {
    /// Config file of `key = value` lines; flags override it
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Number of mean tessellations [default: 200]
    #[arg(long)]
    pub m: Option<usize>,
    /// Number of variance tessellations [default: 40]
    #[arg(long = "m-var")]
    pub m_var: Option<usize>,
    /// Degrees of freedom of the noise-variance prior [default: 3]
    #[arg(long)]
    pub nu: Option<f64>,
    /// Calibration quantile of the noise-variance prior [default: 0.9]
    #[arg(long)]
    pub q: Option<f64>,
    /// Scale of the noise-variance prior, or `auto` to calibrate [default: auto]
    #[arg(long)]
    pub lambda: Option<String>,
    /// Degrees of freedom of each variance factor, or `auto` [default: auto]
    #[arg(long = "nu-var")]
    pub nu_var: Option<String>,
    /// Scale of each variance factor, or `auto` [default: auto]
    #[arg(long = "lambda-var")]
    pub lambda_var: Option<String>,
    /// Cell-mean prior multiplier k [default: 3]
    #[arg(long)]
    pub k: Option<f64>,
    /// Cell-mean prior sd, or `auto` to derive it from k [default: auto]
    #[arg(long = "sigma-mu")]
    pub sigma_mu: Option<String>,
    /// Poisson rate of the number of centers [default: 2]
    #[arg(long = "lambda-c")]
    pub lambda_c: Option<f64>,
    /// Poisson rate of the number of dimensions [default: 1]
    #[arg(long = "lambda-d")]
    pub lambda_d: Option<f64>,
    /// Move probabilities: add/remove center, add/remove/swap covariate,
    /// move center [default: 0.2,0.2,0.2,0.2,0.1,0.1]
    #[arg(long = "move-probs")]
    pub move_probs: Option<String>,
    /// Burn-in iterations [default: 1000]
    #[arg(long)]
    pub burn: Option<usize>,
    /// Kept draws [default: 2000]
    #[arg(long)]
    pub keep: Option<usize>,
    /// Iterations per kept draw [default: 1]
    #[arg(long)]
    pub thin: Option<usize>,
    /// Random seed [default: 1]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Noise estimate used for calibration: sample_sd or ols_residual [default: sample_sd]
    #[arg(long = "sigma-estimate")]
    pub sigma_estimate: Option<String>,
}

impl HyperArgs {
    /// Defaults, then the config file, then explicit flags.
    pub fn resolve(&self) -> anyhow::Result<Hyperparams> {
        let mut h = Hyperparams::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
            h.apply_config_str(&text)?;
        }
        let pairs: [(&str, Option<String>); 17] = [
            ("m", self.m.map(|v| v.to_string())),
            ("m_var", self.m_var.map(|v| v.to_string())),
            ("nu", self.nu.map(|v| v.to_string())),
            ("q", self.q.map(|v| v.to_string())),
            ("lambda", self.lambda.clone()),
            ("nu_var", self.nu_var.clone()),
            ("lambda_var", self.lambda_var.clone()),
            ("k", self.k.map(|v| v.to_string())),
            ("sigma_mu", self.sigma_mu.clone()),
            ("lambda_c", self.lambda_c.map(|v| v.to_string())),
            ("lambda_d", self.lambda_d.map(|v| v.to_string())),
            ("move_probs", self.move_probs.clone()),
            ("n_burn", self.burn.map(|v| v.to_string())),
            ("n_keep", self.keep.map(|v| v.to_string())),
            ("thin", self.thin.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("sigma_estimate", self.sigma_estimate.clone()),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                h.set(key, &v)?;
            }
        }
        h.validate()?;
        Ok(h)
    }
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Training CSV with a header row
    #[arg(long, value_name = "FILE")]
    pub train: PathBuf,
    /// Held-out CSV; predictions at its rows are kept in the trace
    #[arg(long, value_name = "FILE")]
    pub test: Option<PathBuf>,
    /// Name of the response column
    #[arg(long, default_value = "y")]
    pub response: String,
    /// Comma-separated columns to treat as categorical
    #[arg(long, value_delimiter = ',')]
    pub categorical: Vec<String>,
    /// Comma-separated columns to drop
    #[arg(long, value_delimiter = ',')]
    pub ignore: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Variance case: 1 constant, 2 linear in x1 and x2, 3 Friedman-shaped
    #[arg(long = "case", value_parser = clap::value_parser!(u8).range(1..=3))]
    pub case: u8,
    /// Training rows
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    /// Test rows
    #[arg(long = "n-test", default_value_t = 1000)]
    pub n_test: usize,
    /// Number of covariates; the first five are active
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(5..))]
    pub d: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output directory for train.csv and test.csv
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "heteroscedastic")]
    pub mode: ModeArg,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Write the trace in the binary format (trace.avtr) instead of trace.csv
    #[arg(long)]
    pub binary: bool,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RowsArg {
    Train,
    Test,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Trace written by `fit`
    #[arg(long, value_name = "FILE")]
    pub trace: PathBuf,
    /// Rows to summarize
    #[arg(long, value_enum, default_value = "test")]
    pub rows: RowsArg,
    /// Intervals cover 1 - alpha
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    /// Output CSV
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PitArg {
    Sampled,
    Analytic,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// Trace written by `fit` with the same --test file
    #[arg(long, value_name = "FILE")]
    pub trace: PathBuf,
    /// Test CSV whose rows the trace predicts
    #[arg(long, value_name = "FILE")]
    pub test: PathBuf,
    #[arg(long, default_value = "y")]
    pub response: String,
    /// Homoscedastic trace used as the H-evidence reference
    #[arg(long = "homo-trace", value_name = "FILE")]
    pub homo_trace: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "sampled")]
    pub pit: PitArg,
    /// Seed of the predictive draws in sampled PIT mode
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// (nu:q) pairs
    #[arg(long = "grid-nu-q", default_value = "3:0.90,3:0.99,10:0.75")]
    pub grid_nu_q: String,
    #[arg(long = "grid-k", default_value = "0.5,1,5")]
    pub grid_k: String,
    #[arg(long = "grid-lambda-c", default_value = "5,25")]
    pub grid_lambda_c: String,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    /// Training CSV with a header row
    #[arg(long, value_name = "FILE")]
    pub train: PathBuf,
    #[arg(long, default_value = "y")]
    pub response: String,
    #[arg(long, value_delimiter = ',')]
    pub categorical: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    pub ignore: Vec<String>,
    #[arg(long, value_enum, default_value = "heteroscedastic")]
    pub mode: ModeArg,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Experiment {
    #[value(name = "friedman-case1")]
    FriedmanCase1,
    #[value(name = "friedman-case2")]
    FriedmanCase2,
    #[value(name = "friedman-case3")]
    FriedmanCase3,
    Cars,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    #[arg(value_enum)]
    pub id: Experiment,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Cars CSV (required for `cars`)
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,
    /// Response column of the cars data
    #[arg(long, default_value = "price")]
    pub response: String,
    /// Columns of the cars data to treat as categorical
    #[arg(long, value_delimiter = ',')]
    pub categorical: Vec<String>,
    /// Training rows of the simulated experiments
    #[arg(long = "n-train", default_value_t = 500)]
    pub n_train: usize,
    /// Test rows of the simulated experiments
    #[arg(long = "n-test", default_value_t = 1000)]
    pub n_test: usize,
    /// Random train/test splits of the cars experiment
    #[arg(long, default_value_t = 20)]
    pub splits: usize,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
}
