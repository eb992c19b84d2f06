use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "panelguard",
    version,
    about = "Loss-function outlier detection for panel data"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Seed for any randomized step; recorded in the run log.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute loss, signed loss and rank for every observation.
    Score(ScoreArgs),
    /// Score and flag observations against a critical rule.
    Flag(FlagArgs),
    /// Compile a legacy criteria table into a criticality equation.
    Fit(FitArgs),
    /// Compare two estimate sets in both directions.
    Compare(CompareArgs),
    /// Assign quantile classes over the loss.
    Breaks(BreaksArgs),
    /// Serve the tuning API over a dataset snapshot.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct IoArgs {
    /// Input CSV, or `-` for stdin.
    #[arg(long, short)]
    pub input: PathBuf,
    /// Output path; stdout when omitted.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    #[arg(long, default_value = "id")]
    pub id_col: String,
    #[arg(long, default_value = "base")]
    pub base_col: String,
    #[arg(long, default_value = "value")]
    pub value_col: String,
    /// Numeric elapsed-time column, or a label column with --time-spacing.
    #[arg(long)]
    pub time_col: Option<String>,
    /// Treat --time-col as ordered labels this far apart.
    #[arg(long, requires = "time_col")]
    pub time_spacing: Option<f64>,
    /// omit | auto | value=X
    #[arg(long, default_value = "auto")]
    pub zero_policy: String,
}

#[derive(Debug, Clone, Default, Args)]
pub struct LossArgs {
    /// Exponent of B (default -0.5).
    #[arg(long, allow_negative_numbers = true)]
    pub q: Option<f64>,
    /// Exponent of |F - B| (default 1).
    #[arg(long, allow_negative_numbers = true)]
    pub p: Option<f64>,
    /// Use the time-invariant loss; needs --time-col.
    #[arg(long)]
    pub time_invariant: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RuleArgs {
    /// Fixed critical value C.
    #[arg(long, group = "rule_choice")]
    pub critical: Option<f64>,
    /// Flag losses above the alpha quantile.
    #[arg(long, group = "rule_choice")]
    pub quantile: Option<f64>,
    /// Flag losses above Q3 + k IQR.
    #[arg(long, group = "rule_choice")]
    pub fence: Option<f64>,
    /// Flag on the signed loss; needs one of the --signed-* rules.
    #[arg(long)]
    pub signed: bool,
    /// Signed bounds `C-,C+`.
    #[arg(
        long,
        group = "rule_choice",
        allow_hyphen_values = true,
        value_name = "C_MINUS,C_PLUS"
    )]
    pub signed_bounds: Option<String>,
    /// Signed quantiles `A-,A+`.
    #[arg(long, group = "rule_choice", value_name = "ALPHA_MINUS,ALPHA_PLUS")]
    pub signed_quantile: Option<String>,
    /// Signed fence `(Q1 - k IQR, Q3 + k IQR)`.
    #[arg(long, group = "rule_choice")]
    pub signed_fence: Option<f64>,
    /// Derive data-driven thresholds per time label.
    #[arg(long)]
    pub per_slice: bool,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub io: IoArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub loss: LossArgs,
}

#[derive(Debug, Args)]
pub struct FlagArgs {
    #[command(flatten)]
    pub io: IoArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub loss: LossArgs,
    #[command(flatten)]
    pub rule: RuleArgs,
    /// Rule file written by `fit` (or exported by the workbench).
    #[arg(long = "rule", value_name = "FILE", conflicts_with = "rule_choice")]
    pub rule_file: Option<PathBuf>,
    /// Size column for a reference rule.
    #[arg(long)]
    pub r_col: Option<String>,
    /// Measure column for a reference rule.
    #[arg(long)]
    pub d_col: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitModeArg {
    SizeClass,
    Reference,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub io: IoArgs,
    #[arg(long, value_enum)]
    pub mode: FitModeArg,
    /// Drop rows from a size-class fit: ratio=X, row=N or class_min=N.
    #[arg(long)]
    pub exclude: Vec<String>,
    /// Anchor the reference fit at the first and last rows.
    #[arg(long)]
    pub endpoint: bool,
    /// Replace the endpoint slope by this exponent, e.g. -1/3.
    #[arg(long, requires = "endpoint", allow_hyphen_values = true)]
    pub round_b: Option<String>,
    /// Write the compiled rule file here.
    #[arg(long)]
    pub rule_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub io: IoArgs,
    #[arg(long, default_value = "id")]
    pub id_col: String,
    #[arg(long, default_value = "b_value")]
    pub b_col: String,
    #[arg(long, default_value = "f_value")]
    pub f_col: String,
    #[arg(long, default_value = "auto")]
    pub zero_policy: String,
    /// Exponent of the base value (default -0.5).
    #[arg(long, allow_negative_numbers = true)]
    pub q: Option<f64>,
    #[command(flatten)]
    pub rule: RuleArgs,
}

#[derive(Debug, Args)]
pub struct BreaksArgs {
    #[command(flatten)]
    pub io: IoArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub loss: LossArgs,
    /// Number of classes.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Dataset CSV loaded once at startup.
    #[arg(long, short)]
    pub input: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
}
