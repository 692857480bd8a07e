//! Command-line interface definition.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "capsim",
    version,
    about = "Power-oversubscription simulator: classify workloads, place VMs, cap power, size budgets"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Classify a CPU-utilization series as user-facing or not.
    Classify(ClassifyArgs),
    /// Generate a VM arrival trace from a run config.
    GenerateTrace(GenerateTraceArgs),
    /// Run a cluster simulation.
    Simulate(SimulateArgs),
    /// Compute the minimum feasible chassis budget from historical draws.
    Budget(BudgetArgs),
    /// Summarize metrics JSON files into a comparison table.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct ClassifyArgs {
    /// CSV with `timestamp,utilization` rows (integer epoch seconds).
    #[arg(long)]
    pub input: PathBuf,
    /// Decision threshold on compare8.
    #[arg(long, default_value_t = 0.72)]
    pub threshold: f64,
    /// Slot length of the series.
    #[arg(long, default_value_t = 30)]
    pub slot_minutes: u32,
}

#[derive(Args, Debug)]
pub struct GenerateTraceArgs {
    /// Run config JSON supplying the trace section.
    #[arg(long)]
    pub config: PathBuf,
    /// Output trace CSV path.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub horizon_days: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Run config JSON.
    #[arg(long)]
    pub config: PathBuf,
    /// Pre-generated trace CSV; defaults to generating from the config.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the chassis-score weight of the power rule.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Override the power rule weight; 0 restores the baseline scheduler.
    #[arg(long)]
    pub power_rule_weight: Option<f64>,
    /// Override the prediction provider.
    #[arg(long)]
    pub provider: Option<String>,
    #[arg(long)]
    pub horizon_days: Option<f64>,
    /// Override the configured output directory.
    #[arg(long)]
    pub output_dir: Option<String>,
}

#[derive(Args, Debug)]
pub struct BudgetArgs {
    /// CSV of historical draws: `chassis_id,timestamp,watts`.
    #[arg(long)]
    pub draws: PathBuf,
    /// Maximum capping-event rate for user-facing VMs.
    #[arg(long, default_value_t = 0.001)]
    pub emax_uf: f64,
    /// Maximum capping-event rate for non-user-facing VMs.
    #[arg(long, default_value_t = 0.009)]
    pub emax_nuf: f64,
    /// Frequency floor for user-facing cores.
    #[arg(long, default_value_t = 0.75)]
    pub fmin_uf: f64,
    /// Frequency floor for non-user-facing cores.
    #[arg(long, default_value_t = 0.5)]
    pub fmin_nuf: f64,
    /// Headroom added to the minimum feasible budget.
    #[arg(long, default_value_t = 0.10)]
    pub buffer: f64,
    /// Share of allocated cores that are user-facing.
    #[arg(long, default_value_t = 0.40)]
    pub beta: f64,
    /// Average P95 utilization of user-facing cores.
    #[arg(long, default_value_t = 0.65)]
    pub util_uf: f64,
    /// Average P95 utilization of non-user-facing cores.
    #[arg(long, default_value_t = 0.44)]
    pub util_nuf: f64,
    /// Estimate beta and utilizations from an allocation log CSV
    /// (`label,cores,p95_util,lifetime_hours`) instead of the flags above.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Average allocated virtual cores per chassis; defaults to every
    /// physical core.
    #[arg(long)]
    pub allocated_cores: Option<f64>,
    /// Provisioned chassis power; defaults to peak blade power x blades.
    #[arg(long)]
    pub provisioned_w: Option<f64>,
    #[arg(long, default_value_t = 112.0)]
    pub idle_w: f64,
    #[arg(long, default_value_t = 310.0)]
    pub peak_w: f64,
    #[arg(long, default_value_t = 169.0)]
    pub half_freq_peak_w: f64,
    #[arg(long, default_value_t = 40)]
    pub cores_per_blade: u32,
    #[arg(long, default_value_t = 12)]
    pub blades_per_chassis: u32,
    /// Write the result JSON here instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Metrics JSON files produced by `simulate`.
    #[arg(long, num_args = 1.., required = true)]
    pub inputs: Vec<PathBuf>,
    /// Optional CSV output path.
    #[arg(long)]
    pub output: Option<PathBuf>,
}
