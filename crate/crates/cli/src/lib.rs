//! Command implementations behind the `capsim` binary.
//!
//! Each command returns `Ok(())` or a [`CliError`] carrying the process
//! exit code: 2 for malformed input or config, 3 for an infeasible chassis
//! budget, 4 when no feasible budget exists.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use capsim_core::config::{OutputConfig, RunConfig};
use capsim_core::criticality::{self, UtilizationSeries};
use capsim_core::oversub::{
    self, AllocationRecord, HistoricalDraws, HistoryEstimates, OversubError, OversubPolicy,
    ShaveProfile,
};
use capsim_core::power::ServerPowerSpec;
use capsim_core::sim::{self, RunOutput, Simulation, Trace};
use capsim_core::WorkloadLabel;

pub mod args;

pub use args::{BudgetArgs, Cli, Command};

/// Environment variable overriding the configured output directory.
pub const OUT_DIR_ENV: &str = "CAPSIM_OUT_DIR";

#[derive(Debug)]
pub struct CliError {
    pub exit_code: i32,
    pub message: String,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for CliError {}

fn input_error(message: impl Into<String>) -> CliError {
    CliError {
        exit_code: 2,
        message: message.into(),
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Classify(args) => cmd_classify(&args),
        Command::GenerateTrace(args) => cmd_generate_trace(&args),
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Budget(args) => cmd_budget(&args),
        Command::Report(args) => cmd_report(&args),
    }
}

/// Parse a `timestamp,utilization` CSV: integer epoch seconds at a fixed
/// cadence, utilization in [0, 1]. Returns line-numbered diagnostics.
pub fn read_series_csv(path: &Path, slot_minutes: u32) -> Result<UtilizationSeries, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| input_error(format!("{}: {e}", path.display())))?;
    let mut values = Vec::new();
    let mut last_ts: Option<i64> = None;
    let expected_step = slot_minutes as i64 * 60;
    let mut rows = 0usize;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let (ts_field, util_field) = trimmed
            .split_once(',')
            .ok_or_else(|| input_error(format!("line {line_no}: expected `timestamp,utilization`")))?;
        if idx == 0 && ts_field.trim().parse::<i64>().is_err() {
            // Header row.
            continue;
        }
        let ts: i64 = ts_field.trim().parse().map_err(|_| {
            input_error(format!(
                "line {line_no}: bad timestamp `{}` (integer epoch seconds required)",
                ts_field.trim()
            ))
        })?;
        if let Some(prev) = last_ts {
            if ts - prev != expected_step {
                return Err(input_error(format!(
                    "line {line_no}: {slot_minutes}-minute cadence broken ({} s step)",
                    ts - prev
                )));
            }
        }
        last_ts = Some(ts);
        let util: f64 = util_field.trim().parse().map_err(|_| {
            input_error(format!(
                "line {line_no}: bad utilization `{}`",
                util_field.trim()
            ))
        })?;
        if !(0.0..=1.0).contains(&util) {
            return Err(input_error(format!(
                "line {line_no}: utilization {util} outside [0, 1]"
            )));
        }
        values.push(util);
        rows += 1;
    }
    if rows == 0 {
        return Err(input_error(format!("{}: no data rows", path.display())));
    }
    UtilizationSeries::new(values, slot_minutes)
        .map_err(|e| input_error(format!("{}: {e}", path.display())))
}

pub fn cmd_classify(args: &args::ClassifyArgs) -> Result<(), CliError> {
    let series = read_series_csv(&args.input, args.slot_minutes)?;
    let result = criticality::classify(&series, args.threshold);
    match result.reason {
        criticality::ClassifyReason::TooShort => {
            println!("{} (series too short)", result.label);
        }
        criticality::ClassifyReason::ZeroVariance => {
            println!("{} (zero variance)", result.label);
        }
        _ => {
            println!(
                "{} compare8={:.4} compare12={:.4}",
                result.label, result.scores.compare8, result.scores.compare12
            );
        }
    }
    Ok(())
}

fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| input_error(format!("{}: {e}", path.display())))?;
    RunConfig::from_json(&text).map_err(|e| input_error(format!("{}: {e}", path.display())))
}

fn apply_overrides(config: &mut RunConfig, args: &args::SimulateArgs) {
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(alpha) = args.alpha {
        config.scheduler.alpha = alpha;
    }
    if let Some(weight) = args.power_rule_weight {
        config.scheduler.power_rule_weight = weight;
    }
    if let Some(provider) = &args.provider {
        config.predictor.provider = provider.clone();
    }
    if let Some(days) = args.horizon_days {
        config.horizon_days = days;
    }
    if let Some(dir) = &args.output_dir {
        config.output.dir = dir.clone();
    }
    if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
        if !dir.is_empty() {
            config.output.dir = dir;
        }
    }
}

pub fn cmd_generate_trace(args: &args::GenerateTraceArgs) -> Result<(), CliError> {
    let mut config = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(days) = args.horizon_days {
        config.horizon_days = days;
    }
    let trace = sim::generate_trace(&config.trace, config.horizon_days * 24.0, config.seed)
        .map_err(|e| input_error(e.to_string()))?;
    let file = fs::File::create(&args.output)
        .map_err(|e| input_error(format!("{}: {e}", args.output.display())))?;
    sim::write_trace_csv(&trace, file).map_err(|e| input_error(e.to_string()))?;
    println!(
        "wrote {} deployments / {} VMs to {}",
        trace.deployments.len(),
        trace.vm_count(),
        args.output.display()
    );
    Ok(())
}

fn run_simulation(config: &RunConfig, trace: Option<Trace>) -> Result<RunOutput, CliError> {
    let sim = match trace {
        Some(trace) => Simulation::with_trace(config, trace),
        None => Simulation::new(config),
    };
    let sim = sim.map_err(|e| match e {
        sim::SimError::InfeasibleBudget { .. } => CliError {
            exit_code: 3,
            message: e.to_string(),
        },
        other => input_error(other.to_string()),
    })?;
    sim.run().map_err(|e| input_error(e.to_string()))
}

fn write_outputs(output: &RunOutput, paths: &OutputConfig) -> Result<PathBuf, CliError> {
    let dir = PathBuf::from(&paths.dir);
    fs::create_dir_all(&dir).map_err(|e| input_error(format!("{}: {e}", dir.display())))?;
    let metrics_path = dir.join(&paths.metrics_json);
    let metrics_json =
        serde_json::to_string_pretty(&output.metrics).expect("metrics serialize");
    fs::write(&metrics_path, metrics_json)
        .map_err(|e| input_error(format!("{}: {e}", metrics_path.display())))?;

    if let Some(name) = &paths.events_csv {
        let mut text = String::from(capsim_core::CappingEvent::csv_header());
        text.push('\n');
        for event in &output.capping_events {
            text.push_str(&event.csv_row());
            text.push('\n');
        }
        fs::write(dir.join(name), text).map_err(|e| input_error(e.to_string()))?;
    }
    if let Some(name) = &paths.events_json {
        let json = serde_json::to_string_pretty(&output.capping_events).expect("events serialize");
        fs::write(dir.join(name), json).map_err(|e| input_error(e.to_string()))?;
    }
    if let Some(name) = &paths.draws_csv {
        if !output.draw_samples.is_empty() {
            let mut text = String::from("chassis_id,timestamp,watts\n");
            for s in &output.draw_samples {
                text.push_str(&format!("{},{},{:.3}\n", s.chassis, s.t_ms / 1000, s.watts));
            }
            fs::write(dir.join(name), text).map_err(|e| input_error(e.to_string()))?;
        }
    }
    if let Some(name) = &paths.power_ticks_csv {
        let mut text = String::from("chassis_id,t_ms,watts\n");
        for s in &output.power_ticks {
            text.push_str(&format!("{},{},{:.3}\n", s.chassis, s.t_ms, s.watts));
        }
        fs::write(dir.join(name), text).map_err(|e| input_error(e.to_string()))?;
    }
    Ok(metrics_path)
}

pub fn cmd_simulate(args: &args::SimulateArgs) -> Result<(), CliError> {
    let mut config = load_config(&args.config)?;
    apply_overrides(&mut config, args);
    config
        .validate()
        .map_err(|e| input_error(e.to_string()))?;
    let trace = match &args.trace {
        Some(path) => {
            let file = fs::File::open(path)
                .map_err(|e| input_error(format!("{}: {e}", path.display())))?;
            Some(sim::read_trace_csv(file).map_err(|e| input_error(e.to_string()))?)
        }
        None => None,
    };
    let output = run_simulation(&config, trace)?;
    let metrics_path = write_outputs(&output, &config.output)?;
    let m = &output.metrics;
    println!("simulation complete: seed {} config {}", m.seed, m.config_hash);
    println!("  deployments            {:>10}", m.deployments_total);
    println!("  deployment failure     {:>10.4}%", m.deployment_failure_rate * 100.0);
    println!("  avg empty servers      {:>10.4}%", m.avg_empty_server_ratio * 100.0);
    println!("  avg core occupancy     {:>10.4}%", m.avg_core_occupancy * 100.0);
    println!("  stddev chassis score   {:>10.6}", m.stddev_avg_chassis_score);
    println!("  stddev server score    {:>10.6}", m.stddev_avg_server_score);
    println!("  capping events         {:>10}", m.capping_event_count);
    println!("  events touching UF     {:>10}", m.capping_events_affecting_uf);
    println!("  UF throttled core-s    {:>10.1}", m.uf_throttled_core_seconds);
    println!("  NUF throttled core-s   {:>10.1}", m.nuf_throttled_core_seconds);
    println!("  metrics written to     {}", metrics_path.display());
    Ok(())
}

pub fn cmd_budget(args: &BudgetArgs) -> Result<(), CliError> {
    let file = fs::File::open(&args.draws)
        .map_err(|e| input_error(format!("{}: {e}", args.draws.display())))?;
    let draws = HistoricalDraws::from_csv(file).map_err(|e| match e {
        OversubError::NoFeasibleBudget => CliError {
            exit_code: 4,
            message: "no usable draws in input".into(),
        },
        other => input_error(other.to_string()),
    })?;
    let policy = OversubPolicy {
        emax_uf: args.emax_uf,
        emax_nuf: args.emax_nuf,
        fmin_uf: args.fmin_uf,
        fmin_nuf: args.fmin_nuf,
        buffer: args.buffer,
    };
    let estimates = match &args.history {
        Some(path) => {
            let log = read_allocation_csv(path)?;
            oversub::estimate_history(&log).map_err(|e| input_error(e.to_string()))?
        }
        None => HistoryEstimates {
            uf_core_share: args.beta,
            util_uf: args.util_uf,
            util_nuf: args.util_nuf,
        },
    };
    let spec = ServerPowerSpec::calibrated(
        args.idle_w,
        args.peak_w,
        args.cores_per_blade as usize,
        args.half_freq_peak_w,
    );
    let allocated = args
        .allocated_cores
        .unwrap_or((args.cores_per_blade * args.blades_per_chassis) as f64);
    let profile = ShaveProfile::new(&spec, &estimates, allocated);
    let provisioned = args
        .provisioned_w
        .unwrap_or(args.peak_w * args.blades_per_chassis as f64);
    let result = oversub::find_min_budget(&draws, &policy, &estimates, &profile, provisioned)
        .map_err(|e| CliError {
            exit_code: 4,
            message: e.to_string(),
        })?;
    let json = serde_json::to_string_pretty(&result).expect("result serializes");
    match &args.output {
        Some(path) => {
            fs::write(path, &json).map_err(|e| input_error(format!("{}: {e}", path.display())))?;
            println!(
                "p_min {:.1} W, final budget {:.1} W ({:.2}% below provisioned) -> {}",
                result.p_min_w,
                result.final_budget_w,
                result.oversubscription_delta * 100.0,
                path.display()
            );
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn read_allocation_csv(path: &Path) -> Result<Vec<AllocationRecord>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| input_error(format!("{}: {e}", path.display())))?;
    let mut log = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || (idx == 0 && trimmed.starts_with("label")) {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 4 {
            return Err(input_error(format!(
                "line {line_no}: expected `label,cores,p95_util,lifetime_hours`"
            )));
        }
        let label = match fields[0].trim() {
            "uf" => WorkloadLabel::UserFacing,
            "nuf" => WorkloadLabel::NonUserFacing,
            other => return Err(input_error(format!("line {line_no}: bad label `{other}`"))),
        };
        let parse_f = |i: usize| -> Result<f64, CliError> {
            fields[i]
                .trim()
                .parse()
                .map_err(|_| input_error(format!("line {line_no}: bad number `{}`", fields[i])))
        };
        log.push(AllocationRecord {
            label,
            cores: parse_f(1)? as u32,
            p95_util: parse_f(2)?,
            lifetime_hours: parse_f(3)?,
        });
    }
    Ok(log)
}

pub fn cmd_report(args: &args::ReportArgs) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for path in &args.inputs {
        let text = fs::read_to_string(path)
            .map_err(|e| input_error(format!("{}: {e}", path.display())))?;
        let metrics: capsim_core::SimMetrics = serde_json::from_str(&text)
            .map_err(|e| input_error(format!("{}: {e}", path.display())))?;
        rows.push((path.clone(), metrics));
    }
    let header = "file,seed,config_hash,failure_rate,empty_ratio,occupancy,\
                  stddev_chassis_score,stddev_server_score,capping_events,\
                  events_touching_uf,uf_core_seconds,nuf_core_seconds";
    let mut csv_text = String::from(header);
    csv_text.push('\n');
    println!(
        "{:<28} {:>6} {:>9} {:>9} {:>10} {:>10} {:>7}",
        "file", "seed", "fail%", "empty%", "sd-chass", "sd-server", "events"
    );
    for (path, m) in &rows {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        println!(
            "{:<28} {:>6} {:>8.4}% {:>8.4}% {:>10.6} {:>10.6} {:>7}",
            name,
            m.seed,
            m.deployment_failure_rate * 100.0,
            m.avg_empty_server_ratio * 100.0,
            m.stddev_avg_chassis_score,
            m.stddev_avg_server_score,
            m.capping_event_count
        );
        csv_text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            name,
            m.seed,
            m.config_hash,
            m.deployment_failure_rate,
            m.avg_empty_server_ratio,
            m.avg_core_occupancy,
            m.stddev_avg_chassis_score,
            m.stddev_avg_server_score,
            m.capping_event_count,
            m.capping_events_affecting_uf,
            m.uf_throttled_core_seconds,
            m.nuf_throttled_core_seconds
        ));
    }
    if let Some(path) = &args.output {
        let mut file = fs::File::create(path)
            .map_err(|e| input_error(format!("{}: {e}", path.display())))?;
        file.write_all(csv_text.as_bytes())
            .map_err(|e| input_error(e.to_string()))?;
        println!("report written to {}", path.display());
    }
    Ok(())
}
