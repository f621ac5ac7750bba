use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use serde::Serialize;

use gaittune::closed_loop::{self, ClosedLoopError, ScenarioConfig, TraceSeries};
use gaittune::gait_qp::{self, GaitWeights};

#[derive(Debug, Parser)]
#[command(name = "gaittune", version, about = "Gait planning, simulation and Bayesian tuning of gait cost weights")]
struct Cli {
    /// Print progress to stderr.
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the gait QP and write `plan.csv`.
    Plan {
        #[command(flatten)]
        common: Common,
        /// Single weight point, e.g. `beta=70;gamma=0` (defaults α=1, β=γ=0).
        #[arg(long)]
        weights: Option<String>,
    },
    /// Plan, track and simulate; write `trace.csv` and `summary.json`.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        weights: Option<String>,
    },
    /// Evaluate a weight grid; write `sweep.csv`.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Grid such as `beta=0,10,70,1000;gamma=0`.
        #[arg(long)]
        grid: String,
    },
    /// Tune the weights with BO; write `tune_trace.csv` and `tune_report.json`.
    Tune {
        #[command(flatten)]
        common: Common,
        /// Override the config budget.
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Turn tune traces into plot-ready `<name>_series.csv` files.
    Report {
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Trace CSVs; defaults to `<out>/tune_trace.csv`.
        inputs: Vec<PathBuf>,
    },
}

#[derive(Debug, Serialize)]
struct CliError {
    kind: String,
    message: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    missing: Vec<String>,
}

impl CliError {
    fn new(kind: &str, message: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            message: message.into(),
            missing: Vec::new(),
        }
    }

    fn exit_code(&self) -> u8 {
        match self.kind.as_str() {
            "usage" | "config" | "grid" | "missing_inputs" => 2,
            _ => 1,
        }
    }
}

impl From<ClosedLoopError> for CliError {
    fn from(e: ClosedLoopError) -> Self {
        Self::new(e.kind(), e.to_string())
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::new("io", format!("{}: {e}", path.display()))
}

#[derive(Debug, Serialize)]
struct Success {
    command: &'static str,
    outputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    summary: Option<serde_json::Value>,
}

fn load_config(common: &Common) -> Result<ScenarioConfig, CliError> {
    let text = fs::read_to_string(&common.config).map_err(|e| {
        let mut err = io_error(&common.config, e);
        err.kind = "config".into();
        err
    })?;
    let mut config = ScenarioConfig::from_toml(&text)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn single_weights(spec: Option<&str>) -> Result<GaitWeights, CliError> {
    let Some(spec) = spec else {
        return Ok(GaitWeights::uniform(1.0, 0.0, 0.0));
    };
    let grid = closed_loop::parse_grid(spec)?;
    match grid.as_slice() {
        [w] => Ok(*w),
        _ => Err(CliError::new("usage", format!("--weights `{spec}` names {} points, expected one", grid.len()))),
    }
}

fn write(out: &Path, name: &str, contents: &str, written: &mut Vec<String>) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    let path = out.join(name);
    fs::write(&path, contents).map_err(|e| io_error(&path, e))?;
    written.push(path.display().to_string());
    Ok(())
}

fn run(cli: Cli) -> Result<Success, CliError> {
    let verbose = cli.verbose > 0;
    let mut outputs = Vec::new();
    match cli.command {
        Command::Plan { common, weights } => {
            let config = load_config(&common)?;
            let weights = single_weights(weights.as_deref())?;
            let initial = gait_qp::default_initial_state(&config.task);
            let plan = gait_qp::plan_gait(&config.task, &weights, &initial, &config.lipm, config.qp_tolerance)
                .map_err(ClosedLoopError::from)?;
            let csv = config.csv_header() + &plan.to_csv();
            write(&common.out, "plan.csv", &csv, &mut outputs)?;
            let summary = serde_json::json!({
                "qp_cost": plan.qp_cost,
                "max_zmp_offset": plan.max_zmp_offset(),
                "min_zmp_margin": plan.min_zmp_margin(),
                "max_rcof": plan.max_rcof(),
                "mean_step_length": plan.mean_step_length(),
            });
            Ok(Success {
                command: "plan",
                outputs,
                summary: Some(summary),
            })
        }
        Command::Simulate { common, weights } => {
            let config = load_config(&common)?;
            let weights = single_weights(weights.as_deref())?;
            let rollout = closed_loop::rollout(&weights, &config)?;
            let evaluation = closed_loop::score(&rollout, &config.objective);
            write(&common.out, "trace.csv", &(config.csv_header() + &rollout.trace.to_csv()), &mut outputs)?;
            let summary = serde_json::to_value(&evaluation).expect("evaluation serializes");
            let json = serde_json::to_string_pretty(&summary).expect("evaluation serializes") + "\n";
            write(&common.out, "summary.json", &json, &mut outputs)?;
            Ok(Success {
                command: "simulate",
                outputs,
                summary: Some(summary),
            })
        }
        Command::Sweep { common, grid } => {
            let config = load_config(&common)?;
            let grid = closed_loop::parse_grid(&grid)?;
            if verbose {
                eprintln!("sweeping {} weight points", grid.len());
            }
            let rows = closed_loop::weight_sweep(&config, &grid)?;
            write(&common.out, "sweep.csv", &closed_loop::sweep_csv(&config, &rows), &mut outputs)?;
            let failed = rows.iter().filter(|r| r.status != "ok").count();
            Ok(Success {
                command: "sweep",
                outputs,
                summary: Some(serde_json::json!({ "points": rows.len(), "failed": failed })),
            })
        }
        Command::Tune { common, budget } => {
            let mut config = load_config(&common)?;
            if let Some(b) = budget {
                config.budget = b;
            }
            config.validate()?;
            if verbose {
                eprintln!(
                    "tuning {} ({} weights), budget {}, seed {}",
                    config.scenario.name(),
                    config.mode.names().len(),
                    config.budget,
                    config.seed
                );
            }
            let report = closed_loop::run_scenario(&config)?;
            write(&common.out, "tune_trace.csv", &report.trace_csv(&config), &mut outputs)?;
            write(&common.out, "tune_report.json", &(report.to_json() + "\n"), &mut outputs)?;
            let summary = serde_json::json!({
                "best_x": report.best_x,
                "best_objective": report.best_objective,
                "best_iteration": report.best_iteration,
                "wall_clock_s": report.wall_clock_s,
            });
            Ok(Success {
                command: "tune",
                outputs,
                summary: Some(summary),
            })
        }
        Command::Report { out, inputs } => {
            let inputs = if inputs.is_empty() {
                vec![out.join("tune_trace.csv")]
            } else {
                inputs
            };
            let missing: Vec<String> = inputs
                .iter()
                .filter(|p| !p.is_file())
                .map(|p| p.display().to_string())
                .collect();
            if !missing.is_empty() {
                return Err(CliError {
                    kind: "missing_inputs".into(),
                    message: format!("{} input trace(s) not found", missing.len()),
                    missing,
                });
            }
            for input in &inputs {
                let text = fs::read_to_string(input).map_err(|e| io_error(input, e))?;
                let series = TraceSeries::from_trace_csv(&text).map_err(|e| {
                    CliError::new("config", format!("{}: {e}", input.display()))
                })?;
                let header: String = text.lines().take_while(|l| l.starts_with('#')).map(|l| format!("{l}\n")).collect();
                let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("trace");
                write(&out, &format!("{stem}_series.csv"), &(header + &series.to_csv()), &mut outputs)?;
            }
            Ok(Success {
                command: "report",
                outputs,
                summary: None,
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let err = CliError::new("usage", e.to_string().trim().to_string());
            eprintln!("{}", serde_json::json!({ "error": err }));
            return ExitCode::from(err.exit_code());
        }
    };
    match run(cli) {
        Ok(success) => {
            println!("{}", serde_json::to_string(&success).expect("success serializes"));
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("{}", serde_json::json!({ "error": err }));
            ExitCode::from(err.exit_code())
        }
    }
}
