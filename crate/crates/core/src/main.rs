use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cellchar::cli::{
    cmd_bench_runtime, cmd_emit_lib, cmd_eval_system, cmd_gen_data, cmd_interp_drive, cmd_train,
    parse_corner, CliError, EmitSource, RunConfig,
};
use cellchar::libgen::parse_liberty;
use cellchar::sta::{self, bench};

/// Standard-cell library characterization toolkit: graph datasets, per-task
/// model training, library emission, and system-level evaluation.
#[derive(Parser)]
#[command(name = "cellchar", version)]
struct Cli {
    /// key = value configuration file; flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (results are identical for any value).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/test corner-grid datasets and normalization specs.
    GenData,
    /// Train one model per task on generated datasets.
    Train {
        /// Continue from existing checkpoints (epoch counter included).
        #[arg(long)]
        resume: bool,
    },
    /// Build and write a characterized library at a corner.
    EmitLib {
        /// `oracle` or `models`.
        #[arg(long, default_value = "oracle")]
        source: String,
        /// Checkpoint directory for `--source models` (default: out dir).
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        /// Corner as `vdd,vth,<temperature|cox>`.
        #[arg(long)]
        corner: String,
        /// Also emit the oracle library and an accuracy report.
        #[arg(long)]
        compare: bool,
    },
    /// Compare timing and power of two libraries over netlists.
    EvalSystem {
        #[arg(long)]
        lib_truth: PathBuf,
        #[arg(long)]
        lib_pred: PathBuf,
        /// Gate netlist files; may repeat.
        #[arg(long)]
        netlist: Vec<PathBuf>,
        /// Add the bundled benchmark suite at the given period.
        #[arg(long)]
        suite: bool,
        /// Clock period for the bundled suite, library time units.
        #[arg(long, default_value_t = 10000.0)]
        period: f64,
        /// Operating frequency in GHz (default: derived per netlist).
        #[arg(long)]
        freq: Option<f64>,
    },
    /// Size benchmarks with and without interpolated drive strengths.
    InterpDrive {
        /// Comma-separated new cells, e.g. `INVX3,BUFX5,NAND2X3`.
        #[arg(long)]
        drives: String,
        #[arg(long)]
        corner: String,
        /// Gate netlist files; may repeat. Defaults to the bundled suite.
        #[arg(long)]
        netlist: Vec<PathBuf>,
        /// Period multipliers applied to each netlist's minimum feasible
        /// period.
        #[arg(long, default_value = "1.05,1.1,1.25,1.5")]
        period_factors: String,
    },
    /// Measure model inference versus direct characterization.
    BenchRuntime {
        /// Checkpoint directory (default: out dir).
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        #[arg(long)]
        corner: String,
    },
}

fn build_config(args: &Cli) -> Result<RunConfig, CliError> {
    let mut config = RunConfig::default();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        config.apply_text(&text)?;
    }
    config.apply_env()?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(jobs) = args.jobs {
        config.jobs = jobs;
    }
    if let Some(out) = &args.out {
        config.out_dir = out.clone();
    }
    Ok(config)
}

fn load_netlists(
    paths: &[PathBuf],
    suite: bool,
    period: f64,
) -> Result<Vec<sta::GateNetlist>, CliError> {
    let mut netlists = Vec::new();
    for path in paths {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
        netlists.push(sta::parse_gatelist(&text)?);
    }
    if suite || netlists.is_empty() {
        netlists.extend(bench::standard_suite(period));
    }
    Ok(netlists)
}

fn run(args: Cli) -> Result<(), CliError> {
    let config = build_config(&args)?;
    match args.command {
        Command::GenData => {
            let manifest = cmd_gen_data(&config)?;
            print!("{manifest}");
        }
        Command::Train { resume } => {
            let summary = cmd_train(&config, resume)?;
            print!("{summary}");
        }
        Command::EmitLib {
            source,
            checkpoints,
            corner,
            compare,
        } => {
            let corner = parse_corner(config.technology, &corner)?;
            let source = match source.as_str() {
                "oracle" => EmitSource::Oracle,
                "models" => {
                    EmitSource::Models(checkpoints.unwrap_or_else(|| config.out_dir.clone()))
                }
                other => {
                    return Err(CliError::Config(format!(
                        "source must be oracle or models, got {other}"
                    )))
                }
            };
            let report = cmd_emit_lib(&config, source, &corner, compare)?;
            print!("{report}");
        }
        Command::EvalSystem {
            lib_truth,
            lib_pred,
            netlist,
            suite,
            period,
            freq,
        } => {
            let truth = parse_liberty(&std::fs::read_to_string(&lib_truth)?)?;
            let pred = parse_liberty(&std::fs::read_to_string(&lib_pred)?)?;
            let netlists = load_netlists(&netlist, suite, period)?;
            let mut all = String::new();
            for n in &netlists {
                let f = freq.unwrap_or(truth.technology.time_per_ns() / n.period);
                let csv = cmd_eval_system(std::slice::from_ref(n), &truth, &pred, f)?;
                if all.is_empty() {
                    all.push_str(&csv);
                } else if let Some(row) = csv.lines().nth(1) {
                    all.push_str(row);
                    all.push('\n');
                }
            }
            print!("{all}");
        }
        Command::InterpDrive {
            drives,
            corner,
            netlist,
            period_factors,
        } => {
            let corner = parse_corner(config.technology, &corner)?;
            let catalog = config.catalog()?;
            let new_drives: Vec<String> = drives
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect();
            let factors: Result<Vec<f64>, _> = period_factors
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect();
            let factors =
                factors.map_err(|_| CliError::Config("bad period factor list".into()))?;
            let netlists = load_netlists(&netlist, netlist.is_empty(), 1e9)?;
            let report = cmd_interp_drive(
                &catalog,
                &new_drives,
                &netlists,
                &corner,
                &factors,
                (config.n_slew, config.n_load),
                config.jobs,
            )?;
            print!("{report}");
        }
        Command::BenchRuntime {
            checkpoints,
            corner,
        } => {
            let corner = parse_corner(config.technology, &corner)?;
            let dir = checkpoints.unwrap_or_else(|| config.out_dir.clone());
            let report = cmd_bench_runtime(&config, &dir, &corner)?;
            print!("{report}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Cli::parse();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.code() as u8)
        }
    }
}
