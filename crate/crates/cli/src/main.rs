//! `fotrack`: simulate, identify and scan manual-tracking operator models.
//!
//! Exit codes: 0 success, 1 other failure, 2 usage, 3 simulation divergence,
//! 4 non-convergence.

mod args;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fotrack::closed_loop::{generate_forcing, simulate, ForcingSpec, LoopConfig, SimError};
use fotrack::data_io::{
    inspect_session, read_input_csv, read_session, session_paths, write_fit_report, write_input_csv,
    write_scan_grid, write_session, write_sweep, ReadOptions,
};
use fotrack::fractional::Memory;
use fotrack::identification::{fit, rmse_cost, scan_alpha_l_kp, sweep_delay, FitOptions, IdentError};
use fotrack::models::{ModelKind, OperatorModel};
use fotrack::session::{Session, DEFAULT_LOOP_TOLERANCE};

use args::{parse_axis, parse_memory, Axis, ModeArg, ParamArgs, PlantArgs, SourceArgs};

#[derive(Debug, Parser)]
#[command(name = "fotrack", version, about = "Fractional-order human operator models for manual tracking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the closed loop and write a session (<out>.csv + <out>.json).
    Simulate {
        /// Operator model: yp1, yp2 or yp3
        #[arg(long)]
        model: ModelKind,
        #[command(flatten)]
        params: ParamArgs,
        #[command(flatten)]
        plant: PlantArgs,
        #[arg(long, default_value_t = 0.01)]
        step: f64,
        /// Seconds; defaults to 60, or the length of --input.
        #[arg(long)]
        duration: Option<f64>,
        #[command(flatten)]
        source: SourceArgs,
        /// GL history length in samples, or "full"
        #[arg(long, value_parser = parse_memory, default_value = "full")]
        memory: Memory,
        #[arg(long)]
        out: PathBuf,
    },
    /// Identify one operator model from a session and write a fit report.
    Fit {
        /// Session base path (or the .csv file)
        #[arg(long)]
        session: PathBuf,
        /// Operator model: yp1, yp2 or yp3
        #[arg(long)]
        model: ModelKind,
        #[arg(long, value_enum, default_value = "closed")]
        mode: ModeArg,
        /// Hold the dead time at this value.
        #[arg(long = "fix-L")]
        fix_l: Option<f64>,
        /// Hold the yp2 lead zero at this value (default 1/tau of the plant).
        #[arg(long)]
        zero: Option<f64>,
        #[command(flatten)]
        plant: PlantArgs,
        /// GL history length in samples, or "full"
        #[arg(long, value_parser = parse_memory, default_value = "full")]
        memory: Memory,
        /// Simplex evaluation budget shared by all restarts.
        #[arg(long, default_value_t = 4000)]
        max_evals: usize,
        /// Report path; defaults to <session>.<model>.fit.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// RMSE of the fractional model over an alpha x L x kp lattice.
    Scan {
        /// Session base path (or the .csv file)
        #[arg(long)]
        session: PathBuf,
        #[arg(long, value_parser = parse_axis, allow_hyphen_values = true, default_value = "-0.95:0.05:-0.05")]
        alpha: Axis,
        #[arg(long = "L", value_parser = parse_axis, allow_hyphen_values = true, default_value = "0:0.05:0.4")]
        l: Axis,
        #[arg(long, value_parser = parse_axis, allow_hyphen_values = true, default_value = "1,3,5,7")]
        kp: Axis,
        #[command(flatten)]
        plant: PlantArgs,
        /// GL history length in samples, or "full"
        #[arg(long, value_parser = parse_memory, default_value = "full")]
        memory: Memory,
        /// Worker threads (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
        /// Grid path; defaults to <session>.scan.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the remaining parameters at each dead time of a range.
    Sweep {
        /// Session base path (or the .csv file)
        #[arg(long)]
        session: PathBuf,
        #[arg(long, default_value = "yp3")]
        model: ModelKind,
        #[arg(long = "L", value_parser = parse_axis, allow_hyphen_values = true, default_value = "0.01:0.01:0.6")]
        l: Axis,
        #[arg(long, value_enum, default_value = "closed")]
        mode: ModeArg,
        #[arg(long)]
        zero: Option<f64>,
        #[command(flatten)]
        plant: PlantArgs,
        /// GL history length in samples, or "full"
        #[arg(long, value_parser = parse_memory, default_value = "full")]
        memory: Memory,
        #[arg(long, default_value_t = 4000)]
        max_evals: usize,
        #[arg(long)]
        jobs: Option<usize>,
        /// Table path; defaults to <session>.<model>.sweep.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the sum-of-sines forcing function as a `t,i` CSV.
    Forcing {
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 0.01)]
        step: f64,
        #[arg(long, default_value_t = 60.0)]
        duration: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a session file and print every problem found.
    Validate {
        /// Session base path (or the .csv file)
        #[arg(long)]
        session: PathBuf,
        #[arg(long, default_value_t = DEFAULT_LOOP_TOLERANCE)]
        loop_tolerance: f64,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Diverged(String),
    NotConverged(String),
    Other(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Other(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Diverged(_) => 3,
            Failure::NotConverged(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Diverged(m) | Failure::NotConverged(m) | Failure::Other(m) => m,
        }
    }
}

fn other(e: impl std::fmt::Display) -> Failure {
    Failure::Other(e.to_string())
}

fn sim_failure(e: SimError) -> Failure {
    match e {
        SimError::Unstable { .. } => Failure::Diverged(e.to_string()),
        SimError::Config(_) | SimError::Forcing(_) | SimError::Model(_) | SimError::StepMismatch { .. } => {
            Failure::Usage(e.to_string())
        }
        _ => other(e),
    }
}

fn ident_failure(e: IdentError) -> Failure {
    match e {
        IdentError::Sim(e) => sim_failure(e),
        IdentError::UnknownParameter { .. }
        | IdentError::NothingToFit
        | IdentError::BadAxis(_)
        | IdentError::Model(_)
        | IdentError::Simplex(_) => {
            Failure::Usage(e.to_string())
        }
        _ => other(e),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Simulate { model, params, plant, step, duration, source, memory, out } => {
            cmd_simulate(model, &params, &plant, step, duration, &source, memory, &out)
        }
        Command::Fit { session, model, mode, fix_l, zero, plant, memory, max_evals, out } => {
            let s = load(&session)?;
            let plant = plant.resolve(Some(&s)).map_err(Failure::Usage)?;
            let options = fit_options(mode, fix_l, zero, memory, max_evals);
            let result = fit(&s, model, &plant, &options).map_err(ident_failure)?;
            let out = out.unwrap_or_else(|| derived(&session, &format!("{model}.fit.json")));
            write_fit_report(&result, &out).map_err(other)?;
            println!("{}", result.summary_line());
            if result.converged {
                Ok(())
            } else {
                Err(Failure::NotConverged(format!("fit did not converge; report written to {}", out.display())))
            }
        }
        Command::Scan { session, alpha, l, kp, plant, memory, jobs, out } => {
            let s = load(&session)?;
            let plant = plant.resolve(Some(&s)).map_err(Failure::Usage)?;
            let grid = scan_alpha_l_kp(&s, &plant, &alpha.0, &l.0, &kp.0, memory, jobs).map_err(ident_failure)?;
            write_scan_grid(&grid, out.unwrap_or_else(|| derived(&session, "scan.csv"))).map_err(other)?;
            let Some((flat, rmse)) = grid.argmin() else {
                return Err(Failure::Diverged("every scan cell diverged".to_string()));
            };
            let cell: Vec<String> = grid.point(flat).iter().map(|(k, v)| format!("{k}={v}")).collect();
            println!("{} rmse={rmse}", cell.join(" "));
            Ok(())
        }
        Command::Sweep { session, model, l, mode, zero, plant, memory, max_evals, jobs, out } => {
            let s = load(&session)?;
            let plant = plant.resolve(Some(&s)).map_err(Failure::Usage)?;
            let options = fit_options(mode, None, zero, memory, max_evals);
            let results = sweep_delay(&s, &plant, model, &l.0, &options, jobs).map_err(ident_failure)?;
            let out = out.unwrap_or_else(|| derived(&session, &format!("{model}.sweep.csv")));
            write_sweep(&results, &out).map_err(other)?;
            let best = results
                .iter()
                .filter(|r| r.rmse.is_finite())
                .min_by(|a, b| a.rmse.total_cmp(&b.rmse))
                .ok_or_else(|| Failure::Diverged("no delay in the sweep gave a stable loop".to_string()))?;
            println!("{}", best.summary_line());
            Ok(())
        }
        Command::Forcing { seed, step, duration, out } => {
            check_duration(duration)?;
            let signal = generate_forcing(&ForcingSpec::default_with_seed(seed), step, duration).map_err(sim_failure)?;
            write_input_csv(&signal, &out).map_err(other)
        }
        Command::Validate { session, loop_tolerance } => {
            let opts = ReadOptions { loop_tolerance, ..ReadOptions::default() };
            let (parsed, problems) = inspect_session(&session, &opts);
            for p in &problems {
                println!("violation: {p}");
            }
            match (parsed, problems.is_empty()) {
                (Some(s), true) => {
                    println!("valid samples={} step={}", s.len(), s.step());
                    Ok(())
                }
                _ => Err(Failure::Other(format!("{} problem(s) found", problems.len().max(1)))),
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    kind: ModelKind,
    params: &ParamArgs,
    plant: &PlantArgs,
    step: f64,
    duration: Option<f64>,
    source: &SourceArgs,
    memory: Memory,
    out: &Path,
) -> Result<(), Failure> {
    let plant = plant.resolve(None).map_err(Failure::Usage)?;
    let mut map = params.for_model(kind).map_err(Failure::Usage)?;
    if kind == ModelKind::Yp2 {
        map.entry("zero".to_string()).or_insert(1.0 / plant.tau);
    }
    let operator = OperatorModel::from_params(kind, &map).map_err(|e| Failure::Usage(e.to_string()))?;
    let input = match (&source.input, source.forcing_seed) {
        (Some(path), _) => {
            let signal = read_input_csv(path).map_err(other)?;
            if (signal.step() - step).abs() > 1e-9 * step {
                return Err(Failure::Usage(format!(
                    "input step {} does not match --step {step}",
                    signal.step()
                )));
            }
            signal
        }
        (None, Some(seed)) => {
            let d = duration.unwrap_or(60.0);
            check_duration(d)?;
            generate_forcing(&ForcingSpec::default_with_seed(seed), step, d).map_err(sim_failure)?
        }
        (None, None) => unreachable!("clap requires one input source"),
    };
    let duration = duration.unwrap_or(input.len() as f64 * input.step());
    check_duration(duration)?;
    let mut config = LoopConfig::new(operator, plant, step, duration);
    config.memory = memory;
    let session = simulate(&config, &input).map_err(sim_failure)?;
    write_session(&session, out).map_err(other)?;
    let rmse = rmse_cost(&session.m, &session.i).map_err(other)?;
    println!("rmse={rmse}");
    Ok(())
}

fn check_duration(d: f64) -> Result<(), Failure> {
    if d > 0.0 && d.is_finite() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("duration must be positive, got {d}")))
    }
}

fn fit_options(mode: ModeArg, fix_l: Option<f64>, zero: Option<f64>, memory: Memory, max_evals: usize) -> FitOptions {
    let mut options = FitOptions { memory, ..FitOptions::default() }.with_mode(mode.into());
    options.simplex.max_evals = max_evals;
    if let Some(l) = fix_l {
        options = options.with_fixed("L", l);
    }
    if let Some(z) = zero {
        options = options.with_fixed("zero", z);
    }
    options
}

fn load(path: &Path) -> Result<Session, Failure> {
    read_session(path, &ReadOptions::default()).map_err(|e| Failure::Other(format!("{}: {e}", path.display())))
}

/// `<session base>.<suffix>`, next to the session files.
fn derived(session: &Path, suffix: &str) -> PathBuf {
    let (csv, _) = session_paths(session);
    csv.with_extension(suffix)
}
