use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use padoa_core::fixed_z::feasible_center;
use padoa_core::oracle::{enumerate_outcome, milp_direct, OracleOutcome};
use padoa_core::random::{random_instance, RandomSpec};
use padoa_core::tcl::{decode_solution, generate, load_ambient, TclConfig, Topology};
use padoa_core::*;

#[derive(Parser)]
#[command(name = "padoa", version, about = "Outer approximation solvers for block-separable mixed-integer convex programs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve an instance file.
    Solve {
        instance: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Generate a thermostatically controlled load instance and solve it.
    BenchTcl(BenchArgs),
    /// Check an instance file and report every failed check.
    Validate { instance: PathBuf },
    /// Re-emit the trace CSV of a run directory.
    Trace {
        run_dir: PathBuf,
        /// Write zeros in the timing columns.
        #[arg(long)]
        no_timings: bool,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a seeded random instance as JSON.
    GenRandom {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Drop the coupling rows.
        #[arg(long)]
        decoupled: bool,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Algorithm {
    Padoa,
    Oa,
    MilpDirect,
    Enumerate,
}

#[derive(Args, Clone)]
struct RunArgs {
    #[arg(long, value_enum, default_value_t = Algorithm::Padoa)]
    algorithm: Algorithm,
    #[arg(long, default_value_t = 1e-6)]
    epsilon: f64,
    /// Tolerance of the block subproblems; defaults to epsilon / 2.
    #[arg(long)]
    epsilon_lower: Option<f64>,
    /// Workers for the block subproblems.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, default_value_t = 1000)]
    max_iter: usize,
    #[arg(long)]
    trace_out: Option<PathBuf>,
    #[arg(long)]
    solution_out: Option<PathBuf>,
    /// Where an infeasibility certificate goes; defaults to a file next to
    /// the solution, or `certificate.json`.
    #[arg(long)]
    certificate_out: Option<PathBuf>,
    /// Directory receiving solution.json, trace.csv and trace.json.
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// Write zeros in the timing columns of the trace.
    #[arg(long)]
    no_timings: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// Full configuration as JSON; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    rooms: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    /// triangle, cycle or path (also three-room, four-room, linear-n).
    #[arg(long)]
    topology: Option<String>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Exponent of the comfort term, 2 or 4.
    #[arg(long)]
    order: Option<u32>,
    /// Ambient temperature CSV, one value per row.
    #[arg(long)]
    ambient: Option<PathBuf>,
    /// Write the generated instance here.
    #[arg(long)]
    export: Option<PathBuf>,
    /// Write the decoded schedule here.
    #[arg(long)]
    schedule_out: Option<PathBuf>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Serialize)]
struct SolutionFile {
    value: Option<f64>,
    x: Vec<f64>,
    z: Vec<f64>,
    status: SolveStatus,
    iters: usize,
    wall_ms: f64,
    algorithm: Algorithm,
    lower_bound: Option<f64>,
}

struct RunOutcome {
    status: SolveStatus,
    value: f64,
    lower_bound: f64,
    x: Vec<f64>,
    z: Vec<f64>,
    iterations: usize,
    trace: IterationTrace,
    certificate: Option<InfeasibilityCertificate>,
    wall_ms: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("PADOA_LOG")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(command: Command) -> anyhow::Result<u8> {
    match command {
        Command::Solve { instance, run } => {
            let problem = load_problem(&instance)?;
            let outcome = run_solver(&problem, &run)?;
            finish(&problem, &run, &outcome)
        }
        Command::BenchTcl(args) => bench_tcl(args),
        Command::Validate { instance } => {
            let text = read(&instance)?;
            let problem = StructuredMicp::from_json_str(&text).with_context(|| instance.display().to_string())?;
            let report = validate(&problem);
            print!("{report}");
            Ok(if report.passed() { 0 } else { 1 })
        }
        Command::Trace { run_dir, no_timings, out } => {
            let trace = read_trace(&run_dir)?;
            write_or_print(out.as_deref(), &trace.to_csv(!no_timings))?;
            Ok(0)
        }
        Command::GenRandom { seed, decoupled, out } => {
            let spec = if decoupled { RandomSpec::decoupled() } else { RandomSpec::default() };
            let mut text = random_instance(seed, &spec).to_json_string();
            text.push('\n');
            write_or_print(out.as_deref(), &text)?;
            Ok(0)
        }
    }
}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_or_print(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Parses and validates; parse errors carry the file name, line and column.
fn load_problem(path: &Path) -> anyhow::Result<StructuredMicp> {
    let text = read(path)?;
    let problem = StructuredMicp::from_json_str(&text).with_context(|| path.display().to_string())?;
    let report = validate(&problem);
    if !report.passed() {
        bail!("{}: invalid instance\n{report}", path.display());
    }
    Ok(problem)
}

fn check_run_args(args: &RunArgs) -> anyhow::Result<()> {
    if !(args.epsilon > 0.0) {
        bail!("--epsilon must be positive, got {}", args.epsilon);
    }
    if let Some(el) = args.epsilon_lower {
        if !(el > 0.0 && el <= args.epsilon) {
            bail!("--epsilon-lower must lie in (0, epsilon], got {el}");
        }
    }
    if args.threads == 0 {
        bail!("--threads must be at least 1");
    }
    Ok(())
}

fn run_solver(problem: &StructuredMicp, args: &RunArgs) -> anyhow::Result<RunOutcome> {
    check_run_args(args)?;
    let started = Instant::now();
    let mut outcome = match args.algorithm {
        Algorithm::Padoa => {
            let mut options = PadoaOptions::new(args.epsilon);
            options.epsilon_lower = args.epsilon_lower;
            options.threads = args.threads;
            options.max_iter = args.max_iter;
            let r = solve_padoa(problem, &options)?;
            RunOutcome {
                status: r.status,
                value: r.value,
                lower_bound: r.lower_bound,
                x: r.x,
                z: r.z,
                iterations: r.iterations,
                trace: r.trace,
                certificate: r.certificate,
                wall_ms: 0.0,
            }
        }
        Algorithm::Oa => {
            let mut options = OaOptions::new(args.epsilon);
            options.max_iter = args.max_iter;
            let r = solve_oa(problem, &options)?;
            RunOutcome {
                status: r.status,
                value: r.value,
                lower_bound: r.lower_bound,
                x: r.x,
                z: r.z,
                iterations: r.iterations,
                trace: r.trace,
                certificate: r.certificate,
                wall_ms: 0.0,
            }
        }
        Algorithm::Enumerate => match enumerate_outcome(problem, args.epsilon / 2.0)? {
            OracleOutcome::Solved(s) => oracle_outcome(s.value, s.x, s.z, s.values.len()),
            OracleOutcome::Infeasible(cert) => infeasible_outcome(cert),
        },
        Algorithm::MilpDirect => match feasible_center(problem)? {
            Err(cert) => infeasible_outcome(cert),
            Ok(_) => {
                let s = milp_direct(problem)?;
                oracle_outcome(s.value, s.x, s.z, 1)
            }
        },
    };
    outcome.wall_ms = started.elapsed().as_secs_f64() * 1e3;
    Ok(outcome)
}

fn oracle_outcome(value: f64, x: Vec<f64>, z: Vec<f64>, iterations: usize) -> RunOutcome {
    RunOutcome {
        status: SolveStatus::Optimal,
        value,
        lower_bound: value,
        x,
        z,
        iterations,
        trace: IterationTrace::default(),
        certificate: None,
        wall_ms: 0.0,
    }
}

fn infeasible_outcome(cert: InfeasibilityCertificate) -> RunOutcome {
    RunOutcome {
        status: SolveStatus::Infeasible,
        value: f64::INFINITY,
        lower_bound: f64::INFINITY,
        x: Vec::new(),
        z: Vec::new(),
        iterations: 0,
        trace: IterationTrace::default(),
        certificate: Some(cert),
        wall_ms: 0.0,
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Writes the requested artifacts, prints a summary and returns the exit code.
fn finish(problem: &StructuredMicp, args: &RunArgs, outcome: &RunOutcome) -> anyhow::Result<u8> {
    let solution = SolutionFile {
        value: finite(outcome.value),
        x: outcome.x.clone(),
        z: outcome.z.clone(),
        status: outcome.status,
        iters: outcome.iterations,
        wall_ms: if args.no_timings { 0.0 } else { outcome.wall_ms },
        algorithm: args.algorithm,
        lower_bound: finite(outcome.lower_bound),
    };
    let solution_json = serde_json::to_string_pretty(&solution)? + "\n";
    let csv = outcome.trace.to_csv(!args.no_timings);
    if let Some(dir) = &args.run_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write(&dir.join("solution.json"), &solution_json)?;
        write(&dir.join("trace.csv"), &csv)?;
        write(&dir.join("trace.json"), &(serde_json::to_string_pretty(&outcome.trace)? + "\n"))?;
    }
    if let Some(path) = &args.solution_out {
        write(path, &solution_json)?;
    }
    if let Some(path) = &args.trace_out {
        write(path, &csv)?;
    }
    match outcome.status {
        SolveStatus::Optimal => {
            println!(
                "optimal value {} after {} iterations ({:.1} ms)",
                outcome.value, outcome.iterations, outcome.wall_ms
            );
            Ok(0)
        }
        SolveStatus::NotConverged => {
            println!(
                "not converged after {} iterations: best value {}, lower bound {}",
                outcome.iterations, outcome.value, outcome.lower_bound
            );
            Ok(3)
        }
        SolveStatus::Infeasible => {
            let path = certificate_path(args);
            let cert = outcome.certificate.as_ref().context("infeasible run without a certificate")?;
            debug_assert!(cert.verify(problem));
            write(&path, &(serde_json::to_string_pretty(cert)? + "\n"))?;
            println!("infeasible; certificate written to {}", path.display());
            Ok(2)
        }
    }
}

fn certificate_path(args: &RunArgs) -> PathBuf {
    if let Some(p) = &args.certificate_out {
        p.clone()
    } else if let Some(dir) = &args.run_dir {
        dir.join("certificate.json")
    } else if let Some(p) = &args.solution_out {
        p.with_extension("certificate.json")
    } else {
        PathBuf::from("certificate.json")
    }
}

/// Prefers the lossless `trace.json`; falls back to `trace.csv`.
fn read_trace(dir: &Path) -> anyhow::Result<IterationTrace> {
    let json = dir.join("trace.json");
    if json.exists() {
        let text = read(&json)?;
        return serde_json::from_str(&text).with_context(|| json.display().to_string());
    }
    let csv = dir.join("trace.csv");
    let text = read(&csv)?;
    IterationTrace::from_csv(&text).with_context(|| csv.display().to_string())
}

fn tcl_config(args: &BenchArgs) -> anyhow::Result<TclConfig> {
    let mut config = match &args.config {
        Some(path) => serde_json::from_str(&read(path)?).with_context(|| path.display().to_string())?,
        None => TclConfig::new(3, 8, Topology::Complete),
    };
    if let Some(r) = args.rooms {
        config.rooms = r;
    }
    if let Some(h) = args.horizon {
        config.horizon = h;
    }
    if let Some(t) = &args.topology {
        config.topology = serde_json::from_value(serde_json::Value::String(t.clone()))
            .with_context(|| format!("unknown topology `{t}`"))?;
    }
    if let Some(g) = args.gamma {
        config.gamma = g;
    }
    if let Some(p) = args.order {
        config.order = p;
    }
    if let Some(path) = &args.ambient {
        config.ambient = Some(load_ambient(path, config.horizon)?);
    }
    config.check()?;
    Ok(config)
}

fn bench_tcl(args: BenchArgs) -> anyhow::Result<u8> {
    let config = tcl_config(&args)?;
    let problem = generate(&config)?;
    if let Some(path) = &args.export {
        write(path, &(problem.to_json_string() + "\n"))?;
    }
    let outcome = run_solver(&problem, &args.run)?;
    let code = finish(&problem, &args.run, &outcome)?;
    if outcome.status != SolveStatus::Infeasible {
        let schedule = decode_solution(&config, &outcome.x, &outcome.z)?;
        println!(
            "energy {:.6}, comfort {:.6}, max simulation error {:.2e}, max copy mismatch {:.2e}",
            schedule.energy_cost, schedule.comfort_cost, schedule.max_simulation_error, schedule.max_copy_mismatch
        );
        for w in &schedule.warnings {
            log::warn!("{w}");
        }
        if let Some(path) = &args.schedule_out {
            write(path, &(serde_json::to_string_pretty(&schedule)? + "\n"))?;
        }
    }
    Ok(code)
}
