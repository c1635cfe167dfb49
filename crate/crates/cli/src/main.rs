use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nsk_cli::{CliError, Command, Overrides, RunConfig};
use nsk_core::{Cycle, LinearMethod};

#[derive(Parser)]
#[command(
    name = "nsk",
    version,
    about = "Newton-Krylov optimal control of stationary Navier-Stokes flow"
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Newton continuation up to the finest mesh.
    Solve(Flags),
    /// CG against MGCG over the [bench] parameter grid.
    Bench(Flags),
    /// Hessian against two-grid preconditioner across refinements.
    Spectral(Flags),
    /// Manufactured-solution convergence rates.
    Mms(Flags),
    /// Solve and write VTK fields to --out.
    Export(Flags),
}

#[derive(Args)]
struct Flags {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_method)]
    method: Option<LinearMethod>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    base: Option<usize>,
    #[arg(long, value_parser = parse_cycle)]
    cycle: Option<Cycle>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma_y: Option<f64>,
    #[arg(long)]
    gamma_p: Option<f64>,
    #[arg(long)]
    n0: Option<usize>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_method(s: &str) -> Result<LinearMethod, String> {
    match s {
        "cg" => Ok(LinearMethod::Cg),
        "mgcg" => Ok(LinearMethod::Mgcg),
        _ => Err(format!("unknown method {s:?}, expected cg or mgcg")),
    }
}

fn parse_cycle(s: &str) -> Result<Cycle, String> {
    match s {
        "two_grid" => Ok(Cycle::TwoGrid),
        "w_cycle" => Ok(Cycle::WCycle),
        _ => Err(format!("unknown cycle {s:?}, expected two_grid or w_cycle")),
    }
}

impl Flags {
    fn overrides(&self) -> Overrides {
        Overrides {
            method: self.method,
            tol: self.tol,
            base: self.base,
            cycle: self.cycle,
            nu: self.nu,
            beta: self.beta,
            gamma_y: self.gamma_y,
            gamma_p: self.gamma_p,
            n0: self.n0,
            levels: self.levels,
            seed: self.seed,
            csv: self.csv.clone(),
            json: self.json.clone(),
            out: self.out.clone(),
        }
    }
}

fn threads_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var("NSK_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&t| t > 0)
            .map(Some)
            .ok_or_else(|| {
                CliError::Config(format!("NSK_THREADS = {v:?} is not a positive integer"))
            }),
        Err(_) => Ok(None),
    }
}

fn main_inner(cli: Cli) -> Result<(), CliError> {
    if let Some(t) = threads_from_env()? {
        nsk_core::set_threads(t);
    }
    let (command, flags) = match cli.command {
        Sub::Solve(f) => (Command::Solve, f),
        Sub::Bench(f) => (Command::Bench, f),
        Sub::Spectral(f) => (Command::Spectral, f),
        Sub::Mms(f) => (Command::Mms, f),
        Sub::Export(f) => (Command::Export, f),
    };
    let cfg = RunConfig::resolve(flags.config.as_deref(), &flags.overrides())?;
    nsk_cli::execute(command, &cfg).map(|_| ())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match main_inner(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("nsk: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
