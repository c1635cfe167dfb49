//! Command-line front end: configuration, command dispatch and result files.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod output;
pub mod vtk;

use std::fmt::Write as _;
use std::path::PathBuf;

use nsk_core::driver::mms::ManufacturedFlow;
use nsk_core::driver::study::{
    run_mms, run_order_study, MmsConfig, MmsRow, OrderRow, OrderStudyConfig,
};
use nsk_core::driver::{benchmark_targets, run_benchmark, staged_solve, target_control_field};
use nsk_core::{BenchCase, BenchConfig, BenchRecord, Discretization};
use serde::Serialize;

pub use config::{Command, Overrides, RunConfig};
pub use error::CliError;
pub use output::RunRecord;

/// Result of one command.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Outcome {
    Solve {
        runs: Vec<RunRecord>,
    },
    Bench {
        records: Vec<BenchRecord>,
    },
    Spectral {
        rows: Vec<OrderRow>,
    },
    Mms {
        rows: Vec<MmsRow>,
    },
    Export {
        runs: Vec<RunRecord>,
        files: Vec<PathBuf>,
    },
}

impl Outcome {
    /// Newton solves behind the outcome, in CSV order.
    pub fn runs(&self) -> Vec<RunRecord> {
        match self {
            Self::Solve { runs } | Self::Export { runs, .. } => runs.clone(),
            Self::Bench { records } => output::bench_runs(records),
            Self::Spectral { .. } | Self::Mms { .. } => Vec::new(),
        }
    }

    /// Description of the first solve that did not converge.
    pub fn failure(&self) -> Option<String> {
        self.runs().iter().find(|r| !r.report.converged()).map(|r| {
            format!(
                "{} solve at n = {} ended with status {}{}",
                r.report.method.as_str(),
                r.report.n,
                r.report.status.as_str(),
                r.report
                    .message
                    .as_ref()
                    .map(|m| format!(": {m}"))
                    .unwrap_or_default()
            )
        })
    }

    /// Human-readable table for standard output.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        match self {
            Self::Solve { runs } | Self::Export { runs, .. } => {
                for r in runs {
                    let rep = &r.report;
                    let _ = writeln!(
                        s,
                        "n = {:>4} {:<4} newton = {:>2} lin = {:>4} |g| = {:.3e} t_lin = {:.3}s {}",
                        rep.n,
                        rep.method.as_str(),
                        rep.newton_iters,
                        rep.lin_iters,
                        rep.final_grad_inf,
                        rep.lin_time_s,
                        rep.status.as_str()
                    );
                }
                if let Self::Export { files, .. } = self {
                    for f in files {
                        let _ = writeln!(s, "wrote {}", f.display());
                    }
                }
            }
            Self::Bench { records } => {
                for rec in records {
                    let p = rec.case.params;
                    let _ = writeln!(
                        s,
                        "nu = {} beta = {} gamma_y = {} gamma_p = {} base = {}",
                        p.nu, p.beta, p.gamma_y, p.gamma_p, rec.case.precond.base_n
                    );
                    for rep in rec.cg.iter().chain(&rec.mgcg) {
                        let _ = writeln!(
                            s,
                            "  n = {:>4} {:<4} newton = {:>2} lin = {:>4} t_lin = {:.3}s {}",
                            rep.n,
                            rep.method.as_str(),
                            rep.newton_iters,
                            rep.lin_iters,
                            rep.lin_time_s,
                            rep.status.as_str()
                        );
                    }
                    match rec.efficiency {
                        Some(e) => {
                            let _ = writeln!(s, "  efficiency = {e}");
                        }
                        None => {
                            let _ = writeln!(s, "  efficiency = n/a");
                        }
                    }
                }
            }
            Self::Spectral { rows } => {
                let _ = writeln!(s, "    n  |H-T|        ratio   d_h         ratio");
                for r in rows {
                    let _ = writeln!(
                        s,
                        "{:>5}  {:.4e}  {:>6}  {:>10}  {:>6}",
                        r.n,
                        r.difference_norm,
                        fmt_opt(r.difference_ratio, 3),
                        r.spectral_distance
                            .map_or("-".into(), |d| format!("{d:.4e}")),
                        fmt_opt(r.distance_ratio, 3)
                    );
                }
            }
            Self::Mms { rows } => {
                let _ = writeln!(
                    s,
                    "    n  |e_u|_L2    order  |e_u|_H1    order  |e_p|_L2    order"
                );
                for r in rows {
                    let _ = writeln!(
                        s,
                        "{:>5}  {:.4e}  {:>5}  {:.4e}  {:>5}  {:.4e}  {:>5}",
                        r.n,
                        r.velocity_l2,
                        fmt_opt(r.velocity_l2_order, 2),
                        r.velocity_h1,
                        fmt_opt(r.velocity_h1_order, 2),
                        r.pressure_l2,
                        fmt_opt(r.pressure_l2_order, 2)
                    );
                }
            }
        }
        s
    }
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.digits$}"))
}

/// Runs `command` with a validated configuration. Nonconvergent solves are
/// reported in the outcome, not as errors.
pub fn run(command: Command, cfg: &RunConfig) -> Result<Outcome, CliError> {
    cfg.validate()?;
    let params = cfg.params.to_params()?;
    match command {
        Command::Solve => Ok(Outcome::Solve {
            runs: solve(cfg)?.1,
        }),
        Command::Bench => {
            let precond = cfg.precond();
            let records = run_benchmark(&BenchConfig {
                n0: cfg.mesh.n0,
                levels: cfg.mesh.levels,
                first_level: cfg.mesh.first_level,
                cases: cfg
                    .bench_params()
                    .into_iter()
                    .map(|params| BenchCase {
                        params,
                        tol: cfg.linear.tol,
                        precond,
                    })
                    .collect(),
            })?;
            Ok(Outcome::Bench { records })
        }
        Command::Spectral => Ok(Outcome::Spectral {
            rows: run_order_study(&OrderStudyConfig {
                params,
                ns: cfg.spectral.ns.clone(),
                control: cfg.spectral.control,
                lanczos_steps: cfg.spectral.lanczos_steps,
                seed: cfg.seed,
            })?,
        }),
        Command::Mms => {
            let flow = if cfg.mms.convective {
                ManufacturedFlow::navier_stokes(cfg.mms.nu)
            } else {
                ManufacturedFlow::stokes(cfg.mms.nu)
            };
            Ok(Outcome::Mms {
                rows: run_mms(&MmsConfig {
                    flow,
                    ns: cfg.mms.ns.clone(),
                })?,
            })
        }
        Command::Export => export(cfg),
    }
}

fn solve(
    cfg: &RunConfig,
) -> Result<
    (
        Discretization,
        Vec<RunRecord>,
        nsk_core::ControlField,
        Vec<nsk_core::TargetData>,
    ),
    CliError,
> {
    let params = cfg.params.to_params()?;
    let disc = Discretization::new(cfg.mesh.n0, cfg.mesh.levels)?;
    let targets = benchmark_targets(&disc, &params)?;
    let (u, reports) = staged_solve(
        &disc,
        &params,
        &targets,
        &cfg.linear_config(),
        cfg.mesh.first_level,
    )?;
    let runs = reports
        .into_iter()
        .map(|report| RunRecord { params, report })
        .collect();
    Ok((disc, runs, u, targets))
}

/// Solves, then writes `target.vtk` and `solution.vtk` on the finest mesh.
fn export(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let dir = cfg
        .output
        .dir
        .clone()
        .ok_or_else(|| CliError::Config("export needs an output directory (--out)".into()))?;
    let (disc, runs, u, targets) = solve(cfg)?;
    let last = disc.level_count() - 1;
    let flow = disc.flow(last);
    let dofs = flow.dofs();
    let mut files = Vec::new();
    let target = &targets[last];
    let path = dir.join("target.vtk");
    vtk::write(
        &path,
        &vtk::collect(dofs, &target.y_d, &target.p_d, &target_control_field(dofs))?,
    )?;
    files.push(path);
    // a control from an unfinished continuation lives on a coarser level
    if u.n() == dofs.n() {
        let state = flow.solve_state(cfg.params.nu, &u, None)?;
        let path = dir.join("solution.vtk");
        vtk::write(&path, &vtk::collect(dofs, &state.y, &state.p, &u)?)?;
        files.push(path);
    }
    Ok(Outcome::Export { runs, files })
}

/// Writes the CSV and JSON files requested by `cfg`.
pub fn write_outputs(outcome: &Outcome, cfg: &RunConfig) -> Result<(), CliError> {
    if let Some(path) = &cfg.output.csv {
        match outcome {
            Outcome::Spectral { rows } => output::write_text(path, &spectral_csv(rows))?,
            Outcome::Mms { rows } => output::write_text(path, &mms_csv(rows))?,
            _ => output::write_csv(path, &outcome.runs())?,
        }
    }
    if let Some(path) = &cfg.output.json {
        output::write_json(path, outcome)?;
    }
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.16e}"))
}

fn spectral_csv(rows: &[OrderRow]) -> String {
    let mut s = String::from(
        "n,h,difference_norm,power_converged,spectral_distance,lambda_min,lambda_max,difference_ratio,distance_ratio,positive_definite\n",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{},{:.16e},{:.16e},{},{},{},{},{},{},{}",
            r.n,
            r.h,
            r.difference_norm,
            r.power_converged,
            opt(r.spectral_distance),
            opt(r.lambda_min),
            opt(r.lambda_max),
            opt(r.difference_ratio),
            opt(r.distance_ratio),
            r.positive_definite
        );
    }
    s
}

fn mms_csv(rows: &[MmsRow]) -> String {
    let mut s = String::from(
        "n,h,velocity_l2,velocity_h1,pressure_l2,velocity_l2_order,velocity_h1_order,pressure_l2_order\n",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{},{},{}",
            r.n,
            r.h,
            r.velocity_l2,
            r.velocity_h1,
            r.pressure_l2,
            opt(r.velocity_l2_order),
            opt(r.velocity_h1_order),
            opt(r.pressure_l2_order)
        );
    }
    s
}

/// Runs a command, writes its files and turns a nonconvergent solve into
/// [`CliError::Diverged`] after everything has been written.
pub fn execute(command: Command, cfg: &RunConfig) -> Result<Outcome, CliError> {
    let outcome = run(command, cfg)?;
    write_outputs(&outcome, cfg)?;
    print!("{}", outcome.summary());
    match outcome.failure() {
        Some(msg) => Err(CliError::Diverged(msg)),
        None => Ok(outcome),
    }
}
