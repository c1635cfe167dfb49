//! Outer Newton iteration, grid continuation and experiment harnesses.

pub mod mms;
pub mod study;

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{check_level, Error, Result};
use crate::flow::{Discretization, ProblemParams, StateSolution};
use crate::grid::{ControlField, DofMap, VectorField};
use crate::krylov::{self, KrylovReport};
use crate::precond::{build_preconditioner, Cycle, PrecondConfig};
use crate::reduced::{make_context_from, HessianContext, TargetData};

/// Stopping tolerance on `‖∇Ĵ‖_∞`.
pub const GRADIENT_TOL: f64 = 1e-10;
/// Cap on outer Newton iterations.
pub const MAX_NEWTON: usize = 10;

fn sign(t: f64) -> f64 {
    if t > 0.0 {
        1.0
    } else if t < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Benchmark control `u(x, y) = [10³ (sign(y - 0.9) + 1)(y - 0.9)², 0]`.
pub fn target_control(_x: f64, y: f64) -> [f64; 2] {
    [1e3 * (sign(y - 0.9) + 1.0) * (y - 0.9).powi(2), 0.0]
}

/// Q2 nodal interpolant of [`target_control`].
pub fn target_control_field(dofs: &DofMap) -> ControlField {
    VectorField::interpolate(dofs, target_control)
}

/// Solves the state equation at `u_target` and returns the discrete state as data.
pub fn generate_target_data(
    disc: &Discretization,
    level: usize,
    params: &ProblemParams,
    u_target: &ControlField,
) -> Result<TargetData> {
    params.validate()?;
    let flow = disc.flow(level);
    check_level(flow.dofs().n(), u_target.n())?;
    let state = flow.solve_state(params.nu, u_target, None)?;
    Ok(TargetData::from_state(&state))
}

/// Benchmark targets on every level of `disc`, each generated from the local
/// interpolant of [`target_control`].
pub fn benchmark_targets(disc: &Discretization, params: &ProblemParams) -> Result<Vec<TargetData>> {
    (0..disc.level_count())
        .map(|l| generate_target_data(disc, l, params, &target_control_field(disc.flow(l).dofs())))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LinearMethod {
    /// Unpreconditioned conjugate gradients.
    #[default]
    Cg,
    /// Conjugate gradients preconditioned by the multigrid hierarchy.
    Mgcg,
}

impl LinearMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Cg => "cg",
            Self::Mgcg => "mgcg",
        }
    }
}

/// Linear solver settings for each Newton step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearConfig {
    pub method: LinearMethod,
    /// Relative residual tolerance.
    pub tol: f64,
    pub maxit: usize,
    pub precond: PrecondConfig,
}

impl LinearConfig {
    pub fn cg(tol: f64) -> Self {
        Self {
            method: LinearMethod::Cg,
            tol,
            maxit: 1000,
            precond: PrecondConfig::two_grid(0),
        }
    }

    pub fn mgcg(tol: f64, precond: PrecondConfig) -> Self {
        Self {
            method: LinearMethod::Mgcg,
            precond,
            ..Self::cg(tol)
        }
    }

    /// Base level label, zero for plain CG.
    pub fn base_n(&self) -> usize {
        match self.method {
            LinearMethod::Cg => 0,
            LinearMethod::Mgcg => self.precond.base_n,
        }
    }
}

/// One outer iteration. The last step of a converged run carries only the gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewtonStep {
    pub iteration: usize,
    pub grad_inf: f64,
    pub cost: f64,
    pub lin_iters: usize,
    pub lin_residual: f64,
    /// Linear solve wall time, including the preconditioner build.
    pub lin_time_s: f64,
    pub precond_time_s: f64,
    /// Time since the start of the Newton solve at the end of this step.
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    /// Iteration cap reached.
    MaxIter,
    /// Indefinite preconditioner or Hessian detected.
    Nc,
    Failed,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Converged => "converged",
            Self::MaxIter => "maxiter",
            Self::Nc => "nc",
            Self::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewtonReport {
    pub n: usize,
    pub method: LinearMethod,
    pub base_n: usize,
    pub steps: Vec<NewtonStep>,
    pub newton_iters: usize,
    pub lin_iters: usize,
    pub lin_time_s: f64,
    pub total_time_s: f64,
    pub final_grad_inf: f64,
    pub status: RunStatus,
    /// Reason for a failed or nonconvergent run.
    pub message: Option<String>,
}

impl NewtonReport {
    pub fn converged(&self) -> bool {
        self.status == RunStatus::Converged
    }

    pub fn nc(&self) -> bool {
        self.status == RunStatus::Nc
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Solves the reduced Hessian system `H δ = rhs` at `ctx`.
fn linear_solve(
    disc: &Discretization,
    ctx: &Arc<HessianContext>,
    rhs: &[f64],
    cfg: &LinearConfig,
) -> Result<(Vec<f64>, KrylovReport, f64)> {
    let op = |v: &[f64]| ctx.hessian_apply_values(v);
    match cfg.method {
        LinearMethod::Cg => {
            let (x, rep) = krylov::pcg(&op, None, ctx.mass(), rhs, cfg.tol, cfg.maxit)?;
            Ok((x, rep, 0.0))
        }
        LinearMethod::Mgcg => {
            let t0 = Instant::now();
            let pre = build_preconditioner(disc, ctx, &cfg.precond)?;
            let build = t0.elapsed().as_secs_f64();
            if !pre.is_positive_definite() {
                return Err(Error::NotPositiveDefinite(format!(
                    "base Hessian at n = {}",
                    cfg.precond.base_n
                )));
            }
            let prec = |r: &[f64]| pre.apply_inverse_values(r);
            let (x, rep) = krylov::pcg(&op, Some(&prec), ctx.mass(), rhs, cfg.tol, cfg.maxit)?;
            Ok((x, rep, build))
        }
    }
}

/// Newton's method on the reduced functional at `level`, from `u0`.
///
/// Stops at `‖∇Ĵ‖_∞ ≤ GRADIENT_TOL` or after [`MAX_NEWTON`] linear solves. An
/// indefinite preconditioner, Krylov breakdown or a stalled linear solve with the
/// multigrid preconditioner ends the run with status `nc`.
pub fn newton_solve(
    disc: &Discretization,
    level: usize,
    params: &ProblemParams,
    targets: &TargetData,
    cfg: &LinearConfig,
    u0: &ControlField,
) -> Result<(ControlField, NewtonReport)> {
    let flow = disc.flow(level);
    let n = flow.dofs().n();
    check_level(n, u0.n())?;
    check_level(n, targets.n())?;
    let start = Instant::now();
    let mut report = NewtonReport {
        n,
        method: cfg.method,
        base_n: cfg.base_n(),
        steps: Vec::new(),
        newton_iters: 0,
        lin_iters: 0,
        lin_time_s: 0.0,
        total_time_s: 0.0,
        final_grad_inf: f64::NAN,
        status: RunStatus::MaxIter,
        message: None,
    };
    let mut u = u0.clone();
    let mut previous: Option<StateSolution> = None;
    loop {
        let ctx = match make_context_from(flow, params, &u, targets, previous.as_ref()) {
            Ok(c) => Arc::new(c),
            Err(e) => {
                report.status = RunStatus::Failed;
                report.message = Some(e.to_string());
                break;
            }
        };
        let g = ctx.eval_gradient();
        let grad_inf = inf_norm(g.values());
        report.final_grad_inf = grad_inf;
        let mut step = NewtonStep {
            iteration: report.newton_iters,
            grad_inf,
            cost: ctx.eval_cost(),
            lin_iters: 0,
            lin_residual: 0.0,
            lin_time_s: 0.0,
            precond_time_s: 0.0,
            elapsed_s: 0.0,
        };
        log::info!(
            "n = {n} {} newton {}: |g|_inf = {grad_inf:e}",
            cfg.method.as_str(),
            report.newton_iters
        );
        if grad_inf <= GRADIENT_TOL {
            report.status = RunStatus::Converged;
            step.elapsed_s = start.elapsed().as_secs_f64();
            report.steps.push(step);
            break;
        }
        if report.newton_iters >= MAX_NEWTON {
            step.elapsed_s = start.elapsed().as_secs_f64();
            report.steps.push(step);
            break;
        }
        let rhs: Vec<f64> = g.values().iter().map(|v| -v).collect();
        let t0 = Instant::now();
        let solved = linear_solve(disc, &ctx, &rhs, cfg);
        step.lin_time_s = t0.elapsed().as_secs_f64();
        report.lin_time_s += step.lin_time_s;
        let (delta, krep, build) = match solved {
            Ok(s) => s,
            Err(e @ Error::NotPositiveDefinite(_)) => {
                report.status = RunStatus::Nc;
                report.message = Some(e.to_string());
                step.elapsed_s = start.elapsed().as_secs_f64();
                report.steps.push(step);
                break;
            }
            Err(e) => {
                report.status = RunStatus::Failed;
                report.message = Some(e.to_string());
                step.elapsed_s = start.elapsed().as_secs_f64();
                report.steps.push(step);
                break;
            }
        };
        step.lin_iters = krep.iterations;
        step.lin_residual = krep.relative_residual;
        step.precond_time_s = build;
        report.lin_iters += krep.iterations;
        report.newton_iters += 1;
        step.elapsed_s = start.elapsed().as_secs_f64();
        report.steps.push(step);
        if krep.breakdown || (!krep.converged && cfg.method == LinearMethod::Mgcg) {
            report.status = RunStatus::Nc;
            report.message = Some(if krep.breakdown {
                "nonpositive curvature in the preconditioned iteration".into()
            } else {
                format!(
                    "preconditioned iteration stalled at relative residual {:e}",
                    krep.relative_residual
                )
            });
            break;
        }
        u.values_mut()
            .iter_mut()
            .zip(&delta)
            .for_each(|(a, d)| *a += d);
        previous = Some(ctx.state().clone());
    }
    report.total_time_s = start.elapsed().as_secs_f64();
    Ok((u, report))
}

/// Newton solves on `levels` (indices into `disc`), coarse to fine. The first
/// level starts from `initial` (zero if absent) and each finer level from the
/// prolonged solution of the previous one. Stops after the first level that does
/// not converge.
pub fn continuation_solve(
    disc: &Discretization,
    params: &ProblemParams,
    targets: &[TargetData],
    cfg: &LinearConfig,
    levels: std::ops::RangeInclusive<usize>,
    initial: Option<&ControlField>,
) -> Result<(ControlField, Vec<NewtonReport>)> {
    if targets.len() != disc.level_count() {
        return Err(Error::InvalidParams(format!(
            "{} target sets for {} levels",
            targets.len(),
            disc.level_count()
        )));
    }
    if levels.is_empty() || *levels.end() >= disc.level_count() {
        return Err(Error::InvalidParams(format!(
            "level range {levels:?} outside the hierarchy"
        )));
    }
    let first = *levels.start();
    let mut u = match initial {
        Some(u) => {
            check_level(disc.flow(first).dofs().n(), u.n())?;
            u.clone()
        }
        None => VectorField::zeros(disc.flow(first).dofs().n()),
    };
    let mut reports = Vec::new();
    for l in levels {
        if l > first {
            u = disc.transfer(l).prolong(&u)?;
        }
        let (next, rep) = newton_solve(disc, l, params, &targets[l], cfg, &u)?;
        let ok = rep.converged();
        reports.push(rep);
        u = next;
        if !ok {
            break;
        }
    }
    Ok((u, reports))
}

/// Continuation from `first` to the finest level of `disc`. With the multigrid
/// method, levels at or below the preconditioner base are solved by plain CG.
pub fn staged_solve(
    disc: &Discretization,
    params: &ProblemParams,
    targets: &[TargetData],
    cfg: &LinearConfig,
    first: usize,
) -> Result<(ControlField, Vec<NewtonReport>)> {
    let last = disc.level_count() - 1;
    if cfg.method == LinearMethod::Cg {
        return continuation_solve(disc, params, targets, cfg, first..=last, None);
    }
    let base = disc.level_of(cfg.precond.base_n)?;
    if base >= last {
        return Err(Error::InvalidParams(format!(
            "preconditioner base n = {} must be coarser than the finest mesh",
            cfg.precond.base_n
        )));
    }
    if cfg.precond.cycle == Cycle::TwoGrid && last > base + 1 {
        return Err(Error::InvalidParams(format!(
            "the two-grid preconditioner needs base n = {}",
            disc.flow(last).dofs().n() / 2
        )));
    }
    let split = first.max(base + 1);
    let mut reports = Vec::new();
    let mut initial = None;
    if split > first {
        let (u, reps) = continuation_solve(
            disc,
            params,
            targets,
            &LinearConfig {
                method: LinearMethod::Cg,
                ..*cfg
            },
            first..=split - 1,
            None,
        )?;
        let ok = reps.last().is_some_and(NewtonReport::converged);
        reports.extend(reps);
        if !ok {
            return Ok((u, reports));
        }
        initial = Some(disc.transfer(split).prolong(&u)?);
    }
    let (u, reps) = continuation_solve(disc, params, targets, cfg, split..=last, initial.as_ref())?;
    reports.extend(reps);
    Ok((u, reports))
}

/// One parameter tuple of a benchmark sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchCase {
    pub params: ProblemParams,
    pub tol: f64,
    pub precond: PrecondConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    /// Coarsest mesh of the hierarchy.
    pub n0: usize,
    pub levels: usize,
    /// First level (index) at which Newton runs; finer levels are warm started.
    pub first_level: usize,
    pub cases: Vec<BenchCase>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub case: BenchCase,
    pub cg: Vec<NewtonReport>,
    pub mgcg: Vec<NewtonReport>,
    /// `t_cg / t_mg` of linear solve times on the finest level reached by both.
    pub efficiency: Option<f64>,
}

impl BenchRecord {
    pub fn has_nc(&self) -> bool {
        self.cg.iter().chain(&self.mgcg).any(NewtonReport::nc)
    }
}

/// Ratio of CG to MGCG linear solve time on the finest level where both converged.
pub fn efficiency(cg: &[NewtonReport], mgcg: &[NewtonReport]) -> Option<f64> {
    cg.iter()
        .rev()
        .find_map(|c| {
            mgcg.iter()
                .find(|m| m.n == c.n && m.converged() && c.converged())
                .map(|m| (c.lin_time_s, m.lin_time_s))
        })
        .filter(|(_, tm)| *tm > 0.0)
        .map(|(tc, tm)| tc / tm)
}

/// Runs the CG and MGCG arms for every case. Both arms share the CG continuation
/// up to the preconditioner base level and then continue separately with warm
/// starts. A case whose targets cannot be generated is skipped with a warning.
pub fn run_benchmark(config: &BenchConfig) -> Result<Vec<BenchRecord>> {
    if config.cases.is_empty() {
        return Ok(Vec::new());
    }
    let disc = Discretization::new(config.n0, config.levels)?;
    let last = config.levels - 1;
    if config.first_level > last {
        return Err(Error::InvalidParams(format!(
            "first level {} beyond the hierarchy",
            config.first_level
        )));
    }
    let mut out = Vec::new();
    for case in &config.cases {
        let targets = match benchmark_targets(&disc, &case.params) {
            Ok(t) => t,
            Err(e) => {
                log::warn!("skipping case {:?}: {e}", case.params);
                continue;
            }
        };
        out.push(run_case(&disc, case, &targets, config.first_level)?);
    }
    Ok(out)
}

fn run_case(
    disc: &Discretization,
    case: &BenchCase,
    targets: &[TargetData],
    first: usize,
) -> Result<BenchRecord> {
    let last = disc.level_count() - 1;
    let cg_cfg = LinearConfig::cg(case.tol);
    let mg_cfg = LinearConfig::mgcg(case.tol, case.precond);
    let base = disc.level_of(case.precond.base_n)?;
    let split = first.max(base + 1);
    if split > last {
        let (_, cg) = continuation_solve(disc, &case.params, targets, &cg_cfg, first..=last, None)?;
        return Ok(BenchRecord {
            case: *case,
            cg,
            mgcg: Vec::new(),
            efficiency: None,
        });
    }
    let (shared, mut cg) = if split > first {
        let (u, reps) = continuation_solve(
            disc,
            &case.params,
            targets,
            &cg_cfg,
            first..=split - 1,
            None,
        )?;
        if !reps.last().is_some_and(NewtonReport::converged) {
            return Ok(BenchRecord {
                case: *case,
                cg: reps,
                mgcg: Vec::new(),
                efficiency: None,
            });
        }
        (Some(disc.transfer(split).prolong(&u)?), reps)
    } else {
        (None, Vec::new())
    };
    let (_, rest) = continuation_solve(
        disc,
        &case.params,
        targets,
        &cg_cfg,
        split..=last,
        shared.as_ref(),
    )?;
    cg.extend(rest);
    // a two-grid hierarchy only exists directly above the base
    let mg_last = match case.precond.cycle {
        Cycle::TwoGrid => last.min(base + 1),
        Cycle::WCycle => last,
    };
    let (_, mgcg) = continuation_solve(
        disc,
        &case.params,
        targets,
        &mg_cfg,
        split..=mg_last,
        shared.as_ref(),
    )?;
    let efficiency = efficiency(&cg, &mgcg);
    Ok(BenchRecord {
        case: *case,
        cg,
        mgcg,
        efficiency,
    })
}
