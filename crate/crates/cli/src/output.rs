//! Tabular records: CSV and JSON emission, and CSV parsing for re-aggregation.
//!
//! CSV floats are written as `{:.16e}`, 17 significant digits, which round-trips
//! every finite double.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nsk_core::{BenchRecord, LinearMethod, NewtonReport, ProblemParams, RunStatus};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const CSV_HEADER: &str = "nu,beta,gamma_y,gamma_p,method,base,level,newton_iter,lin_iters,grad_inf,lin_time_s,total_time_s,status";

/// One Newton solve on one level for one parameter tuple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub params: ProblemParams,
    pub report: NewtonReport,
}

/// Flattens benchmark records: per case, the CG arm then the MGCG arm.
pub fn bench_runs(records: &[BenchRecord]) -> Vec<RunRecord> {
    records
        .iter()
        .flat_map(|r| {
            r.cg.iter().chain(&r.mgcg).map(|rep| RunRecord {
                params: r.case.params,
                report: rep.clone(),
            })
        })
        .collect()
}

/// One CSV line.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub params: ProblemParams,
    pub method: LinearMethod,
    pub base: usize,
    pub level: usize,
    pub newton_iter: usize,
    pub lin_iters: usize,
    pub grad_inf: f64,
    pub lin_time_s: f64,
    pub total_time_s: f64,
    pub status: RunStatus,
}

/// Rows in record order, one per Newton step. A report without steps still gets
/// one row so that failed solves remain visible.
pub fn csv_rows(records: &[RunRecord]) -> Vec<CsvRow> {
    let mut rows = Vec::new();
    for rec in records {
        let r = &rec.report;
        let row = |newton_iter, lin_iters, grad_inf, lin_time_s, total_time_s| CsvRow {
            params: rec.params,
            method: r.method,
            base: r.base_n,
            level: r.n,
            newton_iter,
            lin_iters,
            grad_inf,
            lin_time_s,
            total_time_s,
            status: r.status,
        };
        if r.steps.is_empty() {
            rows.push(row(0, 0, r.final_grad_inf, 0.0, r.total_time_s));
        }
        for s in &r.steps {
            rows.push(row(
                s.iteration,
                s.lin_iters,
                s.grad_inf,
                s.lin_time_s,
                s.elapsed_s,
            ));
        }
    }
    rows
}

pub fn to_csv(records: &[RunRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in csv_rows(records) {
        let p = &r.params;
        let _ = writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{:.16e},{},{},{},{},{},{:.16e},{:.16e},{:.16e},{}",
            p.nu,
            p.beta,
            p.gamma_y,
            p.gamma_p,
            r.method.as_str(),
            r.base,
            r.level,
            r.newton_iter,
            r.lin_iters,
            r.grad_inf,
            r.lin_time_s,
            r.total_time_s,
            r.status.as_str()
        );
    }
    out
}

fn parse_method(s: &str) -> Option<LinearMethod> {
    [LinearMethod::Cg, LinearMethod::Mgcg]
        .into_iter()
        .find(|m| m.as_str() == s)
}

fn parse_status(s: &str) -> Option<RunStatus> {
    [
        RunStatus::Converged,
        RunStatus::MaxIter,
        RunStatus::Nc,
        RunStatus::Failed,
    ]
    .into_iter()
    .find(|m| m.as_str() == s)
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>, CliError> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(CliError::Config("CSV header does not match".into()));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let bad = |what: &str| CliError::Config(format!("CSV line {}: bad {what}", i + 2));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 13 {
            return Err(bad("field count"));
        }
        let num = |k: usize| {
            f[k].parse::<f64>()
                .map_err(|_| bad(&format!("number {:?}", f[k])))
        };
        let int = |k: usize| {
            f[k].parse::<usize>()
                .map_err(|_| bad(&format!("integer {:?}", f[k])))
        };
        rows.push(CsvRow {
            params: ProblemParams {
                nu: num(0)?,
                beta: num(1)?,
                gamma_y: num(2)?,
                gamma_p: num(3)?,
            },
            method: parse_method(f[4]).ok_or_else(|| bad("method"))?,
            base: int(5)?,
            level: int(6)?,
            newton_iter: int(7)?,
            lin_iters: int(8)?,
            grad_inf: num(9)?,
            lin_time_s: num(10)?,
            total_time_s: num(11)?,
            status: parse_status(f[12]).ok_or_else(|| bad("status"))?,
        });
    }
    Ok(rows)
}

/// `t_cg / t_mg` per parameter tuple, recomputed from CSV rows: linear solve times
/// summed per level, on the finest level where both arms converged.
pub fn efficiencies_from_rows(rows: &[CsvRow]) -> Vec<(ProblemParams, Option<f64>)> {
    type Key = (usize, &'static str, usize);
    let mut order: Vec<ProblemParams> = Vec::new();
    let mut totals: BTreeMap<Key, (f64, bool)> = BTreeMap::new();
    for r in rows {
        let case = match order.iter().position(|p| *p == r.params) {
            Some(i) => i,
            None => {
                order.push(r.params);
                order.len() - 1
            }
        };
        let e = totals
            .entry((case, r.method.as_str(), r.level))
            .or_insert((0.0, r.status == RunStatus::Converged));
        e.0 += r.lin_time_s;
    }
    order
        .iter()
        .enumerate()
        .map(|(case, p)| {
            let best = totals
                .iter()
                .filter(|((c, m, _), (_, ok))| *c == case && *m == LinearMethod::Cg.as_str() && *ok)
                .rev()
                .find_map(|((_, _, level), (tc, _))| {
                    totals
                        .get(&(case, LinearMethod::Mgcg.as_str(), *level))
                        .filter(|(_, ok)| *ok)
                        .map(|(tm, _)| (*tc, *tm))
                })
                .filter(|(_, tm)| *tm > 0.0)
                .map(|(tc, tm)| tc / tm);
            (*p, best)
        })
        .collect()
}

pub fn write_csv(path: &Path, records: &[RunRecord]) -> Result<(), CliError> {
    write_text(path, &to_csv(records))
}

/// JSON with shortest round-trip float formatting.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::io(path, std::io::Error::other(e)))?;
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}
