//! Preconditioner order studies and manufactured-solution convergence.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::mms::ManufacturedFlow;
use super::{benchmark_targets, continuation_solve, target_control_field, LinearConfig};
use crate::error::{Error, Result};
use crate::flow::{Discretization, ProblemParams};
use crate::precond::{
    build_preconditioner, operator_difference_norm, spectral_distance, PrecondConfig,
};
use crate::reduced::make_context;

/// Control at which the Hessian and its two-grid approximation are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FrozenControl {
    /// Interpolant of the benchmark target control.
    #[default]
    Target,
    /// Minimizer of the discrete problem on each level, computed by CG Newton.
    Minimizer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderStudyConfig {
    pub params: ProblemParams,
    /// Fine meshes, each twice the previous.
    pub ns: Vec<usize>,
    pub control: FrozenControl,
    /// Lanczos steps for the spectral distance; zero skips it.
    pub lanczos_steps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderRow {
    pub n: usize,
    pub h: f64,
    /// Power-iteration estimate of `‖H - T‖`.
    pub difference_norm: f64,
    pub power_converged: bool,
    pub spectral_distance: Option<f64>,
    pub lambda_min: Option<f64>,
    pub lambda_max: Option<f64>,
    /// `difference_norm` relative to the previous row.
    pub difference_ratio: Option<f64>,
    pub distance_ratio: Option<f64>,
    pub positive_definite: bool,
}

/// Two-grid comparison with base `n/2` on each fine mesh `n` of the study.
pub fn run_order_study(config: &OrderStudyConfig) -> Result<Vec<OrderRow>> {
    config.params.validate()?;
    let Some(&first) = config.ns.first() else {
        return Ok(Vec::new());
    };
    if first < 2 || first % 2 != 0 {
        return Err(Error::InvalidMesh(format!(
            "order study needs even fine meshes, got {first}"
        )));
    }
    for w in config.ns.windows(2) {
        if w[1] != 2 * w[0] {
            return Err(Error::InvalidMesh(format!(
                "order study meshes must double: {:?}",
                config.ns
            )));
        }
    }
    let disc = Discretization::new(first / 2, config.ns.len() + 1)?;
    let targets = benchmark_targets(&disc, &config.params)?;
    let mut rows: Vec<OrderRow> = Vec::new();
    for (i, &n) in config.ns.iter().enumerate() {
        let level = i + 1;
        let flow = disc.flow(level);
        let u = match config.control {
            FrozenControl::Target => target_control_field(flow.dofs()),
            FrozenControl::Minimizer => {
                let (u, reps) = continuation_solve(
                    &disc,
                    &config.params,
                    &targets,
                    &LinearConfig::cg(1e-10),
                    level..=level,
                    None,
                )?;
                if !reps.iter().all(|r| r.converged()) {
                    return Err(Error::NoConvergence(format!("minimizer at n = {n}")));
                }
                u
            }
        };
        let ctx = Arc::new(make_context(flow, &config.params, &u, &targets[level])?);
        let pre = build_preconditioner(&disc, &ctx, &PrecondConfig::two_grid(n / 2))?;
        let power = operator_difference_norm(&ctx, &pre, config.seed)?;
        let spectral = if config.lanczos_steps > 0 && pre.is_positive_definite() {
            Some(spectral_distance(
                &ctx,
                &pre,
                config.lanczos_steps,
                config.seed,
            )?)
        } else {
            None
        };
        let prev = rows.last();
        let row = OrderRow {
            n,
            h: 1.0 / n as f64,
            difference_norm: power.value,
            power_converged: power.converged,
            spectral_distance: spectral.map(|s| s.distance),
            lambda_min: spectral.map(|s| s.lambda_min),
            lambda_max: spectral.map(|s| s.lambda_max),
            difference_ratio: prev.map(|p| power.value / p.difference_norm),
            distance_ratio: prev.and_then(|p| Some(spectral?.distance / p.spectral_distance?)),
            positive_definite: pre.is_positive_definite(),
        };
        log::info!("order study n = {n}: {row:?}");
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmsConfig {
    pub flow: ManufacturedFlow,
    pub ns: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmsRow {
    pub n: usize,
    pub h: f64,
    pub velocity_l2: f64,
    pub velocity_h1: f64,
    pub pressure_l2: f64,
    /// Observed orders against the previous row.
    pub velocity_l2_order: Option<f64>,
    pub velocity_h1_order: Option<f64>,
    pub pressure_l2_order: Option<f64>,
}

fn order(prev: f64, cur: f64, ratio: f64) -> Option<f64> {
    (prev > 0.0 && cur > 0.0).then(|| (prev / cur).ln() / ratio.ln())
}

/// Discretization errors of the manufactured solution on each mesh.
pub fn run_mms(config: &MmsConfig) -> Result<Vec<MmsRow>> {
    let mut rows: Vec<MmsRow> = Vec::new();
    for &n in &config.ns {
        let e = config.flow.solve_errors(n)?;
        let (vo, ho, po) = match rows.last() {
            Some(p) => {
                let r = n as f64 / p.n as f64;
                (
                    order(p.velocity_l2, e.velocity_l2, r),
                    order(p.velocity_h1, e.velocity_h1, r),
                    order(p.pressure_l2, e.pressure_l2, r),
                )
            }
            None => (None, None, None),
        };
        rows.push(MmsRow {
            n,
            h: 1.0 / n as f64,
            velocity_l2: e.velocity_l2,
            velocity_h1: e.velocity_h1,
            pressure_l2: e.pressure_l2,
            velocity_l2_order: vo,
            velocity_h1_order: ho,
            pressure_l2_order: po,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mms_orders_on_coarse_meshes() {
        let rows = run_mms(&MmsConfig {
            flow: ManufacturedFlow::navier_stokes(1.0),
            ns: vec![4, 8, 16],
        })
        .unwrap();
        let v = rows[2].velocity_l2_order.unwrap();
        let h1 = rows[2].velocity_h1_order.unwrap();
        assert!((2.6..=3.4).contains(&v), "{v}");
        assert!((1.7..=2.4).contains(&h1), "{h1}");
        assert!(rows[0].velocity_l2_order.is_none());
    }

    #[test]
    fn zero_manufactured_solution_has_zero_errors() {
        let rows = run_mms(&MmsConfig {
            flow: ManufacturedFlow::zero(1.0),
            ns: vec![4, 8],
        })
        .unwrap();
        for r in &rows {
            assert!(r.velocity_l2 <= 1e-14 && r.pressure_l2 <= 1e-14);
            assert!(r.velocity_l2_order.is_none());
        }
    }

    #[test]
    fn order_study_rejects_non_doubling_meshes() {
        let cfg = OrderStudyConfig {
            params: ProblemParams::new(0.1, 1e-4, 1.0, 0.0).unwrap(),
            ns: vec![4, 12],
            control: FrozenControl::Target,
            lanczos_steps: 0,
            seed: 1,
        };
        assert!(run_order_study(&cfg).is_err());
        assert!(run_order_study(&OrderStudyConfig { ns: vec![], ..cfg })
            .unwrap()
            .is_empty());
    }

    #[test]
    fn order_study_differences_shrink() {
        let cfg = OrderStudyConfig {
            params: ProblemParams::new(0.1, 1e-4, 1.0, 0.0).unwrap(),
            ns: vec![4, 8],
            control: FrozenControl::Target,
            lanczos_steps: 10,
            seed: 1,
        };
        let rows = run_order_study(&cfg).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[1].difference_ratio.unwrap() < 0.6);
        assert!(rows[1].spectral_distance.unwrap() < rows[0].spectral_distance.unwrap());
    }
}
