//! Shared fixtures for the criterion benchmarks.

use std::sync::Arc;

use nsk_core::driver::{benchmark_targets, target_control_field};
use nsk_core::reduced::make_context;
use nsk_core::{Discretization, HessianContext, ProblemParams, Result};

/// Hierarchy `n0, 2 n0` with the Hessian context at the target control on the fine level.
pub fn hessian_fixture(n0: usize) -> Result<(Discretization, Arc<HessianContext>)> {
    let disc = Discretization::new(n0, 2)?;
    let params = ProblemParams::new(0.1, 1e-4, 1.0, 0.0)?;
    let targets = benchmark_targets(&disc, &params)?;
    let flow = disc.flow(1);
    let u = target_control_field(flow.dofs());
    let ctx = make_context(flow, &params, &u, &targets[1])?;
    Ok((disc, Arc::new(ctx)))
}
