//! Reduced-space Newton-Krylov optimization for distributed control of the
//! stationary Navier-Stokes equations on the unit square.

// `!(x > 0.0)` also rejects NaN; component loops index several arrays at once.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod driver;
pub mod error;
pub mod flow;
pub mod forms;
pub mod grid;
pub mod krylov;
pub mod precond;
pub mod reduced;
pub mod sparse;

pub use driver::{
    BenchCase, BenchConfig, BenchRecord, LinearConfig, LinearMethod, NewtonReport, NewtonStep,
    RunStatus,
};
pub use error::{Error, Result};
pub use flow::{Discretization, FlowLevel, ProblemParams, SaddleFactorization, StateSolution};
pub use grid::{
    build_hierarchy, ControlField, DofMap, MeshHierarchy, PressureField, Q2Mass, ScalarField,
    TransferOps, VectorField, VelocityField,
};
pub use krylov::{KrylovReport, PowerEstimate, SpectralEstimate};
pub use precond::{BaseSolver, Cycle, InnerIteration, PrecondConfig, PreconditionerHierarchy};
pub use reduced::{HessianContext, TargetData};
pub use sparse::SparseOperator;

/// Bounds the number of worker threads used by the linear algebra kernels.
pub fn set_threads(threads: usize) {
    let par = if threads <= 1 {
        faer::Par::Seq
    } else {
        faer::Par::rayon(threads)
    };
    faer::set_global_parallelism(par);
}
