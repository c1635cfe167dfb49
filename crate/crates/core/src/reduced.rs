//! Reduced cost, gradient and matrix-free reduced Hessian.
//!
//! Gradients and Hessian actions are L2 Riesz representatives on the full control
//! space; pair them with the Q2 mass matrix to obtain dual vectors.

use std::sync::Arc;

use faer::Mat;

use crate::error::{check_level, Error, Result};
use crate::flow::{FlowLevel, ProblemParams, SaddleFactorization, StateSolution};
use crate::forms;
use crate::grid::{ControlField, PressureField, TransferOps, VectorField, VelocityField};
use crate::sparse::SparseOperator;

/// Discrete target velocity and pressure.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetData {
    pub y_d: VelocityField,
    pub p_d: PressureField,
}

impl TargetData {
    pub fn new(y_d: VelocityField, p_d: PressureField) -> Result<Self> {
        check_level(y_d.n(), p_d.n())?;
        Ok(Self { y_d, p_d })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            y_d: VectorField::zeros(n),
            p_d: PressureField::zeros(n),
        }
    }

    /// Uses a computed state as data.
    pub fn from_state(state: &StateSolution) -> Self {
        Self {
            y_d: state.y.clone(),
            p_d: state.p.clone(),
        }
    }

    pub fn n(&self) -> usize {
        self.y_d.n()
    }

    /// L2 projections of both targets onto the coarse level of `transfer`.
    pub fn project(&self, transfer: &TransferOps) -> Result<Self> {
        Ok(Self {
            y_d: transfer.project(&self.y_d)?,
            p_d: transfer.project_pressure(&self.p_d)?,
        })
    }
}

/// Everything needed to evaluate the reduced functional and apply its Hessian at `u`.
pub struct HessianContext {
    flow: Arc<FlowLevel>,
    params: ProblemParams,
    u: ControlField,
    state: StateSolution,
    zbar: VelocityField,
    fact: SaddleFactorization,
    targets: TargetData,
    /// `γ_y M + N2(z̄) + N2(z̄)ᵀ`, the second-order part of the adjoint data.
    kc: SparseOperator,
}

impl std::fmt::Debug for HessianContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HessianContext")
            .field("n", &self.n())
            .field("params", &self.params)
            .finish_non_exhaustive()
    }
}

/// Solves the state and combined adjoint at `u` and caches the factorization.
pub fn make_context(
    flow: &Arc<FlowLevel>,
    params: &ProblemParams,
    u: &ControlField,
    targets: &TargetData,
) -> Result<HessianContext> {
    make_context_from(flow, params, u, targets, None)
}

/// Like [`make_context`], starting the state Newton iteration from `initial`.
pub fn make_context_from(
    flow: &Arc<FlowLevel>,
    params: &ProblemParams,
    u: &ControlField,
    targets: &TargetData,
    initial: Option<&StateSolution>,
) -> Result<HessianContext> {
    params.validate()?;
    let n = flow.dofs().n();
    check_level(n, u.n())?;
    check_level(n, targets.n())?;
    let state = flow.solve_state(params.nu, u, initial)?;
    let fact = flow.factorize_linearized(params.nu, &state.y)?;
    let blocks = flow.blocks();

    let dy: Vec<f64> = state
        .y
        .values()
        .iter()
        .zip(targets.y_d.values())
        .map(|(a, b)| a - b)
        .collect();
    let dp: Vec<f64> = state
        .p
        .values()
        .iter()
        .zip(targets.p_d.values())
        .map(|(a, b)| a - b)
        .collect();
    let mut f = blocks.mass_q2.apply(&dy);
    f.iter_mut().for_each(|v| *v *= params.gamma_y);
    let mut d = blocks.mass_q1.apply(&dp);
    d.iter_mut().for_each(|v| *v *= params.gamma_p);
    let (zbar, _) = fact.solve_adjoint(&f, &d)?;

    let (_, n2) = forms::assemble_convection(flow.dofs(), &zbar)?;
    let kc = blocks
        .mass_q2
        .linear_combination(params.gamma_y, &n2, 1.0)
        .linear_combination(1.0, &n2.transpose(), 1.0);

    Ok(HessianContext {
        flow: flow.clone(),
        params: *params,
        u: u.clone(),
        state,
        zbar,
        fact,
        targets: targets.clone(),
        kc,
    })
}

impl HessianContext {
    pub fn n(&self) -> usize {
        self.flow.dofs().n()
    }

    pub fn flow(&self) -> &Arc<FlowLevel> {
        &self.flow
    }

    pub fn params(&self) -> &ProblemParams {
        &self.params
    }

    pub fn control(&self) -> &ControlField {
        &self.u
    }

    pub fn state(&self) -> &StateSolution {
        &self.state
    }

    /// Combined adjoint velocity.
    pub fn zbar(&self) -> &VelocityField {
        &self.zbar
    }

    pub fn factorization(&self) -> &SaddleFactorization {
        &self.fact
    }

    pub fn targets(&self) -> &TargetData {
        &self.targets
    }

    /// Control-space mass matrix.
    pub fn mass(&self) -> &SparseOperator {
        &self.flow.blocks().mass_q2
    }

    /// `γ_y/2 ‖y - y_d‖² + γ_p/2 ‖p - p_d‖² + β/2 ‖u‖²`.
    pub fn eval_cost(&self) -> f64 {
        let b = self.flow.blocks();
        let dy: Vec<f64> = self
            .state
            .y
            .values()
            .iter()
            .zip(self.targets.y_d.values())
            .map(|(a, c)| a - c)
            .collect();
        let dp: Vec<f64> = self
            .state
            .p
            .values()
            .iter()
            .zip(self.targets.p_d.values())
            .map(|(a, c)| a - c)
            .collect();
        let u = self.u.values();
        0.5 * self.params.gamma_y * b.mass_q2.bilinear(&dy, &dy)
            + 0.5 * self.params.gamma_p * b.mass_q1.bilinear(&dp, &dp)
            + 0.5 * self.params.beta * b.mass_q2.bilinear(u, u)
    }

    /// `β u + z̄`.
    pub fn eval_gradient(&self) -> ControlField {
        let values = self
            .u
            .values()
            .iter()
            .zip(self.zbar.values())
            .map(|(u, z)| self.params.beta * u + z)
            .collect();
        VectorField::from_values(self.n(), values).expect("gradient length")
    }

    /// Linearized state response `(w, r)` to the control direction `v`.
    pub fn linearized_response(&self, v: &[f64]) -> Result<(VelocityField, PressureField)> {
        let g = self.mass().apply(v);
        self.fact
            .solve_linearized(&g, &vec![0.0; self.flow.dofs().q1_count()])
    }

    /// `H v` for a control direction.
    pub fn hessian_apply(&self, v: &ControlField) -> Result<ControlField> {
        check_level(self.n(), v.n())?;
        let out = self.hessian_apply_values(v.values())?;
        VectorField::from_values(self.n(), out)
    }

    pub fn hessian_apply_values(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.flow.dofs().q2_vector_count() {
            return Err(Error::InvalidParams(
                "control direction has wrong length".into(),
            ));
        }
        let (w, r) = self.linearized_response(v)?;
        let f = self.kc.apply(w.values());
        let mut d = self.flow.blocks().mass_q1.apply(r.values());
        d.iter_mut().for_each(|x| *x *= self.params.gamma_p);
        let (zeta, _) = self.fact.solve_adjoint(&f, &d)?;
        Ok(v.iter()
            .zip(zeta.values())
            .map(|(a, z)| self.params.beta * a + z)
            .collect())
    }

    /// Hessian applied to every column of `v`, using multi-column solves.
    pub fn hessian_apply_many(&self, v: &Mat<f64>) -> Mat<f64> {
        let nv = self.flow.dofs().q2_vector_count();
        let np = self.flow.dofs().q1_count();
        let m = self.mass();
        let mut g = Mat::zeros(nv, v.ncols());
        let mut col = vec![0.0; nv];
        for c in 0..v.ncols() {
            for i in 0..nv {
                col[i] = v[(i, c)];
            }
            let mv = m.apply(&col);
            for i in 0..nv {
                g[(i, c)] = mv[i];
            }
        }
        let (w, r) = self.fact.solve_linearized_many(&g);
        let mut f = Mat::zeros(nv, v.ncols());
        let mut d = Mat::zeros(np, v.ncols());
        let mut rc = vec![0.0; np];
        for c in 0..v.ncols() {
            for i in 0..nv {
                col[i] = w[(i, c)];
            }
            let kw = self.kc.apply(&col);
            for i in 0..nv {
                f[(i, c)] = kw[i];
            }
            for k in 0..np {
                rc[k] = r[(k, c)];
            }
            let mr = self.flow.blocks().mass_q1.apply(&rc);
            for k in 0..np {
                d[(k, c)] = self.params.gamma_p * mr[k];
            }
        }
        let (zeta, _) = self.fact.solve_adjoint_many(&f, &d);
        Mat::from_fn(nv, v.ncols(), |i, c| {
            self.params.beta * v[(i, c)] + zeta[(i, c)]
        })
    }

    /// Reference to the symmetric second-order adjoint data operator.
    pub(crate) fn second_order_data(&self) -> &SparseOperator {
        &self.kc
    }
}
