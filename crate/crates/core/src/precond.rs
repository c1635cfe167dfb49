//! Two-grid and W-cycle multigrid preconditioners for the reduced Hessian.
//!
//! On a fine level with coarse neighbour,
//! `T = H_c(π u) π + β (I - π)` and `T⁻¹ = H_c(π u)⁻¹ π + β⁻¹ (I - π)`,
//! where `π` is the L2 projection onto the coarse control space. In the W-cycle
//! the exact coarse inverse is replaced by a few iterations on the coarse
//! Hessian preconditioned recursively, down to an exact base-level solve.

use std::sync::Arc;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{Discretization, StateSolution};
use crate::grid::{TransferOps, VectorField};
use crate::krylov::{self, PowerEstimate};
use crate::reduced::{make_context_from, HessianContext};

/// Multilevel structure of the preconditioner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Cycle {
    #[default]
    TwoGrid,
    WCycle,
}

/// Iteration replacing the coarse inverse inside the W-cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InnerIteration {
    /// Stationary iteration `x ← x + T⁻¹(b - H x)` from zero; a fixed symmetric operator.
    #[default]
    Richardson,
    /// Conjugate gradients preconditioned by `T⁻¹`; nonlinear in the right-hand side.
    Pcg,
}

/// How the base-level Hessian system is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BaseSolver {
    /// Dense for small bases, sparse optimality system otherwise.
    #[default]
    Auto,
    /// Dense Hessian assembled column by column, Cholesky factorized.
    Dense,
    /// Sparse LU of the coupled control/state/adjoint optimality system.
    Kkt,
}

/// Largest base control dimension assembled densely under [`BaseSolver::Auto`].
pub const DENSE_BASE_LIMIT: usize = 2500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecondConfig {
    /// Cells per side of the base level.
    pub base_n: usize,
    pub cycle: Cycle,
    /// Coarse iterations per W-cycle visit.
    pub inner_steps: usize,
    pub inner: InnerIteration,
    pub base_solver: BaseSolver,
}

impl PrecondConfig {
    pub fn two_grid(base_n: usize) -> Self {
        Self {
            base_n,
            cycle: Cycle::TwoGrid,
            inner_steps: 2,
            inner: InnerIteration::Richardson,
            base_solver: BaseSolver::Auto,
        }
    }

    pub fn w_cycle(base_n: usize) -> Self {
        Self {
            cycle: Cycle::WCycle,
            ..Self::two_grid(base_n)
        }
    }
}

enum BaseFactor {
    Cholesky(faer::linalg::solvers::Llt<f64>),
    /// Fallback for an indefinite dense Hessian.
    Lu(faer::linalg::solvers::PartialPivLu<f64>),
    Kkt {
        lu: Box<Lu<usize, f64>>,
        size: usize,
    },
}

/// Exact solver for `H x = b` on the base level.
struct BaseSolve {
    factor: BaseFactor,
    positive_definite: bool,
    /// Largest relative asymmetry of the dense Hessian, if assembled.
    asymmetry: Option<f64>,
}

impl BaseSolve {
    fn dense(ctx: &HessianContext) -> Result<Self> {
        let nv = ctx.flow().dofs().q2_vector_count();
        let m = ctx.mass();
        // G = M H, symmetric
        let mut g = Mat::<f64>::zeros(nv, nv);
        let chunk = 256;
        let mut col = vec![0.0; nv];
        for start in (0..nv).step_by(chunk) {
            let width = chunk.min(nv - start);
            let e = Mat::from_fn(nv, width, |i, c| if i == start + c { 1.0 } else { 0.0 });
            let h = ctx.hessian_apply_many(&e);
            for c in 0..width {
                for i in 0..nv {
                    col[i] = h[(i, c)];
                }
                let mh = m.apply(&col);
                for i in 0..nv {
                    g[(i, start + c)] = mh[i];
                }
            }
        }
        let mut worst: f64 = 0.0;
        let mut largest: f64 = 0.0;
        for j in 0..nv {
            for i in 0..j {
                worst = worst.max((g[(i, j)] - g[(j, i)]).abs());
                let avg = 0.5 * (g[(i, j)] + g[(j, i)]);
                g[(i, j)] = avg;
                g[(j, i)] = avg;
            }
            largest = largest.max(g[(j, j)].abs());
        }
        let asymmetry = worst / largest.max(f64::MIN_POSITIVE);
        match g.llt(Side::Lower) {
            Ok(llt) => Ok(Self {
                factor: BaseFactor::Cholesky(llt),
                positive_definite: true,
                asymmetry: Some(asymmetry),
            }),
            Err(_) => {
                log::warn!("base Hessian at n = {} is not positive definite", ctx.n());
                Ok(Self {
                    factor: BaseFactor::Lu(g.partial_piv_lu()),
                    positive_definite: false,
                    asymmetry: Some(asymmetry),
                })
            }
        }
    }

    /// Sparse LU of the state/adjoint optimality system with the control eliminated.
    ///
    /// The coupled system for `H x = b` reads `β x + P λ = b`, `K s = E x`,
    /// `Kᵀ λ = K_f s`, where `K` is the constrained linearized operator,
    /// `E x = [M x on interior rows; 0]`, `P` extends interior values by zero and
    /// `K_f` the second-order adjoint data. Substituting `x` gives
    ///
    /// ```text
    /// [  K    β⁻¹ E P ] [s]   [β⁻¹ E b]
    /// [ -K_f  Kᵀ      ] [λ] = [   0   ]
    /// ```
    ///
    /// plus one scalar unknown carrying the pressure mean when pressure is tracked.
    fn kkt(ctx: &HessianContext) -> Result<Self> {
        let flow = ctx.flow();
        let params = ctx.params();
        let nv = flow.dofs().q2_vector_count();
        let np = flow.dofs().q1_count();
        let ns = nv + np;
        let (ss, sl) = (0, ns);
        let mixed = params.gamma_p > 0.0;
        let size = 2 * ns + usize::from(mixed);
        let sigma = 2 * ns;
        let inv_beta = 1.0 / params.beta;

        let (jac, _) = flow.jacobian(params.nu, &ctx.state().y)?;
        let saddle = flow.saddle_entries(&jac);
        let m = ctx.mass();
        let mut t: Vec<Triplet<usize, usize, f64>> =
            Vec::with_capacity(2 * saddle.len() + 2 * m.nnz());
        for e in &saddle {
            t.push(Triplet::new(ss + e.row, ss + e.col, e.val));
            t.push(Triplet::new(sl + e.col, sl + e.row, e.val));
        }
        for (a, b, v) in m.triplets() {
            if flow.is_interior(a) && flow.is_interior(b) {
                t.push(Triplet::new(ss + a, sl + b, inv_beta * v));
            }
        }
        for (a, b, v) in ctx.second_order_data().triplets() {
            if flow.is_interior(a) {
                t.push(Triplet::new(sl + a, ss + b, -v));
            }
        }
        if mixed {
            let mean = &flow.blocks().mean;
            for (k, l, v) in flow.blocks().mass_q1.triplets() {
                if k != 0 {
                    t.push(Triplet::new(sl + nv + k, ss + nv + l, -params.gamma_p * v));
                }
            }
            for (k, &mk) in mean.iter().enumerate() {
                if k != 0 {
                    t.push(Triplet::new(sl + nv + k, sigma, params.gamma_p * mk));
                }
                t.push(Triplet::new(sigma, ss + nv + k, mk));
            }
            t.push(Triplet::new(sigma, sigma, -mean.iter().sum::<f64>()));
        }
        let mat = SparseColMat::try_new_from_triplets(size, size, &t)
            .map_err(|e| Error::SingularMatrix(format!("optimality system assembly: {e:?}")))?;
        let lu = mat
            .sp_lu()
            .map_err(|e| Error::SingularMatrix(format!("optimality system LU: {e:?}")))?;
        Ok(Self {
            factor: BaseFactor::Kkt {
                lu: Box::new(lu),
                size,
            },
            positive_definite: true,
            asymmetry: None,
        })
    }

    /// Solves `H x = b` for a Riesz representative `b`.
    fn solve(&self, ctx: &HessianContext, b: &[f64]) -> Vec<f64> {
        let mb = ctx.mass().apply(b);
        let n = mb.len();
        match &self.factor {
            BaseFactor::Cholesky(f) => {
                let x = f.solve(Mat::from_fn(n, 1, |i, _| mb[i]));
                (0..n).map(|i| x[(i, 0)]).collect()
            }
            BaseFactor::Lu(f) => {
                let x = f.solve(Mat::from_fn(n, 1, |i, _| mb[i]));
                (0..n).map(|i| x[(i, 0)]).collect()
            }
            BaseFactor::Kkt { lu, size } => {
                let flow = ctx.flow();
                let inv_beta = 1.0 / ctx.params().beta;
                let mut rhs = Mat::zeros(*size, 1);
                for i in (0..n).filter(|&i| flow.is_interior(i)) {
                    rhs[(i, 0)] = inv_beta * mb[i];
                }
                lu.solve_in_place(rhs.as_mut());
                let lambda = n + flow.dofs().q1_count();
                (0..n)
                    .map(|i| {
                        let l = if flow.is_interior(i) {
                            rhs[(lambda + i, 0)]
                        } else {
                            0.0
                        };
                        inv_beta * (b[i] - l)
                    })
                    .collect()
            }
        }
    }
}

/// Coarse Hessian contexts at projected controls plus the factorized base level.
pub struct PreconditionerHierarchy {
    config: PrecondConfig,
    beta: f64,
    /// Contexts from the base level (index 0) to the fine level (last).
    levels: Vec<Arc<HessianContext>>,
    /// `transfers[i]` connects `levels[i]` and `levels[i + 1]`.
    transfers: Vec<TransferOps>,
    base: BaseSolve,
}

impl std::fmt::Debug for PreconditionerHierarchy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PreconditionerHierarchy")
            .field("config", &self.config)
            .field(
                "levels",
                &self.levels.iter().map(|c| c.n()).collect::<Vec<_>>(),
            )
            .field("positive_definite", &self.base.positive_definite)
            .finish()
    }
}

/// Builds coarse contexts at `u_k = π u_{k+1}` (targets projected alongside) down to
/// the base level and factorizes the base Hessian.
pub fn build_preconditioner(
    disc: &Discretization,
    ctx_fine: &Arc<HessianContext>,
    config: &PrecondConfig,
) -> Result<PreconditionerHierarchy> {
    let fine = disc.level_of(ctx_fine.n())?;
    let base = disc.level_of(config.base_n)?;
    if base > fine {
        return Err(Error::InvalidParams(format!(
            "base n = {} is finer than the fine level n = {}",
            config.base_n,
            ctx_fine.n()
        )));
    }
    if config.cycle == Cycle::TwoGrid && fine - base > 1 {
        return Err(Error::InvalidParams(
            "the two-grid preconditioner needs base = fine / 2".into(),
        ));
    }
    if config.cycle == Cycle::WCycle && config.inner_steps == 0 {
        return Err(Error::InvalidParams(
            "the W-cycle needs at least one inner step".into(),
        ));
    }
    let params = *ctx_fine.params();
    let mut levels = vec![ctx_fine.clone()];
    let mut transfers = Vec::new();
    let mut u = ctx_fine.control().clone();
    let mut targets = ctx_fine.targets().clone();
    for l in (base + 1..=fine).rev() {
        let tr = disc.transfer(l);
        u = tr.project(&u)?;
        targets = targets.project(tr)?;
        // the projected finer state is a close initial guess for the coarse state
        let finer = levels.last().expect("fine level present").state();
        let guess = StateSolution {
            y: tr.project(&finer.y)?,
            p: tr.project_pressure(&finer.p)?,
            newton_iters: 0,
            residual: f64::NAN,
        };
        let ctx = make_context_from(disc.flow(l - 1), &params, &u, &targets, Some(&guess))?;
        levels.push(Arc::new(ctx));
        transfers.push(tr.clone());
    }
    levels.reverse();
    transfers.reverse();

    let nbase = levels[0].flow().dofs().q2_vector_count();
    let base_solve = match config.base_solver {
        BaseSolver::Dense => BaseSolve::dense(&levels[0])?,
        BaseSolver::Kkt => BaseSolve::kkt(&levels[0])?,
        BaseSolver::Auto if nbase <= DENSE_BASE_LIMIT => BaseSolve::dense(&levels[0])?,
        BaseSolver::Auto => BaseSolve::kkt(&levels[0])?,
    };
    Ok(PreconditionerHierarchy {
        config: *config,
        beta: params.beta,
        levels,
        transfers,
        base: base_solve,
    })
}

impl PreconditionerHierarchy {
    pub fn config(&self) -> &PrecondConfig {
        &self.config
    }

    /// False when the base Hessian failed to factorize as positive definite.
    pub fn is_positive_definite(&self) -> bool {
        self.base.positive_definite
    }

    /// Relative asymmetry of the dense base Hessian before symmetrization.
    pub fn base_asymmetry(&self) -> Option<f64> {
        self.base.asymmetry
    }

    pub fn fine_context(&self) -> &Arc<HessianContext> {
        self.levels.last().expect("hierarchy has a fine level")
    }

    /// Hessian context on level `l`, the base being level 0.
    pub fn level_context(&self, l: usize) -> Option<&Arc<HessianContext>> {
        self.levels.get(l)
    }

    /// Cells per side on each level, base first.
    pub fn level_sizes(&self) -> Vec<usize> {
        self.levels.iter().map(|c| c.n()).collect()
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        let n = self.fine_context().flow().dofs().q2_vector_count();
        if v.len() != n {
            return Err(Error::LevelMismatch {
                expected: self.fine_context().n(),
                found: ((v.len() as f64 / 2.0).sqrt() as usize).saturating_sub(1) / 2,
            });
        }
        Ok(())
    }

    /// Applies `T⁻¹` on the fine level.
    pub fn apply_inverse(&self, v: &VectorField) -> Result<VectorField> {
        let out = self.apply_inverse_values(v.values())?;
        VectorField::from_values(v.n(), out)
    }

    pub fn apply_inverse_values(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v)?;
        let top = self.levels.len() - 1;
        if top == 0 {
            return Ok(self.base.solve(&self.levels[0], v));
        }
        self.tinv(top, v)
    }

    /// `T_k⁻¹ v` on level index `k ≥ 1`.
    fn tinv(&self, k: usize, v: &[f64]) -> Result<Vec<f64>> {
        let tr = &self.transfers[k - 1];
        let fine_n = self.levels[k].n();
        let vf = VectorField::from_values(fine_n, v.to_vec())?;
        let pv = tr.project(&vf)?;
        let coarse = self.coarse_inverse(k - 1, pv.values())?;
        let embedded = tr.prolong(&VectorField::from_values(pv.n(), coarse)?)?;
        let smooth = tr.prolong(&pv)?;
        let inv_beta = 1.0 / self.beta;
        Ok(v.iter()
            .zip(smooth.values())
            .zip(embedded.values())
            .map(|((vi, si), ei)| ei + inv_beta * (vi - si))
            .collect())
    }

    /// Exact or approximate `H_j⁻¹ b` on level index `j`.
    fn coarse_inverse(&self, j: usize, b: &[f64]) -> Result<Vec<f64>> {
        if j == 0 {
            return Ok(self.base.solve(&self.levels[0], b));
        }
        let ctx = &self.levels[j];
        let steps = self.config.inner_steps;
        match self.config.inner {
            InnerIteration::Richardson => {
                let mut x = self.tinv(j, b)?;
                for _ in 1..steps {
                    let hx = ctx.hessian_apply_values(&x)?;
                    let r: Vec<f64> = b.iter().zip(&hx).map(|(a, c)| a - c).collect();
                    let dx = self.tinv(j, &r)?;
                    x.iter_mut().zip(&dx).for_each(|(a, c)| *a += c);
                }
                Ok(x)
            }
            InnerIteration::Pcg => {
                let op = |x: &[f64]| ctx.hessian_apply_values(x);
                let prec = |r: &[f64]| self.tinv(j, r);
                let (x, rep) = krylov::pcg(&op, Some(&prec), ctx.mass(), b, 0.0, steps)?;
                if rep.breakdown {
                    return Err(Error::NotPositiveDefinite(format!(
                        "nonpositive curvature in the coarse iteration at n = {}",
                        ctx.n()
                    )));
                }
                Ok(x)
            }
        }
    }

    /// Applies `T = H_c(π u) π + β(I - π)`; two-grid hierarchies only.
    pub fn apply_forward(&self, v: &VectorField) -> Result<VectorField> {
        let out = self.apply_forward_values(v.values())?;
        VectorField::from_values(v.n(), out)
    }

    pub fn apply_forward_values(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v)?;
        match self.levels.len() {
            1 => self.levels[0].hessian_apply_values(v),
            2 => {
                let tr = &self.transfers[0];
                let vf = VectorField::from_values(self.levels[1].n(), v.to_vec())?;
                let pv = tr.project(&vf)?;
                let hc = self.levels[0].hessian_apply(&pv)?;
                let embedded = tr.prolong(&hc)?;
                let smooth = tr.prolong(&pv)?;
                Ok(v.iter()
                    .zip(smooth.values())
                    .zip(embedded.values())
                    .map(|((vi, si), ei)| ei + self.beta * (vi - si))
                    .collect())
            }
            _ => Err(Error::Unsupported(
                "forward application needs a two-grid hierarchy".into(),
            )),
        }
    }
}

/// Estimates `‖H - T‖` in the L2 operator norm by power iteration.
pub fn operator_difference_norm(
    ctx_fine: &HessianContext,
    pre: &PreconditionerHierarchy,
    seed: u64,
) -> Result<PowerEstimate> {
    let op = |v: &[f64]| -> Result<Vec<f64>> {
        let h = ctx_fine.hessian_apply_values(v)?;
        let t = pre.apply_forward_values(v)?;
        Ok(h.iter().zip(&t).map(|(a, b)| a - b).collect())
    };
    krylov::power_iteration_symmetric(&op, ctx_fine.mass(), 100, 1e-4, seed)
}

/// Spectral distance of `H` and `T` by Lanczos.
pub fn spectral_distance(
    ctx_fine: &HessianContext,
    pre: &PreconditionerHierarchy,
    k: usize,
    seed: u64,
) -> Result<krylov::SpectralEstimate> {
    let h = |v: &[f64]| ctx_fine.hessian_apply_values(v);
    let tinv = |v: &[f64]| pre.apply_inverse_values(v);
    krylov::lanczos_spectral_distance(&h, &tinv, ctx_fine.mass(), k, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::target_control_field;
    use crate::flow::ProblemParams;
    use crate::reduced::make_context;
    use crate::reduced::TargetData;
    use faer::linalg::solvers::DenseSolveCore;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Fine context at n = 2 n0 with benchmark targets.
    fn fine_context(
        disc: &Discretization,
        level: usize,
        params: &ProblemParams,
    ) -> Arc<HessianContext> {
        let flow = disc.flow(level);
        let ut = target_control_field(flow.dofs());
        let s = flow.solve_state(params.nu, &ut, None).unwrap();
        let u = VectorField::interpolate(flow.dofs(), |x, y| [4.0 * x * y, -2.0 * x]);
        Arc::new(make_context(flow, params, &u, &TargetData::from_state(&s)).unwrap())
    }

    fn random(n: usize, rng: &mut ChaCha8Rng) -> VectorField {
        VectorField::from_values(
            n,
            (0..2 * (2 * n + 1) * (2 * n + 1))
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect(),
        )
        .unwrap()
    }

    fn rel_diff(ctx: &HessianContext, a: &[f64], b: &[f64]) -> f64 {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        ctx.mass().bilinear(&d, &d).sqrt() / ctx.mass().bilinear(b, b).sqrt()
    }

    #[test]
    fn forward_inverts_inverse_for_both_base_solvers() {
        let disc = Discretization::new(4, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for gamma_p in [0.0, 1e-3] {
            let params = ProblemParams::new(0.1, 1e-4, 1.0, gamma_p).unwrap();
            let ctx = fine_context(&disc, 1, &params);
            for solver in [BaseSolver::Dense, BaseSolver::Kkt] {
                let cfg = PrecondConfig {
                    base_solver: solver,
                    ..PrecondConfig::two_grid(4)
                };
                let pre = build_preconditioner(&disc, &ctx, &cfg).unwrap();
                assert!(pre.is_positive_definite());
                for _ in 0..3 {
                    let v = random(8, &mut rng);
                    let back = pre.apply_forward(&pre.apply_inverse(&v).unwrap()).unwrap();
                    assert!(rel_diff(&ctx, back.values(), v.values()) <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn base_solvers_agree() {
        let disc = Discretization::new(4, 2).unwrap();
        let params = ProblemParams::new(0.1, 1e-4, 1.0, 1e-3).unwrap();
        let ctx = fine_context(&disc, 1, &params);
        let dense = build_preconditioner(
            &disc,
            &ctx,
            &PrecondConfig {
                base_solver: BaseSolver::Dense,
                ..PrecondConfig::two_grid(8)
            },
        )
        .unwrap();
        let kkt = build_preconditioner(
            &disc,
            &ctx,
            &PrecondConfig {
                base_solver: BaseSolver::Kkt,
                ..PrecondConfig::two_grid(8)
            },
        )
        .unwrap();
        assert!(dense.base_asymmetry().unwrap() <= 1e-9);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = random(8, &mut rng);
        let a = dense.apply_inverse(&v).unwrap();
        let b = kkt.apply_inverse(&v).unwrap();
        assert!(rel_diff(&ctx, a.values(), b.values()) <= 1e-9);
        // base = fine: T = H
        let hv = ctx.hessian_apply(&a).unwrap();
        assert!(rel_diff(&ctx, hv.values(), v.values()) <= 1e-9);
    }

    #[test]
    fn fine_only_oscillations_are_scaled_by_beta() {
        let disc = Discretization::new(4, 2).unwrap();
        let params = ProblemParams::new(0.1, 1e-4, 1.0, 0.0).unwrap();
        let ctx = fine_context(&disc, 1, &params);
        let pre = build_preconditioner(&disc, &ctx, &PrecondConfig::two_grid(4)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = random(8, &mut rng);
        let pv = disc.transfer(1).project_fine(&v).unwrap();
        let w = VectorField::from_values(
            8,
            v.values()
                .iter()
                .zip(pv.values())
                .map(|(a, b)| a - b)
                .collect(),
        )
        .unwrap();
        let inv = pre.apply_inverse(&w).unwrap();
        let fwd = pre.apply_forward(&w).unwrap();
        for i in 0..w.values().len() {
            assert!(
                (inv.values()[i] - w.values()[i] / 1e-4).abs()
                    <= 1e-8 * (1.0 + (w.values()[i] / 1e-4).abs())
            );
            assert!((fwd.values()[i] - 1e-4 * w.values()[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn embedded_coarse_directions_use_the_coarse_hessian() {
        let disc = Discretization::new(4, 2).unwrap();
        let params = ProblemParams::new(0.1, 1e-4, 1.0, 0.0).unwrap();
        let ctx = fine_context(&disc, 1, &params);
        let pre = build_preconditioner(&disc, &ctx, &PrecondConfig::two_grid(4)).unwrap();
        let coarse_ctx = &pre.levels[0];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = random(4, &mut rng);
        let fine = disc.transfer(1).prolong(&c).unwrap();
        let expect = disc
            .transfer(1)
            .prolong(&coarse_ctx.hessian_apply(&c).unwrap())
            .unwrap();
        let got = pre.apply_forward(&fine).unwrap();
        assert!(rel_diff(&ctx, got.values(), expect.values()) <= 1e-12);
        let inv = pre.apply_inverse(&expect).unwrap();
        assert!(rel_diff(&ctx, inv.values(), fine.values()) <= 1e-9);
    }

    #[test]
    fn inverse_is_self_adjoint() {
        let disc = Discretization::new(2, 3).unwrap();
        let params = ProblemParams::new(0.1, 1e-4, 1.0, 1e-3).unwrap();
        let ctx = fine_context(&disc, 2, &params);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for cfg in [PrecondConfig::two_grid(4), PrecondConfig::w_cycle(2)] {
            let pre = build_preconditioner(&disc, &ctx, &cfg).unwrap();
            let m = ctx.mass();
            for _ in 0..3 {
                let v = random(8, &mut rng);
                let g = random(8, &mut rng);
                let a = m.bilinear(pre.apply_inverse(&v).unwrap().values(), g.values());
                let b = m.bilinear(v.values(), pre.apply_inverse(&g).unwrap().values());
                let scale = m.bilinear(v.values(), v.values()).sqrt()
                    * m.bilinear(g.values(), g.values()).sqrt();
                assert!((a - b).abs() <= 1e-9 * scale / 1e-4, "{a} {b}");
            }
        }
    }

    #[test]
    fn large_beta_inverse_is_scaled_identity() {
        let disc = Discretization::new(4, 2).unwrap();
        let params = ProblemParams::new(1.0, 1e3, 1.0, 0.0).unwrap();
        let ctx = fine_context(&disc, 1, &params);
        let pre = build_preconditioner(&disc, &ctx, &PrecondConfig::two_grid(4)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let v = random(8, &mut rng);
        let inv = pre.apply_inverse(&v).unwrap();
        let scaled: Vec<f64> = v.values().iter().map(|x| x / 1e3).collect();
        assert!(rel_diff(&ctx, inv.values(), &scaled) <= 1e-6);
    }

    #[test]
    fn dense_two_grid_oracle() {
        // T and T⁻¹ assembled densely from P, the mass matrices and the coarse Hessian.
        let disc = Discretization::new(4, 2).unwrap();
        let params = ProblemParams::new(0.1, 1e-4, 1.0, 1e-3).unwrap();
        let ctx = fine_context(&disc, 1, &params);
        let pre = build_preconditioner(&disc, &ctx, &PrecondConfig::two_grid(4)).unwrap();
        let tr = disc.transfer(1);
        let p = tr.prolongation().block_diag2().to_dense();
        let mf = ctx.mass().to_dense();
        let mc = pre.levels[0].mass().to_dense();
        let nc = mc.nrows();
        let pi = mc.partial_piv_lu().solve(p.transpose() * &mf);
        let hc = pre.levels[0].hessian_apply_many(&Mat::<f64>::identity(nc, nc));
        let hc_inv = hc.partial_piv_lu().inverse();
        let nf = mf.nrows();
        let id = Mat::<f64>::identity(nf, nf);
        let ppi = &p * &pi;
        let t = &p * &hc * &pi + (&id - &ppi) * 1e-4;
        let t_inv = &p * &hc_inv * &pi + (&id - &ppi) * 1e4;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..3 {
            let v = random(8, &mut rng);
            let vx = Mat::from_fn(nf, 1, |i, _| v.values()[i]);
            let tv = &t * &vx;
            let tiv = &t_inv * &vx;
            let tv: Vec<f64> = (0..nf).map(|i| tv[(i, 0)]).collect();
            let tiv: Vec<f64> = (0..nf).map(|i| tiv[(i, 0)]).collect();
            assert!(rel_diff(&ctx, pre.apply_forward(&v).unwrap().values(), &tv) <= 1e-8);
            assert!(rel_diff(&ctx, pre.apply_inverse(&v).unwrap().values(), &tiv) <= 1e-8);
        }
    }

    #[test]
    fn degenerate_hierarchy_has_zero_difference() {
        let disc = Discretization::new(4, 2).unwrap();
        let params = ProblemParams::new(0.1, 1e-4, 1.0, 0.0).unwrap();
        let ctx = fine_context(&disc, 1, &params);
        let pre = build_preconditioner(&disc, &ctx, &PrecondConfig::two_grid(8)).unwrap();
        let est = operator_difference_norm(&ctx, &pre, 1).unwrap();
        assert!(est.value <= 1e-10);
        let sd = spectral_distance(&ctx, &pre, 20, 1).unwrap();
        assert!(sd.distance <= 1e-8);
    }

    #[test]
    fn two_grid_rejects_distant_base() {
        let disc = Discretization::new(2, 3).unwrap();
        let params = ProblemParams::new(0.1, 1e-4, 1.0, 0.0).unwrap();
        let ctx = fine_context(&disc, 2, &params);
        assert!(build_preconditioner(&disc, &ctx, &PrecondConfig::two_grid(2)).is_err());
        let w = build_preconditioner(&disc, &ctx, &PrecondConfig::w_cycle(2)).unwrap();
        assert_eq!(w.level_sizes(), vec![2, 4, 8]);
        assert!(w.apply_forward(&VectorField::zeros(8)).is_err());
    }

    #[test]
    fn lanczos_matches_dense_generalized_eigenvalues() {
        let disc = Discretization::new(4, 2).unwrap();
        let params = ProblemParams::new(0.1, 1e-2, 1.0, 0.0).unwrap();
        let ctx = fine_context(&disc, 1, &params);
        let pre = build_preconditioner(&disc, &ctx, &PrecondConfig::two_grid(4)).unwrap();
        let nf = ctx.flow().dofs().q2_vector_count();
        let m = ctx.mass().to_dense();
        let h = ctx.hessian_apply_many(&Mat::<f64>::identity(nf, nf));
        let mut t = Mat::<f64>::zeros(nf, nf);
        for j in 0..nf {
            let e: Vec<f64> = (0..nf).map(|i| if i == j { 1.0 } else { 0.0 }).collect();
            let c = pre.apply_forward_values(&e).unwrap();
            for i in 0..nf {
                t[(i, j)] = c[i];
            }
        }
        // eigenvalues of the symmetric pencil (M H, M T) via L⁻¹ (M H) L⁻ᵀ, M T = L Lᵀ
        let sym = |a: Mat<f64>| {
            let mut s = a.clone();
            for i in 0..nf {
                for j in 0..nf {
                    s[(i, j)] = 0.5 * (a[(i, j)] + a[(j, i)]);
                }
            }
            s
        };
        let mh = sym(&m * &h);
        let mt = sym(&m * &t);
        let l = mt.llt(Side::Lower).unwrap().L().to_owned();
        let linv = l.partial_piv_lu().inverse();
        let c = sym(&linv * &mh * linv.transpose());
        let eig = c.self_adjoint_eigenvalues(Side::Lower).unwrap();
        let lo = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let oracle = lo.ln().abs().max(hi.ln().abs());
        let est = spectral_distance(&ctx, &pre, 40, 3).unwrap();
        assert!(
            (est.distance - oracle).abs() <= 1e-4,
            "{} {} {lo} {hi} {:?}",
            est.distance,
            oracle,
            est
        );
    }
}
