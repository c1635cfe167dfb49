//! Stationary Navier-Stokes state solves and linearized/adjoint saddle-point
//! solves at a frozen state.
//!
//! Unknowns are ordered `[velocity (all Q2 vector dofs) | pressure (Q1)]`. Boundary
//! velocity rows and columns are replaced by the identity. The pressure constant is
//! fixed by pinning the first pressure node (its continuity equation is redundant for
//! compatible data) and the result is shifted to zero mean afterwards.

use std::sync::{Arc, OnceLock};

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, MatMut};
use serde::{Deserialize, Serialize};

use crate::error::{check_level, Error, Result};
use crate::forms::{self, StokesBlocks};
use crate::grid::{
    build_hierarchy, ControlField, DofMap, MeshHierarchy, PressureField, TransferOps, VectorField,
    VelocityField,
};
use crate::sparse::{inf_norm, SparseOperator};

/// Viscosity, Tikhonov weight and tracking weights of the control problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemParams {
    pub nu: f64,
    pub beta: f64,
    pub gamma_y: f64,
    pub gamma_p: f64,
}

impl ProblemParams {
    pub fn new(nu: f64, beta: f64, gamma_y: f64, gamma_p: f64) -> Result<Self> {
        let p = Self {
            nu,
            beta,
            gamma_y,
            gamma_p,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(m.to_string()));
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return bad("nu must be positive");
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad("beta must be positive");
        }
        if !(self.gamma_y >= 0.0 && self.gamma_p >= 0.0) {
            return bad("gamma_y and gamma_p must be nonnegative");
        }
        if self.gamma_y + self.gamma_p <= 0.0 {
            return bad("gamma_y and gamma_p must not both be zero");
        }
        Ok(())
    }

    pub fn is_mixed(&self) -> bool {
        self.gamma_p > 0.0
    }
}

/// Discrete velocity/pressure pair solving the state equation.
#[derive(Debug, Clone)]
pub struct StateSolution {
    pub y: VelocityField,
    pub p: PressureField,
    pub newton_iters: usize,
    /// Final ∞-norm of the momentum residual on interior test functions.
    pub residual: f64,
}

/// Largest number of Newton steps per viscosity value.
const MAX_NEWTON: usize = 30;
const STATE_TOL: f64 = 1e-12;
/// Smallest continuation step relative to the target viscosity.
const MIN_NU_STEP: f64 = 1e-4;

/// Assembled Stokes blocks on one level together with the saddle-point pattern.
pub struct FlowLevel {
    dofs: DofMap,
    /// Blocks assembled with unit viscosity.
    blocks: StokesBlocks,
    interior: Vec<bool>,
    symbolic: OnceLock<SymbolicLu<usize>>,
}

impl std::fmt::Debug for FlowLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FlowLevel")
            .field("n", &self.dofs.n())
            .finish()
    }
}

impl FlowLevel {
    pub fn new(dofs: DofMap) -> Self {
        let blocks = forms::assemble_stokes_blocks(&dofs, 1.0);
        let interior = (0..dofs.q2_vector_count())
            .map(|i| !dofs.is_boundary_vector_dof(i))
            .collect();
        Self {
            dofs,
            blocks,
            interior,
            symbolic: OnceLock::new(),
        }
    }

    pub fn dofs(&self) -> &DofMap {
        &self.dofs
    }

    pub fn blocks(&self) -> &StokesBlocks {
        &self.blocks
    }

    /// Whether vector dof `i` is an interior (unconstrained) velocity dof.
    pub fn is_interior(&self, i: usize) -> bool {
        self.interior[i]
    }

    /// Size of the saddle-point system.
    pub fn system_size(&self) -> usize {
        self.dofs.q2_vector_count() + self.dofs.q1_count()
    }

    /// Zeroes boundary entries of a vector Q2 array.
    pub fn restrict_interior(&self, v: &mut [f64]) {
        v.iter_mut().zip(&self.interior).for_each(|(x, &i)| {
            if !i {
                *x = 0.0
            }
        });
    }

    /// Jacobian `νA + N1(y) + N2(y)` on all dofs, plus `N2(y)`.
    pub(crate) fn jacobian(
        &self,
        nu: f64,
        y: &VectorField,
    ) -> Result<(SparseOperator, SparseOperator)> {
        let (n1, n2) = forms::assemble_convection(&self.dofs, y)?;
        let j = self
            .blocks
            .viscous
            .linear_combination(nu, &n1, 1.0)
            .linear_combination(1.0, &n2, 1.0);
        Ok((j, n2))
    }

    /// Entries of the constrained saddle-point matrix for the Jacobian `jac`.
    pub(crate) fn saddle_entries(&self, jac: &SparseOperator) -> Vec<Triplet<usize, usize, f64>> {
        let nv = self.dofs.q2_vector_count();
        let pin = nv;
        let mut t = Vec::with_capacity(jac.nnz() + 2 * self.blocks.divergence.nnz() + nv + 1);
        for (i, j, v) in jac.triplets() {
            if self.interior[i] && self.interior[j] {
                t.push(Triplet::new(i, j, v));
            }
        }
        for i in 0..nv {
            if !self.interior[i] {
                t.push(Triplet::new(i, i, 1.0));
            }
        }
        for (k, j, v) in self.blocks.divergence.triplets() {
            if self.interior[j] && nv + k != pin {
                t.push(Triplet::new(nv + k, j, v));
                t.push(Triplet::new(j, nv + k, v));
            }
        }
        t.push(Triplet::new(pin, pin, 1.0));
        t
    }

    fn saddle_matrix(&self, jac: &SparseOperator) -> SparseColMat<usize, f64> {
        let size = self.system_size();
        SparseColMat::try_new_from_triplets(size, size, &self.saddle_entries(jac))
            .expect("saddle matrix assembly")
    }

    /// Sparse LU of the linearized operator at the velocity `y`.
    pub fn factorize_linearized(&self, nu: f64, y: &VelocityField) -> Result<SaddleFactorization> {
        check_level(self.dofs.n(), y.n())?;
        if !(nu > 0.0) {
            return Err(Error::InvalidParams("nu must be positive".into()));
        }
        let (jac, n2) = self.jacobian(nu, y)?;
        self.factorize_jacobian(&jac, n2, y.clone())
    }

    fn factorize_jacobian(
        &self,
        jac: &SparseOperator,
        n2: SparseOperator,
        y: VelocityField,
    ) -> Result<SaddleFactorization> {
        let k = self.saddle_matrix(jac);
        let symbolic = match self.symbolic.get() {
            Some(s) => s.clone(),
            None => {
                let s = SymbolicLu::try_new(k.symbolic())
                    .map_err(|e| Error::SingularMatrix(format!("symbolic factorization: {e:?}")))?;
                self.symbolic.get_or_init(|| s).clone()
            }
        };
        let lu = Lu::try_new_with_symbolic(symbolic, k.as_ref())
            .map_err(|e| Error::SingularMatrix(format!("saddle-point LU: {e:?}")))?;
        Ok(SaddleFactorization {
            n: self.dofs.n(),
            nv: self.dofs.q2_vector_count(),
            np: self.dofs.q1_count(),
            interior: self.interior.clone(),
            mean: self.blocks.mean.clone(),
            lu,
            state: y,
            n2,
        })
    }

    /// Momentum residual `νAy + c̃(y;y,·) + b(·,p) - f` on interior test functions.
    pub fn momentum_residual(
        &self,
        nu: f64,
        y: &VelocityField,
        p: &PressureField,
        load: &[f64],
    ) -> Result<Vec<f64>> {
        let (n1, _) = forms::assemble_convection(&self.dofs, y)?;
        Ok(self.residual_with(nu, &n1, y, p, load))
    }

    fn residual_with(
        &self,
        nu: f64,
        n1: &SparseOperator,
        y: &VelocityField,
        p: &PressureField,
        load: &[f64],
    ) -> Vec<f64> {
        let mut r = self.blocks.viscous.apply(y.values());
        r.iter_mut().for_each(|x| *x *= nu);
        let c = n1.apply(y.values());
        let bp = self.blocks.divergence.apply_transpose(p.values());
        for i in 0..r.len() {
            r[i] += c[i] + bp[i] - load[i];
        }
        self.restrict_interior(&mut r);
        r
    }

    /// Stokes solve `νA y + Bᵀp = f`, `By = 0`.
    pub fn solve_stokes(&self, nu: f64, load: &[f64]) -> Result<(VelocityField, PressureField)> {
        let fact = self.factorize_linearized(nu, &VectorField::zeros(self.dofs.n()))?;
        fact.solve_linearized(load, &vec![0.0; self.dofs.q1_count()])
    }

    /// Solves the state equation with control `u` (load `M u`).
    pub fn solve_state(
        &self,
        nu: f64,
        u: &ControlField,
        initial: Option<&StateSolution>,
    ) -> Result<StateSolution> {
        check_level(self.dofs.n(), u.n())?;
        let load = self.blocks.mass_q2.apply(u.values());
        self.solve_navier_stokes(nu, &load, initial)
    }

    /// Newton's method for the state equation with a given momentum load functional.
    ///
    /// Starts from `initial` when given, otherwise from the Stokes solution. If Newton
    /// stalls, a viscosity continuation path is followed, halving the gap to the target
    /// viscosity until each step converges.
    pub fn solve_navier_stokes(
        &self,
        nu: f64,
        load: &[f64],
        initial: Option<&StateSolution>,
    ) -> Result<StateSolution> {
        if load.len() != self.dofs.q2_vector_count() {
            return Err(Error::InvalidParams(format!(
                "load has length {}, expected {}",
                load.len(),
                self.dofs.q2_vector_count()
            )));
        }
        if let Some(init) = initial {
            check_level(self.dofs.n(), init.y.n())?;
            if let Ok(s) = self.newton(nu, load, init.y.clone(), init.p.clone()) {
                return Ok(s);
            }
        }
        let (y0, p0) = self.solve_stokes(nu, load)?;
        if let Ok(s) = self.newton(nu, load, y0.clone(), p0.clone()) {
            return Ok(s);
        }
        self.continuation(nu, load)
    }

    fn continuation(&self, nu: f64, load: &[f64]) -> Result<StateSolution> {
        // find a viscosity at which Newton from the Stokes solution converges
        let mut anchor = None;
        let mut trial = nu;
        for _ in 0..30 {
            trial *= 2.0;
            let (y0, p0) = self.solve_stokes(trial, load)?;
            if let Ok(s) = self.newton(trial, load, y0, p0) {
                anchor = Some((trial, s));
                break;
            }
        }
        let (mut current, mut state) = anchor.ok_or_else(|| {
            Error::NonlinearDivergence("no viscosity found where Newton converges".into())
        })?;
        let mut total = state.newton_iters;
        let mut next = nu;
        log::debug!("continuation from nu = {current} to nu = {nu}");
        while current > nu {
            match self.newton(next, load, state.y.clone(), state.p.clone()) {
                Ok(s) => {
                    total += s.newton_iters;
                    state = s;
                    current = next;
                    next = nu;
                }
                Err(_) => {
                    next = 0.5 * (current + next);
                    if (current - next) < MIN_NU_STEP * nu {
                        return Err(Error::NonlinearDivergence(format!(
                            "continuation stalled at nu = {current}, target {nu}"
                        )));
                    }
                }
            }
        }
        state.newton_iters = total;
        Ok(state)
    }

    fn newton(
        &self,
        nu: f64,
        load: &[f64],
        mut y: VelocityField,
        mut p: PressureField,
    ) -> Result<StateSolution> {
        let nv = self.dofs.q2_vector_count();
        let mut prev = f64::INFINITY;
        for k in 0..=MAX_NEWTON {
            let (n1, n2) = forms::assemble_convection(&self.dofs, &y)?;
            let r = self.residual_with(nu, &n1, &y, &p, load);
            let res = inf_norm(&r);
            if !res.is_finite() {
                break;
            }
            let stalled = res < 1e3 * STATE_TOL && res > 0.5 * prev;
            if res <= STATE_TOL || stalled {
                return Ok(StateSolution {
                    y,
                    p,
                    newton_iters: k,
                    residual: res,
                });
            }
            if res > prev || k == MAX_NEWTON {
                break;
            }
            prev = res;
            let jac = self
                .blocks
                .viscous
                .linear_combination(nu, &n1, 1.0)
                .linear_combination(1.0, &n2, 1.0);
            let fact = self.factorize_jacobian(&jac, n2, y.clone())?;
            let rhs_m: Vec<f64> = r.iter().map(|v| -v).collect();
            let (dy, dp) = fact.solve_linearized(&rhs_m, &vec![0.0; self.dofs.q1_count()])?;
            for i in 0..nv {
                y.values_mut()[i] += dy.values()[i];
            }
            for (a, b) in p.values_mut().iter_mut().zip(dp.values()) {
                *a += b;
            }
        }
        Err(Error::NonlinearDivergence(format!(
            "Newton stalled at nu = {nu}"
        )))
    }
}

/// Reusable LU factors of the linearized saddle-point operator at a fixed state.
pub struct SaddleFactorization {
    n: usize,
    nv: usize,
    np: usize,
    interior: Vec<bool>,
    mean: Vec<f64>,
    lu: Lu<usize, f64>,
    state: VelocityField,
    n2: SparseOperator,
}

impl std::fmt::Debug for SaddleFactorization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SaddleFactorization")
            .field("n", &self.n)
            .finish()
    }
}

impl SaddleFactorization {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Velocity the factorization was built at.
    pub fn state(&self) -> &VelocityField {
        &self.state
    }

    /// `N2(y)` at the factorization state.
    pub fn n2(&self) -> &SparseOperator {
        &self.n2
    }

    fn pack(&self, g: &[f64], d: &[f64]) -> Result<Vec<f64>> {
        if g.len() != self.nv || d.len() != self.np {
            return Err(Error::InvalidParams(
                "right-hand side has wrong length".into(),
            ));
        }
        let total: f64 = d.iter().sum();
        let scale: f64 = d.iter().map(|v| v.abs()).sum();
        if total.abs() > 1e-10 * scale.max(1e-300) && total.abs() > 1e-14 {
            return Err(Error::IncompatibleData { mean: total });
        }
        let mut rhs = Vec::with_capacity(self.nv + self.np);
        rhs.extend(
            g.iter()
                .zip(&self.interior)
                .map(|(&v, &i)| if i { v } else { 0.0 }),
        );
        rhs.extend_from_slice(d);
        rhs[self.nv] = 0.0;
        Ok(rhs)
    }

    /// Shifts a pressure coefficient array to zero mean.
    fn normalize(&self, p: &mut [f64]) {
        let area: f64 = self.mean.iter().sum();
        let shift = self
            .mean
            .iter()
            .zip(p.iter())
            .map(|(m, v)| m * v)
            .sum::<f64>()
            / area;
        p.iter_mut().for_each(|v| *v -= shift);
    }

    fn unpack(&self, x: &[f64]) -> Result<(VelocityField, PressureField)> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularMatrix(
                "non-finite saddle-point solution".into(),
            ));
        }
        let mut p = x[self.nv..].to_vec();
        self.normalize(&mut p);
        Ok((
            VectorField::from_values(self.n, x[..self.nv].to_vec())?,
            PressureField::from_values(self.n, p)?,
        ))
    }

    /// Solves `J w + Bᵀr = g`, `B w = d`, `∫r = 0`. Returns `(w, r)`.
    pub fn solve_linearized(&self, g: &[f64], d: &[f64]) -> Result<(VelocityField, PressureField)> {
        let mut rhs = self.pack(g, d)?;
        self.lu.solve_in_place(MatMut::from_column_major_slice_mut(
            &mut rhs,
            self.nv + self.np,
            1,
        ));
        self.unpack(&rhs)
    }

    /// Solves the transposed system `Jᵀz + Bᵀρ = f`, `B z = d`, `∫ρ = 0`.
    pub fn solve_adjoint(&self, f: &[f64], d: &[f64]) -> Result<(VelocityField, PressureField)> {
        let mut rhs = self.pack(f, d)?;
        self.lu
            .solve_transpose_in_place(MatMut::from_column_major_slice_mut(
                &mut rhs,
                self.nv + self.np,
                1,
            ));
        self.unpack(&rhs)
    }

    /// Forward solves for several momentum right-hand sides (columns of `g`) with
    /// zero divergence data. Returns `(velocities, pressures)` column-wise.
    pub fn solve_linearized_many(&self, g: &Mat<f64>) -> (Mat<f64>, Mat<f64>) {
        let mut rhs = self.pack_many(g, None);
        self.lu.solve_in_place(rhs.as_mut());
        self.split(rhs)
    }

    /// Adjoint solves for several right-hand sides with divergence data `d`.
    pub fn solve_adjoint_many(&self, f: &Mat<f64>, d: &Mat<f64>) -> (Mat<f64>, Mat<f64>) {
        let mut rhs = self.pack_many(f, Some(d));
        self.lu.solve_transpose_in_place(rhs.as_mut());
        self.split(rhs)
    }

    fn pack_many(&self, g: &Mat<f64>, d: Option<&Mat<f64>>) -> Mat<f64> {
        let mut rhs = Mat::zeros(self.nv + self.np, g.ncols());
        for c in 0..g.ncols() {
            for i in 0..self.nv {
                if self.interior[i] {
                    rhs[(i, c)] = g[(i, c)];
                }
            }
            if let Some(d) = d {
                for k in 1..self.np {
                    rhs[(self.nv + k, c)] = d[(k, c)];
                }
            }
        }
        rhs
    }

    fn split(&self, x: Mat<f64>) -> (Mat<f64>, Mat<f64>) {
        let v = x.subrows(0, self.nv).to_owned();
        let mut p = x.subrows(self.nv, self.np).to_owned();
        let mut col = vec![0.0; self.np];
        for c in 0..p.ncols() {
            for k in 0..self.np {
                col[k] = p[(k, c)];
            }
            self.normalize(&mut col);
            for k in 0..self.np {
                p[(k, c)] = col[k];
            }
        }
        (v, p)
    }
}

/// Nested mesh hierarchy together with the flow data of every level.
#[derive(Debug, Clone)]
pub struct Discretization {
    mesh: MeshHierarchy,
    flows: Vec<Arc<FlowLevel>>,
}

impl Discretization {
    /// Levels `n0 2^ℓ`, `ℓ = 0..levels`.
    pub fn new(n0: usize, levels: usize) -> Result<Self> {
        let mesh = build_hierarchy(n0, levels)?;
        let flows = (0..levels)
            .map(|l| Arc::new(FlowLevel::new(mesh.dofs(l).clone())))
            .collect();
        Ok(Self { mesh, flows })
    }

    pub fn mesh(&self) -> &MeshHierarchy {
        &self.mesh
    }

    pub fn level_count(&self) -> usize {
        self.flows.len()
    }

    pub fn flow(&self, level: usize) -> &Arc<FlowLevel> {
        &self.flows[level]
    }

    /// Transfer between `level - 1` and `level`.
    pub fn transfer(&self, level: usize) -> &TransferOps {
        self.mesh.transfer(level)
    }

    /// Level index with `n` cells per side.
    pub fn level_of(&self, n: usize) -> Result<usize> {
        self.mesh
            .level_of(n)
            .ok_or_else(|| Error::InvalidMesh(format!("no level with n = {n} in the hierarchy")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::mms::ManufacturedFlow;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn random_velocity(flow: &FlowLevel, rng: &mut ChaCha8Rng) -> VectorField {
        let mut v = random(flow.dofs().q2_vector_count(), rng);
        flow.restrict_interior(&mut v);
        VectorField::from_values(flow.dofs().n(), v).unwrap()
    }

    /// Residual of the full linearized system relative to the right-hand side.
    fn linear_residual(
        flow: &FlowLevel,
        nu: f64,
        y: &VectorField,
        w: &VectorField,
        r: &PressureField,
        g: &[f64],
        transpose: bool,
    ) -> f64 {
        let (jac, _) = flow.jacobian(nu, y).unwrap();
        let jac = if transpose { jac.transpose() } else { jac };
        let mut res = jac.apply(w.values());
        let bt = flow.blocks().divergence.apply_transpose(r.values());
        for i in 0..res.len() {
            res[i] += bt[i] - g[i];
        }
        flow.restrict_interior(&mut res);
        let div = flow.blocks().divergence.apply(w.values());
        let mut gi = g.to_vec();
        flow.restrict_interior(&mut gi);
        (inf_norm(&res).max(inf_norm(&div))) / inf_norm(&gi)
    }

    #[test]
    fn params_validation() {
        assert!(ProblemParams::new(0.1, 1e-4, 1.0, 0.0).is_ok());
        assert!(ProblemParams::new(0.1, 1e-4, 0.0, 0.0).is_err());
        assert!(ProblemParams::new(0.1, 0.0, 1.0, 0.0).is_err());
        assert!(ProblemParams::new(-1.0, 1e-4, 1.0, 0.0).is_err());
    }

    #[test]
    fn zero_control_gives_zero_state() {
        let flow = FlowLevel::new(DofMap::new(4));
        let s = flow.solve_state(0.1, &VectorField::zeros(4), None).unwrap();
        assert!(s.y.values().iter().all(|&v| v == 0.0));
        assert!(s.p.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stokes_solve_matches_dense_oracle() {
        let flow = FlowLevel::new(DofMap::new(4));
        let nv = flow.dofs().q2_vector_count();
        let fact = flow
            .factorize_linearized(1.0, &VectorField::zeros(4))
            .unwrap();
        let u = VectorField::interpolate(flow.dofs(), |_, _| [1.0, 0.0]);
        let g = flow.blocks().mass_q2.apply(u.values());
        let (w, r) = fact
            .solve_linearized(&g, &vec![0.0; flow.dofs().q1_count()])
            .unwrap();

        let (jac, _) = flow.jacobian(1.0, &VectorField::zeros(4)).unwrap();
        let dense = flow.saddle_matrix(&jac).to_dense();
        let mut rhs = Mat::zeros(dense.nrows(), 1);
        for i in 0..nv {
            if flow.is_interior(i) {
                rhs[(i, 0)] = g[i];
            }
        }
        let x = dense.partial_piv_lu().solve(&rhs);
        let np = flow.dofs().q1_count();
        let shift: f64 = (0..np)
            .map(|k| flow.blocks().mean[k] * x[(nv + k, 0)])
            .sum();
        let mut err: f64 = 0.0;
        for i in 0..nv {
            err = err.max((x[(i, 0)] - w.values()[i]).abs());
        }
        for k in 0..flow.dofs().q1_count() {
            err = err.max((x[(nv + k, 0)] - shift - r.values()[k]).abs());
        }
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn linearized_and_adjoint_solves_have_small_residual() {
        let flow = FlowLevel::new(DofMap::new(4));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = random_velocity(&flow, &mut rng);
        let fact = flow.factorize_linearized(0.1, &y).unwrap();
        let zero = vec![0.0; flow.dofs().q1_count()];
        for _ in 0..10 {
            let g = random(flow.dofs().q2_vector_count(), &mut rng);
            let (w, r) = fact.solve_linearized(&g, &zero).unwrap();
            assert!(linear_residual(&flow, 0.1, &y, &w, &r, &g, false) < 1e-11);
            assert!(w
                .values()
                .iter()
                .zip(&flow.interior)
                .all(|(v, &i)| i || *v == 0.0));
            let (z, rho) = fact.solve_adjoint(&g, &zero).unwrap();
            assert!(linear_residual(&flow, 0.1, &y, &z, &rho, &g, true) < 1e-11);
            let mean: f64 = flow
                .blocks()
                .mean
                .iter()
                .zip(r.values())
                .map(|(a, b)| a * b)
                .sum();
            assert!(mean.abs() < 1e-12);
        }
    }

    #[test]
    fn zero_rhs_gives_zero_solution() {
        let flow = FlowLevel::new(DofMap::new(3));
        let fact = flow
            .factorize_linearized(1.0, &VectorField::zeros(3))
            .unwrap();
        let (w, r) = fact
            .solve_linearized(
                &vec![0.0; flow.dofs().q2_vector_count()],
                &vec![0.0; flow.dofs().q1_count()],
            )
            .unwrap();
        assert!(w.values().iter().chain(r.values()).all(|&v| v == 0.0));
        let (z, rho) = fact
            .solve_adjoint(
                &vec![0.0; flow.dofs().q2_vector_count()],
                &vec![0.0; flow.dofs().q1_count()],
            )
            .unwrap();
        assert!(z.values().iter().chain(rho.values()).all(|&v| v == 0.0));
    }

    #[test]
    fn repeated_solves_are_bit_identical() {
        let flow = FlowLevel::new(DofMap::new(4));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = random_velocity(&flow, &mut rng);
        let fact = flow.factorize_linearized(0.5, &y).unwrap();
        let g = random(flow.dofs().q2_vector_count(), &mut rng);
        let zero = vec![0.0; flow.dofs().q1_count()];
        let (w0, _) = fact.solve_linearized(&g, &zero).unwrap();
        for _ in 0..100 {
            let (w, _) = fact.solve_linearized(&g, &zero).unwrap();
            assert_eq!(w.values(), w0.values());
        }
    }

    #[test]
    fn nonzero_mean_divergence_data_is_rejected() {
        let flow = FlowLevel::new(DofMap::new(3));
        let fact = flow
            .factorize_linearized(1.0, &VectorField::zeros(3))
            .unwrap();
        let d = vec![1.0; flow.dofs().q1_count()];
        let err = fact
            .solve_linearized(&vec![0.0; flow.dofs().q2_vector_count()], &d)
            .unwrap_err();
        assert!(matches!(err, Error::IncompatibleData { .. }));
    }

    #[test]
    fn adjoint_identity_in_l2() {
        // (L g, f) = (g, L* f) with g, f as L2 functions entering through the mass matrix
        let flow = FlowLevel::new(DofMap::new(4));
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let y = random_velocity(&flow, &mut rng);
        let fact = flow.factorize_linearized(0.2, &y).unwrap();
        let m = &flow.blocks().mass_q2;
        let zero = vec![0.0; flow.dofs().q1_count()];
        for _ in 0..20 {
            let g = random(flow.dofs().q2_vector_count(), &mut rng);
            let f = random(flow.dofs().q2_vector_count(), &mut rng);
            let (lg, _) = fact.solve_linearized(&m.apply(&g), &zero).unwrap();
            let (lf, _) = fact.solve_adjoint(&m.apply(&f), &zero).unwrap();
            let a = m.bilinear(lg.values(), &f);
            let b = m.bilinear(&g, lf.values());
            let scale = m.bilinear(&g, &g).sqrt() * m.bilinear(&f, &f).sqrt();
            assert!((a - b).abs() <= 1e-11 * scale, "{a} {b}");
        }
    }

    #[test]
    fn stokes_adjoint_equals_forward() {
        let flow = FlowLevel::new(DofMap::new(4));
        let fact = flow
            .factorize_linearized(1.0, &VectorField::zeros(4))
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f = random(flow.dofs().q2_vector_count(), &mut rng);
        let zero = vec![0.0; flow.dofs().q1_count()];
        let (w, _) = fact.solve_linearized(&f, &zero).unwrap();
        let (z, _) = fact.solve_adjoint(&f, &zero).unwrap();
        let diff = w
            .values()
            .iter()
            .zip(z.values())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(diff <= 1e-11 * inf_norm(w.values()));
    }

    #[test]
    fn navier_stokes_state_satisfies_energy_identity() {
        let dofs = DofMap::new(8);
        let flow = FlowLevel::new(dofs.clone());
        let u = VectorField::interpolate(&dofs, |x, y| {
            [10.0 * (y - 0.5), -10.0 * (x - 0.5) + 5.0 * x * y]
        });
        let nu = 0.05;
        let s = flow.solve_state(nu, &u, None).unwrap();
        assert!(s.residual <= 1e-12, "{}", s.residual);
        let tri = forms::apply_trilinear(&dofs, &s.y, &s.y, &s.y).unwrap();
        let energy = nu * flow.blocks().viscous.bilinear(s.y.values(), s.y.values());
        let work = flow.blocks().mass_q2.bilinear(u.values(), s.y.values());
        assert!(tri.abs() <= 1e-9 * energy);
        assert!((energy - work).abs() <= 1e-9 * energy);
        let mean: f64 = flow
            .blocks()
            .mean
            .iter()
            .zip(s.p.values())
            .map(|(a, b)| a * b)
            .sum();
        assert!(mean.abs() <= 1e-12);
        assert!(inf_norm(&flow.blocks().divergence.apply(s.y.values())) <= 1e-12);
        assert!(s
            .y
            .values()
            .iter()
            .zip(&flow.interior)
            .all(|(v, &i)| i || *v == 0.0));
    }

    #[test]
    fn manufactured_navier_stokes_velocity_converges_cubically() {
        let mms = ManufacturedFlow::navier_stokes(1.0);
        let errs: Vec<f64> = [8, 16]
            .iter()
            .map(|&n| mms.solve_errors(n).unwrap().velocity_l2)
            .collect();
        let ratio = errs[0] / errs[1];
        assert!((6.5..=9.5).contains(&ratio), "{ratio}");
    }

    #[test]
    fn manufactured_stokes_linearized_solve_converges_cubically() {
        let mms = ManufacturedFlow::stokes(1.0);
        let errs: Vec<f64> = [8, 16]
            .iter()
            .map(|&n| {
                let dofs = DofMap::new(n);
                let flow = FlowLevel::new(dofs.clone());
                let fact = flow
                    .factorize_linearized(1.0, &VectorField::zeros(n))
                    .unwrap();
                let load = mms.load(&dofs);
                let (w, r) = fact
                    .solve_linearized(&load, &vec![0.0; dofs.q1_count()])
                    .unwrap();
                mms.errors(&dofs, &w, &r).velocity_l2
            })
            .collect();
        let ratio = errs[0] / errs[1];
        assert!((6.5..=9.5).contains(&ratio), "{ratio}");
    }
}
