//! Nested uniform quadrilateral meshes of the unit square, Q2/Q1 degree-of-freedom
//! numbering, and the transfer operators between consecutive levels.
//!
//! Nodes are numbered lexicographically with `x` running fastest: the Q2 node
//! `(i, j)` sits at `(i h/2, j h/2)` and has index `j (2n+1) + i`; the Q1 node
//! `(i, j)` sits at `(i h, j h)` and has index `j (n+1) + i`. Vector-valued Q2
//! fields store the first component for all nodes, then the second.

use std::sync::Arc;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Llt;
use faer::{Mat, Side};

use crate::error::{check_level, Error, Result};
use crate::forms;
use crate::sparse::SparseOperator;

/// Degree-of-freedom bookkeeping for one uniform level with `n` cells per side.
#[derive(Debug, Clone, PartialEq)]
pub struct DofMap {
    n: usize,
    boundary: Vec<bool>,
}

impl DofMap {
    pub fn new(n: usize) -> Self {
        let side = 2 * n + 1;
        let boundary = (0..side * side)
            .map(|k| {
                let (i, j) = (k % side, k / side);
                i == 0 || j == 0 || i == side - 1 || j == side - 1
            })
            .collect();
        Self { n, boundary }
    }

    /// Cells per side.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Q2 nodes per side, `2n + 1`.
    pub fn q2_side(&self) -> usize {
        2 * self.n + 1
    }

    pub fn q2_scalar_count(&self) -> usize {
        self.q2_side() * self.q2_side()
    }

    /// Size of a vector-valued Q2 coefficient array.
    pub fn q2_vector_count(&self) -> usize {
        2 * self.q2_scalar_count()
    }

    pub fn q2_interior_count(&self) -> usize {
        (2 * self.n - 1) * (2 * self.n - 1)
    }

    pub fn q1_side(&self) -> usize {
        self.n + 1
    }

    pub fn q1_count(&self) -> usize {
        self.q1_side() * self.q1_side()
    }

    /// True iff the scalar Q2 node lies on the boundary of the square.
    pub fn boundary_mask(&self) -> &[bool] {
        &self.boundary
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary[node]
    }

    /// Whether an entry of a vector-valued Q2 array belongs to a boundary node.
    pub fn is_boundary_vector_dof(&self, dof: usize) -> bool {
        self.boundary[dof % self.q2_scalar_count()]
    }

    pub fn q2_coords(&self, node: usize) -> (f64, f64) {
        let side = self.q2_side();
        let m = (2 * self.n) as f64;
        ((node % side) as f64 / m, (node / side) as f64 / m)
    }

    pub fn q1_coords(&self, node: usize) -> (f64, f64) {
        let side = self.q1_side();
        let m = self.n as f64;
        ((node % side) as f64 / m, (node / side) as f64 / m)
    }

    /// Q2 node indices of cell `(cx, cy)`, local index `3 b + a` with `a` along x.
    pub fn cell_q2_nodes(&self, cx: usize, cy: usize) -> [usize; 9] {
        let side = self.q2_side();
        let mut out = [0; 9];
        for b in 0..3 {
            for a in 0..3 {
                out[3 * b + a] = (2 * cy + b) * side + 2 * cx + a;
            }
        }
        out
    }

    /// Q1 node indices of cell `(cx, cy)`, local index `2 b + a`.
    pub fn cell_q1_nodes(&self, cx: usize, cy: usize) -> [usize; 4] {
        let side = self.q1_side();
        let mut out = [0; 4];
        for b in 0..2 {
            for a in 0..2 {
                out[2 * b + a] = (cy + b) * side + cx + a;
            }
        }
        out
    }

    /// Cell containing `(x, y)` and the local coordinates in `[0, 1]²`.
    pub fn locate(&self, x: f64, y: f64) -> ((usize, usize), (f64, f64)) {
        let n = self.n as f64;
        let cx = ((x * n).floor().max(0.0) as usize).min(self.n - 1);
        let cy = ((y * n).floor().max(0.0) as usize).min(self.n - 1);
        ((cx, cy), (x * n - cx as f64, y * n - cy as f64))
    }
}

/// Vector-valued Q2 coefficient array on a level (velocity, adjoint or control).
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    n: usize,
    values: Vec<f64>,
}

/// Controls live in the full Q2 vector space, boundary nodes included.
pub type ControlField = VectorField;
/// Velocities vanish on the boundary.
pub type VelocityField = VectorField;

impl VectorField {
    pub fn zeros(n: usize) -> Self {
        let side = 2 * n + 1;
        Self {
            n,
            values: vec![0.0; 2 * side * side],
        }
    }

    pub fn from_values(n: usize, values: Vec<f64>) -> Result<Self> {
        let side = 2 * n + 1;
        if values.len() != 2 * side * side {
            return Err(Error::InvalidMesh(format!(
                "vector field of length {} does not fit n = {n}",
                values.len()
            )));
        }
        Ok(Self { n, values })
    }

    /// Nodal interpolant of `f` at the Q2 nodes.
    pub fn interpolate(dofs: &DofMap, f: impl Fn(f64, f64) -> [f64; 2]) -> Self {
        let nq = dofs.q2_scalar_count();
        let mut values = vec![0.0; 2 * nq];
        for node in 0..nq {
            let (x, y) = dofs.q2_coords(node);
            let v = f(x, y);
            values[node] = v[0];
            values[nq + node] = v[1];
        }
        Self {
            n: dofs.n(),
            values,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// The two scalar components.
    pub fn components(&self) -> (&[f64], &[f64]) {
        self.values.split_at(self.values.len() / 2)
    }

    /// Point evaluation of the finite element function.
    pub fn evaluate(&self, dofs: &DofMap, x: f64, y: f64) -> [f64; 2] {
        let ((cx, cy), (s, t)) = dofs.locate(x, y);
        let nodes = dofs.cell_q2_nodes(cx, cy);
        let phi = forms::q2_values(s, t);
        let nq = dofs.q2_scalar_count();
        let mut out = [0.0; 2];
        for (k, &node) in nodes.iter().enumerate() {
            out[0] += phi[k] * self.values[node];
            out[1] += phi[k] * self.values[nq + node];
        }
        out
    }
}

/// Q1 coefficient array (pressure).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    n: usize,
    values: Vec<f64>,
}

pub type PressureField = ScalarField;

impl ScalarField {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            values: vec![0.0; (n + 1) * (n + 1)],
        }
    }

    pub fn from_values(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != (n + 1) * (n + 1) {
            return Err(Error::InvalidMesh(format!(
                "scalar field of length {} does not fit n = {n}",
                values.len()
            )));
        }
        Ok(Self { n, values })
    }

    pub fn interpolate(dofs: &DofMap, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = (0..dofs.q1_count())
            .map(|k| {
                let (x, y) = dofs.q1_coords(k);
                f(x, y)
            })
            .collect();
        Self {
            n: dofs.n(),
            values,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn evaluate(&self, dofs: &DofMap, x: f64, y: f64) -> f64 {
        let ((cx, cy), (s, t)) = dofs.locate(x, y);
        let nodes = dofs.cell_q1_nodes(cx, cy);
        let psi = forms::q1_values(s, t);
        nodes
            .iter()
            .zip(psi)
            .map(|(&k, p)| p * self.values[k])
            .sum()
    }
}

/// Scalar Q2 mass matrix with a sparse Cholesky factorization, applied
/// componentwise to vector fields.
pub struct Q2Mass {
    n: usize,
    scalar: SparseOperator,
    factor: Llt<usize, f64>,
}

impl std::fmt::Debug for Q2Mass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Q2Mass")
            .field("n", &self.n)
            .finish_non_exhaustive()
    }
}

impl Q2Mass {
    pub fn new(dofs: &DofMap) -> Result<Self> {
        let scalar = forms::assemble_q2_mass(dofs, forms::GAUSS_POINTS);
        let factor = scalar.to_faer().sp_cholesky(Side::Lower).map_err(|e| {
            Error::SingularMatrix(format!("Q2 mass matrix at n = {}: {e:?}", dofs.n()))
        })?;
        Ok(Self {
            n: dofs.n(),
            scalar,
            factor,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn scalar(&self) -> &SparseOperator {
        &self.scalar
    }

    /// `M v` for a vector-valued coefficient array.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let nq = self.scalar.nrows();
        assert_eq!(v.len(), 2 * nq);
        let mut out = vec![0.0; 2 * nq];
        let (o0, o1) = out.split_at_mut(nq);
        self.scalar.apply_into(&v[..nq], o0);
        self.scalar.apply_into(&v[nq..], o1);
        out
    }

    /// `M⁻¹ f` for a vector-valued load.
    pub fn solve(&self, f: &[f64]) -> Vec<f64> {
        let nq = self.scalar.nrows();
        assert_eq!(f.len(), 2 * nq);
        let mut rhs = Mat::from_fn(nq, 2, |i, c| f[c * nq + i]);
        self.factor.solve_in_place(rhs.as_mut());
        let mut out = vec![0.0; 2 * nq];
        for c in 0..2 {
            for i in 0..nq {
                out[c * nq + i] = rhs[(i, c)];
            }
        }
        out
    }

    /// L2 inner product of two vector fields.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        let nq = self.scalar.nrows();
        self.scalar.bilinear(&a[..nq], &b[..nq]) + self.scalar.bilinear(&a[nq..], &b[nq..])
    }

    pub fn norm(&self, a: &[f64]) -> f64 {
        self.inner(a, a).max(0.0).sqrt()
    }
}

/// Transfer between a coarse level `n` and the fine level `2n`.
#[derive(Clone)]
pub struct TransferOps {
    coarse: DofMap,
    fine: DofMap,
    prolongation: SparseOperator,
    coarse_mass: Arc<Q2Mass>,
    fine_mass: Arc<Q2Mass>,
    q1_prolongation: SparseOperator,
    q1_fine_mass: SparseOperator,
    q1_coarse_factor: Arc<Llt<usize, f64>>,
}

impl std::fmt::Debug for TransferOps {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TransferOps")
            .field("coarse", &self.coarse.n())
            .field("fine", &self.fine.n())
            .finish_non_exhaustive()
    }
}

impl TransferOps {
    pub fn new(coarse_mass: Arc<Q2Mass>, fine_mass: Arc<Q2Mass>) -> Result<Self> {
        let (nc, nf) = (coarse_mass.n(), fine_mass.n());
        if nf != 2 * nc {
            return Err(Error::InvalidMesh(format!(
                "levels n = {nc} and n = {nf} are not nested"
            )));
        }
        let (coarse, fine) = (DofMap::new(nc), DofMap::new(nf));
        let q1_coarse_factor = forms::assemble_q1_mass(&coarse, forms::GAUSS_POINTS)
            .to_faer()
            .sp_cholesky(Side::Lower)
            .map_err(|e| Error::SingularMatrix(format!("Q1 mass matrix at n = {nc}: {e:?}")))?;
        Ok(Self {
            q1_prolongation: q1_prolongation(nc),
            q1_fine_mass: forms::assemble_q1_mass(&fine, forms::GAUSS_POINTS),
            q1_coarse_factor: Arc::new(q1_coarse_factor),
            coarse,
            fine,
            prolongation: scalar_prolongation(nc),
            coarse_mass,
            fine_mass,
        })
    }

    pub fn coarse(&self) -> &DofMap {
        &self.coarse
    }

    pub fn fine(&self) -> &DofMap {
        &self.fine
    }

    pub fn coarse_mass(&self) -> &Arc<Q2Mass> {
        &self.coarse_mass
    }

    pub fn fine_mass(&self) -> &Arc<Q2Mass> {
        &self.fine_mass
    }

    /// Scalar prolongation matrix, fine Q2 nodes × coarse Q2 nodes.
    pub fn prolongation(&self) -> &SparseOperator {
        &self.prolongation
    }

    fn prolong_values(&self, c: &[f64]) -> Vec<f64> {
        let (ncq, nfq) = (self.prolongation.ncols(), self.prolongation.nrows());
        let mut out = vec![0.0; 2 * nfq];
        let (o0, o1) = out.split_at_mut(nfq);
        self.prolongation.apply_into(&c[..ncq], o0);
        self.prolongation.apply_into(&c[ncq..], o1);
        out
    }

    /// Embeds a coarse field into the fine space; exact since the spaces are nested.
    pub fn prolong(&self, c: &VectorField) -> Result<VectorField> {
        check_level(self.coarse.n(), c.n())?;
        Ok(VectorField {
            n: self.fine.n(),
            values: self.prolong_values(c.values()),
        })
    }

    /// Transpose of the prolongation applied to a fine dual vector (a load).
    pub fn restrict_dual(&self, f: &[f64]) -> Vec<f64> {
        let nfq = self.prolongation.nrows();
        let mut out = self.prolongation.apply_transpose(&f[..nfq]);
        out.extend(self.prolongation.apply_transpose(&f[nfq..]));
        out
    }

    /// L2 projection onto the coarse space: solves `M_2h c = Pᵀ M_h v`.
    pub fn project(&self, v: &VectorField) -> Result<VectorField> {
        check_level(self.fine.n(), v.n())?;
        let load = self.restrict_dual(&self.fine_mass.apply(v.values()));
        Ok(VectorField {
            n: self.coarse.n(),
            values: self.coarse_mass.solve(&load),
        })
    }

    /// `P π v`, the projection expressed in the fine space.
    pub fn project_fine(&self, v: &VectorField) -> Result<VectorField> {
        self.prolong(&self.project(v)?)
    }

    /// Bilinear interpolation of a coarse pressure onto the fine Q1 space.
    pub fn prolong_pressure(&self, c: &ScalarField) -> Result<ScalarField> {
        check_level(self.coarse.n(), c.n())?;
        Ok(ScalarField {
            n: self.fine.n(),
            values: self.q1_prolongation.apply(c.values()),
        })
    }

    /// L2 projection of a fine pressure onto the coarse Q1 space.
    pub fn project_pressure(&self, p: &ScalarField) -> Result<ScalarField> {
        check_level(self.fine.n(), p.n())?;
        let load = self
            .q1_prolongation
            .apply_transpose(&self.q1_fine_mass.apply(p.values()));
        let mut rhs = Mat::from_fn(load.len(), 1, |i, _| load[i]);
        self.q1_coarse_factor.solve_in_place(rhs.as_mut());
        Ok(ScalarField {
            n: self.coarse.n(),
            values: (0..load.len()).map(|i| rhs[(i, 0)]).collect(),
        })
    }
}

/// Tensor product of the 1D linear interpolation stencils.
fn q1_prolongation(nc: usize) -> SparseOperator {
    let cs = nc + 1;
    let fs = 2 * nc + 1;
    let stencil = |i: usize| -> Vec<(usize, f64)> {
        if i.is_multiple_of(2) {
            vec![(i / 2, 1.0)]
        } else {
            vec![(i / 2, 0.5), (i / 2 + 1, 0.5)]
        }
    };
    let mut t = Vec::new();
    for j in 0..fs {
        for i in 0..fs {
            for &(ci, wx) in &stencil(i) {
                for &(cj, wy) in &stencil(j) {
                    t.push((j * fs + i, cj * cs + ci, wx * wy));
                }
            }
        }
    }
    SparseOperator::from_triplets(fs * fs, cs * cs, &t)
}

/// Tensor product of the 1D quadratic interpolation stencils.
fn scalar_prolongation(nc: usize) -> SparseOperator {
    let cs = 2 * nc + 1;
    let fs = 4 * nc + 1;
    // 1D: fine node I -> list of (coarse node, weight)
    let stencil = |i: usize| -> Vec<(usize, f64)> {
        match i % 4 {
            0 | 2 => vec![(i / 2, 1.0)],
            1 => {
                let k = i / 4;
                vec![(2 * k, 0.375), (2 * k + 1, 0.75), (2 * k + 2, -0.125)]
            }
            _ => {
                let k = i / 4;
                vec![(2 * k, -0.125), (2 * k + 1, 0.75), (2 * k + 2, 0.375)]
            }
        }
    };
    let mut t = Vec::new();
    for j in 0..fs {
        let sy = stencil(j);
        for i in 0..fs {
            for &(ci, wx) in &stencil(i) {
                for &(cj, wy) in &sy {
                    t.push((j * fs + i, cj * cs + ci, wx * wy));
                }
            }
        }
    }
    SparseOperator::from_triplets(fs * fs, cs * cs, &t)
}

/// Nested hierarchy `n_ℓ = n0 2^ℓ`, `ℓ = 0..levels`.
#[derive(Debug, Clone)]
pub struct MeshHierarchy {
    n0: usize,
    dofs: Vec<DofMap>,
    masses: Vec<Arc<Q2Mass>>,
    transfers: Vec<TransferOps>,
}

impl MeshHierarchy {
    pub fn level_count(&self) -> usize {
        self.dofs.len()
    }

    pub fn n0(&self) -> usize {
        self.n0
    }

    pub fn dofs(&self, level: usize) -> &DofMap {
        &self.dofs[level]
    }

    pub fn mass(&self, level: usize) -> &Arc<Q2Mass> {
        &self.masses[level]
    }

    /// Transfer between `level - 1` and `level`.
    pub fn transfer(&self, level: usize) -> &TransferOps {
        &self.transfers[level - 1]
    }

    /// Level index with `n` cells per side.
    pub fn level_of(&self, n: usize) -> Option<usize> {
        self.dofs.iter().position(|d| d.n() == n)
    }
}

/// Builds the nested hierarchy with dof maps, mass matrices and transfers.
pub fn build_hierarchy(n0: usize, levels: usize) -> Result<MeshHierarchy> {
    if n0 < 2 {
        return Err(Error::InvalidMesh(format!(
            "base level needs n0 >= 2 cells per side, got {n0}"
        )));
    }
    if levels == 0 {
        return Err(Error::InvalidMesh("at least one level is required".into()));
    }
    let dofs: Vec<_> = (0..levels).map(|l| DofMap::new(n0 << l)).collect();
    let masses = dofs
        .iter()
        .map(|d| Q2Mass::new(d).map(Arc::new))
        .collect::<Result<Vec<_>>>()?;
    let transfers = masses
        .windows(2)
        .map(|w| TransferOps::new(w[0].clone(), w[1].clone()))
        .collect::<Result<Vec<_>>>()?;
    Ok(MeshHierarchy {
        n0,
        dofs,
        masses,
        transfers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(n: usize, rng: &mut ChaCha8Rng) -> VectorField {
        let len = 2 * (2 * n + 1) * (2 * n + 1);
        VectorField::from_values(n, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn hierarchy_levels_and_sizes() {
        let h = build_hierarchy(4, 2).unwrap();
        assert_eq!(h.dofs(0).n(), 4);
        assert_eq!(h.dofs(1).n(), 8);
        assert_eq!(h.dofs(0).h(), 0.25);
        assert_eq!(h.dofs(1).h(), 0.125);
        assert_eq!(h.dofs(1).h(), h.dofs(0).h() / 2.0);

        let single = build_hierarchy(8, 1).unwrap();
        assert_eq!(single.dofs(0).q2_scalar_count(), 289);
        assert_eq!(single.dofs(0).q1_count(), 81);
    }

    #[test]
    fn rejects_degenerate_base() {
        assert!(matches!(build_hierarchy(1, 1), Err(Error::InvalidMesh(_))));
        assert!(build_hierarchy(4, 0).is_err());
    }

    #[test]
    fn boundary_mask_counts() {
        for n in [2, 3, 8] {
            let d = DofMap::new(n);
            let marked = d.boundary_mask().iter().filter(|&&b| b).count();
            assert_eq!(marked, d.q2_scalar_count() - d.q2_interior_count());
            assert_eq!(d.q2_interior_count(), (2 * n - 1) * (2 * n - 1));
        }
    }

    #[test]
    fn prolongation_preserves_constants() {
        let h = build_hierarchy(2, 2).unwrap();
        let c = VectorField::interpolate(h.dofs(0), |_, _| [1.0, 0.0]);
        let f = h.transfer(1).prolong(&c).unwrap();
        let (f0, f1) = f.components();
        assert!(f0.iter().all(|&v| (v - 1.0).abs() < 1e-15));
        assert!(f1.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn prolongation_of_basis_function_is_its_interpolant() {
        let h = build_hierarchy(2, 2).unwrap();
        let (cd, fd) = (h.dofs(0), h.dofs(1));
        let mut c = VectorField::zeros(2);
        c.values_mut()[7] = 1.0;
        let f = h.transfer(1).prolong(&c).unwrap();
        for node in 0..fd.q2_scalar_count() {
            let (x, y) = fd.q2_coords(node);
            let exact = c.evaluate(cd, x, y)[0];
            assert!((f.values()[node] - exact).abs() < 1e-14);
        }
    }

    #[test]
    fn prolongation_reproduces_coarse_function_pointwise() {
        let h = build_hierarchy(4, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c = random_field(4, &mut rng);
        let f = h.transfer(1).prolong(&c).unwrap();
        for _ in 0..20 {
            let (x, y) = (rng.gen::<f64>(), rng.gen::<f64>());
            let a = c.evaluate(h.dofs(0), x, y);
            let b = f.evaluate(h.dofs(1), x, y);
            assert!((a[0] - b[0]).abs() < 1e-13 && (a[1] - b[1]).abs() < 1e-13);
        }
    }

    #[test]
    fn prolong_level_mismatch() {
        let h = build_hierarchy(2, 2).unwrap();
        let wrong = VectorField::zeros(4);
        assert!(matches!(
            h.transfer(1).prolong(&wrong),
            Err(Error::LevelMismatch { .. })
        ));
        assert!(h.transfer(1).project(&VectorField::zeros(2)).is_err());
    }

    #[test]
    fn projection_of_embedded_field_is_identity() {
        let h = build_hierarchy(4, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = random_field(4, &mut rng);
        let t = h.transfer(1);
        let back = t.project(&t.prolong(&c).unwrap()).unwrap();
        let err = c
            .values()
            .iter()
            .zip(back.values())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn projection_is_idempotent_contractive_and_self_adjoint() {
        let h = build_hierarchy(4, 2).unwrap();
        let t = h.transfer(1);
        let m = h.mass(1);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = random_field(8, &mut rng);
        let w = random_field(8, &mut rng);
        let pv = t.project_fine(&v).unwrap();
        let ppv = t.project_fine(&pv).unwrap();
        let diff: Vec<f64> = ppv
            .values()
            .iter()
            .zip(pv.values())
            .map(|(a, b)| a - b)
            .collect();
        assert!(m.norm(&diff) <= 1e-12 * m.norm(v.values()));
        assert!(m.norm(pv.values()) <= m.norm(v.values()));

        let pw = t.project_fine(&w).unwrap();
        let lhs = m.inner(pv.values(), w.values());
        let rhs = m.inner(v.values(), pw.values());
        assert!((lhs - rhs).abs() <= 1e-12 * m.norm(v.values()) * m.norm(w.values()));
    }

    #[test]
    fn galerkin_mass_compatibility() {
        let h = build_hierarchy(4, 2).unwrap();
        let t = h.transfer(1);
        let p = t.prolongation().to_dense();
        let mf = h.mass(1).scalar().to_dense();
        let mc = h.mass(0).scalar().to_dense();
        let ptmp = p.transpose() * &mf * &p;
        let mut worst: f64 = 0.0;
        for i in 0..mc.nrows() {
            for j in 0..mc.ncols() {
                worst = worst.max((ptmp[(i, j)] - mc[(i, j)]).abs());
            }
        }
        assert!(worst < 1e-15, "{worst}");
    }

    #[test]
    fn dense_mass_oracle_self_adjointness() {
        // π = P (Pᵀ M P)⁻¹ Pᵀ M computed densely at n = 4 → 8.
        let h = build_hierarchy(2, 2).unwrap();
        let t = h.transfer(1);
        let p = t.prolongation().to_dense();
        let mf = h.mass(1).scalar().to_dense();
        let mc = p.transpose() * &mf * &p;
        let pi = &p * mc.partial_piv_lu().solve(p.transpose() * &mf);
        // Mπ must be symmetric.
        let mpi = &mf * &pi;
        let mut worst: f64 = 0.0;
        for i in 0..mpi.nrows() {
            for j in 0..mpi.ncols() {
                worst = worst.max((mpi[(i, j)] - mpi[(j, i)]).abs());
            }
        }
        assert!(worst < 1e-14);
        // and match the sparse implementation on a random field
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v = random_field(4, &mut rng);
        let pv = t.project_fine(&v).unwrap();
        let nq = mf.nrows();
        let vx = Mat::from_fn(nq, 1, |i, _| v.values()[i]);
        let oracle = &pi * &vx;
        for i in 0..nq {
            assert!((oracle[(i, 0)] - pv.values()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn pressure_projection_reproduces_coarse_and_preserves_mean() {
        let h = build_hierarchy(4, 2).unwrap();
        let t = h.transfer(1);
        let c = ScalarField::interpolate(h.dofs(0), |x, y| x * y - 0.25 + 0.3 * x);
        let f = t.prolong_pressure(&c).unwrap();
        for &(x, y) in &[(0.13, 0.77), (0.5, 0.5), (0.91, 0.02)] {
            assert!((f.evaluate(h.dofs(1), x, y) - c.evaluate(h.dofs(0), x, y)).abs() < 1e-14);
        }
        let back = t.project_pressure(&f).unwrap();
        for (a, b) in back.values().iter().zip(c.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        let p = ScalarField::interpolate(h.dofs(1), |x, y| (6.0 * x).sin() * y);
        let pc = t.project_pressure(&p).unwrap();
        let mean = |d: &DofMap, q: &ScalarField| -> f64 {
            forms::assemble_stokes_blocks(d, 1.0)
                .mean
                .iter()
                .zip(q.values())
                .map(|(m, v)| m * v)
                .sum()
        };
        assert!((mean(h.dofs(1), &p) - mean(h.dofs(0), &pc)).abs() < 1e-13);
    }
}
