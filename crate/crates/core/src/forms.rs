//! Quadrature, Q2/Q1 shape functions and assembly of the Navier-Stokes forms
//!
//! * `a(y, φ) = ν (∇y, ∇φ)`
//! * `b(φ, p) = -(p, div φ)`
//! * `c̃(y; φ, ψ) = ½ [((y·∇)φ, ψ) - ((y·∇)ψ, φ)]`
//!
//! All integrals use tensor Gauss quadrature per cell and are exact: three points
//! per direction for the bilinear forms, four for the trilinear form (its
//! integrand reaches degree six in one direction).

use crate::error::{check_level, Result};
use crate::grid::{DofMap, ScalarField, VectorField};
use crate::sparse::SparseOperator;

/// Gauss points per direction for the bilinear forms.
pub const GAUSS_POINTS: usize = 3;

/// Gauss points per direction for the trilinear form.
pub const TRILINEAR_POINTS: usize = 4;

/// Gauss-Legendre rule on `[0, 1]`.
pub fn gauss_rule(points: usize) -> Vec<(f64, f64)> {
    let sym = |x: &[f64], w: &[f64]| -> Vec<(f64, f64)> {
        x.iter()
            .zip(w)
            .map(|(&x, &w)| (0.5 * (x + 1.0), 0.5 * w))
            .collect()
    };
    match points {
        1 => vec![(0.5, 1.0)],
        2 => {
            let a = (1.0f64 / 3.0).sqrt();
            sym(&[-a, a], &[1.0, 1.0])
        }
        3 => {
            let a = 0.6f64.sqrt();
            sym(&[-a, 0.0, a], &[5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])
        }
        4 => {
            let (a, b) = (0.339_981_043_584_856_3, 0.861_136_311_594_052_6);
            let (wa, wb) = (0.652_145_154_862_546_1, 0.347_854_845_137_453_9);
            sym(&[-b, -a, a, b], &[wb, wa, wa, wb])
        }
        5 => {
            let (a, b) = (0.538_469_310_105_683_1, 0.906_179_845_938_664);
            let (w0, wa, wb) = (
                0.568_888_888_888_888_9,
                0.478_628_670_499_366_5,
                0.236_926_885_056_189_1,
            );
            sym(&[-b, -a, 0.0, a, b], &[wb, wa, w0, wa, wb])
        }
        _ => panic!("unsupported Gauss rule with {points} points"),
    }
}

fn lagrange2(t: f64) -> [f64; 3] {
    [
        2.0 * (t - 0.5) * (t - 1.0),
        -4.0 * t * (t - 1.0),
        2.0 * t * (t - 0.5),
    ]
}

fn lagrange2_deriv(t: f64) -> [f64; 3] {
    [4.0 * t - 3.0, 4.0 - 8.0 * t, 4.0 * t - 1.0]
}

/// Q2 basis values on the reference cell, local index `3 b + a`.
pub fn q2_values(s: f64, t: f64) -> [f64; 9] {
    let (lx, ly) = (lagrange2(s), lagrange2(t));
    let mut out = [0.0; 9];
    for b in 0..3 {
        for a in 0..3 {
            out[3 * b + a] = lx[a] * ly[b];
        }
    }
    out
}

/// Reference gradients of the Q2 basis.
pub fn q2_gradients(s: f64, t: f64) -> [[f64; 2]; 9] {
    let (lx, ly) = (lagrange2(s), lagrange2(t));
    let (dx, dy) = (lagrange2_deriv(s), lagrange2_deriv(t));
    let mut out = [[0.0; 2]; 9];
    for b in 0..3 {
        for a in 0..3 {
            out[3 * b + a] = [dx[a] * ly[b], lx[a] * dy[b]];
        }
    }
    out
}

/// Q1 basis values on the reference cell, local index `2 b + a`.
pub fn q1_values(s: f64, t: f64) -> [f64; 4] {
    [(1.0 - s) * (1.0 - t), s * (1.0 - t), (1.0 - s) * t, s * t]
}

/// Shape functions tabulated at the quadrature points of one cell of size `h`,
/// gradients already in physical coordinates.
struct Tabulation {
    /// reference coordinates and physical weight
    points: Vec<(f64, f64, f64)>,
    q2: Vec<[f64; 9]>,
    q2_grad: Vec<[[f64; 2]; 9]>,
    q1: Vec<[f64; 4]>,
}

impl Tabulation {
    fn new(h: f64, points: usize) -> Self {
        let rule = gauss_rule(points);
        let mut pts = Vec::new();
        for &(t, wt) in &rule {
            for &(s, ws) in &rule {
                pts.push((s, t, ws * wt * h * h));
            }
        }
        let q2 = pts.iter().map(|&(s, t, _)| q2_values(s, t)).collect();
        let q2_grad = pts
            .iter()
            .map(|&(s, t, _)| {
                let mut g = q2_gradients(s, t);
                g.iter_mut().for_each(|d| {
                    d[0] /= h;
                    d[1] /= h;
                });
                g
            })
            .collect();
        let q1 = pts.iter().map(|&(s, t, _)| q1_values(s, t)).collect();
        Self {
            points: pts,
            q2,
            q2_grad,
            q1,
        }
    }
}

fn cells(dofs: &DofMap) -> impl Iterator<Item = (usize, usize)> {
    let n = dofs.n();
    (0..n).flat_map(move |cy| (0..n).map(move |cx| (cx, cy)))
}

/// Scalar Q2 mass matrix.
pub fn assemble_q2_mass(dofs: &DofMap, points: usize) -> SparseOperator {
    let tab = Tabulation::new(dofs.h(), points);
    let mut t = Vec::with_capacity(dofs.n() * dofs.n() * 81);
    for (cx, cy) in cells(dofs) {
        let nodes = dofs.cell_q2_nodes(cx, cy);
        let mut local = [[0.0; 9]; 9];
        for (q, &(_, _, w)) in tab.points.iter().enumerate() {
            let phi = &tab.q2[q];
            for a in 0..9 {
                for b in 0..9 {
                    local[a][b] += w * phi[a] * phi[b];
                }
            }
        }
        for a in 0..9 {
            for b in 0..9 {
                t.push((nodes[a], nodes[b], local[a][b]));
            }
        }
    }
    let mut m = SparseOperator::from_triplets(dofs.q2_scalar_count(), dofs.q2_scalar_count(), &t);
    m.mark_symmetric();
    m
}

/// Scalar Q2 stiffness matrix `(∇φ_j, ∇φ_i)`.
fn assemble_q2_laplace(dofs: &DofMap, points: usize) -> SparseOperator {
    let tab = Tabulation::new(dofs.h(), points);
    let mut t = Vec::with_capacity(dofs.n() * dofs.n() * 81);
    for (cx, cy) in cells(dofs) {
        let nodes = dofs.cell_q2_nodes(cx, cy);
        let mut local = [[0.0; 9]; 9];
        for (q, &(_, _, w)) in tab.points.iter().enumerate() {
            let g = &tab.q2_grad[q];
            for a in 0..9 {
                for b in 0..9 {
                    local[a][b] += w * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
                }
            }
        }
        for a in 0..9 {
            for b in 0..9 {
                t.push((nodes[a], nodes[b], local[a][b]));
            }
        }
    }
    let mut m = SparseOperator::from_triplets(dofs.q2_scalar_count(), dofs.q2_scalar_count(), &t);
    m.mark_symmetric();
    m
}

/// Q1 mass matrix.
pub fn assemble_q1_mass(dofs: &DofMap, points: usize) -> SparseOperator {
    let tab = Tabulation::new(dofs.h(), points);
    let mut t = Vec::new();
    for (cx, cy) in cells(dofs) {
        let nodes = dofs.cell_q1_nodes(cx, cy);
        for (q, &(_, _, w)) in tab.points.iter().enumerate() {
            let psi = &tab.q1[q];
            for a in 0..4 {
                for b in 0..4 {
                    t.push((nodes[a], nodes[b], w * psi[a] * psi[b]));
                }
            }
        }
    }
    let mut m = SparseOperator::from_triplets(dofs.q1_count(), dofs.q1_count(), &t);
    m.mark_symmetric();
    m
}

/// `B_{k,(c,j)} = b(e_c φ_j, ψ_k) = -(ψ_k, ∂_c φ_j)`, Q1 rows × vector Q2 columns.
fn assemble_divergence(dofs: &DofMap, points: usize) -> SparseOperator {
    let tab = Tabulation::new(dofs.h(), points);
    let nq = dofs.q2_scalar_count();
    let mut t = Vec::new();
    for (cx, cy) in cells(dofs) {
        let v = dofs.cell_q2_nodes(cx, cy);
        let p = dofs.cell_q1_nodes(cx, cy);
        let mut local = [[[0.0; 9]; 4]; 2];
        for (q, &(_, _, w)) in tab.points.iter().enumerate() {
            let (psi, g) = (&tab.q1[q], &tab.q2_grad[q]);
            for k in 0..4 {
                for j in 0..9 {
                    local[0][k][j] -= w * psi[k] * g[j][0];
                    local[1][k][j] -= w * psi[k] * g[j][1];
                }
            }
        }
        for c in 0..2 {
            for k in 0..4 {
                for j in 0..9 {
                    t.push((p[k], c * nq + v[j], local[c][k][j]));
                }
            }
        }
    }
    SparseOperator::from_triplets(dofs.q1_count(), 2 * nq, &t)
}

fn assemble_q1_mean(dofs: &DofMap, points: usize) -> Vec<f64> {
    let tab = Tabulation::new(dofs.h(), points);
    let mut m = vec![0.0; dofs.q1_count()];
    for (cx, cy) in cells(dofs) {
        let nodes = dofs.cell_q1_nodes(cx, cy);
        for (q, &(_, _, w)) in tab.points.iter().enumerate() {
            for a in 0..4 {
                m[nodes[a]] += w * tab.q1[q][a];
            }
        }
    }
    m
}

/// The state-independent blocks of the discrete Stokes/Navier-Stokes system,
/// assembled on all Q2 nodes (boundary included).
#[derive(Debug, Clone)]
pub struct StokesBlocks {
    /// `ν (∇·, ∇·)` on vector Q2.
    pub viscous: SparseOperator,
    /// `b(φ, q)`, Q1 × vector Q2.
    pub divergence: SparseOperator,
    /// Vector Q2 mass (block diagonal).
    pub mass_q2: SparseOperator,
    pub mass_q1: SparseOperator,
    /// `m_k = ∫ ψ_k`.
    pub mean: Vec<f64>,
}

pub fn assemble_stokes_blocks(dofs: &DofMap, nu: f64) -> StokesBlocks {
    assemble_stokes_blocks_with(dofs, nu, GAUSS_POINTS)
}

pub fn assemble_stokes_blocks_with(dofs: &DofMap, nu: f64, points: usize) -> StokesBlocks {
    StokesBlocks {
        viscous: assemble_q2_laplace(dofs, points).scaled(nu).block_diag2(),
        divergence: assemble_divergence(dofs, points),
        mass_q2: assemble_q2_mass(dofs, points).block_diag2(),
        mass_q1: assemble_q1_mass(dofs, points),
        mean: assemble_q1_mean(dofs, points),
    }
}

/// Values and gradients of a vector Q2 field at the quadrature points of a cell.
fn field_at(
    tab: &Tabulation,
    q: usize,
    nodes: &[usize; 9],
    nq: usize,
    y: &[f64],
) -> ([f64; 2], [[f64; 2]; 2]) {
    let mut val = [0.0; 2];
    let mut grad = [[0.0; 2]; 2];
    for a in 0..9 {
        for c in 0..2 {
            let coef = y[c * nq + nodes[a]];
            val[c] += coef * tab.q2[q][a];
            grad[c][0] += coef * tab.q2_grad[q][a][0];
            grad[c][1] += coef * tab.q2_grad[q][a][1];
        }
    }
    (val, grad)
}

/// Matrices of the two linearization slots of `c̃` at the velocity `y`:
/// `(N1)_{ij} = c̃(y; φ_j, φ_i)` and `(N2)_{ij} = c̃(φ_j; y, φ_i)`.
pub fn assemble_convection(
    dofs: &DofMap,
    y: &VectorField,
) -> Result<(SparseOperator, SparseOperator)> {
    assemble_convection_with(dofs, y, TRILINEAR_POINTS)
}

pub fn assemble_convection_with(
    dofs: &DofMap,
    y: &VectorField,
    points: usize,
) -> Result<(SparseOperator, SparseOperator)> {
    check_level(dofs.n(), y.n())?;
    let tab = Tabulation::new(dofs.h(), points);
    let nq = dofs.q2_scalar_count();
    let yv = y.values();
    let mut t1 = Vec::with_capacity(dofs.n() * dofs.n() * 162);
    let mut t2 = Vec::with_capacity(dofs.n() * dofs.n() * 324);
    for (cx, cy) in cells(dofs) {
        let nodes = dofs.cell_q2_nodes(cx, cy);
        let mut s1 = [[0.0; 9]; 9];
        // s2[c][d][a][b]: row (c, a), column (d, b)
        let mut s2 = [[[[0.0; 9]; 9]; 2]; 2];
        for (q, &(_, _, w)) in tab.points.iter().enumerate() {
            let (yq, gy) = field_at(&tab, q, &nodes, nq, yv);
            let (phi, g) = (&tab.q2[q], &tab.q2_grad[q]);
            let mut adv = [0.0; 9];
            for a in 0..9 {
                adv[a] = yq[0] * g[a][0] + yq[1] * g[a][1];
            }
            for a in 0..9 {
                for b in 0..9 {
                    s1[a][b] += 0.5 * w * (adv[b] * phi[a] - adv[a] * phi[b]);
                }
            }
            // c̃(e_d φ_b; y, e_c φ_a) = ½ [φ_b ∂_d y_c φ_a - φ_b ∂_d φ_a y_c]
            for c in 0..2 {
                for d in 0..2 {
                    for a in 0..9 {
                        for b in 0..9 {
                            s2[c][d][a][b] +=
                                0.5 * w * phi[b] * (gy[c][d] * phi[a] - g[a][d] * yq[c]);
                        }
                    }
                }
            }
        }
        for a in 0..9 {
            for b in 0..9 {
                for c in 0..2 {
                    t1.push((c * nq + nodes[a], c * nq + nodes[b], s1[a][b]));
                    for d in 0..2 {
                        t2.push((c * nq + nodes[a], d * nq + nodes[b], s2[c][d][a][b]));
                    }
                }
            }
        }
    }
    let n1 = SparseOperator::from_triplets(2 * nq, 2 * nq, &t1);
    let n2 = SparseOperator::from_triplets(2 * nq, 2 * nq, &t2);
    Ok((n1, n2))
}

/// `c̃(y; φ, ψ)` by quadrature, without assembling matrices.
pub fn apply_trilinear(
    dofs: &DofMap,
    y: &VectorField,
    phi: &VectorField,
    psi: &VectorField,
) -> Result<f64> {
    for f in [y, phi, psi] {
        check_level(dofs.n(), f.n())?;
    }
    let tab = Tabulation::new(dofs.h(), TRILINEAR_POINTS);
    let nq = dofs.q2_scalar_count();
    let mut total = 0.0;
    for (cx, cy) in cells(dofs) {
        let nodes = dofs.cell_q2_nodes(cx, cy);
        for (q, &(_, _, w)) in tab.points.iter().enumerate() {
            let (yq, _) = field_at(&tab, q, &nodes, nq, y.values());
            let (fq, gf) = field_at(&tab, q, &nodes, nq, phi.values());
            let (sq, gs) = field_at(&tab, q, &nodes, nq, psi.values());
            let mut acc = 0.0;
            for c in 0..2 {
                let adv_phi = yq[0] * gf[c][0] + yq[1] * gf[c][1];
                let adv_psi = yq[0] * gs[c][0] + yq[1] * gs[c][1];
                acc += adv_phi * sq[c] - adv_psi * fq[c];
            }
            total += 0.5 * w * acc;
        }
    }
    Ok(total)
}

/// Load vector `(f, φ_i)` for a vector-valued function `f`, all Q2 nodes.
pub fn assemble_load(dofs: &DofMap, points: usize, f: impl Fn(f64, f64) -> [f64; 2]) -> Vec<f64> {
    let tab = Tabulation::new(dofs.h(), points);
    let nq = dofs.q2_scalar_count();
    let h = dofs.h();
    let mut out = vec![0.0; 2 * nq];
    for (cx, cy) in cells(dofs) {
        let nodes = dofs.cell_q2_nodes(cx, cy);
        for (q, &(s, t, w)) in tab.points.iter().enumerate() {
            let v = f((cx as f64 + s) * h, (cy as f64 + t) * h);
            for a in 0..9 {
                out[nodes[a]] += w * v[0] * tab.q2[q][a];
                out[nq + nodes[a]] += w * v[1] * tab.q2[q][a];
            }
        }
    }
    out
}

/// Errors of a discrete velocity/pressure pair against exact fields.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldErrors {
    pub velocity_l2: f64,
    pub velocity_h1: f64,
    pub pressure_l2: f64,
}

/// `‖y - y*‖`, `|y - y*|₁` and `‖p - p*‖` by 5-point Gauss quadrature.
pub fn field_errors(
    dofs: &DofMap,
    y: &VectorField,
    p: &ScalarField,
    exact_y: impl Fn(f64, f64) -> ([f64; 2], [[f64; 2]; 2]),
    exact_p: impl Fn(f64, f64) -> f64,
) -> FieldErrors {
    let tab = Tabulation::new(dofs.h(), 5);
    let nq = dofs.q2_scalar_count();
    let h = dofs.h();
    let (mut el2, mut eh1, mut ep) = (0.0, 0.0, 0.0);
    for (cx, cy) in cells(dofs) {
        let nodes = dofs.cell_q2_nodes(cx, cy);
        let pn = dofs.cell_q1_nodes(cx, cy);
        for (q, &(s, t, w)) in tab.points.iter().enumerate() {
            let (x, yy) = ((cx as f64 + s) * h, (cy as f64 + t) * h);
            let (v, g) = field_at(&tab, q, &nodes, nq, y.values());
            let (ve, ge) = exact_y(x, yy);
            for c in 0..2 {
                el2 += w * (v[c] - ve[c]).powi(2);
                for d in 0..2 {
                    eh1 += w * (g[c][d] - ge[c][d]).powi(2);
                }
            }
            let ph: f64 = (0..4).map(|k| tab.q1[q][k] * p.values()[pn[k]]).sum();
            ep += w * (ph - exact_p(x, yy)).powi(2);
        }
    }
    FieldErrors {
        velocity_l2: el2.sqrt(),
        velocity_h1: eh1.sqrt(),
        pressure_l2: ep.sqrt(),
    }
}
