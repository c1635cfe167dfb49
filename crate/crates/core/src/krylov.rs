//! Conjugate gradients and spectral estimators in the L2 (mass) inner product.

use faer::{Mat, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::{axpy, SparseOperator};

/// A linear action on coefficient arrays.
pub type Action<'a> = dyn Fn(&[f64]) -> Result<Vec<f64>> + 'a;

/// Outcome of a (preconditioned) conjugate gradient solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrylovReport {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
    /// Set when a nonpositive curvature or preconditioned inner product occurred.
    pub breakdown: bool,
}

/// Preconditioned CG for `op x = rhs`, with `op` and `prec` self-adjoint in the
/// inner product `(a, b) = aᵀ M b`. Starts from zero.
///
/// Breakdown is reported in the returned report, not as an error.
pub fn pcg(
    op: &Action,
    prec: Option<&Action>,
    mass: &SparseOperator,
    rhs: &[f64],
    tol: f64,
    maxit: usize,
) -> Result<(Vec<f64>, KrylovReport)> {
    let ip = |a: &[f64], b: &[f64]| mass.bilinear(a, b);
    let n = rhs.len();
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let bnorm = ip(rhs, rhs).max(0.0).sqrt();
    let mut report = KrylovReport {
        iterations: 0,
        relative_residual: 0.0,
        converged: true,
        breakdown: false,
    };
    if bnorm == 0.0 {
        return Ok((x, report));
    }
    let apply_prec = |r: &[f64]| -> Result<Vec<f64>> {
        match prec {
            Some(p) => p(r),
            None => Ok(r.to_vec()),
        }
    };
    let mut z = apply_prec(&r)?;
    let mut rho = ip(&r, &z);
    let mut p = z.clone();
    report.converged = false;
    report.relative_residual = 1.0;
    if !(rho > 0.0) {
        report.breakdown = true;
        return Ok((x, report));
    }
    for it in 1..=maxit {
        let q = op(&p)?;
        let curv = ip(&p, &q);
        if !(curv > 0.0) {
            report.breakdown = true;
            return Ok((x, report));
        }
        let alpha = rho / curv;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &q, &mut r);
        report.iterations = it;
        report.relative_residual = ip(&r, &r).max(0.0).sqrt() / bnorm;
        log::trace!("pcg {it}: relative residual {:e}", report.relative_residual);
        if report.relative_residual <= tol {
            report.converged = true;
            return Ok((x, report));
        }
        z = apply_prec(&r)?;
        let rho_new = ip(&r, &z);
        if !(rho_new > 0.0) {
            report.breakdown = true;
            return Ok((x, report));
        }
        let beta = rho_new / rho;
        rho = rho_new;
        p.iter_mut()
            .zip(&z)
            .for_each(|(pi, zi)| *pi = zi + beta * *pi);
    }
    Ok((x, report))
}

pub(crate) fn random_vector(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Extremal Ritz values of the pencil `H w = λ T w` and the resulting spectral distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralEstimate {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub distance: f64,
    pub steps: usize,
}

/// Spectral distance `max(|ln λ_min|, |ln λ_max|)` of `H` and `T` from `k` steps of
/// Lanczos on `T⁻¹H` in the `T`-inner product with full reorthogonalization.
///
/// Only the actions of `H` and `T⁻¹` are needed.
pub fn lanczos_spectral_distance(
    op_h: &Action,
    op_tinv: &Action,
    mass: &SparseOperator,
    k: usize,
    seed: u64,
) -> Result<SpectralEstimate> {
    let ip = |a: &[f64], b: &[f64]| mass.bilinear(a, b);
    let n = mass.nrows();
    let k = k.clamp(1, 40).min(n);
    // q_j: T-orthonormal basis, p_j = T q_j
    let mut qs: Vec<Vec<f64>> = Vec::with_capacity(k + 1);
    let mut ps: Vec<Vec<f64>> = Vec::with_capacity(k + 1);
    let mut alphas = Vec::with_capacity(k);
    let mut betas: Vec<f64> = Vec::with_capacity(k);

    let p0 = random_vector(n, seed);
    let q0 = op_tinv(&p0)?;
    let nrm = ip(&q0, &p0);
    if !(nrm > 0.0) {
        return Err(Error::Breakdown(
            "preconditioner is not positive definite".into(),
        ));
    }
    let s = nrm.sqrt();
    qs.push(q0.iter().map(|v| v / s).collect());
    ps.push(p0.iter().map(|v| v / s).collect());

    for j in 0..k {
        let u = op_h(&qs[j])?;
        let alpha = ip(&qs[j], &u);
        alphas.push(alpha);
        if j + 1 == k {
            break;
        }
        let mut wd = u;
        for _ in 0..2 {
            for i in 0..=j {
                let c = ip(&qs[i], &wd);
                axpy(-c, &ps[i], &mut wd);
            }
        }
        let w = op_tinv(&wd)?;
        let b2 = ip(&w, &wd);
        if b2 < 0.0 {
            return Err(Error::Breakdown(
                "indefinite preconditioner in Lanczos".into(),
            ));
        }
        let beta = b2.sqrt();
        if beta <= 1e-12 * alpha.abs().max(f64::MIN_POSITIVE) {
            break;
        }
        betas.push(beta);
        qs.push(w.iter().map(|v| v / beta).collect());
        ps.push(wd.iter().map(|v| v / beta).collect());
    }

    let m = alphas.len();
    let tri = Mat::from_fn(m, m, |i, j| {
        if i == j {
            alphas[i]
        } else if i == j + 1 {
            betas[j]
        } else if j == i + 1 {
            betas[i]
        } else {
            0.0
        }
    });
    let eig = tri
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::NoConvergence(format!("tridiagonal eigenvalues: {e:?}")))?;
    let lambda_min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let lambda_max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(lambda_min > 0.0) {
        return Err(Error::Breakdown(format!(
            "nonpositive Ritz value {lambda_min:e}"
        )));
    }
    Ok(SpectralEstimate {
        lambda_min,
        lambda_max,
        distance: lambda_min.ln().abs().max(lambda_max.ln().abs()),
        steps: m,
    })
}

/// Result of a power iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerEstimate {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Largest `|λ|` of an operator self-adjoint in the mass inner product.
pub fn power_iteration_symmetric(
    op_d: &Action,
    mass: &SparseOperator,
    maxit: usize,
    tol: f64,
    seed: u64,
) -> Result<PowerEstimate> {
    let norm = |a: &[f64]| mass.bilinear(a, a).max(0.0).sqrt();
    let mut x = random_vector(mass.nrows(), seed);
    let s = norm(&x);
    x.iter_mut().for_each(|v| *v /= s);
    let mut value = 0.0;
    for it in 1..=maxit {
        let y = op_d(&x)?;
        let ny = norm(&y);
        if ny == 0.0 {
            return Ok(PowerEstimate {
                value: 0.0,
                iterations: it,
                converged: true,
            });
        }
        let change = (ny - value).abs() / ny;
        value = ny;
        x = y.into_iter().map(|v| v / ny).collect();
        if it > 1 && change <= tol {
            return Ok(PowerEstimate {
                value,
                iterations: it,
                converged: true,
            });
        }
    }
    Ok(PowerEstimate {
        value,
        iterations: maxit,
        converged: false,
    })
}
