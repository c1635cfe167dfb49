//! Manufactured solutions for discretization-rate studies.
//!
//! The velocity is the curl of `ψ = x²(1-x)² y²(1-y)²`, which is divergence free and
//! vanishes on the boundary together with its gradient; the pressure is
//! `cos(πx) cos(πy)`, which has zero mean and lies outside the Q1 space.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::flow::FlowLevel;
use crate::forms::{self, FieldErrors};
use crate::grid::{DofMap, PressureField, VelocityField};

/// `X(t) = t²(1-t)²` and its first three derivatives.
fn bump(t: f64) -> [f64; 4] {
    [
        t * t * (1.0 - t) * (1.0 - t),
        2.0 * t - 6.0 * t * t + 4.0 * t * t * t,
        2.0 - 12.0 * t + 12.0 * t * t,
        -12.0 + 24.0 * t,
    ]
}

/// Exact velocity/pressure pair with the forcing that produces it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManufacturedFlow {
    pub nu: f64,
    /// Include the convection term in the forcing.
    pub convective: bool,
    /// Amplitude of the velocity (zero gives the trivial solution).
    pub amplitude: f64,
    /// Amplitude of the pressure.
    pub pressure_amplitude: f64,
}

impl ManufacturedFlow {
    pub fn navier_stokes(nu: f64) -> Self {
        Self {
            nu,
            convective: true,
            amplitude: 1.0,
            pressure_amplitude: 1.0,
        }
    }

    pub fn stokes(nu: f64) -> Self {
        Self {
            convective: false,
            ..Self::navier_stokes(nu)
        }
    }

    pub fn zero(nu: f64) -> Self {
        Self {
            amplitude: 0.0,
            pressure_amplitude: 0.0,
            ..Self::navier_stokes(nu)
        }
    }

    /// Velocity and its gradient `g[c][d] = ∂_d y_c`.
    pub fn velocity(&self, x: f64, y: f64) -> ([f64; 2], [[f64; 2]; 2]) {
        let (bx, by) = (bump(x), bump(y));
        let a = self.amplitude;
        let v = [a * bx[0] * by[1], -a * bx[1] * by[0]];
        let g = [
            [a * bx[1] * by[1], a * bx[0] * by[2]],
            [-a * bx[2] * by[0], -a * bx[1] * by[1]],
        ];
        (v, g)
    }

    pub fn pressure(&self, x: f64, y: f64) -> f64 {
        self.pressure_amplitude * (PI * x).cos() * (PI * y).cos()
    }

    fn pressure_gradient(&self, x: f64, y: f64) -> [f64; 2] {
        let (sx, cx) = (PI * x).sin_cos();
        let (sy, cy) = (PI * y).sin_cos();
        let a = -PI * self.pressure_amplitude;
        [a * sx * cy, a * cx * sy]
    }

    /// `-νΔy + (y·∇)y + ∇p`, convection omitted for Stokes.
    pub fn forcing(&self, x: f64, y: f64) -> [f64; 2] {
        let (bx, by) = (bump(x), bump(y));
        let a = self.amplitude;
        let lap = [
            a * (bx[2] * by[1] + bx[0] * by[3]),
            -a * (bx[3] * by[0] + bx[1] * by[2]),
        ];
        let (v, g) = self.velocity(x, y);
        let gp = self.pressure_gradient(x, y);
        let mut f = [-self.nu * lap[0] + gp[0], -self.nu * lap[1] + gp[1]];
        if self.convective {
            for c in 0..2 {
                f[c] += v[0] * g[c][0] + v[1] * g[c][1];
            }
        }
        f
    }

    /// Momentum load `(f, φ_i)` by 5-point Gauss quadrature.
    pub fn load(&self, dofs: &DofMap) -> Vec<f64> {
        forms::assemble_load(dofs, 5, |x, y| self.forcing(x, y))
    }

    pub fn errors(&self, dofs: &DofMap, y: &VelocityField, p: &PressureField) -> FieldErrors {
        forms::field_errors(
            dofs,
            y,
            p,
            |x, yy| self.velocity(x, yy),
            |x, yy| self.pressure(x, yy),
        )
    }

    /// Solves the discrete problem on an `n × n` grid and returns the errors.
    pub fn solve_errors(&self, n: usize) -> Result<FieldErrors> {
        let dofs = DofMap::new(n);
        let flow = FlowLevel::new(dofs.clone());
        let load = self.load(&dofs);
        let (y, p) = if self.convective {
            let s = flow.solve_navier_stokes(self.nu, &load, None)?;
            (s.y, s.p)
        } else {
            flow.solve_stokes(self.nu, &load)?
        };
        Ok(self.errors(&dofs, &y, &p))
    }
}
