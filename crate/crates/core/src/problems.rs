//! Manufactured benchmark problems on the unit square and unit cube.
//!
//! Every problem is `u(t, x) = g(t) U(x)`, `p(t, x) = g(t) P(x)` with a
//! closed-form body force and fluid source. Elasticity problems are
//! stationary (`g = 1`, no pressure).

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::mesh::Point;
use crate::params::PhysicalParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    Elasticity,
    Poro,
}

impl ProblemKind {
    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Elasticity => "elasticity",
            ProblemKind::Poro => "poro",
        }
    }
}

/// Time dependence `g(t)` of a poroelastic solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeProfile {
    /// `g(t) = t`; the standard benchmark forcing.
    Linear,
    /// `g(t) = t²`; makes the backward Euler error visible.
    Quadratic,
}

impl TimeProfile {
    fn value(self, t: f64) -> f64 {
        match self {
            TimeProfile::Linear => t,
            TimeProfile::Quadratic => t * t,
        }
    }

    fn rate(self, t: f64) -> f64 {
        match self {
            TimeProfile::Linear => 1.0,
            TimeProfile::Quadratic => 2.0 * t,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Manufactured {
    pub dim: usize,
    pub kind: ProblemKind,
    pub params: PhysicalParams,
    pub profile: TimeProfile,
}

impl Manufactured {
    pub fn elasticity(dim: usize, params: PhysicalParams) -> Result<Self> {
        params.validate_elastic()?;
        check_dim(dim)?;
        Ok(Manufactured {
            dim,
            kind: ProblemKind::Elasticity,
            params,
            profile: TimeProfile::Linear,
        })
    }

    pub fn poro(dim: usize, params: PhysicalParams, profile: TimeProfile) -> Result<Self> {
        params.validate()?;
        check_dim(dim)?;
        Ok(Manufactured {
            dim,
            kind: ProblemKind::Poro,
            params,
            profile,
        })
    }

    fn g(&self, t: f64) -> f64 {
        match self.kind {
            ProblemKind::Elasticity => 1.0,
            ProblemKind::Poro => self.profile.value(t),
        }
    }

    /// Whether the exact displacement vanishes on the boundary.
    pub fn homogeneous_boundary(&self) -> bool {
        !(self.kind == ProblemKind::Elasticity && self.dim == 2)
    }

    pub fn displacement(&self, t: f64, x: &Point) -> [f64; 3] {
        self.shape_u(x).map(|v| v * self.g(t))
    }

    /// `grad[c][j] = ∂u_c/∂x_j`.
    pub fn displacement_gradient(&self, t: f64, x: &Point) -> [[f64; 3]; 3] {
        let g = self.g(t);
        self.shape_grad_u(x).map(|row| row.map(|v| v * g))
    }

    pub fn pressure(&self, t: f64, x: &Point) -> f64 {
        match self.kind {
            ProblemKind::Elasticity => 0.0,
            ProblemKind::Poro => self.g(t) * self.shape_p(x),
        }
    }

    pub fn body_force(&self, t: f64, x: &Point) -> [f64; 3] {
        match (self.kind, self.profile) {
            (ProblemKind::Elasticity, _) => self.elastic_force(x),
            (ProblemKind::Poro, TimeProfile::Linear) => self.poro_force(t, x),
            (ProblemKind::Poro, TimeProfile::Quadratic) => {
                self.poro_force(1.0, x).map(|v| v * self.g(t))
            }
        }
    }

    pub fn source(&self, t: f64, x: &Point) -> f64 {
        if self.kind == ProblemKind::Elasticity {
            return 0.0;
        }
        if self.profile == TimeProfile::Linear {
            return self.poro_source(t, x);
        }
        let p = &self.params;
        let lap_p = -(self.dim as f64) * PI * PI * self.shape_p(x);
        self.profile.rate(t) * (p.c0 * self.shape_p(x) + p.alpha * self.shape_div_u(x))
            - self.g(t) * p.kappa * lap_p
    }

    fn shape_u(&self, x: &Point) -> [f64; 3] {
        match (self.kind, self.dim) {
            (ProblemKind::Elasticity, 2) => [x[0].sin() * x[1].sin(), x[0].cos() * x[1].cos(), 0.0],
            _ => {
                let free = self.solenoidal(x);
                let s = sine_product(x, self.dim) / (self.params.lambda + self.params.mu);
                let mut u = [0.0; 3];
                for c in 0..self.dim {
                    u[c] = free[c] + s;
                }
                u
            }
        }
    }

    fn shape_grad_u(&self, x: &Point) -> [[f64; 3]; 3] {
        if self.kind == ProblemKind::Elasticity && self.dim == 2 {
            let (sx, cx, sy, cy) = (x[0].sin(), x[0].cos(), x[1].sin(), x[1].cos());
            return [[cx * sy, sx * cy, 0.0], [-sx * cy, -cx * sy, 0.0], [0.0; 3]];
        }
        let mut g = self.solenoidal_grad(x);
        let gs = sine_product_grad(x, self.dim);
        let c = 1.0 / (self.params.lambda + self.params.mu);
        for row in g.iter_mut().take(self.dim) {
            for j in 0..self.dim {
                row[j] += c * gs[j];
            }
        }
        g
    }

    fn shape_div_u(&self, x: &Point) -> f64 {
        let g = self.shape_grad_u(x);
        (0..self.dim).map(|c| g[c][c]).sum()
    }

    fn shape_p(&self, x: &Point) -> f64 {
        match self.dim {
            2 => -sine_product(x, 2),
            _ => sine_product(x, 3),
        }
    }

    /// Divergence-free part of the poroelastic and 3D elastic displacements.
    fn solenoidal(&self, x: &Point) -> [f64; 3] {
        let a = 2.0 * PI;
        let (s, c) = (x.map(|v| (a * v).sin()), x.map(|v| (a * v).cos()));
        match self.dim {
            2 => [s[1] * (c[0] - 1.0), s[0] * (1.0 - c[1]), 0.0],
            _ => [
                (c[0] - 1.0) * s[1] * s[2],
                2.0 * s[0] * (1.0 - c[1]) * s[2],
                s[0] * s[1] * (c[2] - 1.0),
            ],
        }
    }

    fn solenoidal_grad(&self, x: &Point) -> [[f64; 3]; 3] {
        let a = 2.0 * PI;
        let (s, c) = (x.map(|v| (a * v).sin()), x.map(|v| (a * v).cos()));
        match self.dim {
            2 => [
                [-a * s[0] * s[1], a * c[1] * (c[0] - 1.0), 0.0],
                [a * c[0] * (1.0 - c[1]), a * s[0] * s[1], 0.0],
                [0.0; 3],
            ],
            _ => [
                [
                    -a * s[0] * s[1] * s[2],
                    a * (c[0] - 1.0) * c[1] * s[2],
                    a * (c[0] - 1.0) * s[1] * c[2],
                ],
                [
                    2.0 * a * c[0] * (1.0 - c[1]) * s[2],
                    2.0 * a * s[0] * s[1] * s[2],
                    2.0 * a * s[0] * (1.0 - c[1]) * c[2],
                ],
                [
                    a * c[0] * s[1] * (c[2] - 1.0),
                    a * s[0] * c[1] * (c[2] - 1.0),
                    -a * s[0] * s[1] * s[2],
                ],
            ],
        }
    }

    fn elastic_force(&self, x: &Point) -> [f64; 3] {
        let mu = self.params.mu;
        if self.dim == 2 {
            return [
                2.0 * mu * x[0].sin() * x[1].sin(),
                2.0 * mu * x[0].cos() * x[1].cos(),
                0.0,
            ];
        }
        self.force_3d(x, 0.0)
    }

    /// Shared 3D force; `alpha_t` multiplies the pressure-gradient terms.
    fn force_3d(&self, x: &Point, alpha_t: f64) -> [f64; 3] {
        let (mu, lambda) = (self.params.mu, self.params.lambda);
        let pi2 = PI * PI;
        let (s, c) = (x.map(|v| (PI * v).sin()), x.map(|v| (PI * v).cos()));
        let (s2, c2) = (
            x.map(|v| (2.0 * PI * v).sin()),
            x.map(|v| (2.0 * PI * v).cos()),
        );
        let lead = pi2 * (4.0 * mu + lambda) / (lambda + mu) * s[0] * s[1] * s[2];
        [
            lead + 8.0 * pi2 * mu * (c2[0] - 1.0) * s2[1] * s2[2]
                + 4.0 * pi2 * mu * c2[0] * s2[1] * s2[2]
                - pi2 * (c[0] * c[1] * s[2] + c[0] * s[1] * c[2])
                + alpha_t * PI * c[0] * s[1] * s[2],
            lead + 16.0 * pi2 * mu * s2[0] * (1.0 - c2[1]) * s2[2]
                - 8.0 * pi2 * mu * s2[0] * c2[1] * s2[2]
                - pi2 * (c[0] * c[1] * s[2] + s[0] * c[1] * c[2])
                + alpha_t * PI * s[0] * c[1] * s[2],
            lead + 8.0 * pi2 * mu * s2[0] * s2[1] * (c2[2] - 1.0)
                + 4.0 * pi2 * mu * s2[0] * s2[1] * c2[2]
                - pi2 * (c[0] * s[1] * c[2] + s[0] * c[1] * c[2])
                + alpha_t * PI * s[0] * s[1] * c[2],
        ]
    }

    fn poro_force(&self, t: f64, x: &Point) -> [f64; 3] {
        let p = &self.params;
        if self.dim == 3 {
            return self.force_3d(x, p.alpha).map(|v| v * t);
        }
        let (mu, lambda, alpha) = (p.mu, p.lambda, p.alpha);
        let pi2 = PI * PI;
        let (s, c) = (x.map(|v| (PI * v).sin()), x.map(|v| (PI * v).cos()));
        let (s2, c2) = (
            x.map(|v| (2.0 * PI * v).sin()),
            x.map(|v| (2.0 * PI * v).cos()),
        );
        let damp = 2.0 * pi2 * mu / (lambda + mu) * s[0] * s[1];
        let mixed = pi2 * (PI * x[0] + PI * x[1]).cos();
        [
            -t * (-8.0 * pi2 * mu * c2[0] * s2[1] - damp
                + 4.0 * pi2 * mu * s2[1]
                + mixed
                + alpha * PI * c[0] * s[1]),
            -t * (8.0 * pi2 * mu * s2[0] * c2[1] - damp - 4.0 * pi2 * mu * s2[0]
                + mixed
                + alpha * PI * s[0] * c[1]),
            0.0,
        ]
    }

    fn poro_source(&self, t: f64, x: &Point) -> f64 {
        let p = &self.params;
        let s = x.map(|v| (PI * v).sin());
        let c = x.map(|v| (PI * v).cos());
        if self.dim == 2 {
            -p.c0 * s[0] * s[1] + PI * p.alpha / (p.lambda + p.mu) * (PI * x[0] + PI * x[1]).sin()
                - t * p.kappa * 2.0 * PI * PI * s[0] * s[1]
        } else {
            PI * p.alpha / (p.mu + p.lambda)
                * (c[0] * s[1] * s[2] + s[0] * c[1] * s[2] + s[0] * s[1] * c[2])
                + (3.0 * PI * PI * t * p.kappa + p.c0) * s[0] * s[1] * s[2]
        }
    }
}

/// Forcing and Dirichlet data of a time-dependent poroelastic problem.
pub trait PoroData {
    fn body_force(&self, t: f64, x: &Point) -> [f64; 3];
    fn source(&self, t: f64, x: &Point) -> f64;
    fn displacement_boundary(&self, _t: f64, _x: &Point) -> [f64; 3] {
        [0.0; 3]
    }
    fn pressure_boundary(&self, _t: f64, _x: &Point) -> f64 {
        0.0
    }
}

/// No forcing, homogeneous boundary data.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroData;

impl PoroData for ZeroData {
    fn body_force(&self, _t: f64, _x: &Point) -> [f64; 3] {
        [0.0; 3]
    }
    fn source(&self, _t: f64, _x: &Point) -> f64 {
        0.0
    }
}

impl PoroData for Manufactured {
    fn body_force(&self, t: f64, x: &Point) -> [f64; 3] {
        Manufactured::body_force(self, t, x)
    }
    fn source(&self, t: f64, x: &Point) -> f64 {
        Manufactured::source(self, t, x)
    }
    fn displacement_boundary(&self, t: f64, x: &Point) -> [f64; 3] {
        self.displacement(t, x)
    }
    fn pressure_boundary(&self, t: f64, x: &Point) -> f64 {
        self.pressure(t, x)
    }
}

fn check_dim(dim: usize) -> Result<()> {
    match dim {
        2 | 3 => Ok(()),
        _ => Err(Error::InvalidInput(format!(
            "dimension must be 2 or 3, got {dim}"
        ))),
    }
}

fn sine_product(x: &Point, dim: usize) -> f64 {
    x[..dim].iter().map(|v| (PI * v).sin()).product()
}

fn sine_product_grad(x: &Point, dim: usize) -> [f64; 3] {
    let mut g = [0.0; 3];
    for j in 0..dim {
        g[j] = PI
            * (0..dim)
                .map(|i| {
                    if i == j {
                        (PI * x[i]).cos()
                    } else {
                        (PI * x[i]).sin()
                    }
                })
                .product::<f64>();
    }
    g
}
