//! Regularized saddle-point formulation of WG linear elasticity.
//!
//! Introducing the numerical pressure `z = -M⁻¹ B° u` turns the nearly
//! singular `(εA1 + A0) u = (ε/μ) b1` into
//!
//! ```text
//! [ A1      -B°ᵀ          ] [ε u]   [(ε/μ) b1]
//! [ -B°  -εM - ρ w wᵀ     ] [ z ] = [   0    ]
//! ```
//!
//! with `w = M1 / ‖M1‖`. Every solution satisfies `wᵀz = const` (zero for
//! homogeneous Dirichlet data), so the rank-one term changes the operator
//! but not the solution.

use std::cell::Cell;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{
    norm2, Block, BlockOperator, InnerConfig, LinearOperator, Preconditioner, ShermanMorrison,
    SolveOptions, SolveReport, SparseMatrix, SpdSolver,
};
use crate::mesh::{Mesh, Point};
use crate::params::PhysicalParams;
use crate::wgfem::{assemble_body_force, assemble_elasticity, ElasticityBlocks, WgField};
use crate::{Method, PrecondKind};

/// Default regularization weight for the elasticity saddle system.
pub const DEFAULT_RHO: f64 = 1.0;

/// `w = M1 / ‖M1‖` for a positive diagonal `M`.
pub fn constant_mode(mass: &[f64]) -> (Vec<f64>, f64) {
    let norm = norm2(mass);
    (mass.iter().map(|m| m / norm).collect(), norm)
}

/// Operator `𝒜ₑ` over unknowns `(ε u_free, z)`.
#[derive(Debug, Clone)]
pub struct RegularizedElasticitySystem {
    pub a1: Arc<SparseMatrix>,
    pub b_int: Arc<SparseMatrix>,
    pub mass: Arc<Vec<f64>>,
    pub w: Arc<Vec<f64>>,
    /// `‖M1‖`.
    pub mass_norm: f64,
    pub epsilon: f64,
    pub mu: f64,
    pub rho: f64,
    operator: BlockOperator,
}

/// Builds `𝒜ₑ`; `rho` must be positive.
pub fn build_regularized_system(
    blocks: &ElasticityBlocks,
    params: &PhysicalParams,
    rho: f64,
) -> Result<RegularizedElasticitySystem> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::InvalidInput(format!(
            "regularization weight must be positive and finite, got {rho}"
        )));
    }
    RegularizedElasticitySystem::new(blocks, params, rho)
}

impl RegularizedElasticitySystem {
    /// Same as [`build_regularized_system`] but also accepts `rho = 0`.
    pub fn new(blocks: &ElasticityBlocks, params: &PhysicalParams, rho: f64) -> Result<Self> {
        params.validate_elastic()?;
        if !(rho >= 0.0) || !rho.is_finite() {
            return Err(Error::InvalidInput(format!(
                "regularization weight must be finite and nonnegative, got {rho}"
            )));
        }
        let epsilon = params.epsilon();
        let (w, mass_norm) = constant_mode(&blocks.mass);
        let w = Arc::new(w);
        let (nu, nz) = (blocks.a1.rows(), blocks.b_int.rows());
        let mut trailing = vec![Block::Diagonal {
            values: Arc::clone(&blocks.mass),
            scale: -epsilon,
        }];
        if rho > 0.0 {
            trailing.push(Block::Rank1 {
                u: Arc::clone(&w),
                v: Arc::clone(&w),
                scale: -rho,
            });
        }
        let operator = BlockOperator::new(&[nu, nz])
            .with(0, 0, Block::sparse(&blocks.a1, 1.0))?
            .with(0, 1, Block::sparse_transpose(&blocks.b_int, -1.0))?
            .with(1, 0, Block::sparse(&blocks.b_int, -1.0))?
            .with(1, 1, Block::Sum(trailing))?;
        Ok(RegularizedElasticitySystem {
            a1: Arc::clone(&blocks.a1),
            b_int: Arc::clone(&blocks.b_int),
            mass: Arc::clone(&blocks.mass),
            w,
            mass_norm,
            epsilon,
            mu: params.mu,
            rho,
            operator,
        })
    }

    pub fn n_displacement(&self) -> usize {
        self.a1.rows()
    }

    pub fn n_pressure(&self) -> usize {
        self.b_int.rows()
    }

    pub fn operator(&self) -> &BlockOperator {
        &self.operator
    }

    /// Right-hand side for body-force load `b1` and Dirichlet values `u_boundary`.
    pub fn load_vector(
        &self,
        blocks: &ElasticityBlocks,
        b1: &[f64],
        u_boundary: &[f64],
    ) -> Result<Vec<f64>> {
        let nu = self.n_displacement();
        if b1.len() != nu {
            return Err(Error::DimensionMismatch {
                expected: nu,
                got: b1.len(),
            });
        }
        let eps = self.epsilon;
        let mut rhs: Vec<f64> = b1.iter().map(|v| eps / self.mu * v).collect();
        rhs.resize(nu + self.n_pressure(), 0.0);
        if u_boundary.is_empty() {
            return Ok(rhs);
        }
        blocks
            .a1_boundary
            .mul_vec_add(-eps, u_boundary, &mut rhs[..nu]);
        let bb = blocks.b_int_boundary.mul_vec(u_boundary);
        // wᵀz equals -1ᵀB∂u∂ / ‖M1‖ for every solution.
        let wz = -bb.iter().sum::<f64>() / self.mass_norm;
        for (i, r) in rhs[nu..].iter_mut().enumerate() {
            *r = eps * bb[i] - self.rho * self.w[i] * wz;
        }
        Ok(rhs)
    }

    /// Splits a solution vector into `(u_free, z)`.
    pub fn recover(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let nu = self.n_displacement();
        (
            x[..nu].iter().map(|v| v / self.epsilon).collect(),
            x[nu..].to_vec(),
        )
    }
}

/// `y = (M + ρ w wᵀ)⁻¹ x`.
pub fn schur_hat_apply(mass: &[f64], w: &[f64], rho: f64, x: &[f64]) -> Result<Vec<f64>> {
    crate::linalg::smw_rank1_apply(mass, w, rho, x)
}

/// `𝒫_{d,e} = blockdiag(A1, Ŝₑ)` or `𝒫_{t,e} = [[A1, 0], [-B°, -Ŝₑ]]` with `Ŝₑ = M + ρwwᵀ`.
#[derive(Debug)]
pub struct ElasticityPreconditioner {
    kind: PrecondKind,
    a1: SpdSolver,
    schur: ShermanMorrison,
    mass: Arc<Vec<f64>>,
    b_int: Arc<SparseMatrix>,
}

impl ElasticityPreconditioner {
    pub fn new(
        system: &RegularizedElasticitySystem,
        kind: PrecondKind,
        inner: InnerConfig,
    ) -> Result<Self> {
        Ok(ElasticityPreconditioner {
            kind,
            a1: SpdSolver::from_config(
                Arc::clone(&system.a1),
                inner,
                "A1 solve in elasticity preconditioner",
            )?,
            schur: ShermanMorrison::diagonal(&system.mass, &system.w, system.rho)?,
            mass: Arc::clone(&system.mass),
            b_int: Arc::clone(&system.b_int),
        })
    }

    pub fn kind(&self) -> PrecondKind {
        self.kind
    }
}

impl Preconditioner for ElasticityPreconditioner {
    fn dim(&self) -> usize {
        self.a1.dim() + self.mass.len()
    }

    fn apply(&self, r: &[f64], z: &mut [f64]) -> Result<()> {
        let nu = self.a1.dim();
        let y1 = self.a1.solve(&r[..nu])?;
        let y2 = match self.kind {
            PrecondKind::Diagonal => self.schur.apply_diagonal(&self.mass, &r[nu..]),
            PrecondKind::Triangular => {
                let mut t = r[nu..].to_vec();
                self.b_int.mul_vec_add(1.0, &y1, &mut t);
                let mut y = self.schur.apply_diagonal(&self.mass, &t);
                y.iter_mut().for_each(|v| *v = -*v);
                y
            }
        };
        z[..nu].copy_from_slice(&y1);
        z[nu..].copy_from_slice(&y2);
        Ok(())
    }

    fn inner_iterations(&self) -> usize {
        self.a1.iterations()
    }
}

/// Outer-solver settings for the elasticity saddle system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElasticityConfig {
    pub method: Method,
    pub precond: PrecondKind,
    pub rho: f64,
    pub solve: SolveOptions,
    pub inner: InnerConfig,
}

impl ElasticityConfig {
    /// Outer tolerance 1e-10 in 2D and 1e-8 in 3D.
    pub fn for_dim(dim: usize, method: Method) -> Self {
        let tol = if dim == 2 { 1e-10 } else { 1e-8 };
        ElasticityConfig {
            method,
            precond: PrecondKind::for_method(method),
            rho: DEFAULT_RHO,
            solve: SolveOptions::new(tol, 1000),
            inner: InnerConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ElasticitySolution {
    pub u: WgField,
    /// Numerical pressure `z = -M⁻¹ B° u` per element.
    pub z: Vec<f64>,
    pub report: SolveReport,
}

/// Assembles and solves the elasticity problem with body force `f` and
/// Dirichlet data `g` on the whole boundary.
pub fn solve_elasticity<F, G>(
    mesh: &Mesh,
    params: &PhysicalParams,
    f: F,
    g: G,
    config: &ElasticityConfig,
) -> Result<ElasticitySolution>
where
    F: Fn(&Point) -> [f64; 3],
    G: Fn(&Point) -> [f64; 3],
{
    let blocks = assemble_elasticity(mesh)?;
    let system = build_regularized_system(&blocks, params, config.rho)?;
    let boundary = WgField::project(mesh, mesh.dim(), blocks.dofs.dirichlet_mask(), g)
        .boundary_values(&blocks.dofs);
    let b1 = assemble_body_force(mesh, &blocks.dofs, f);
    let rhs = system.load_vector(&blocks, &b1, &boundary)?;
    config.precond.check_compatible(config.method)?;
    let precond = ElasticityPreconditioner::new(&system, config.precond, config.inner)?;
    let (x, report) = config
        .method
        .solve(system.operator(), &rhs, &precond, config.solve)?;
    if !report.converged {
        return Err(Error::NotConverged {
            context: format!("elasticity {}", config.method.name()),
            iterations: report.iterations,
            relres: report.final_relres(),
        });
    }
    let (u_free, z) = system.recover(&x);
    Ok(ElasticitySolution {
        u: WgField::from_parts(&blocks.dofs, &u_free, &boundary)?,
        z,
        report,
    })
}

/// Applies `(εA1 + A0)⁻¹` through the regularized saddle system; this is the
/// leading-block solve of the two-field preconditioners.
#[derive(Debug)]
pub struct LeadingBlockSolver {
    system: RegularizedElasticitySystem,
    precond: ElasticityPreconditioner,
    method: Method,
    opts: SolveOptions,
    iterations: Cell<usize>,
}

impl LeadingBlockSolver {
    pub fn new(
        blocks: &ElasticityBlocks,
        params: &PhysicalParams,
        rho: f64,
        method: Method,
        inner: InnerConfig,
    ) -> Result<Self> {
        let system = build_regularized_system(blocks, params, rho)?;
        let precond =
            ElasticityPreconditioner::new(&system, PrecondKind::for_method(method), inner)?;
        Ok(LeadingBlockSolver {
            system,
            precond,
            method,
            opts: SolveOptions::new(inner.tol, inner.maxit),
            iterations: Cell::new(0),
        })
    }

    pub fn dim(&self) -> usize {
        self.system.n_displacement()
    }

    pub fn epsilon(&self) -> f64 {
        self.system.epsilon
    }

    /// `y` with `(εA1 + A0) y = r`.
    pub fn solve(&self, r: &[f64]) -> Result<Vec<f64>> {
        let mut rhs = r.to_vec();
        rhs.resize(self.system.operator().dim(), 0.0);
        let (x, report) =
            self.method
                .solve(self.system.operator(), &rhs, &self.precond, self.opts)?;
        self.iterations
            .set(self.iterations.get() + report.iterations + report.inner_iterations_total);
        if !report.converged {
            return Err(Error::NotConverged {
                context: "leading-block elasticity solve".into(),
                iterations: report.iterations,
                relres: report.final_relres(),
            });
        }
        Ok(self.system.recover(&x).0)
    }

    /// Krylov iterations spent so far, nested levels included.
    pub fn iterations(&self) -> usize {
        self.iterations.get()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseMatrix;
    use crate::mesh::build_structured_mesh;
    use crate::problems::Manufactured;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn dense_solve(a: &DenseMatrix, b: &[f64]) -> Vec<f64> {
        a.solve(b).unwrap()
    }

    #[test]
    fn rejects_nonpositive_rho() {
        let m = build_structured_mesh(2, 2).unwrap();
        let blocks = assemble_elasticity(&m).unwrap();
        let p = PhysicalParams::elasticity(1.0);
        assert!(build_regularized_system(&blocks, &p, 0.0).is_err());
        assert!(build_regularized_system(&blocks, &p, -1.0).is_err());
    }

    #[test]
    fn w_is_positive_unit_vector() {
        let m = build_structured_mesh(2, 3).unwrap();
        let blocks = assemble_elasticity(&m).unwrap();
        let s = build_regularized_system(&blocks, &PhysicalParams::elasticity(1.0), 1.0).unwrap();
        assert!((norm2(&s.w) - 1.0).abs() < 1e-12);
        assert!(s.w.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn operator_is_symmetric() {
        let m = build_structured_mesh(2, 2).unwrap();
        let blocks = assemble_elasticity(&m).unwrap();
        let s = build_regularized_system(&blocks, &PhysicalParams::elasticity(1e4), 1.0).unwrap();
        let a = s.operator().to_dense();
        assert!(a.combine(1.0, &a.transpose(), -1.0).max_abs() < 1e-12 * a.max_abs());
    }

    #[test]
    fn schur_hat_inverts_dense_operator() {
        let m = build_structured_mesh(2, 2).unwrap();
        let (w, _) = constant_mode(m.volumes());
        let x = random(m.n_elements(), 3);
        assert_eq!(
            schur_hat_apply(m.volumes(), &w, 0.0, &x).unwrap(),
            x.iter()
                .zip(m.volumes())
                .map(|(a, b)| a / b)
                .collect::<Vec<_>>()
        );
        let mut s = DenseMatrix::from_diagonal(m.volumes());
        s.add_outer(1.0, &w, &w);
        let y = schur_hat_apply(m.volumes(), &w, 1.0, &x).unwrap();
        let sy = s.mul_vec(&y);
        for (a, b) in sy.iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn regularization_preserves_solution() {
        let m = build_structured_mesh(2, 4).unwrap();
        let params = PhysicalParams::elasticity(1e4);
        let prob = Manufactured::elasticity(2, params).unwrap();
        let blocks = assemble_elasticity(&m).unwrap();
        let boundary = WgField::project(&m, 2, blocks.dofs.dirichlet_mask(), |x| {
            prob.displacement(0.0, x)
        })
        .boundary_values(&blocks.dofs);
        let b1 = assemble_body_force(&m, &blocks.dofs, |x| prob.body_force(0.0, x));
        let reg = build_regularized_system(&blocks, &params, 1.0).unwrap();
        let plain = RegularizedElasticitySystem::new(&blocks, &params, 0.0).unwrap();
        let xr = dense_solve(
            &reg.operator().to_dense(),
            &reg.load_vector(&blocks, &b1, &boundary).unwrap(),
        );
        let xp = dense_solve(
            &plain.operator().to_dense(),
            &plain.load_vector(&blocks, &b1, &boundary).unwrap(),
        );
        let scale = xp.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for (a, b) in xr.iter().zip(&xp) {
            assert!((a - b).abs() < 1e-8 * scale);
        }
        // z = -M⁻¹ B° u with the Dirichlet part included.
        let (u, z) = reg.recover(&xr);
        let div = blocks.divergence(&u, &boundary);
        for k in 0..m.n_elements() {
            assert!((z[k] + div[k] / m.volume(k)).abs() < 1e-8 * scale.max(1.0));
        }
    }

    #[test]
    fn triangular_preconditioner_matches_dense_block_solve() {
        let m = build_structured_mesh(2, 2).unwrap();
        let blocks = assemble_elasticity(&m).unwrap();
        let s = build_regularized_system(&blocks, &PhysicalParams::elasticity(1.0), 1.0).unwrap();
        let (nu, nz) = (s.n_displacement(), s.n_pressure());
        let mut p = DenseMatrix::zeros(nu + nz, nu + nz);
        p.set_block(0, 0, &blocks.a1.to_dense());
        let b = blocks.b_int.to_dense();
        let mut shat = DenseMatrix::from_diagonal(&blocks.mass);
        shat.add_outer(1.0, &s.w, &s.w);
        p.set_block(nu, 0, &b.combine(-1.0, &b, 0.0));
        p.set_block(nu, nu, &shat.combine(-1.0, &shat, 0.0));
        let r = random(nu + nz, 11);
        let expect = dense_solve(&p, &r);
        let pre =
            ElasticityPreconditioner::new(&s, PrecondKind::Triangular, InnerConfig::default())
                .unwrap();
        let mut y = vec![0.0; nu + nz];
        pre.apply(&r, &mut y).unwrap();
        for (a, b) in y.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_load_gives_zero_solution() {
        let m = build_structured_mesh(2, 2).unwrap();
        let params = PhysicalParams::elasticity(1.0);
        let sol = solve_elasticity(
            &m,
            &params,
            |_| [0.0; 3],
            |_| [0.0; 3],
            &ElasticityConfig::for_dim(2, Method::Minres),
        )
        .unwrap();
        assert!(sol.u.interior.iter().chain(&sol.u.facet).all(|&v| v == 0.0));
        assert_eq!(sol.report.iterations, 0);
    }

    #[test]
    fn leading_block_solver_inverts_grad_div_operator() {
        let m = build_structured_mesh(2, 3).unwrap();
        let blocks = assemble_elasticity(&m).unwrap();
        let params = PhysicalParams::poro(1e4, 1e-3);
        let eps = params.epsilon();
        let op = SparseMatrix::linear_combination(eps, &blocks.a1, 1.0, &blocks.a0).unwrap();
        let r = random(op.rows(), 5);
        for method in [Method::Minres, Method::Gmres] {
            let solver =
                LeadingBlockSolver::new(&blocks, &params, 1.0, method, InnerConfig::default())
                    .unwrap();
            let y = solver.solve(&r).unwrap();
            let res: Vec<f64> = op.mul_vec(&y).iter().zip(&r).map(|(a, b)| a - b).collect();
            assert!(
                norm2(&res) < 1e-8 * norm2(&r),
                "{method:?}: {}",
                norm2(&res) / norm2(&r)
            );
            assert!(solver.iterations() > 0);
        }
    }

    #[test]
    fn manufactured_solution_is_recovered() {
        let params = PhysicalParams::elasticity(1.0);
        let prob = Manufactured::elasticity(2, params).unwrap();
        let mut errs = Vec::new();
        for n in [4, 8] {
            let m = build_structured_mesh(2, n).unwrap();
            let sol = solve_elasticity(
                &m,
                &params,
                |x| prob.body_force(0.0, x),
                |x| prob.displacement(0.0, x),
                &ElasticityConfig::for_dim(2, Method::Gmres),
            )
            .unwrap();
            assert_eq!(sol.report.nesting_depth, 2);
            errs.push(
                crate::wgfem::weak_gradient_error(&m, &sol.u, |x| {
                    prob.displacement_gradient(0.0, x)
                })
                .unwrap(),
            );
        }
        let rate = (errs[0] / errs[1]).log2();
        assert!(rate > 0.8, "errors {errs:?}");
    }
}
