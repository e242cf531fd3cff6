//! Three-field (displacement, pressure, numerical pressure) poroelasticity.
//!
//! With `z = -M⁻¹B°u`, `x2 = -(α/μ) p` and `x3 = z/ε - x2°` one step solves
//!
//! ```text
//! [ A1    0                       -B°ᵀ          ] [u ]   [ r1 ]
//! [ 0    -(μ/α²)D - [εM + ρwwᵀ]₀  -[εM + ρwwᵀ]₀ ] [x2] = [ r2 ]
//! [ -B°  -[εM + ρwwᵀ]₀ᵀ           -εM - ρwwᵀ    ] [x3]   [ r3 ]
//! ```
//!
//! where `[·]₀` pads an interior-pressure block with zero facet rows. Only
//! PCG runs inside the preconditioners, so the solve nests two Krylov levels.

use std::sync::Arc;

use crate::elasticity::constant_mode;
use crate::error::{Error, Result};
use crate::linalg::{
    Block, BlockOperator, InnerConfig, Preconditioner, ShermanMorrison, SolveOptions, SolveReport,
    SparseMatrix, SpdSolver,
};
use crate::mesh::Mesh;
use crate::params::PhysicalParams;
use crate::poro2::{PoroState, StepRecord};
use crate::problems::PoroData;
use crate::wgfem::{assemble_loads, PreviousState, WgBlocks, WgField};
use crate::{Method, PrecondKind};

/// Fraction of the smallest interior mass used as the regularization weight.
pub const RHO_FRACTION: f64 = 0.1;

/// `ρ = 0.1 · min diag(M)`.
pub fn choose_rho(mass: &[f64]) -> Result<f64> {
    let min = mass.iter().copied().fold(f64::INFINITY, f64::min);
    if mass.is_empty() || !(min > 0.0) {
        return Err(Error::InvalidInput(
            "interior mass must be a nonempty positive diagonal".into(),
        ));
    }
    Ok(RHO_FRACTION * min)
}

/// The three-field operator for fixed parameters; reusable across time steps.
#[derive(Debug, Clone)]
pub struct ThreeFieldSystem {
    pub blocks: WgBlocks,
    pub params: PhysicalParams,
    pub epsilon: f64,
    /// Zero when the system is not regularized.
    pub rho: f64,
    pub w: Arc<Vec<f64>>,
    pub mass_norm: f64,
    /// `(μ/α²)D + ε[M]₀` on free pressure unknowns.
    pub middle_sparse: Arc<SparseMatrix>,
    operator: BlockOperator,
}

/// Right-hand side of one step and the Dirichlet values used for lifting.
#[derive(Debug, Clone)]
pub struct ThreeFieldLoad {
    pub rhs: Vec<f64>,
    pub u_boundary: Vec<f64>,
    pub p_boundary: Vec<f64>,
    pub t: f64,
}

/// State after a three-field step together with the numerical pressure.
#[derive(Debug, Clone, PartialEq)]
pub struct ThreeFieldState {
    pub state: PoroState,
    pub z: Vec<f64>,
}

/// Builds the system with `ρ` from [`choose_rho`], or `ρ = 0` when `regularize` is false.
pub fn build_three_field(
    mesh: &Mesh,
    params: &PhysicalParams,
    regularize: bool,
) -> Result<ThreeFieldSystem> {
    let blocks = WgBlocks::assemble(mesh, params)?;
    let rho = if regularize {
        choose_rho(&blocks.elasticity.mass)?
    } else {
        0.0
    };
    ThreeFieldSystem::from_blocks(blocks, params, rho)
}

impl ThreeFieldSystem {
    pub fn from_blocks(blocks: WgBlocks, params: &PhysicalParams, rho: f64) -> Result<Self> {
        params.validate()?;
        if !(rho >= 0.0) || !rho.is_finite() {
            return Err(Error::InvalidInput(format!(
                "regularization weight must be finite and nonnegative, got {rho}"
            )));
        }
        let eps = params.epsilon();
        let el = &blocks.elasticity;
        let (w, mass_norm) = constant_mode(&el.mass);
        let w = Arc::new(w);
        let (nu, np, nz) = (el.a1.rows(), blocks.pressure.d.rows(), el.mass.len());
        let mass_padded = Arc::new(SparseMatrix::from_triplets(
            np,
            nz,
            &el.mass
                .iter()
                .enumerate()
                .map(|(i, &m)| (i, i, m))
                .collect::<Vec<_>>(),
        )?);
        let middle_sparse = Arc::new(SparseMatrix::linear_combination(
            params.mu / (params.alpha * params.alpha),
            &blocks.pressure.d,
            eps,
            &SparseMatrix::from_triplets(np, np, &mass_padded.triplets().collect::<Vec<_>>())?,
        )?);
        let with_rank1 = |mut parts: Vec<Block>| {
            if rho > 0.0 {
                parts.push(Block::Rank1 {
                    u: Arc::clone(&w),
                    v: Arc::clone(&w),
                    scale: -rho,
                });
            }
            Block::Sum(parts)
        };
        let operator = BlockOperator::new(&[nu, np, nz])
            .with(0, 0, Block::sparse(&el.a1, 1.0))?
            .with(0, 2, Block::sparse_transpose(&el.b_int, -1.0))?
            .with(1, 1, with_rank1(vec![Block::sparse(&middle_sparse, -1.0)]))?
            .with(1, 2, with_rank1(vec![Block::sparse(&mass_padded, -eps)]))?
            .with(2, 0, Block::sparse(&el.b_int, -1.0))?
            .with(
                2,
                1,
                with_rank1(vec![Block::sparse_transpose(&mass_padded, -eps)]),
            )?
            .with(
                2,
                2,
                with_rank1(vec![Block::Diagonal {
                    values: Arc::clone(&el.mass),
                    scale: -eps,
                }]),
            )?;
        Ok(ThreeFieldSystem {
            blocks,
            params: *params,
            epsilon: eps,
            rho,
            w,
            mass_norm,
            middle_sparse,
            operator,
        })
    }

    pub fn n_displacement(&self) -> usize {
        self.blocks.elasticity.a1.rows()
    }

    pub fn n_pressure(&self) -> usize {
        self.middle_sparse.rows()
    }

    pub fn n_interior(&self) -> usize {
        self.w.len()
    }

    pub fn is_regularized(&self) -> bool {
        self.rho > 0.0
    }

    pub fn operator(&self) -> &BlockOperator {
        &self.operator
    }

    /// Loads for the step from `prev` to `prev.t + Δt`.
    pub fn load<D: PoroData + ?Sized>(
        &self,
        mesh: &Mesh,
        data: &D,
        prev: &PoroState,
    ) -> Result<ThreeFieldLoad> {
        let p = &self.params;
        let t = prev.t + p.dt;
        let el = &self.blocks.elasticity;
        let pr = &self.blocks.pressure;
        let loads = assemble_loads(
            mesh,
            &self.blocks,
            |x| data.body_force(t, x),
            |x| data.source(t, x),
            p,
            PreviousState {
                displacement: &prev.u,
                pressure: &prev.p,
            },
        )?;
        let u_boundary = WgField::project(mesh, mesh.dim(), el.dofs.dirichlet_mask(), |x| {
            data.displacement_boundary(t, x)
        })
        .boundary_values(&el.dofs);
        let p_boundary = WgField::project(mesh, 1, pr.dofs.dirichlet_mask(), |x| {
            [data.pressure_boundary(t, x), 0.0, 0.0]
        })
        .boundary_values(&pr.dofs);

        let (nu, np) = (self.n_displacement(), self.n_pressure());
        let mut rhs = vec![0.0; nu + np + self.n_interior()];
        let (r1, rest) = rhs.split_at_mut(nu);
        let (r2, r3) = rest.split_at_mut(np);
        r1.iter_mut()
            .zip(&loads.b1)
            .for_each(|(r, b)| *r = b / p.mu);
        el.a1_boundary.mul_vec_add(-1.0, &u_boundary, r1);
        r2.iter_mut()
            .zip(&loads.b2)
            .for_each(|(r, b)| *r = -b / p.alpha);
        pr.d_boundary.mul_vec_add(-1.0 / p.alpha, &p_boundary, r2);
        el.b_int_boundary.mul_vec_add(1.0, &u_boundary, r3);
        // wᵀz / ε is fixed by the boundary data alone.
        let wz = -r3.iter().sum::<f64>() / (self.epsilon * self.mass_norm);
        for (i, wi) in self.w.iter().enumerate() {
            r2[i] -= self.rho * wi * wz;
            r3[i] -= self.rho * wi * wz;
        }
        Ok(ThreeFieldLoad {
            rhs,
            u_boundary,
            p_boundary,
            t,
        })
    }

    /// Recovers `(u, p, z)` from a solution vector.
    pub fn state(&self, x: &[f64], load: &ThreeFieldLoad) -> Result<ThreeFieldState> {
        let (nu, np) = (self.n_displacement(), self.n_pressure());
        let (mu, alpha) = (self.params.mu, self.params.alpha);
        let p_free: Vec<f64> = x[nu..nu + np].iter().map(|v| -mu / alpha * v).collect();
        let z = x[nu + np..]
            .iter()
            .zip(&x[nu..])
            .map(|(x3, x2)| self.epsilon * (x3 + x2))
            .collect();
        Ok(ThreeFieldState {
            state: PoroState {
                u: WgField::from_parts(&self.blocks.elasticity.dofs, &x[..nu], &load.u_boundary)?,
                p: WgField::from_parts(&self.blocks.pressure.dofs, &p_free, &load.p_boundary)?,
                t: load.t,
            },
            z,
        })
    }
}

/// `𝒫_{d,3} = blockdiag(A1, Mid, M)` or `𝒫_{t,3} = [[A1, 0, 0], [0, -Mid, 0], [-B°, 0, -M]]`
/// with `Mid = (μ/α²)D + [εM + ρwwᵀ]₀`.
#[derive(Debug)]
pub struct ThreeFieldPreconditioner {
    kind: PrecondKind,
    a1: SpdSolver,
    middle: SpdSolver,
    /// Rank-one correction of the middle solve; absent when `ρ = 0`.
    rank1: Option<ShermanMorrison>,
    b_int: Arc<SparseMatrix>,
    mass: Arc<Vec<f64>>,
}

impl ThreeFieldPreconditioner {
    pub fn new(system: &ThreeFieldSystem, kind: PrecondKind, inner: InnerConfig) -> Result<Self> {
        let el = &system.blocks.elasticity;
        let middle = SpdSolver::from_config(
            Arc::clone(&system.middle_sparse),
            inner,
            "middle-block solve in three-field preconditioner",
        )?;
        let rank1 = if system.is_regularized() {
            let mut w = system.w.to_vec();
            w.resize(system.n_pressure(), 0.0);
            let base_inv_w = middle.solve(&w)?;
            Some(ShermanMorrison::new(w, base_inv_w, system.rho)?)
        } else {
            None
        };
        Ok(ThreeFieldPreconditioner {
            kind,
            a1: SpdSolver::from_config(
                Arc::clone(&el.a1),
                inner,
                "A1 solve in three-field preconditioner",
            )?,
            middle,
            rank1,
            b_int: Arc::clone(&el.b_int),
            mass: Arc::clone(&el.mass),
        })
    }

    fn solve_middle(&self, r: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.middle.solve(r)?;
        if let Some(smw) = &self.rank1 {
            smw.correct(&mut y);
        }
        Ok(y)
    }
}

impl Preconditioner for ThreeFieldPreconditioner {
    fn dim(&self) -> usize {
        self.a1.dim() + self.middle.dim() + self.mass.len()
    }

    fn apply(&self, r: &[f64], z: &mut [f64]) -> Result<()> {
        let (nu, np) = (self.a1.dim(), self.middle.dim());
        let y1 = self.a1.solve(&r[..nu])?;
        let mut y2 = self.solve_middle(&r[nu..nu + np])?;
        let mut r3 = r[nu + np..].to_vec();
        let sign = match self.kind {
            PrecondKind::Diagonal => 1.0,
            PrecondKind::Triangular => {
                self.b_int.mul_vec_add(1.0, &y1, &mut r3);
                -1.0
            }
        };
        y2.iter_mut().for_each(|v| *v *= sign);
        z[..nu].copy_from_slice(&y1);
        z[nu..nu + np].copy_from_slice(&y2);
        for ((zi, ri), m) in z[nu + np..].iter_mut().zip(&r3).zip(self.mass.iter()) {
            *zi = sign * ri / m;
        }
        Ok(())
    }

    fn inner_iterations(&self) -> usize {
        self.a1.iterations() + self.middle.iterations()
    }
}

/// Solves one assembled three-field step.
pub fn solve_three_field_step(
    system: &ThreeFieldSystem,
    precond: &ThreeFieldPreconditioner,
    load: &ThreeFieldLoad,
    method: Method,
    opts: SolveOptions,
) -> Result<(ThreeFieldState, SolveReport)> {
    let (x, report) = method.solve(system.operator(), &load.rhs, precond, opts)?;
    if !report.converged {
        return Err(Error::NotConverged {
            context: format!("three-field step to t = {} ({})", load.t, method.name()),
            iterations: report.iterations,
            relres: report.final_relres(),
        });
    }
    Ok((system.state(&x, load)?, report))
}

/// Outer and inner solver settings for three-field time stepping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThreeFieldConfig {
    pub method: Method,
    pub precond: PrecondKind,
    pub regularize: bool,
    pub solve: SolveOptions,
    pub inner: InnerConfig,
}

impl ThreeFieldConfig {
    pub fn new(method: Method, regularize: bool) -> Self {
        ThreeFieldConfig {
            method,
            precond: PrecondKind::for_method(method),
            regularize,
            solve: SolveOptions::new(1e-8, 1000),
            inner: InnerConfig::default(),
        }
    }
}

/// Implicit Euler with the three-field solver.
pub fn march_three_field<D: PoroData + ?Sized>(
    mesh: &Mesh,
    params: &PhysicalParams,
    data: &D,
    initial: PoroState,
    steps: usize,
    config: &ThreeFieldConfig,
) -> Result<(Vec<ThreeFieldState>, Vec<StepRecord>)> {
    if steps == 0 {
        return Err(Error::InvalidInput("march needs at least one step".into()));
    }
    let system = build_three_field(mesh, params, config.regularize)?;
    config.precond.check_compatible(config.method)?;
    let precond = ThreeFieldPreconditioner::new(&system, config.precond, config.inner)?;
    let mut states = Vec::with_capacity(steps);
    let mut records = Vec::with_capacity(steps);
    let mut prev = initial;
    for step in 0..steps {
        let load = system.load(mesh, data, &prev)?;
        let (next, report) =
            solve_three_field_step(&system, &precond, &load, config.method, config.solve)
                .map_err(|e| e.at_step(step + 1))?;
        records.push(StepRecord {
            t: next.state.t,
            report,
        });
        prev = next.state.clone();
        states.push(next);
    }
    Ok((states, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{norm2, DenseMatrix, LinearOperator};
    use crate::mesh::build_structured_mesh;
    use crate::poro2::{march, StepConfig};
    use crate::problems::{Manufactured, TimeProfile, ZeroData};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        norm2(&d) / norm2(b).max(f64::MIN_POSITIVE)
    }

    #[test]
    fn rho_rule() {
        assert!((choose_rho(&[0.5, 0.25, 0.25]).unwrap() - 0.025).abs() < 1e-15);
        assert!(choose_rho(&[]).is_err());
        assert!(choose_rho(&[1.0, 0.0]).is_err());
        for n in [2, 4] {
            let m = build_structured_mesh(2, n).unwrap();
            let sys = build_three_field(&m, &PhysicalParams::poro(1.0, 1e-3), true).unwrap();
            assert!((sys.rho - 0.1 / (2 * n * n) as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn operator_is_symmetric() {
        let m = build_structured_mesh(2, 2).unwrap();
        for regularize in [true, false] {
            let sys = build_three_field(&m, &PhysicalParams::poro(1e4, 1e-3), regularize).unwrap();
            let a = sys.operator().to_dense();
            assert!(a.combine(1.0, &a.transpose(), -1.0).max_abs() <= 1e-10 * a.max_abs());
        }
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let m = build_structured_mesh(2, 2).unwrap();
        let cfg = ThreeFieldConfig::new(Method::Minres, true);
        let (states, _) = march_three_field(
            &m,
            &PhysicalParams::poro(1.0, 1e-3),
            &ZeroData,
            PoroState::zero(&m),
            1,
            &cfg,
        )
        .unwrap();
        assert!(states[0].z.iter().all(|&v| v == 0.0));
        assert!(states[0].state.u.full().iter().all(|&v| v == 0.0));
    }

    fn dense_preconditioner(sys: &ThreeFieldSystem, kind: PrecondKind) -> DenseMatrix {
        let (nu, np, nz) = (sys.n_displacement(), sys.n_pressure(), sys.n_interior());
        let el = &sys.blocks.elasticity;
        let mut mid = sys.middle_sparse.to_dense();
        let mut w = sys.w.to_vec();
        w.resize(np, 0.0);
        mid.add_outer(sys.rho, &w, &w);
        let sign = if kind == PrecondKind::Diagonal {
            1.0
        } else {
            -1.0
        };
        let mut out = DenseMatrix::zeros(nu + np + nz, nu + np + nz);
        out.set_block(0, 0, &el.a1.to_dense());
        out.set_block(nu, nu, &mid.combine(sign, &mid, 0.0));
        out.set_block(
            nu + np,
            nu + np,
            &DenseMatrix::from_diagonal(&el.mass).combine(sign, &DenseMatrix::zeros(nz, nz), 0.0),
        );
        if kind == PrecondKind::Triangular {
            out.set_block(
                nu + np,
                0,
                &el.b_int
                    .to_dense()
                    .combine(-1.0, &DenseMatrix::zeros(nz, nu), 0.0),
            );
        }
        out
    }

    #[test]
    fn preconditioners_match_dense_block_solves() {
        let m = build_structured_mesh(2, 2).unwrap();
        let sys = build_three_field(&m, &PhysicalParams::poro(1e4, 1e-3), true).unwrap();
        let n = sys.operator().dim();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for kind in [PrecondKind::Diagonal, PrecondKind::Triangular] {
            let pre = ThreeFieldPreconditioner::new(&sys, kind, InnerConfig::default()).unwrap();
            let expect = dense_preconditioner(&sys, kind).solve(&r).unwrap();
            let mut y = vec![0.0; n];
            pre.apply(&r, &mut y).unwrap();
            assert!(rel_diff(&y, &expect) <= 1e-8, "{kind:?}");
            pre.apply(&vec![0.0; n], &mut y).unwrap();
            assert!(y.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn agrees_with_two_field_solver() {
        let m = build_structured_mesh(2, 4).unwrap();
        let params = PhysicalParams::poro(1.0, 1e-3);
        let prob = Manufactured::poro(2, params, TimeProfile::Linear).unwrap();
        let start = PoroState::initial(&m, &prob, 0.0);
        let mut cfg2 = StepConfig::new(Method::Gmres);
        cfg2.solve = SolveOptions::new(1e-12, 1000);
        let (two, _) = march(&m, &params, &prob, start.clone(), 1, &cfg2).unwrap();
        for method in [Method::Minres, Method::Gmres] {
            let mut cfg = ThreeFieldConfig::new(method, true);
            cfg.solve = SolveOptions::new(1e-12, 1000);
            let (three, records) =
                march_three_field(&m, &params, &prob, start.clone(), 1, &cfg).unwrap();
            assert_eq!(records[0].report.nesting_depth, 2);
            assert!(rel_diff(&three[0].state.u.full(), &two[0].u.full()) <= 1e-6);
            assert!(rel_diff(&three[0].state.p.full(), &two[0].p.full()) <= 1e-6);
        }
    }

    #[test]
    fn regularization_preserves_solution() {
        let m = build_structured_mesh(2, 3).unwrap();
        let params = PhysicalParams::poro(1e4, 1e-3);
        let prob = Manufactured::poro(2, params, TimeProfile::Quadratic).unwrap();
        let start = PoroState::initial(&m, &prob, 0.0);
        let solve = |regularize| {
            let sys = build_three_field(&m, &params, regularize).unwrap();
            let load = sys.load(&m, &prob, &start).unwrap();
            let x = sys.operator().to_dense().solve(&load.rhs).unwrap();
            sys.state(&x, &load).unwrap()
        };
        let (on, off) = (solve(true), solve(false));
        assert!(rel_diff(&on.state.u.full(), &off.state.u.full()) <= 1e-8);
        assert!(rel_diff(&on.state.p.full(), &off.state.p.full()) <= 1e-8);
        assert!(rel_diff(&on.z, &off.z) <= 1e-8);
        // z is the numerical pressure -M⁻¹B°u.
        let sys = build_three_field(&m, &params, true).unwrap();
        let el = &sys.blocks.elasticity;
        let u = &on.state.u;
        let bu = el.divergence(&u.free_values(&el.dofs), &u.boundary_values(&el.dofs));
        let expect: Vec<f64> = bu.iter().zip(el.mass.iter()).map(|(b, m)| -b / m).collect();
        assert!(rel_diff(&on.z, &expect) <= 1e-8);
    }
}
