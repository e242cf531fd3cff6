//! Two-field (displacement, pressure) poroelasticity with implicit Euler.
//!
//! Each step solves the symmetric saddle system, scaled by `ε/μ`:
//!
//! ```text
//! [ εA1 + A0      -(αε/μ) Bᵀ ] [u]   [(ε/μ) b1]
//! [ -(αε/μ) B     -(ε/μ) D   ] [p] = [(ε/μ) b2]
//! ```
//!
//! The preconditioners use `(εA1 + A0)⁻¹` through the regularized elasticity
//! solver and `Ŝ = (ε/μ) D` for the Schur complement.

use std::io::Write;
use std::sync::Arc;

use crate::elasticity::{LeadingBlockSolver, DEFAULT_RHO};
use crate::error::{Error, Result};
use crate::linalg::{
    Block, BlockOperator, InnerConfig, Preconditioner, SolveOptions, SolveReport, SparseMatrix,
    SpdSolver,
};
use crate::mesh::Mesh;
use crate::params::PhysicalParams;
use crate::problems::PoroData;
use crate::wgfem::{assemble_loads, PreviousState, WgBlocks, WgField};
use crate::{Method, PrecondKind};

/// Displacement and pressure at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoroState {
    pub u: WgField,
    pub p: WgField,
    pub t: f64,
}

impl PoroState {
    /// Projects the initial data of `data` at time `t`.
    pub fn initial<D: PoroData + ?Sized>(mesh: &Mesh, data: &D, t: f64) -> Self {
        let mask = mesh.boundary_flags().to_vec();
        PoroState {
            u: WgField::project(mesh, mesh.dim(), mask.clone(), |x| {
                data.displacement_boundary(t, x)
            }),
            p: WgField::project(mesh, 1, mask, |x| [data.pressure_boundary(t, x), 0.0, 0.0]),
            t,
        }
    }

    pub fn zero(mesh: &Mesh) -> Self {
        let mask = mesh.boundary_flags().to_vec();
        PoroState {
            u: WgField::zeros(mesh, mesh.dim(), mask.clone()),
            p: WgField::zeros(mesh, 1, mask),
            t: 0.0,
        }
    }
}

/// The two-field operator; reusable across time steps.
#[derive(Debug, Clone)]
pub struct TwoFieldSystem {
    pub blocks: WgBlocks,
    pub params: PhysicalParams,
    pub epsilon: f64,
    /// `εA1 + A0` on free displacement unknowns.
    pub leading: Arc<SparseMatrix>,
    /// `[B°; 0]` on free unknowns.
    pub b: Arc<SparseMatrix>,
    operator: BlockOperator,
}

/// Right-hand side of one step plus the Dirichlet values it was lifted with.
#[derive(Debug, Clone)]
pub struct StepLoad {
    pub rhs: Vec<f64>,
    pub u_boundary: Vec<f64>,
    pub p_boundary: Vec<f64>,
    pub t: f64,
}

impl TwoFieldSystem {
    pub fn new(mesh: &Mesh, params: &PhysicalParams) -> Result<Self> {
        params.validate()?;
        let blocks = WgBlocks::assemble(mesh, params)?;
        let eps = params.epsilon();
        let leading = Arc::new(SparseMatrix::linear_combination(
            eps,
            &blocks.elasticity.a1,
            1.0,
            &blocks.elasticity.a0,
        )?);
        let b = Arc::new(blocks.b_full());
        let coupling = params.alpha * eps / params.mu;
        let (nu, np) = (leading.rows(), b.rows());
        let operator = BlockOperator::new(&[nu, np])
            .with(0, 0, Block::sparse(&leading, 1.0))?
            .with(0, 1, Block::sparse_transpose(&b, -coupling))?
            .with(1, 0, Block::sparse(&b, -coupling))?
            .with(1, 1, Block::sparse(&blocks.pressure.d, -eps / params.mu))?;
        Ok(TwoFieldSystem {
            blocks,
            params: *params,
            epsilon: eps,
            leading,
            b,
            operator,
        })
    }

    pub fn n_displacement(&self) -> usize {
        self.leading.rows()
    }

    pub fn n_pressure(&self) -> usize {
        self.b.rows()
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
    ) -> Result<StepLoad> {
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
        let scale = self.epsilon / p.mu;
        let mut rhs: Vec<f64> = loads
            .b1
            .iter()
            .chain(&loads.b2)
            .map(|v| scale * v)
            .collect();
        let nu = self.n_displacement();
        let (top, bottom) = rhs.split_at_mut(nu);
        el.a1_boundary.mul_vec_add(-self.epsilon, &u_boundary, top);
        el.a0_boundary.mul_vec_add(-1.0, &u_boundary, top);
        el.b_int_boundary
            .mul_vec_add(p.alpha * scale, &u_boundary, &mut bottom[..el.b_int.rows()]);
        pr.d_boundary.mul_vec_add(scale, &p_boundary, bottom);
        Ok(StepLoad {
            rhs,
            u_boundary,
            p_boundary,
            t,
        })
    }

    /// Splits a solution vector into the new state.
    pub fn state(&self, x: &[f64], load: &StepLoad) -> Result<PoroState> {
        let nu = self.n_displacement();
        Ok(PoroState {
            u: WgField::from_parts(&self.blocks.elasticity.dofs, &x[..nu], &load.u_boundary)?,
            p: WgField::from_parts(&self.blocks.pressure.dofs, &x[nu..], &load.p_boundary)?,
            t: load.t,
        })
    }
}

/// Operator plus the loads of one step.
pub fn assemble_two_field<D: PoroData + ?Sized>(
    mesh: &Mesh,
    params: &PhysicalParams,
    prev: &PoroState,
    data: &D,
) -> Result<(TwoFieldSystem, StepLoad)> {
    let system = TwoFieldSystem::new(mesh, params)?;
    let load = system.load(mesh, data, prev)?;
    Ok((system, load))
}

/// Settings of the nested solves inside the two-field preconditioners.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoFieldInner {
    /// Krylov method of the leading-block elasticity solve.
    pub leading_method: Method,
    pub rho: f64,
    /// Tolerance of the leading-block solve and of all PCG solves.
    pub config: InnerConfig,
}

impl Default for TwoFieldInner {
    fn default() -> Self {
        TwoFieldInner {
            leading_method: Method::Gmres,
            rho: DEFAULT_RHO,
            config: InnerConfig::default(),
        }
    }
}

/// `𝒫_d = blockdiag(εA1 + A0, Ŝ)` or `𝒫_t = [[εA1 + A0, 0], [-(αε/μ)B, -Ŝ]]`, `Ŝ = (ε/μ)D`.
#[derive(Debug)]
pub struct TwoFieldPreconditioner {
    kind: PrecondKind,
    leading: LeadingBlockSolver,
    d: SpdSolver,
    b: Arc<SparseMatrix>,
    coupling: f64,
    schur_scale: f64,
}

impl TwoFieldPreconditioner {
    pub fn new(system: &TwoFieldSystem, kind: PrecondKind, inner: TwoFieldInner) -> Result<Self> {
        let p = &system.params;
        Ok(TwoFieldPreconditioner {
            kind,
            leading: LeadingBlockSolver::new(
                &system.blocks.elasticity,
                p,
                inner.rho,
                inner.leading_method,
                inner.config,
            )?,
            d: SpdSolver::from_config(
                Arc::clone(&system.blocks.pressure.d),
                inner.config,
                "D solve in two-field preconditioner",
            )?,
            b: Arc::clone(&system.b),
            coupling: p.alpha * system.epsilon / p.mu,
            schur_scale: system.epsilon / p.mu,
        })
    }
}

impl Preconditioner for TwoFieldPreconditioner {
    fn dim(&self) -> usize {
        self.leading.dim() + self.d.dim()
    }

    fn apply(&self, r: &[f64], z: &mut [f64]) -> Result<()> {
        let nu = self.leading.dim();
        let y1 = self.leading.solve(&r[..nu])?;
        let y2 = match self.kind {
            PrecondKind::Diagonal => {
                let mut y = self.d.solve(&r[nu..])?;
                y.iter_mut().for_each(|v| *v /= self.schur_scale);
                y
            }
            PrecondKind::Triangular => {
                let mut t = r[nu..].to_vec();
                self.b.mul_vec_add(self.coupling, &y1, &mut t);
                let mut y = self.d.solve(&t)?;
                y.iter_mut().for_each(|v| *v /= -self.schur_scale);
                y
            }
        };
        z[..nu].copy_from_slice(&y1);
        z[nu..].copy_from_slice(&y2);
        Ok(())
    }

    fn inner_iterations(&self) -> usize {
        self.leading.iterations() + self.d.iterations()
    }
}

/// Solves one assembled step.
pub fn solve_two_field_step(
    system: &TwoFieldSystem,
    precond: &TwoFieldPreconditioner,
    load: &StepLoad,
    method: Method,
    opts: SolveOptions,
) -> Result<(PoroState, SolveReport)> {
    let (x, report) = method.solve(system.operator(), &load.rhs, precond, opts)?;
    if !report.converged {
        return Err(Error::NotConverged {
            context: format!("two-field step to t = {} ({})", load.t, method.name()),
            iterations: report.iterations,
            relres: report.final_relres(),
        });
    }
    Ok((system.state(&x, load)?, report))
}

/// Outer solver settings for time stepping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepConfig {
    pub method: Method,
    pub precond: PrecondKind,
    pub solve: SolveOptions,
    pub inner: TwoFieldInner,
}

impl StepConfig {
    pub fn new(method: Method) -> Self {
        StepConfig {
            method,
            precond: PrecondKind::for_method(method),
            solve: SolveOptions::new(1e-8, 1000),
            inner: TwoFieldInner::default(),
        }
    }
}

/// Report of one time step.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub t: f64,
    pub report: SolveReport,
}

/// Implicit Euler from `initial` over `steps` steps of size `params.dt`.
pub fn march<D: PoroData + ?Sized>(
    mesh: &Mesh,
    params: &PhysicalParams,
    data: &D,
    initial: PoroState,
    steps: usize,
    config: &StepConfig,
) -> Result<(Vec<PoroState>, Vec<StepRecord>)> {
    if steps == 0 {
        return Err(Error::InvalidInput("march needs at least one step".into()));
    }
    let system = TwoFieldSystem::new(mesh, params)?;
    config.precond.check_compatible(config.method)?;
    let precond = TwoFieldPreconditioner::new(&system, config.precond, config.inner)?;
    let mut states = Vec::with_capacity(steps);
    let mut records = Vec::with_capacity(steps);
    let mut prev = initial;
    for step in 0..steps {
        let load = system.load(mesh, data, &prev)?;
        let (state, report) =
            solve_two_field_step(&system, &precond, &load, config.method, config.solve)
                .map_err(|e| e.at_step(step + 1))?;
        records.push(StepRecord { t: state.t, report });
        states.push(state.clone());
        prev = state;
    }
    Ok((states, records))
}

/// CSV rows `t,outer_iters,inner_iters,relres,wall_time_s` (plus `regularized` when given).
pub fn write_trajectory_csv<W: Write>(
    records: &[StepRecord],
    regularized: Option<bool>,
    mut out: W,
) -> std::io::Result<()> {
    let extra = if regularized.is_some() {
        ",regularized"
    } else {
        ""
    };
    writeln!(out, "t,outer_iters,inner_iters,relres,wall_time_s{extra}")?;
    for r in records {
        write!(
            out,
            "{},{},{},{:.6e},{:.6}",
            r.t,
            r.report.iterations,
            r.report.inner_iterations_total,
            r.report.final_relres(),
            r.report.wall_time
        )?;
        match regularized {
            Some(flag) => writeln!(out, ",{}", flag as u8)?,
            None => writeln!(out)?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{norm2, DenseMatrix, LinearOperator};
    use crate::mesh::build_structured_mesh;
    use crate::problems::{Manufactured, TimeProfile, ZeroData};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn operator_is_symmetric() {
        let m = build_structured_mesh(2, 2).unwrap();
        let sys = TwoFieldSystem::new(&m, &PhysicalParams::poro(1e4, 1e-3)).unwrap();
        let a = sys.operator().to_dense();
        assert!(a.combine(1.0, &a.transpose(), -1.0).max_abs() <= 1e-10 * a.max_abs());
        let (nu, n) = (sys.n_displacement(), sys.operator().dim());
        for i in nu + m.n_elements()..n {
            for j in 0..nu {
                assert_eq!(a[(i, j)], 0.0, "facet pressure rows of B must vanish");
            }
        }
    }

    #[test]
    fn zero_data_gives_zero_step() {
        let m = build_structured_mesh(2, 2).unwrap();
        let params = PhysicalParams::poro(1.0, 1e-3);
        let (states, records) = march(
            &m,
            &params,
            &ZeroData,
            PoroState::zero(&m),
            2,
            &StepConfig::new(Method::Minres),
        )
        .unwrap();
        assert!(states
            .iter()
            .all(|s| s.u.full().iter().chain(&s.p.full()).all(|&v| v == 0.0)));
        assert_eq!(records[1].report.iterations, 0);
        assert!((states[1].t - 2e-3).abs() < 1e-15);
    }

    fn dense_preconditioner(sys: &TwoFieldSystem, kind: PrecondKind) -> DenseMatrix {
        let (nu, np) = (sys.n_displacement(), sys.n_pressure());
        let p = &sys.params;
        let mut out = DenseMatrix::zeros(nu + np, nu + np);
        out.set_block(0, 0, &sys.leading.to_dense());
        let d = sys.blocks.pressure.d.to_dense();
        let s = sys.epsilon / p.mu;
        match kind {
            PrecondKind::Diagonal => out.set_block(nu, nu, &d.combine(s, &d, 0.0)),
            PrecondKind::Triangular => {
                out.set_block(nu, nu, &d.combine(-s, &d, 0.0));
                let b = sys.b.to_dense();
                out.set_block(nu, 0, &b.combine(-p.alpha * s, &b, 0.0));
            }
        }
        out
    }

    #[test]
    fn preconditioners_match_dense_block_solves() {
        let m = build_structured_mesh(2, 2).unwrap();
        let sys = TwoFieldSystem::new(&m, &PhysicalParams::poro(1e4, 1e-3)).unwrap();
        let n = sys.operator().dim();
        for kind in [PrecondKind::Diagonal, PrecondKind::Triangular] {
            let pre = TwoFieldPreconditioner::new(&sys, kind, TwoFieldInner::default()).unwrap();
            let mut r = random(n, 9);
            if kind == PrecondKind::Diagonal {
                r[..sys.n_displacement()].iter_mut().for_each(|v| *v = 0.0);
            }
            let expect = dense_preconditioner(&sys, kind).solve(&r).unwrap();
            let mut y = vec![0.0; n];
            pre.apply(&r, &mut y).unwrap();
            let err: Vec<f64> = y.iter().zip(&expect).map(|(a, b)| a - b).collect();
            assert!(
                norm2(&err) <= 1e-8 * norm2(&expect),
                "{kind:?}: {}",
                norm2(&err) / norm2(&expect)
            );
            let mut zero = vec![1.0; n];
            pre.apply(&vec![0.0; n], &mut zero).unwrap();
            assert!(zero.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn decouples_when_storage_only() {
        // With α → 0 the coupling blocks vanish and u solves the elasticity block alone.
        let m = build_structured_mesh(2, 2).unwrap();
        let mut params = PhysicalParams::poro(1.0, 1e-3);
        params.alpha = 1e-300;
        let sys = TwoFieldSystem::new(&m, &params).unwrap();
        let a = sys.operator().to_dense();
        let nu = sys.n_displacement();
        for i in 0..nu {
            for j in nu..a.cols() {
                assert!(a[(i, j)].abs() < 1e-250);
            }
        }
    }

    #[test]
    fn step_matches_dense_solve() {
        let m = build_structured_mesh(2, 3).unwrap();
        let params = PhysicalParams::poro(1e4, 1e-3);
        let prob = Manufactured::poro(2, params, TimeProfile::Linear).unwrap();
        let start = PoroState::initial(&m, &prob, 0.0);
        let (sys, load) = assemble_two_field(&m, &params, &start, &prob).unwrap();
        let expect = sys.operator().to_dense().solve(&load.rhs).unwrap();
        for method in [Method::Minres, Method::Gmres] {
            let pre = TwoFieldPreconditioner::new(
                &sys,
                PrecondKind::for_method(method),
                TwoFieldInner::default(),
            )
            .unwrap();
            let (state, rep) =
                solve_two_field_step(&sys, &pre, &load, method, SolveOptions::new(1e-10, 200))
                    .unwrap();
            assert!(rep.iterations < 40, "{method:?} took {}", rep.iterations);
            assert_eq!(rep.nesting_depth, 3);
            let got = [
                state.u.free_values(&sys.blocks.elasticity.dofs),
                state.p.free_values(&sys.blocks.pressure.dofs),
            ]
            .concat();
            let err: Vec<f64> = got.iter().zip(&expect).map(|(a, b)| a - b).collect();
            assert!(norm2(&err) <= 1e-7 * norm2(&expect));
        }
    }

    #[test]
    fn one_march_step_equals_single_solve() {
        let m = build_structured_mesh(2, 2).unwrap();
        let params = PhysicalParams::poro(1.0, 1e-3);
        let prob = Manufactured::poro(2, params, TimeProfile::Linear).unwrap();
        let start = PoroState::initial(&m, &prob, 0.0);
        let cfg = StepConfig::new(Method::Gmres);
        let (states, _) = march(&m, &params, &prob, start.clone(), 1, &cfg).unwrap();
        let (sys, load) = assemble_two_field(&m, &params, &start, &prob).unwrap();
        let pre = TwoFieldPreconditioner::new(&sys, PrecondKind::Triangular, cfg.inner).unwrap();
        let (state, _) = solve_two_field_step(&sys, &pre, &load, Method::Gmres, cfg.solve).unwrap();
        assert_eq!(states[0], state);
    }

    #[test]
    fn trajectory_csv_layout() {
        let m = build_structured_mesh(2, 2).unwrap();
        let params = PhysicalParams::poro(1.0, 1e-3);
        let prob = Manufactured::poro(2, params, TimeProfile::Linear).unwrap();
        let (_, records) = march(
            &m,
            &params,
            &prob,
            PoroState::initial(&m, &prob, 0.0),
            2,
            &StepConfig::new(Method::Minres),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&records, None, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,outer_iters,inner_iters,relres,wall_time_s");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0.001,"));
    }
}
