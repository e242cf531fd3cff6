use std::cell::Cell;
use std::io::Write;
use std::time::Instant;

use super::{axpy, dot, norm2, LinearOperator};
use crate::error::{Error, Result};

/// Approximate inverse action `z = P⁻¹ r`.
pub trait Preconditioner {
    fn dim(&self) -> usize;
    fn apply(&self, r: &[f64], z: &mut [f64]) -> Result<()>;
    /// Cumulative Krylov iterations spent in nested solves.
    fn inner_iterations(&self) -> usize {
        0
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IdentityPreconditioner(pub usize);

impl Preconditioner for IdentityPreconditioner {
    fn dim(&self) -> usize {
        self.0
    }
    fn apply(&self, r: &[f64], z: &mut [f64]) -> Result<()> {
        z.copy_from_slice(r);
        Ok(())
    }
}

/// Norm in which MINRES measures the residual for its stopping test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResidualNorm {
    /// `‖r‖_{P⁻¹}`, the quantity MINRES minimizes.
    #[default]
    Preconditioned,
    /// Euclidean `‖b - A x‖`, tracked by a short recurrence.
    Euclidean,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub tol: f64,
    pub maxit: usize,
    pub restart: usize,
    pub residual_norm: ResidualNorm,
}

impl SolveOptions {
    pub fn new(tol: f64, maxit: usize) -> Self {
        SolveOptions {
            tol,
            maxit,
            restart: 30,
            residual_norm: ResidualNorm::Preconditioned,
        }
    }

    pub fn with_restart(mut self, restart: usize) -> Self {
        self.restart = restart;
        self
    }

    pub fn with_residual_norm(mut self, norm: ResidualNorm) -> Self {
        self.residual_norm = norm;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol < 1.0) || self.maxit == 0 || self.restart == 0 {
            return Err(Error::InvalidInput(format!(
                "invalid solver options {self:?}"
            )));
        }
        Ok(())
    }
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions::new(1e-8, 1000)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    ZeroRhs,
    /// Lanczos/Arnoldi found an invariant subspace; the iterate is exact.
    Breakdown,
    MaxIterations,
    /// A full GMRES restart cycle made no progress.
    Stagnation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub solver: &'static str,
    pub iterations: usize,
    pub converged: bool,
    pub stop_reason: StopReason,
    /// Stopping-criterion residual, starting with 1.
    pub relative_residuals: Vec<f64>,
    /// `‖b - A x‖ / ‖b‖` of the returned iterate.
    pub true_relative_residual: f64,
    pub inner_iterations_total: usize,
    /// Krylov levels active at and below this solve.
    pub nesting_depth: usize,
    pub wall_time: f64,
}

impl SolveReport {
    pub fn final_relres(&self) -> f64 {
        self.relative_residuals.last().copied().unwrap_or(0.0)
    }

    /// CSV rows `iteration,relres`.
    pub fn write_history_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "iteration,relres")?;
        for (k, r) in self.relative_residuals.iter().enumerate() {
            writeln!(out, "{k},{r:.6e}")?;
        }
        Ok(())
    }

    fn zero_rhs(solver: &'static str, n: usize, start: Instant) -> (Vec<f64>, SolveReport) {
        let report = SolveReport {
            solver,
            iterations: 0,
            converged: true,
            stop_reason: StopReason::ZeroRhs,
            relative_residuals: vec![0.0],
            true_relative_residual: 0.0,
            inner_iterations_total: 0,
            nesting_depth: 1,
            wall_time: start.elapsed().as_secs_f64(),
        };
        (vec![0.0; n], report)
    }
}

thread_local! {
    static DEPTH: Cell<usize> = const { Cell::new(0) };
    static DEEPEST: Cell<usize> = const { Cell::new(0) };
}

/// Number of Krylov solves currently active on this thread.
pub fn nesting_depth() -> usize {
    DEPTH.with(Cell::get)
}

struct DepthGuard {
    level: usize,
    saved_deepest: usize,
}

impl DepthGuard {
    fn enter() -> Self {
        let level = DEPTH.with(|d| {
            d.set(d.get() + 1);
            d.get()
        });
        let saved_deepest = DEEPEST.with(|d| d.replace(level));
        DepthGuard {
            level,
            saved_deepest,
        }
    }

    fn levels_below(&self) -> usize {
        DEEPEST.with(Cell::get) - self.level + 1
    }
}

impl Drop for DepthGuard {
    fn drop(&mut self) {
        DEPTH.with(|d| d.set(d.get() - 1));
        DEEPEST.with(|d| d.set(d.get().max(self.saved_deepest)));
    }
}

fn check_dims(a: &dyn LinearOperator, p: &dyn Preconditioner, b: &[f64]) -> Result<()> {
    if a.dim() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.len(),
        });
    }
    if p.dim() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: b.len(),
            got: p.dim(),
        });
    }
    Ok(())
}

fn true_relres(a: &dyn LinearOperator, b: &[f64], x: &[f64]) -> f64 {
    let mut r = vec![0.0; b.len()];
    a.apply(x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    norm2(&r) / norm2(b)
}

/// Preconditioned conjugate gradients from a zero initial guess.
///
/// Stops when `‖b - A x‖ / ‖b‖ ≤ tol` (recursively updated residual).
pub fn pcg(
    a: &dyn LinearOperator,
    b: &[f64],
    m: &dyn Preconditioner,
    opts: SolveOptions,
) -> Result<(Vec<f64>, SolveReport)> {
    opts.validate()?;
    check_dims(a, m, b)?;
    let start = Instant::now();
    let n = b.len();
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok(SolveReport::zero_rhs("pcg", n, start));
    }
    let guard = DepthGuard::enter();
    let inner0 = m.inner_iterations();

    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z = vec![0.0; n];
    let mut q = vec![0.0; n];
    m.apply(&r, &mut z)?;
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut history = vec![1.0];
    let mut stop = StopReason::MaxIterations;
    let mut it = 0;
    while it < opts.maxit {
        a.apply(&p, &mut q);
        let pq = dot(&p, &q);
        if pq == 0.0 {
            stop = StopReason::Breakdown;
            break;
        }
        let alpha = rz / pq;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &q, &mut r);
        it += 1;
        let rel = norm2(&r) / bnorm;
        if !rel.is_finite() {
            return Err(Error::NonFinite {
                solver: "pcg",
                iteration: it,
            });
        }
        history.push(rel);
        if rel <= opts.tol {
            stop = StopReason::Converged;
            break;
        }
        m.apply(&r, &mut z)?;
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }

    let report = SolveReport {
        solver: "pcg",
        iterations: it,
        converged: matches!(stop, StopReason::Converged | StopReason::Breakdown),
        stop_reason: stop,
        relative_residuals: history,
        true_relative_residual: true_relres(a, b, &x),
        inner_iterations_total: m.inner_iterations() - inner0,
        nesting_depth: guard.levels_below(),
        wall_time: start.elapsed().as_secs_f64(),
    };
    Ok((x, report))
}

/// Preconditioned MINRES for symmetric (indefinite) `A` and SPD `P`.
///
/// Lanczos runs in the `P⁻¹` inner product; the stopping measure is
/// `‖r‖_{P⁻¹} / ‖b‖_{P⁻¹}`, which is non-increasing.
pub fn minres(
    a: &dyn LinearOperator,
    b: &[f64],
    p: &dyn Preconditioner,
    opts: SolveOptions,
) -> Result<(Vec<f64>, SolveReport)> {
    opts.validate()?;
    check_dims(a, p, b)?;
    let start = Instant::now();
    let n = b.len();
    if norm2(b) == 0.0 {
        return Ok(SolveReport::zero_rhs("minres", n, start));
    }
    let guard = DepthGuard::enter();
    let inner0 = p.inner_iterations();

    let mut x = vec![0.0; n];
    let mut r1 = b.to_vec();
    let mut r2 = b.to_vec();
    let mut y = vec![0.0; n];
    p.apply(&r1, &mut y)?;
    let py = dot(&r1, &y);
    if !(py > 0.0) {
        return Err(Error::InvalidInput(
            "MINRES preconditioner is not positive definite".into(),
        ));
    }
    let beta1 = py.sqrt();
    let mut beta = beta1;
    let mut oldb = 0.0;
    let (mut dbar, mut epsln, mut phibar) = (0.0, 0.0, beta1);
    let (mut cs, mut sn) = (-1.0f64, 0.0f64);
    let mut v = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut w1 = vec![0.0; n];
    let mut w2 = vec![0.0; n];
    // Euclidean residual recurrence: r -= φ A w with A w built like w.
    let euclid = opts.residual_norm == ResidualNorm::Euclidean;
    let bnorm = norm2(b);
    let mut r_true = if euclid { b.to_vec() } else { Vec::new() };
    let (mut aw, mut aw1, mut aw2, mut av) = if euclid {
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n])
    } else {
        Default::default()
    };
    let mut history = vec![1.0];
    let mut stop = StopReason::MaxIterations;
    let mut it = 0;

    while it < opts.maxit {
        it += 1;
        let s = 1.0 / beta;
        for (vi, yi) in v.iter_mut().zip(&y) {
            *vi = s * yi;
        }
        a.apply(&v, &mut y);
        if euclid {
            av.copy_from_slice(&y);
        }
        if it >= 2 {
            axpy(-beta / oldb, &r1, &mut y);
        }
        let alfa = dot(&v, &y);
        axpy(-alfa / beta, &r2, &mut y);
        std::mem::swap(&mut r1, &mut r2);
        r2.copy_from_slice(&y);
        p.apply(&r2, &mut y)?;
        oldb = beta;
        let py = dot(&r2, &y);
        if py < 0.0 {
            return Err(Error::InvalidInput(
                "MINRES preconditioner is not positive definite".into(),
            ));
        }
        beta = py.sqrt();

        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = gbar.hypot(beta).max(f64::EPSILON);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;

        std::mem::swap(&mut w1, &mut w2);
        std::mem::swap(&mut w2, &mut w);
        for i in 0..n {
            w[i] = (v[i] - oldeps * w1[i] - delta * w2[i]) / gamma;
        }
        axpy(phi, &w, &mut x);

        let rel = if euclid {
            std::mem::swap(&mut aw1, &mut aw2);
            std::mem::swap(&mut aw2, &mut aw);
            for i in 0..n {
                aw[i] = (av[i] - oldeps * aw1[i] - delta * aw2[i]) / gamma;
            }
            axpy(-phi, &aw, &mut r_true);
            norm2(&r_true) / bnorm
        } else {
            phibar.abs() / beta1
        };
        if !rel.is_finite() || !phi.is_finite() {
            return Err(Error::NonFinite {
                solver: "minres",
                iteration: it,
            });
        }
        history.push(rel);
        if rel <= opts.tol {
            stop = StopReason::Converged;
            break;
        }
        if beta <= f64::EPSILON * beta1 {
            stop = StopReason::Breakdown;
            break;
        }
    }

    let report = SolveReport {
        solver: "minres",
        iterations: it,
        converged: matches!(stop, StopReason::Converged | StopReason::Breakdown),
        stop_reason: stop,
        relative_residuals: history,
        true_relative_residual: true_relres(a, b, &x),
        inner_iterations_total: p.inner_iterations() - inner0,
        nesting_depth: guard.levels_below(),
        wall_time: start.elapsed().as_secs_f64(),
    };
    Ok((x, report))
}

/// Left-preconditioned restarted GMRES with modified Gram–Schmidt.
///
/// Stops when `‖P⁻¹(b - A x)‖ / ‖P⁻¹ b‖ ≤ tol`; `iterations` counts inner
/// steps summed over restart cycles.
pub fn gmres_restarted(
    a: &dyn LinearOperator,
    b: &[f64],
    p: &dyn Preconditioner,
    opts: SolveOptions,
) -> Result<(Vec<f64>, SolveReport)> {
    opts.validate()?;
    check_dims(a, p, b)?;
    let start = Instant::now();
    let n = b.len();
    if norm2(b) == 0.0 {
        return Ok(SolveReport::zero_rhs("gmres", n, start));
    }
    let guard = DepthGuard::enter();
    let inner0 = p.inner_iterations();
    let m = opts.restart;

    let mut x = vec![0.0; n];
    let mut r = vec![0.0; n];
    p.apply(b, &mut r)?;
    let bnorm = norm2(&r);
    if bnorm == 0.0 {
        return Err(Error::InvalidInput(
            "GMRES preconditioner maps a nonzero right-hand side to zero".into(),
        ));
    }
    let mut history = vec![1.0];
    let mut stop = StopReason::MaxIterations;
    let mut total = 0;
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
    let mut h = vec![vec![0.0; m]; m + 1];
    let mut cs = vec![0.0; m];
    let mut sn = vec![0.0; m];
    let mut g = vec![0.0; m + 1];
    let mut av = vec![0.0; n];
    let mut rnorm = bnorm;

    'cycles: while total < opts.maxit {
        basis.clear();
        basis.push(r.iter().map(|v| v / rnorm).collect());
        g.iter_mut().for_each(|v| *v = 0.0);
        g[0] = rnorm;
        let cycle_start = rnorm;
        let mut k = 0;
        let mut done = false;
        while k < m && total < opts.maxit {
            a.apply(&basis[k], &mut av);
            let mut wv = vec![0.0; n];
            p.apply(&av, &mut wv)?;
            for (i, vi) in basis.iter().enumerate() {
                let hij = dot(&wv, vi);
                h[i][k] = hij;
                axpy(-hij, vi, &mut wv);
            }
            let hnext = norm2(&wv);
            for i in 0..k {
                let t = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                h[i][k] = t;
            }
            let denom = h[k][k].hypot(hnext);
            if denom == 0.0 {
                stop = StopReason::Breakdown;
                done = true;
                break;
            }
            cs[k] = h[k][k] / denom;
            sn[k] = hnext / denom;
            h[k][k] = denom;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k += 1;
            total += 1;
            let rel = g[k].abs() / bnorm;
            if !rel.is_finite() {
                return Err(Error::NonFinite {
                    solver: "gmres",
                    iteration: total,
                });
            }
            history.push(rel);
            if rel <= opts.tol {
                stop = StopReason::Converged;
                done = true;
                break;
            }
            if hnext <= f64::EPSILON * bnorm {
                stop = StopReason::Breakdown;
                done = true;
                break;
            }
            basis.push(wv.iter().map(|v| v / hnext).collect());
        }

        let mut yk = g[..k].to_vec();
        for i in (0..k).rev() {
            let s: f64 = (i + 1..k).map(|j| h[i][j] * yk[j]).sum();
            yk[i] = (yk[i] - s) / h[i][i];
        }
        for (vi, &yi) in basis.iter().zip(&yk) {
            axpy(yi, vi, &mut x);
        }
        if done {
            break 'cycles;
        }

        a.apply(&x, &mut av);
        for (ai, bi) in av.iter_mut().zip(b) {
            *ai = bi - *ai;
        }
        p.apply(&av, &mut r)?;
        rnorm = norm2(&r);
        if rnorm / bnorm <= opts.tol {
            stop = StopReason::Converged;
            break;
        }
        if rnorm >= cycle_start * (1.0 - 1e-12) {
            stop = StopReason::Stagnation;
            break;
        }
    }

    let report = SolveReport {
        solver: "gmres",
        iterations: total,
        converged: matches!(stop, StopReason::Converged | StopReason::Breakdown),
        stop_reason: stop,
        relative_residuals: history,
        true_relative_residual: true_relres(a, b, &x),
        inner_iterations_total: p.inner_iterations() - inner0,
        nesting_depth: guard.levels_below(),
        wall_time: start.elapsed().as_secs_f64(),
    };
    Ok((x, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{IncompleteCholesky, SparseMatrix};

    fn diag(d: &[f64]) -> SparseMatrix {
        SparseMatrix::from_diagonal(d)
    }

    #[test]
    fn identity_converges_in_one_step() {
        let a = SparseMatrix::identity(4);
        let b = [1.0, 2.0, 3.0, 4.0];
        let id = IdentityPreconditioner(4);
        let opts = SolveOptions::new(1e-12, 10);
        for solve in [pcg, minres, gmres_restarted] {
            let (x, rep) = solve(&a, &b, &id, opts).unwrap();
            assert_eq!(rep.iterations, 1, "{}", rep.solver);
            assert!(rep.converged);
            for (xi, bi) in x.iter().zip(&b) {
                assert!((xi - bi).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn pcg_finite_termination() {
        let d: Vec<f64> = (1..=10).map(f64::from).collect();
        let (x, rep) = pcg(
            &diag(&d),
            &[1.0; 10],
            &IdentityPreconditioner(10),
            SolveOptions::new(1e-12, 100),
        )
        .unwrap();
        assert!(rep.iterations <= 10);
        for (xi, di) in x.iter().zip(&d) {
            assert!((xi - 1.0 / di).abs() < 1e-12);
        }
    }

    #[test]
    fn minres_indefinite_diagonal() {
        let (x, rep) = minres(
            &diag(&[1.0, -1.0]),
            &[1.0, 1.0],
            &IdentityPreconditioner(2),
            SolveOptions::new(1e-12, 10),
        )
        .unwrap();
        assert!(rep.iterations <= 2);
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn gmres_permutation() {
        let a =
            SparseMatrix::from_triplets(3, 3, &[(0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0)]).unwrap();
        let (x, rep) = gmres_restarted(
            &a,
            &[1.0, 0.0, 0.0],
            &IdentityPreconditioner(3),
            SolveOptions::new(1e-12, 10),
        )
        .unwrap();
        assert!(rep.iterations <= 3);
        assert_eq!(
            a.mul_vec(&x).iter().map(|v| v.round()).collect::<Vec<_>>(),
            vec![1.0, 0.0, 0.0]
        );
    }

    #[test]
    fn zero_rhs_returns_zero() {
        let a = SparseMatrix::identity(3);
        let (x, rep) = minres(
            &a,
            &[0.0; 3],
            &IdentityPreconditioner(3),
            SolveOptions::default(),
        )
        .unwrap();
        assert_eq!(x, vec![0.0; 3]);
        assert_eq!((rep.iterations, rep.stop_reason), (0, StopReason::ZeroRhs));
    }

    #[test]
    fn tridiagonal_with_ichol_is_direct() {
        let n = 5;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        let a = SparseMatrix::from_triplets(n, n, &t).unwrap();
        let f = IncompleteCholesky::new(&a, 1e-3).unwrap();
        let (_, rep) = pcg(&a, &[1.0; 5], &f, SolveOptions::new(1e-12, 50)).unwrap();
        assert!(rep.iterations <= 5 && rep.converged);
    }

    #[test]
    fn gmres_restart_counts_total_iterations() {
        let n = 40;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 3.0 + (i % 7) as f64));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -0.5));
            }
        }
        let a = SparseMatrix::from_triplets(n, n, &t).unwrap();
        let b = vec![1.0; n];
        let (x, rep) = gmres_restarted(
            &a,
            &b,
            &IdentityPreconditioner(n),
            SolveOptions::new(1e-10, 500).with_restart(5),
        )
        .unwrap();
        assert!(rep.converged);
        assert!(rep.iterations > 5);
        assert_eq!(rep.relative_residuals.len(), rep.iterations + 1);
        assert!(
            rep.true_relative_residual < 1e-8,
            "{}",
            rep.true_relative_residual
        );
        assert_eq!(x.len(), n);
    }

    #[test]
    fn rejects_bad_options() {
        let a = SparseMatrix::identity(2);
        let id = IdentityPreconditioner(2);
        assert!(pcg(&a, &[1.0, 1.0], &id, SolveOptions::new(0.0, 10)).is_err());
        assert!(pcg(&a, &[1.0], &id, SolveOptions::default()).is_err());
    }

    #[test]
    fn depth_is_one_for_plain_solves() {
        let a = SparseMatrix::identity(2);
        let (_, rep) = pcg(
            &a,
            &[1.0, 0.0],
            &IdentityPreconditioner(2),
            SolveOptions::default(),
        )
        .unwrap();
        assert_eq!(rep.nesting_depth, 1);
        assert_eq!(nesting_depth(), 0);
    }
}
