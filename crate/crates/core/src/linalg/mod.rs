//! Sparse and dense kernels, Krylov solvers and operator composition.

mod dense;
mod ichol;
mod krylov;
mod operators;
mod sparse;

pub use dense::{
    generalized_symmetric_eigenvalues, symmetric_eigen, symmetric_eigenvalues, DenseCholesky,
    DenseMatrix,
};
pub use ichol::IncompleteCholesky;
pub use krylov::{
    gmres_restarted, minres, nesting_depth, pcg, IdentityPreconditioner, Preconditioner,
    ResidualNorm, SolveOptions, SolveReport, StopReason,
};
pub use operators::{
    smw_rank1_apply, Block, BlockOperator, InnerConfig, LinearOperator, ShermanMorrison, SpdSolver,
};
pub use sparse::SparseMatrix;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += a x`
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn scale(a: f64, x: &mut [f64]) {
    for xi in x {
        *xi *= a;
    }
}

pub(crate) fn all_finite(x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite())
}
