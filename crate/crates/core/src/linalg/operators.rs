use std::cell::Cell;
use std::sync::Arc;

use super::{
    dot, pcg, DenseMatrix, IncompleteCholesky, Preconditioner, SolveOptions, SparseMatrix,
};
use crate::error::{Error, Result};

/// Square linear map `y = Op x`.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);

    /// Dense copy built column by column; intended for small oracle problems.
    fn to_dense(&self) -> DenseMatrix {
        let n = self.dim();
        let mut out = DenseMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            self.apply(&e, &mut col);
            e[j] = 0.0;
            for i in 0..n {
                out[(i, j)] = col[i];
            }
        }
        out
    }
}

impl LinearOperator for SparseMatrix {
    fn dim(&self) -> usize {
        assert_eq!(
            self.rows(),
            self.cols(),
            "LinearOperator needs a square matrix"
        );
        self.rows()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.mul_vec_into(x, y);
    }
}

/// One block of a [`BlockOperator`].
#[derive(Debug, Clone)]
pub enum Block {
    Sparse {
        matrix: Arc<SparseMatrix>,
        scale: f64,
        transpose: bool,
    },
    Diagonal {
        values: Arc<Vec<f64>>,
        scale: f64,
    },
    /// `scale · u vᵀ`; `u` and `v` are zero-padded to the block shape.
    Rank1 {
        u: Arc<Vec<f64>>,
        v: Arc<Vec<f64>>,
        scale: f64,
    },
    Sum(Vec<Block>),
}

impl Block {
    pub fn sparse(matrix: &Arc<SparseMatrix>, scale: f64) -> Block {
        Block::Sparse {
            matrix: Arc::clone(matrix),
            scale,
            transpose: false,
        }
    }

    pub fn sparse_transpose(matrix: &Arc<SparseMatrix>, scale: f64) -> Block {
        Block::Sparse {
            matrix: Arc::clone(matrix),
            scale,
            transpose: true,
        }
    }

    fn fits(&self, rows: usize, cols: usize) -> bool {
        match self {
            Block::Sparse {
                matrix,
                transpose: false,
                ..
            } => matrix.rows() == rows && matrix.cols() == cols,
            Block::Sparse {
                matrix,
                transpose: true,
                ..
            } => matrix.cols() == rows && matrix.rows() == cols,
            Block::Diagonal { values, .. } => values.len() == rows && rows == cols,
            Block::Rank1 { u, v, .. } => u.len() <= rows && v.len() <= cols,
            Block::Sum(parts) => parts.iter().all(|b| b.fits(rows, cols)),
        }
    }

    /// `y += Block x`
    fn apply_add(&self, x: &[f64], y: &mut [f64]) {
        match self {
            Block::Sparse {
                matrix,
                scale,
                transpose: false,
            } => matrix.mul_vec_add(*scale, x, y),
            Block::Sparse {
                matrix,
                scale,
                transpose: true,
            } => matrix.mul_transpose_vec_add(*scale, x, y),
            Block::Diagonal { values, scale } => {
                for ((yi, xi), d) in y.iter_mut().zip(x).zip(values.iter()) {
                    *yi += scale * d * xi;
                }
            }
            Block::Rank1 { u, v, scale } => {
                let s = scale * dot(v, &x[..v.len()]);
                for (yi, ui) in y.iter_mut().zip(u.iter()) {
                    *yi += s * ui;
                }
            }
            Block::Sum(parts) => parts.iter().for_each(|b| b.apply_add(x, y)),
        }
    }
}

/// Square operator assembled from a grid of blocks; absent blocks are zero.
#[derive(Debug, Clone)]
pub struct BlockOperator {
    offsets: Vec<usize>,
    entries: Vec<(usize, usize, Block)>,
}

impl BlockOperator {
    pub fn new(block_sizes: &[usize]) -> Self {
        let mut offsets = vec![0];
        for s in block_sizes {
            offsets.push(offsets.last().unwrap() + s);
        }
        BlockOperator {
            offsets,
            entries: Vec::new(),
        }
    }

    pub fn block_size(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn n_blocks(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn with(mut self, i: usize, j: usize, block: Block) -> Result<Self> {
        if i >= self.n_blocks() || j >= self.n_blocks() {
            return Err(Error::InvalidInput(format!(
                "block ({i}, {j}) outside the block grid"
            )));
        }
        if !block.fits(self.block_size(i), self.block_size(j)) {
            return Err(Error::InvalidInput(format!(
                "block ({i}, {j}) does not fit a {}x{} slot",
                self.block_size(i),
                self.block_size(j)
            )));
        }
        self.entries.push((i, j, block));
        Ok(self)
    }

    pub fn range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }
}

impl LinearOperator for BlockOperator {
    fn dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.dim());
        y.iter_mut().for_each(|v| *v = 0.0);
        for (i, j, block) in &self.entries {
            let (ri, rj) = (self.range(*i), self.range(*j));
            block.apply_add(&x[rj], &mut y[ri]);
        }
    }
}

/// `y = (M + ρ w wᵀ)⁻¹ x` for diagonal positive `M`, in `O(n)`.
pub fn smw_rank1_apply(m_diag: &[f64], w: &[f64], rho: f64, x: &[f64]) -> Result<Vec<f64>> {
    let smw = ShermanMorrison::diagonal(m_diag, w, rho)?;
    Ok(smw.apply_diagonal(m_diag, x))
}

/// Rank-one Sherman–Morrison correction around a base solve `B⁻¹`:
/// `(B + ρ w wᵀ)⁻¹ x = y - ρ v (wᵀ y) / (1 + ρ wᵀ v)` with `y = B⁻¹ x`, `v = B⁻¹ w`.
#[derive(Debug, Clone)]
pub struct ShermanMorrison {
    w: Vec<f64>,
    base_inv_w: Vec<f64>,
    rho: f64,
    denom: f64,
}

impl ShermanMorrison {
    /// `base_inv_w` must be `B⁻¹ w` for the base operator `B`.
    pub fn new(w: Vec<f64>, base_inv_w: Vec<f64>, rho: f64) -> Result<Self> {
        if !(rho >= 0.0) || !rho.is_finite() {
            return Err(Error::InvalidInput(format!(
                "rank-one weight must be finite and nonnegative, got {rho}"
            )));
        }
        if w.len() != base_inv_w.len() {
            return Err(Error::DimensionMismatch {
                expected: w.len(),
                got: base_inv_w.len(),
            });
        }
        let denom = 1.0 + rho * dot(&w, &base_inv_w);
        if !(denom > 0.0) {
            return Err(Error::InvalidInput(
                "rank-one update makes the operator singular".into(),
            ));
        }
        Ok(ShermanMorrison {
            w,
            base_inv_w,
            rho,
            denom,
        })
    }

    pub fn diagonal(m_diag: &[f64], w: &[f64], rho: f64) -> Result<Self> {
        if m_diag.len() != w.len() {
            return Err(Error::DimensionMismatch {
                expected: m_diag.len(),
                got: w.len(),
            });
        }
        if let Some(i) = m_diag.iter().position(|&d| !(d > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "diagonal entry {i} is not positive"
            )));
        }
        let v = w.iter().zip(m_diag).map(|(wi, d)| wi / d).collect();
        Self::new(w.to_vec(), v, rho)
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Turns `y = B⁻¹ x` into `(B + ρ w wᵀ)⁻¹ x` in place.
    pub fn correct(&self, y: &mut [f64]) {
        let coef = self.rho * dot(&self.w, &y[..self.w.len()]) / self.denom;
        for (yi, vi) in y.iter_mut().zip(&self.base_inv_w) {
            *yi -= coef * vi;
        }
    }

    pub fn apply_diagonal(&self, m_diag: &[f64], x: &[f64]) -> Vec<f64> {
        let mut y: Vec<f64> = x.iter().zip(m_diag).map(|(xi, d)| xi / d).collect();
        self.correct(&mut y);
        y
    }
}

/// Settings of the inner PCG solves used inside block preconditioners.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerConfig {
    pub tol: f64,
    pub maxit: usize,
    pub droptol: f64,
}

impl Default for InnerConfig {
    fn default() -> Self {
        InnerConfig {
            tol: 1e-12,
            maxit: 1000,
            droptol: 1e-3,
        }
    }
}

impl InnerConfig {
    pub fn options(&self) -> SolveOptions {
        SolveOptions::new(self.tol, self.maxit)
    }
}

/// Inexact SPD solve by ichol-preconditioned CG to a fixed relative tolerance.
#[derive(Debug)]
pub struct SpdSolver {
    matrix: Arc<SparseMatrix>,
    factor: IncompleteCholesky,
    opts: SolveOptions,
    context: &'static str,
    iterations: Cell<usize>,
    solves: Cell<usize>,
}

impl SpdSolver {
    pub fn new(
        matrix: Arc<SparseMatrix>,
        droptol: f64,
        opts: SolveOptions,
        context: &'static str,
    ) -> Result<Self> {
        let factor = IncompleteCholesky::new(&matrix, droptol)?;
        Ok(SpdSolver {
            matrix,
            factor,
            opts,
            context,
            iterations: Cell::new(0),
            solves: Cell::new(0),
        })
    }

    pub fn from_config(
        matrix: Arc<SparseMatrix>,
        config: InnerConfig,
        context: &'static str,
    ) -> Result<Self> {
        Self::new(matrix, config.droptol, config.options(), context)
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let (x, rep) = pcg(self.matrix.as_ref(), b, &self.factor, self.opts)?;
        self.iterations.set(self.iterations.get() + rep.iterations);
        self.solves.set(self.solves.get() + 1);
        if !rep.converged {
            return Err(Error::NotConverged {
                context: self.context.to_string(),
                iterations: rep.iterations,
                relres: rep.final_relres(),
            });
        }
        Ok(x)
    }

    pub fn iterations(&self) -> usize {
        self.iterations.get()
    }

    pub fn solves(&self) -> usize {
        self.solves.get()
    }
}

impl Preconditioner for SpdSolver {
    fn dim(&self) -> usize {
        self.matrix.rows()
    }
    fn apply(&self, r: &[f64], z: &mut [f64]) -> Result<()> {
        z.copy_from_slice(&self.solve(r)?);
        Ok(())
    }
    fn inner_iterations(&self) -> usize {
        self.iterations.get()
    }
}

impl Preconditioner for IncompleteCholesky {
    fn dim(&self) -> usize {
        IncompleteCholesky::dim(self)
    }
    fn apply(&self, r: &[f64], z: &mut [f64]) -> Result<()> {
        self.solve_into(r, z);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseCholesky;

    #[test]
    fn smw_trivial_cases() {
        let y = smw_rank1_apply(&[2.0, 4.0], &[0.6, 0.8], 0.0, &[1.0, 1.0]).unwrap();
        assert_eq!(y, vec![0.5, 0.25]);
        let y = smw_rank1_apply(&[1.0, 1.0], &[1.0, 0.0], 1.0, &[1.0, 0.0]).unwrap();
        assert!((y[0] - 0.5).abs() < 1e-15 && y[1] == 0.0);
        assert!(smw_rank1_apply(&[1.0, 0.0], &[1.0, 0.0], 1.0, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn smw_matches_dense_solve() {
        let n = 7;
        let m: Vec<f64> = (0..n).map(|i| 0.5 + i as f64).collect();
        let mut w: Vec<f64> = (0..n).map(|i| (i as f64 + 1.0).sin()).collect();
        let nw = dot(&w, &w).sqrt();
        w.iter_mut().for_each(|v| *v /= nw);
        let x: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let mut dense = DenseMatrix::from_diagonal(&m);
        dense.add_outer(1.0, &w, &w);
        let exact = DenseCholesky::new(&dense).unwrap().solve(&x);
        let y = smw_rank1_apply(&m, &w, 1.0, &x).unwrap();
        for (a, b) in exact.iter().zip(&y) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn block_operator_composes() {
        let a = Arc::new(SparseMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (1, 1, 3.0)]).unwrap());
        let b = Arc::new(SparseMatrix::from_triplets(1, 2, &[(0, 0, 1.0), (0, 1, -1.0)]).unwrap());
        let op = BlockOperator::new(&[2, 1])
            .with(0, 0, Block::sparse(&a, 1.0))
            .unwrap()
            .with(0, 1, Block::sparse_transpose(&b, -1.0))
            .unwrap()
            .with(1, 0, Block::sparse(&b, -1.0))
            .unwrap()
            .with(
                1,
                1,
                Block::Sum(vec![
                    Block::Diagonal {
                        values: Arc::new(vec![0.5]),
                        scale: -1.0,
                    },
                    Block::Rank1 {
                        u: Arc::new(vec![1.0]),
                        v: Arc::new(vec![1.0]),
                        scale: -2.0,
                    },
                ]),
            )
            .unwrap();
        let d = op.to_dense();
        let expected = [2.0, 0.0, -1.0, 0.0, 3.0, 1.0, -1.0, 1.0, -2.5];
        assert_eq!(d.data(), &expected);
        assert!(BlockOperator::new(&[2, 1])
            .with(0, 1, Block::sparse(&a, 1.0))
            .is_err());
    }

    #[test]
    fn padded_rank_one_block() {
        let op = BlockOperator::new(&[3])
            .with(
                0,
                0,
                Block::Rank1 {
                    u: Arc::new(vec![1.0, 2.0]),
                    v: Arc::new(vec![1.0, 1.0]),
                    scale: 1.0,
                },
            )
            .unwrap();
        let mut y = vec![0.0; 3];
        op.apply(&[1.0, 1.0, 5.0], &mut y);
        assert_eq!(y, vec![2.0, 4.0, 0.0]);
    }

    #[test]
    fn spd_solver_counts_iterations() {
        let a = Arc::new(SparseMatrix::from_diagonal(&[1.0, 2.0, 4.0]));
        let s = SpdSolver::new(a, 1e-3, SolveOptions::new(1e-12, 10), "test").unwrap();
        let x = s.solve(&[1.0, 1.0, 1.0]).unwrap();
        for (xi, e) in x.iter().zip([1.0, 0.5, 0.25]) {
            assert!((xi - e).abs() < 1e-15);
        }
        assert_eq!((s.iterations(), s.solves()), (1, 1));
    }
}
