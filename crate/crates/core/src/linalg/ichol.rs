use super::SparseMatrix;
use crate::error::{Error, Result};

const MAX_SHIFT_RETRIES: usize = 20;

/// Threshold-dropping incomplete Cholesky factor `A ≈ L Lᵀ`.
///
/// Left-looking column factorization. An off-diagonal `L[i][j]` is dropped
/// when `|L[i][j]| < droptol * ‖A[j.., j]‖₁`; the diagonal is always kept.
#[derive(Debug, Clone)]
pub struct IncompleteCholesky {
    n: usize,
    /// Column `j` holds `(row, value)` pairs, diagonal first, rows ascending.
    columns: Vec<Vec<(usize, f64)>>,
    shift: f64,
}

impl IncompleteCholesky {
    pub fn new(a: &SparseMatrix, droptol: f64) -> Result<Self> {
        if a.rows() != a.cols() {
            return Err(Error::DimensionMismatch {
                expected: a.rows(),
                got: a.cols(),
            });
        }
        if !(droptol >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "drop tolerance must be nonnegative, got {droptol}"
            )));
        }
        let diag = a.diagonal();
        if let Some(i) = diag.iter().position(|&d| !(d > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "ichol needs a positive diagonal (entry {i} is {})",
                diag[i]
            )));
        }
        if let Some(columns) = factor(a, droptol, 0.0) {
            return Ok(IncompleteCholesky {
                n: a.rows(),
                columns,
                shift: 0.0,
            });
        }
        let mean = diag.iter().sum::<f64>() / diag.len().max(1) as f64;
        let mut shift = 1e-3 * mean;
        for _ in 0..MAX_SHIFT_RETRIES {
            if let Some(columns) = factor(a, droptol, shift) {
                return Ok(IncompleteCholesky {
                    n: a.rows(),
                    columns,
                    shift,
                });
            }
            shift *= 2.0;
        }
        Err(Error::FactorizationFailed {
            retries: MAX_SHIFT_RETRIES,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Diagonal shift that was needed for a successful factorization.
    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn nnz(&self) -> usize {
        self.columns.iter().map(Vec::len).sum()
    }

    pub fn lower(&self) -> SparseMatrix {
        let t: Vec<_> = self
            .columns
            .iter()
            .enumerate()
            .flat_map(|(j, col)| col.iter().map(move |&(i, v)| (i, j, v)))
            .collect();
        SparseMatrix::from_triplets(self.n, self.n, &t).expect("factor entries are in range")
    }

    /// `z = (L Lᵀ)⁻¹ r`
    pub fn solve_into(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
        for (j, col) in self.columns.iter().enumerate() {
            let yj = z[j] / col[0].1;
            z[j] = yj;
            for &(i, v) in &col[1..] {
                z[i] -= v * yj;
            }
        }
        for (j, col) in self.columns.iter().enumerate().rev() {
            let s: f64 = col[1..].iter().map(|&(i, v)| v * z[i]).sum();
            z[j] = (z[j] - s) / col[0].1;
        }
    }
}

/// Returns `None` on a nonpositive pivot.
fn factor(a: &SparseMatrix, droptol: f64, shift: f64) -> Option<Vec<Vec<(usize, f64)>>> {
    let n = a.rows();
    let mut columns: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    // Columns k < j with a pending entry in row j, linked through `next_col`.
    let mut head = vec![usize::MAX; n];
    let mut next_col = vec![usize::MAX; n];
    let mut cursor = vec![0usize; n];
    let mut work = vec![0.0; n];
    let mut occupied = vec![false; n];
    let mut pattern: Vec<usize> = Vec::new();

    for j in 0..n {
        pattern.clear();
        let (cols, vals) = a.row(j);
        let mut col_norm = 0.0;
        for (&i, &v) in cols.iter().zip(vals) {
            if i < j {
                continue;
            }
            let v = if i == j { v + shift } else { v };
            col_norm += v.abs();
            work[i] = v;
            if !occupied[i] {
                occupied[i] = true;
                pattern.push(i);
            }
        }
        if !occupied[j] {
            occupied[j] = true;
            pattern.push(j);
        }

        let mut k = head[j];
        while k != usize::MAX {
            let following = next_col[k];
            let col = &columns[k];
            let p = cursor[k];
            let ljk = col[p].1;
            for &(i, lik) in &col[p..] {
                if !occupied[i] {
                    occupied[i] = true;
                    pattern.push(i);
                }
                work[i] -= lik * ljk;
            }
            cursor[k] = p + 1;
            if p + 1 < col.len() {
                let r = col[p + 1].0;
                next_col[k] = head[r];
                head[r] = k;
            }
            k = following;
        }

        let pivot = work[j];
        if !(pivot > 0.0) || !pivot.is_finite() {
            return None;
        }
        let d = pivot.sqrt();
        let threshold = droptol * col_norm;
        let mut col = vec![(j, d)];
        for &i in &pattern {
            if i != j {
                let v = work[i] / d;
                if v.abs() >= threshold && v != 0.0 {
                    col.push((i, v));
                }
            }
            work[i] = 0.0;
            occupied[i] = false;
        }
        col[1..].sort_unstable_by_key(|&(i, _)| i);
        if col.len() > 1 {
            cursor[j] = 1;
            let r = col[1].0;
            next_col[j] = head[r];
            head[r] = j;
        }
        columns.push(col);
    }
    Some(columns)
}
