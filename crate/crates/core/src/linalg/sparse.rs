use std::io::Write;

use crate::error::{Error, Result};

/// Compressed sparse row matrix.
///
/// Column indices are strictly increasing within each row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        SparseMatrix {
            rows,
            cols,
            row_ptr: vec![0; rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SparseMatrix {
            rows: d.len(),
            cols: d.len(),
            row_ptr: (0..=d.len()).collect(),
            col_idx: (0..d.len()).collect(),
            values: d.to_vec(),
        }
    }

    /// Builds a matrix from `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut counts = vec![0usize; rows + 1];
        for &(i, j, v) in triplets {
            if i >= rows || j >= cols {
                return Err(Error::InvalidInput(format!(
                    "triplet ({i}, {j}) outside {rows}x{cols} matrix"
                )));
            }
            if !v.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "non-finite triplet value at ({i}, {j})"
                )));
            }
            counts[i + 1] += 1;
        }
        for i in 0..rows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut cols_tmp = vec![0usize; triplets.len()];
        let mut vals_tmp = vec![0.0; triplets.len()];
        for &(i, j, v) in triplets {
            cols_tmp[next[i]] = j;
            vals_tmp[next[i]] = v;
            next[i] += 1;
        }

        let mut row_ptr = Vec::with_capacity(rows + 1);
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_ptr.push(0);
        let mut order: Vec<usize> = Vec::new();
        for i in 0..rows {
            order.clear();
            order.extend(counts[i]..counts[i + 1]);
            order.sort_unstable_by_key(|&p| cols_tmp[p]);
            for &p in &order {
                let j = cols_tmp[p];
                if col_idx.len() > row_ptr[i] && *col_idx.last().unwrap() == j {
                    *values.last_mut().unwrap() += vals_tmp[p];
                } else {
                    col_idx.push(j);
                    values.push(vals_tmp[p]);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(SparseMatrix {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (c, v) = self.row(i);
        c.binary_search(&j).map(|p| v[p]).unwrap_or(0.0)
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |i| {
            let (c, v) = self.row(i);
            c.iter().zip(v).map(move |(&j, &x)| (i, j, x))
        })
    }

    /// `y = A x`
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.cols, "matvec input length");
        assert_eq!(y.len(), self.rows, "matvec output length");
        for (i, yi) in y.iter_mut().enumerate() {
            let r = self.row_ptr[i]..self.row_ptr[i + 1];
            *yi = self.col_idx[r.clone()]
                .iter()
                .zip(&self.values[r])
                .map(|(&j, v)| v * x[j])
                .sum();
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.rows];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `y += a A x`
    pub fn mul_vec_add(&self, a: f64, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.cols);
        assert_eq!(y.len(), self.rows);
        for (i, yi) in y.iter_mut().enumerate() {
            let r = self.row_ptr[i]..self.row_ptr[i + 1];
            let s: f64 = self.col_idx[r.clone()]
                .iter()
                .zip(&self.values[r])
                .map(|(&j, v)| v * x[j])
                .sum();
            *yi += a * s;
        }
    }

    /// `y += a Aᵀ x`
    pub fn mul_transpose_vec_add(&self, a: f64, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.rows);
        assert_eq!(y.len(), self.cols);
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let axi = a * xi;
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                y[self.col_idx[p]] += axi * self.values[p];
            }
        }
    }

    pub fn mul_transpose_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.cols];
        self.mul_transpose_vec_add(1.0, x, &mut y);
        y
    }

    pub fn transpose(&self) -> SparseMatrix {
        let t: Vec<_> = self.triplets().map(|(i, j, v)| (j, i, v)).collect();
        SparseMatrix::from_triplets(self.cols, self.rows, &t).expect("transpose of a valid matrix")
    }

    pub fn scaled(&self, a: f64) -> SparseMatrix {
        let mut m = self.clone();
        for v in &mut m.values {
            *v *= a;
        }
        m
    }

    /// `a A + b B`
    pub fn linear_combination(
        a: f64,
        lhs: &SparseMatrix,
        b: f64,
        rhs: &SparseMatrix,
    ) -> Result<SparseMatrix> {
        if lhs.rows != rhs.rows || lhs.cols != rhs.cols {
            return Err(Error::DimensionMismatch {
                expected: lhs.rows * lhs.cols,
                got: rhs.rows * rhs.cols,
            });
        }
        let t: Vec<_> = lhs
            .triplets()
            .map(|(i, j, v)| (i, j, a * v))
            .chain(rhs.triplets().map(|(i, j, v)| (i, j, b * v)))
            .collect();
        SparseMatrix::from_triplets(lhs.rows, lhs.cols, &t)
    }

    /// `A B`
    pub fn matmul(&self, other: &SparseMatrix) -> Result<SparseMatrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: other.rows,
            });
        }
        let mut t = Vec::new();
        for i in 0..self.rows {
            let (ca, va) = self.row(i);
            for (&k, &a) in ca.iter().zip(va) {
                let (cb, vb) = other.row(k);
                t.extend(cb.iter().zip(vb).map(|(&j, &b)| (i, j, a * b)));
            }
        }
        SparseMatrix::from_triplets(self.rows, other.cols, &t)
    }

    /// Rows `row_sel` and columns `col_sel`, renumbered in the given order.
    pub fn submatrix(&self, row_sel: &[usize], col_sel: &[usize]) -> SparseMatrix {
        let mut col_map = vec![usize::MAX; self.cols];
        for (new, &old) in col_sel.iter().enumerate() {
            col_map[old] = new;
        }
        let mut t = Vec::new();
        for (new_i, &i) in row_sel.iter().enumerate() {
            let (c, v) = self.row(i);
            for (&j, &x) in c.iter().zip(v) {
                if col_map[j] != usize::MAX {
                    t.push((new_i, col_map[j], x));
                }
            }
        }
        SparseMatrix::from_triplets(row_sel.len(), col_sel.len(), &t)
            .expect("submatrix of a valid matrix")
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols))
            .map(|i| self.get(i, i))
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest entry of `|A - Aᵀ|`.
    pub fn asymmetry(&self) -> f64 {
        if self.rows != self.cols {
            return f64::INFINITY;
        }
        self.triplets()
            .map(|(i, j, v)| (v - self.get(j, i)).abs())
            .fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> super::DenseMatrix {
        let mut d = super::DenseMatrix::zeros(self.rows, self.cols);
        for (i, j, v) in self.triplets() {
            d[(i, j)] += v;
        }
        d
    }

    /// Coordinate text dump, one `row col value` line per stored entry.
    pub fn write_coordinate<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{} {} {}", self.rows, self.cols, self.nnz())?;
        for (i, j, v) in self.triplets() {
            writeln!(out, "{i} {j} {v:.17e}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SparseMatrix {
        SparseMatrix::from_triplets(
            3,
            3,
            &[
                (0, 0, 2.0),
                (0, 2, 1.0),
                (1, 1, 3.0),
                (2, 0, 1.0),
                (2, 2, 4.0),
                (0, 0, 1.0),
            ],
        )
        .unwrap()
    }

    #[test]
    fn duplicates_are_summed_and_sorted() {
        let a = sample();
        assert_eq!(a.nnz(), 5);
        assert_eq!(a.get(0, 0), 3.0);
        assert_eq!(a.row(0).0, &[0, 2]);
        assert_eq!(a.asymmetry(), 0.0);
    }

    #[test]
    fn matvec_and_transpose_agree() {
        let a =
            SparseMatrix::from_triplets(2, 3, &[(0, 1, 2.0), (1, 0, -1.0), (1, 2, 5.0)]).unwrap();
        assert_eq!(a.mul_vec(&[1.0, 2.0, 3.0]), vec![4.0, 14.0]);
        assert_eq!(
            a.mul_transpose_vec(&[1.0, 1.0]),
            a.transpose().mul_vec(&[1.0, 1.0])
        );
    }

    #[test]
    fn submatrix_and_products() {
        let a = sample();
        let s = a.submatrix(&[2, 0], &[0, 2]);
        assert_eq!(s.to_dense().data(), &[1.0, 4.0, 3.0, 1.0]);
        let p = a.matmul(&SparseMatrix::identity(3)).unwrap();
        assert_eq!(p, a);
        let z = SparseMatrix::linear_combination(1.0, &a, -1.0, &a).unwrap();
        assert_eq!(z.max_abs(), 0.0);
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(SparseMatrix::from_triplets(2, 2, &[(2, 0, 1.0)]).is_err());
        assert!(SparseMatrix::from_triplets(2, 2, &[(0, 0, f64::NAN)]).is_err());
    }

    #[test]
    fn coordinate_dump() {
        let mut buf = Vec::new();
        sample().write_coordinate(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.starts_with("3 3 5\n0 0 3."));
    }
}
