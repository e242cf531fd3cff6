use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Row-major dense matrix for oracle-sized problems.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| super::dot(self.row(i), x)).collect()
    }

    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, other.rows);
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, b) in dst.iter_mut().zip(other.row(k)) {
                    *d += a * b;
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// `a self + b other`
    pub fn combine(&self, a: f64, other: &DenseMatrix, b: f64) -> DenseMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        }
    }

    /// Adds `rho u vᵀ` in place.
    pub fn add_outer(&mut self, rho: f64, u: &[f64], v: &[f64]) {
        assert_eq!((u.len(), v.len()), (self.rows, self.cols));
        for i in 0..self.rows {
            for j in 0..self.cols {
                self[(i, j)] += rho * u[i] * v[j];
            }
        }
    }

    /// Copies `block` into position `(r0, c0)`.
    pub fn set_block(&mut self, r0: usize, c0: usize, block: &DenseMatrix) {
        for i in 0..block.rows {
            for j in 0..block.cols {
                self[(r0 + i, c0 + j)] = block[(i, j)];
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn symmetrized(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.rows, self.cols, |i, j| {
            0.5 * (self[(i, j)] + self[(j, i)])
        })
    }

    /// Solves `A x = b` by LU with partial pivoting.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.rows;
        if self.cols != n || b.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: b.len(),
            });
        }
        let mut a = self.data.clone();
        let mut x = b.to_vec();
        let scale = self.max_abs();
        for k in 0..n {
            let piv = (k..n)
                .max_by(|&i, &j| a[i * n + k].abs().total_cmp(&a[j * n + k].abs()))
                .unwrap();
            if a[piv * n + k].abs() <= f64::EPSILON * scale {
                return Err(Error::NotPositiveDefinite {
                    pivot: k,
                    value: a[piv * n + k],
                });
            }
            if piv != k {
                for c in 0..n {
                    a.swap(k * n + c, piv * n + c);
                }
                x.swap(k, piv);
            }
            for i in k + 1..n {
                let f = a[i * n + k] / a[k * n + k];
                if f != 0.0 {
                    for c in k..n {
                        a[i * n + c] -= f * a[k * n + c];
                    }
                    x[i] -= f * x[k];
                }
            }
        }
        for k in (0..n).rev() {
            let s: f64 = (k + 1..n).map(|c| a[k * n + c] * x[c]).sum();
            x[k] = (x[k] - s) / a[k * n + k];
        }
        Ok(x)
    }
}

/// Dense Cholesky factor `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct DenseCholesky {
    l: DenseMatrix,
}

impl DenseCholesky {
    pub fn new(a: &DenseMatrix) -> Result<Self> {
        if a.rows != a.cols {
            return Err(Error::DimensionMismatch {
                expected: a.rows,
                got: a.cols,
            });
        }
        let n = a.rows;
        let mut l = DenseMatrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: j, value: d });
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in j + 1..n {
                let mut s = a[(i, j)];
                let (ri, rj) = (i * n, j * n);
                for k in 0..j {
                    s -= l.data[ri + k] * l.data[rj + k];
                }
                l[(i, j)] = s / d;
            }
        }
        Ok(DenseCholesky { l })
    }

    pub fn lower(&self) -> &DenseMatrix {
        &self.l
    }

    /// `L⁻¹ b`
    pub fn forward(&self, b: &[f64]) -> Vec<f64> {
        let n = self.l.rows;
        let mut y = b.to_vec();
        for i in 0..n {
            let s = super::dot(&self.l.row(i)[..i], &y[..i]);
            y[i] = (y[i] - s) / self.l[(i, i)];
        }
        y
    }

    /// `L⁻ᵀ y`
    pub fn backward(&self, y: &[f64]) -> Vec<f64> {
        let n = self.l.rows;
        let mut x = y.to_vec();
        for i in (0..n).rev() {
            x[i] /= self.l[(i, i)];
            let xi = x[i];
            for k in 0..i {
                x[k] -= self.l[(i, k)] * xi;
            }
        }
        x
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.backward(&self.forward(b))
    }

    /// `A⁻¹ B` column by column.
    pub fn solve_matrix(&self, b: &DenseMatrix) -> DenseMatrix {
        let bt = b.transpose();
        let mut out = DenseMatrix::zeros(b.cols, b.rows);
        for j in 0..b.cols {
            let x = self.solve(bt.row(j));
            out.data[j * b.rows..(j + 1) * b.rows].copy_from_slice(&x);
        }
        out.transpose()
    }

    /// `L⁻¹ K L⁻ᵀ`, the symmetric form of the pencil `(K, A)`.
    pub fn congruence(&self, k: &DenseMatrix) -> DenseMatrix {
        let n = self.l.rows;
        // Y = L⁻¹ K, then L⁻¹ Yᵀ (= L⁻¹ K L⁻ᵀ since K is symmetric).
        let mut y = DenseMatrix::zeros(n, n);
        let kt = k.transpose();
        for j in 0..n {
            let col = self.forward(kt.row(j));
            for i in 0..n {
                y[(i, j)] = col[i];
            }
        }
        let mut out = DenseMatrix::zeros(n, n);
        for i in 0..n {
            let row = self.forward(y.row(i));
            for j in 0..n {
                out[(j, i)] = row[j];
            }
        }
        out.symmetrized()
    }
}

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns ascending eigenvalues and, when requested, the matching unit
/// eigenvectors as the rows of a matrix.
pub fn symmetric_eigen(
    a: &DenseMatrix,
    want_vectors: bool,
) -> Result<(Vec<f64>, Option<DenseMatrix>)> {
    if a.rows != a.cols {
        return Err(Error::DimensionMismatch {
            expected: a.rows,
            got: a.cols,
        });
    }
    if !super::all_finite(&a.data) {
        return Err(Error::InvalidInput(
            "eigenproblem matrix has non-finite entries".into(),
        ));
    }
    let n = a.rows;
    let mut m = a.symmetrized();
    let mut v = want_vectors.then(|| DenseMatrix::identity(n));
    let total: f64 = m.data.iter().map(|x| x * x).sum::<f64>().sqrt();
    let off = |m: &DenseMatrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                s += 2.0 * m[(i, j)] * m[(i, j)];
            }
        }
        s.sqrt()
    };

    let mut sweeps = 0;
    while off(&m) > JACOBI_TOL * total.max(f64::MIN_POSITIVE) {
        sweeps += 1;
        if sweeps > JACOBI_MAX_SWEEPS {
            return Err(Error::InvalidInput(format!(
                "Jacobi eigensolver did not converge in {JACOBI_MAX_SWEEPS} sweeps"
            )));
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut m, p, q, c, s, t);
                if let Some(v) = v.as_mut() {
                    for k in 0..n {
                        let (vp, vq) = (v[(p, k)], v[(q, k)]);
                        v[(p, k)] = c * vp - s * vq;
                        v[(q, k)] = s * vp + c * vq;
                    }
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].total_cmp(&m[(j, j)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = v.map(|v| DenseMatrix::from_fn(n, n, |r, k| v[(order[r], k)]));
    Ok((values, vectors))
}

fn rotate(m: &mut DenseMatrix, p: usize, q: usize, c: f64, s: f64, t: f64) {
    let n = m.rows;
    let apq = m[(p, q)];
    m[(p, p)] -= t * apq;
    m[(q, q)] += t * apq;
    m[(p, q)] = 0.0;
    m[(q, p)] = 0.0;
    for r in 0..n {
        if r == p || r == q {
            continue;
        }
        let (arp, arq) = (m[(r, p)], m[(r, q)]);
        let new_p = c * arp - s * arq;
        let new_q = s * arp + c * arq;
        m[(r, p)] = new_p;
        m[(p, r)] = new_p;
        m[(r, q)] = new_q;
        m[(q, r)] = new_q;
    }
}

/// Ascending eigenvalues of the symmetric pencil `K x = λ A x` with `A` SPD.
pub fn generalized_symmetric_eigenvalues(k: &DenseMatrix, a: &DenseMatrix) -> Result<Vec<f64>> {
    let chol = DenseCholesky::new(a)?;
    symmetric_eigenvalues(&chol.congruence(k))
}

const QL_MAX_ITERS: usize = 60;

/// Ascending eigenvalues of a symmetric matrix by Householder
/// tridiagonalization and implicit QL. Much faster than Jacobi for large `n`.
pub fn symmetric_eigenvalues(a: &DenseMatrix) -> Result<Vec<f64>> {
    if a.rows != a.cols {
        return Err(Error::DimensionMismatch {
            expected: a.rows,
            got: a.cols,
        });
    }
    if !super::all_finite(&a.data) {
        return Err(Error::InvalidInput(
            "eigenproblem matrix has non-finite entries".into(),
        ));
    }
    let (mut d, mut e) = tridiagonalize(a.symmetrized());
    tridiagonal_ql(&mut d, &mut e)?;
    d.sort_by(f64::total_cmp);
    Ok(d)
}

/// Diagonal and subdiagonal of `QᵀAQ`; `e[i]` couples `i` and `i + 1`.
fn tridiagonalize(mut m: DenseMatrix) -> (Vec<f64>, Vec<f64>) {
    let n = m.rows;
    let mut e = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    for k in 0..n.saturating_sub(2) {
        let lo = k + 1;
        let norm = (lo..n).map(|i| m[(i, k)] * m[(i, k)]).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if m[(lo, k)] > 0.0 { -norm } else { norm };
        for i in lo..n {
            v[i] = m[(i, k)];
        }
        v[lo] -= alpha;
        let vnorm = (lo..n).map(|i| v[i] * v[i]).sum::<f64>().sqrt();
        for vi in &mut v[lo..n] {
            *vi /= vnorm;
        }
        // Trailing block becomes A - 2(vqᵀ + qvᵀ) with q = Av - (vᵀAv)v.
        for i in lo..n {
            p[i] = (lo..n).map(|j| m[(i, j)] * v[j]).sum();
        }
        let vp: f64 = (lo..n).map(|i| v[i] * p[i]).sum();
        for i in lo..n {
            p[i] -= vp * v[i];
        }
        for i in lo..n {
            for j in lo..n {
                m[(i, j)] -= 2.0 * (v[i] * p[j] + p[i] * v[j]);
            }
        }
        e[k] = alpha;
    }
    if n >= 2 {
        e[n - 2] = m[(n - 1, n - 2)];
    }
    let d = (0..n).map(|i| m[(i, i)]).collect();
    (d, e)
}

/// Implicit QL with Wilkinson-type shifts; eigenvalues overwrite `d`.
fn tridiagonal_ql(d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let n = d.len();
    for l in 0..n {
        let mut iters = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let scale = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * scale {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iters += 1;
            if iters > QL_MAX_ITERS {
                return Err(Error::InvalidInput(format!(
                    "QL eigensolver did not converge in {QL_MAX_ITERS} iterations"
                )));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut deflated = false;
            for i in (l..m).rev() {
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize) -> DenseMatrix {
        DenseMatrix::from_fn(n, n, |i, j| {
            if i == j {
                4.0 + i as f64
            } else {
                1.0 / (1.0 + (i + j) as f64)
            }
        })
    }

    #[test]
    fn cholesky_solves() {
        let a = spd(6);
        let c = DenseCholesky::new(&a).unwrap();
        let x: Vec<f64> = (0..6).map(|i| i as f64 - 2.5).collect();
        let b = a.mul_vec(&x);
        let y = c.solve(&b);
        for (xi, yi) in x.iter().zip(&y) {
            assert!((xi - yi).abs() < 1e-13);
        }
        let ll = c.lower().matmul(&c.lower().transpose());
        assert!(ll.combine(1.0, &a, -1.0).max_abs() < 1e-13);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = DenseMatrix::from_diagonal(&[1.0, -1.0]);
        assert!(matches!(
            DenseCholesky::new(&a),
            Err(Error::NotPositiveDefinite { pivot: 1, .. })
        ));
    }

    #[test]
    fn jacobi_recovers_known_spectrum() {
        // Path-graph Laplacian: eigenvalues 2 - 2 cos(kπ/(n+1)).
        let n = 12;
        let a = DenseMatrix::from_fn(n, n, |i, j| match i.abs_diff(j) {
            0 => 2.0,
            1 => -1.0,
            _ => 0.0,
        });
        let (vals, vecs) = symmetric_eigen(&a, true).unwrap();
        for (k, v) in vals.iter().enumerate() {
            let exact = 2.0 - 2.0 * ((k + 1) as f64 * std::f64::consts::PI / (n + 1) as f64).cos();
            assert!((v - exact).abs() < 1e-12, "{v} vs {exact}");
        }
        let vecs = vecs.unwrap();
        for k in 0..n {
            let av = a.mul_vec(vecs.row(k));
            for i in 0..n {
                assert!((av[i] - vals[k] * vecs[(k, i)]).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn identity_spectrum() {
        let (vals, _) = symmetric_eigen(&DenseMatrix::identity(5), false).unwrap();
        assert!(vals.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn generalized_pencil_matches_diagonal_ratio() {
        let k = DenseMatrix::from_diagonal(&[2.0, 9.0, 4.0]);
        let a = DenseMatrix::from_diagonal(&[1.0, 3.0, 4.0]);
        let vals = generalized_symmetric_eigenvalues(&k, &a).unwrap();
        for (v, e) in vals.iter().zip([1.0, 2.0, 3.0]) {
            assert!((v - e).abs() < 1e-14);
        }
    }
}
