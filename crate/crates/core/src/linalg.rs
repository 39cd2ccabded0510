//! Small dense linear algebra: a row-major matrix, a cyclic Jacobi
//! eigensolver for symmetric matrices, and a minimum-norm least-squares
//! solver built on it. Sizes in this crate are tiny (n ≤ a few hundred), so
//! nothing here is blocked or vectorized.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
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

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            Error::check_len("matrix row", c, row.len())?;
            data.extend_from_slice(row);
        }
        Ok(Self { rows: r, cols: c, data })
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Error::check_len("matrix data", rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        Error::check_len("matmul inner dimension", self.cols, other.rows)?;
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let dst = out.row_mut(i);
                for (d, b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        Error::check_len("matvec", self.cols, v.len())?;
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        Error::check_len("matrix rows", self.rows, other.rows)?;
        Error::check_len("matrix cols", self.cols, other.cols)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest `|A_ij - A_ji|`; infinite for non-square input.
    pub fn max_asymmetry(&self) -> f64 {
        if self.rows != self.cols {
            return f64::INFINITY;
        }
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

// ── Jacobi eigensolver ───────────────────────────────────────────────────────

pub const JACOBI_MAX_SWEEPS: usize = 100;
pub const JACOBI_REL_TOL: f64 = 1e-12;

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    /// Ascending.
    pub values: Vec<f64>,
    /// Column `k` is the unit eigenvector for `values[k]`.
    pub vectors: Matrix,
    pub sweeps: usize,
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let mut s = 0.0;
    for i in 0..a.rows {
        for j in 0..a.cols {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// Cyclic Jacobi rotations. Stops when the off-diagonal Frobenius norm falls
/// to `1e-12 · ‖A‖_F` or after 100 sweeps.
pub fn symmetric_eigen(a: &Matrix, symmetry_tol: f64) -> Result<SymmetricEigen> {
    if a.rows != a.cols {
        return Err(Error::Dimension {
            context: "symmetric_eigen (square)",
            expected: a.rows,
            found: a.cols,
        });
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("symmetric_eigen input".into()));
    }
    let asym = a.max_asymmetry();
    if asym > symmetry_tol {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    let n = a.rows;
    // symmetrize so rounding-level asymmetry cannot bias the rotations
    let mut m = Matrix::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
    let mut v = Matrix::identity(n);
    let target = JACOBI_REL_TOL * m.frobenius();
    let mut sweeps = 0;

    while sweeps < JACOBI_MAX_SWEEPS && off_diagonal_norm(&m) > target {
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].total_cmp(&m[(j, j)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(SymmetricEigen { values, vectors, sweeps })
}

// ── least squares ────────────────────────────────────────────────────────────

/// Relative eigenvalue cutoff for the pseudo-inverse of a Gram matrix.
pub const PINV_REL_CUTOFF: f64 = 1e-10;

/// Minimum-norm solution of the symmetric PSD system `G w = b` via the
/// eigen pseudo-inverse, discarding eigenvalues at or below
/// `PINV_REL_CUTOFF · λ_max`.
pub fn pinv_solve_symmetric(g: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    Error::check_len("pinv_solve rhs", g.rows(), b.len())?;
    let eig = symmetric_eigen(g, 1e-9 * g.frobenius().max(1.0))?;
    let lmax = eig.values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let cutoff = PINV_REL_CUTOFF * lmax;
    let n = g.rows();
    let mut x = vec![0.0; n];
    for (k, &lam) in eig.values.iter().enumerate() {
        if lam <= cutoff || lam == 0.0 {
            continue;
        }
        let vk = eig.vectors.col(k);
        let coef = dot(&vk, b) / lam;
        for (xi, vi) in x.iter_mut().zip(&vk) {
            *xi += coef * vi;
        }
    }
    Ok(x)
}

/// Minimum-norm least squares `min ‖A w − b‖² + ridge ‖w‖²` through the
/// normal equations.
pub fn least_squares_min_norm(a: &Matrix, b: &[f64], ridge: f64) -> Result<Vec<f64>> {
    Error::check_len("least_squares rhs", a.rows(), b.len())?;
    if !(ridge.is_finite() && ridge >= 0.0) {
        return Err(Error::invalid(format!("ridge must be finite and ≥ 0, got {ridge}")));
    }
    let at = a.transpose();
    let mut gram = at.matmul(a)?;
    for i in 0..gram.rows() {
        gram[(i, i)] += ridge;
    }
    let rhs = at.matvec(b)?;
    pinv_solve_symmetric(&gram, &rhs)
}

/// Orthonormal basis of `R^n` from Gram–Schmidt on the columns of `seed`
/// (re-orthogonalized twice). Fails if `seed` is numerically rank deficient.
pub fn orthonormal_columns(seed: &Matrix) -> Result<Matrix> {
    let n = seed.rows();
    let k = seed.cols();
    let mut q = Matrix::zeros(n, k);
    for j in 0..k {
        let mut v = seed.col(j);
        for _ in 0..2 {
            for p in 0..j {
                let qp = q.col(p);
                let c = dot(&qp, &v);
                for (vi, qi) in v.iter_mut().zip(&qp) {
                    *vi -= c * qi;
                }
            }
        }
        let nv = norm2(&v);
        if nv < 1e-10 {
            return Err(Error::invalid("rank-deficient seed matrix for orthonormalization"));
        }
        for i in 0..n {
            q[(i, j)] = v[i] / nv;
        }
    }
    Ok(q)
}
