//! Dense column-major matrices and an LU factorization with partial pivoting.
//!
//! The LP solver keeps its basis inverse as an LU factor plus a short list of
//! eta (product-form) updates, so this module only needs what that takes.

use alloc::vec;
use alloc::vec::Vec;

/// Dense matrix stored column by column.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Builds a matrix from row slices. All rows must have the same length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut m = Matrix::zeros(r, c);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), c, "ragged rows");
            for (j, &v) in row.iter().enumerate() {
                m.set(i, j, v);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.rows + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[j * self.rows + i] = v;
    }

    #[inline]
    pub fn add_to(&mut self, i: usize, j: usize, v: f64) {
        self.data[j * self.rows + i] += v;
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    #[inline]
    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        let r = self.rows;
        &mut self.data[j * r..(j + 1) * r]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.cols).map(|j| self.get(i, j)).collect()
    }

    /// Appends a column; its length must equal the row count.
    pub fn push_col(&mut self, col: &[f64]) {
        assert_eq!(col.len(), self.rows);
        self.data.extend_from_slice(col);
        self.cols += 1;
    }

    /// `self * x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        let mut out = vec![0.0; self.rows];
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                for (o, a) in out.iter_mut().zip(self.col(j)) {
                    *o += a * xj;
                }
            }
        }
        out
    }

    /// `selfᵀ * y`.
    pub fn tr_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows);
        (0..self.cols).map(|j| dot(self.col(j), y)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for j in 0..self.cols {
            for i in 0..self.rows {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Returned when a pivot falls below the singularity threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Singular {
    pub column: usize,
}

/// `P A = L U` for a square matrix, with unit lower-triangular `L`.
#[derive(Debug, Clone)]
pub struct LuFactor {
    n: usize,
    lu: Matrix,
    // perm[i] = original row placed at position i
    perm: Vec<usize>,
}

const PIVOT_EPS: f64 = 1e-11;

impl LuFactor {
    pub fn new(a: &Matrix) -> Result<Self, Singular> {
        assert_eq!(a.rows(), a.cols(), "LU needs a square matrix");
        let n = a.rows();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = a.max_abs().max(1.0);
        for k in 0..n {
            let mut p = k;
            let mut best = lu.get(k, k).abs();
            for i in k + 1..n {
                let v = lu.get(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= PIVOT_EPS * scale {
                return Err(Singular { column: k });
            }
            if p != k {
                perm.swap(p, k);
                for j in 0..n {
                    let t = lu.get(k, j);
                    lu.set(k, j, lu.get(p, j));
                    lu.set(p, j, t);
                }
            }
            let pivot = lu.get(k, k);
            for i in k + 1..n {
                let f = lu.get(i, k) / pivot;
                lu.set(i, k, f);
            }
            let (left, right) = lu.data.split_at_mut((k + 1) * n);
            let multipliers = &left[k * n + k + 1..(k + 1) * n];
            for col in right.chunks_exact_mut(n) {
                let ukj = col[k];
                if ukj != 0.0 {
                    for (c, l) in col[k + 1..].iter_mut().zip(multipliers) {
                        *c -= l * ukj;
                    }
                }
            }
        }
        Ok(LuFactor { n, lu, perm })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for j in 0..n {
            let xj = x[j];
            if xj != 0.0 {
                let col = self.lu.col(j);
                for i in j + 1..n {
                    x[i] -= col[i] * xj;
                }
            }
        }
        for j in (0..n).rev() {
            let col = self.lu.col(j);
            x[j] /= col[j];
            let xj = x[j];
            if xj != 0.0 {
                for i in 0..j {
                    x[i] -= col[i] * xj;
                }
            }
        }
        x
    }

    /// Solves `Aᵀ y = c`.
    pub fn solve_transpose(&self, c: &[f64]) -> Vec<f64> {
        let n = self.n;
        // Uᵀ z = c
        let mut z = c.to_vec();
        for j in 0..n {
            let col = self.lu.col(j);
            let s = dot(&col[..j], &z[..j]);
            z[j] = (z[j] - s) / col[j];
        }
        // Lᵀ w = z
        for j in (0..n).rev() {
            let col = self.lu.col(j);
            let s = dot(&col[j + 1..], &z[j + 1..]);
            z[j] -= s;
        }
        let mut y = vec![0.0; n];
        for (i, &p) in self.perm.iter().enumerate() {
            y[p] = z[i];
        }
        y
    }
}

/// Solves a dense square system once.
pub fn solve_dense(a: &Matrix, b: &[f64]) -> Result<Vec<f64>, Singular> {
    Ok(LuFactor::new(a)?.solve(b))
}

/// Explicit inverse, used where a full sensitivity matrix is wanted.
pub fn invert(a: &Matrix) -> Result<Matrix, Singular> {
    let lu = LuFactor::new(a)?;
    let n = a.rows();
    let mut inv = Matrix::zeros(n, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let x = lu.solve(&e);
        inv.col_mut(j).copy_from_slice(&x);
        e[j] = 0.0;
    }
    Ok(inv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lu_solves_small_system() {
        let a = Matrix::from_rows(&[
            vec![0.0, 2.0, 1.0],
            vec![1.0, 1.0, 0.0],
            vec![3.0, 0.0, 1.0],
        ]);
        let lu = LuFactor::new(&a).unwrap();
        let x = lu.solve(&[3.0, 2.0, 4.0]);
        let back = a.mul_vec(&x);
        for (u, v) in back.iter().zip([3.0, 2.0, 4.0]) {
            assert!((u - v).abs() < 1e-12);
        }
        let y = lu.solve_transpose(&[1.0, -1.0, 2.0]);
        let back = a.tr_mul_vec(&y);
        for (u, v) in back.iter().zip([1.0, -1.0, 2.0]) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_matrix_is_reported() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
        assert!(LuFactor::new(&a).is_err());
    }

    #[test]
    fn inverse_times_matrix_is_identity() {
        let a = Matrix::from_rows(&[vec![4.0, 1.0], vec![2.0, 3.0]]);
        let inv = invert(&a).unwrap();
        for j in 0..2 {
            let c = a.mul_vec(inv.col(j));
            for i in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((c[i] - want).abs() < 1e-12);
            }
        }
    }
}
