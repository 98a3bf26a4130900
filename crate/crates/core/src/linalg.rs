//! Small dense row-major matrices and an LU solver, generic over [`Field`].
//!
//! Every chain in this crate is tiny (a handful of vertices), so plain
//! dense storage is all that is needed.

use std::ops::{Index, IndexMut};

use crate::scalar::Field;

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum LinalgError {
    #[error("matrix is singular to working precision")]
    Singular,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Field> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = S::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Matrix whose every row equals `row` (the `Π` of a stationary law).
    pub fn repeated_row(n: usize, row: &[S]) -> Self {
        Self::from_fn(n, row.len(), |_, j| row[j].clone())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<S> {
        (0..self.rows).map(|i| self[(i, j)].clone()).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].clone())
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = &self[(i, k)];
                if a.is_zero() {
                    continue;
                }
                for j in 0..other.cols {
                    let v = a.clone() * other[(k, j)].clone();
                    out[(i, j)] = out[(i, j)].clone() + v;
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[S]) -> Vec<S> {
        assert_eq!(self.cols, v.len(), "matvec dimension mismatch");
        (0..self.rows)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(v)
                    .fold(S::zero(), |acc, (a, b)| acc + a.clone() * b.clone())
            })
            .collect()
    }

    /// Row vector times matrix.
    pub fn vecmat(&self, v: &[S]) -> Vec<S> {
        assert_eq!(self.rows, v.len(), "vecmat dimension mismatch");
        let mut out = vec![S::zero(); self.cols];
        for (i, vi) in v.iter().enumerate() {
            for (j, o) in out.iter_mut().enumerate() {
                *o = o.clone() + vi.clone() * self[(i, j)].clone();
            }
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: &S) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x.clone() * s.clone()).collect(),
        }
    }

    fn zip_with(&self, other: &Self, f: impl Fn(S, S) -> S) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| f(a.clone(), b.clone()))
                .collect(),
        }
    }

    pub fn row_sums(&self) -> Vec<S> {
        (0..self.rows)
            .map(|i| self.row(i).iter().fold(S::zero(), |a, b| a + b.clone()))
            .collect()
    }

    /// Maximum absolute row sum.
    pub fn inf_norm(&self) -> S {
        (0..self.rows)
            .map(|i| {
                self.row(i)
                    .iter()
                    .fold(S::zero(), |a, b| a + b.magnitude())
            })
            .fold(S::zero(), |m, r| if r > m { r } else { m })
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> S {
        self.data
            .iter()
            .map(Field::magnitude)
            .fold(S::zero(), |m, r| if r > m { r } else { m })
    }

    pub fn lu(&self) -> Result<Lu<S>, LinalgError> {
        Lu::factor(self.clone())
    }

    pub fn solve(&self, b: &[S]) -> Result<Vec<S>, LinalgError> {
        self.lu()?.solve(b)
    }

    pub fn inverse(&self) -> Result<Self, LinalgError> {
        let lu = self.lu()?;
        let n = self.rows;
        let mut out = Self::zeros(n, n);
        for j in 0..n {
            let mut e = vec![S::zero(); n];
            e[j] = S::one();
            let col = lu.solve(&e)?;
            for (i, v) in col.into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        Ok(out)
    }

    pub fn map<T: Field>(&self, f: impl Fn(&S) -> T) -> Matrix<T> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl<S> Index<(usize, usize)> for Matrix<S> {
    type Output = S;
    fn index(&self, (i, j): (usize, usize)) -> &S {
        &self.data[i * self.cols + j]
    }
}

impl<S> IndexMut<(usize, usize)> for Matrix<S> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut S {
        &mut self.data[i * self.cols + j]
    }
}

/// LU factorization with partial pivoting (largest magnitude pivot).
#[derive(Clone, Debug)]
pub struct Lu<S> {
    lu: Matrix<S>,
    perm: Vec<usize>,
}

impl<S: Field> Lu<S> {
    fn factor(mut a: Matrix<S>) -> Result<Self, LinalgError> {
        if !a.is_square() {
            return Err(LinalgError::Dimension {
                expected: a.rows,
                got: a.cols,
            });
        }
        let n = a.rows;
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, best) = (k..n)
                .map(|i| (i, a[(i, k)].magnitude()))
                .fold((k, S::zero()), |(bi, bv), (i, v)| {
                    if v > bv {
                        (i, v)
                    } else {
                        (bi, bv)
                    }
                });
            if best.is_zero() {
                return Err(LinalgError::Singular);
            }
            if p != k {
                for j in 0..n {
                    a.data.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let pivot = a[(k, k)].clone();
            for i in (k + 1)..n {
                let factor = a[(i, k)].clone() / pivot.clone();
                if factor.is_zero() {
                    continue;
                }
                for j in (k + 1)..n {
                    let v = factor.clone() * a[(k, j)].clone();
                    a[(i, j)] = a[(i, j)].clone() - v;
                }
                a[(i, k)] = factor;
            }
        }
        Ok(Self { lu: a, perm })
    }

    pub fn solve(&self, b: &[S]) -> Result<Vec<S>, LinalgError> {
        let n = self.lu.rows;
        if b.len() != n {
            return Err(LinalgError::Dimension {
                expected: n,
                got: b.len(),
            });
        }
        let mut y: Vec<S> = self.perm.iter().map(|&p| b[p].clone()).collect();
        for i in 0..n {
            for k in 0..i {
                let v = self.lu[(i, k)].clone() * y[k].clone();
                y[i] = y[i].clone() - v;
            }
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                let v = self.lu[(i, k)].clone() * y[k].clone();
                y[i] = y[i].clone() - v;
            }
            y[i] = y[i].clone() / self.lu[(i, i)].clone();
        }
        Ok(y)
    }
}

/// Cholesky factor `L` with `A = L Lᵀ`, for symmetric positive definite `A`.
pub fn cholesky(a: &Matrix<f64>) -> Result<Matrix<f64>, LinalgError> {
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(LinalgError::Singular);
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}
