//! Dense row-major `f64` matrices and the primitive operator catalog used by
//! the alignment math: elementwise product, matrix product, cumulative
//! product/sum along an axis, `triu` with offset, cyclic `roll` and `flip` on
//! the last axis, all-ones matrices, outer products and the usual pointwise
//! nonlinearities.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Direction of a cumulative scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    /// Scan within each row (left to right across columns).
    AlongRows,
    /// Scan within each column (top to bottom across rows).
    AlongColumns,
}

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::argument(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// The all-ones matrix `J` of the given shape.
    pub fn ones(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![1.0; rows * cols],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Matrix {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    pub fn identity(n: usize) -> Self {
        Matrix::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(Error::argument(format!(
                    "row {i} has {} entries, expected {cols}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn row_vector(values: &[f64]) -> Self {
        Matrix {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    pub fn column_vector(values: &[f64]) -> Self {
        Matrix {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Single-entry value of a 1x1 matrix.
    pub fn item(&self) -> Result<f64> {
        if self.shape() != (1, 1) {
            return Err(Error::argument(format!(
                "expected a 1x1 matrix, got {}x{}",
                self.rows, self.cols
            )));
        }
        Ok(self.data[0])
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_with(&self, other: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        self.ensure_same_shape(other, op)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub(crate) fn ensure_same_shape(&self, other: &Matrix, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    /// Elementwise (Hadamard) product.
    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = vec![0.0; self.rows * other.cols];
        for r in 0..self.rows {
            let out_row = &mut out[r * other.cols..(r + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let other_row = other.row(k);
                for (o, &b) in out_row.iter_mut().zip(other_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Matrix {
            rows: self.rows,
            cols: other.cols,
            data: out,
        })
    }

    /// Outer product of a column vector (`n x 1`) and a row vector (`1 x m`).
    pub fn outer(column: &Matrix, row: &Matrix) -> Result<Matrix> {
        if column.cols != 1 || row.rows != 1 {
            return Err(Error::Shape {
                op: "outer",
                left: column.shape(),
                right: row.shape(),
            });
        }
        column.matmul(row)
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn scale(&self, factor: f64) -> Matrix {
        self.map(|v| v * factor)
    }

    pub fn add_scalar(&self, value: f64) -> Matrix {
        self.map(|v| v + value)
    }

    /// `1 - x` elementwise.
    pub fn one_minus(&self) -> Matrix {
        self.map(|v| 1.0 - v)
    }

    pub fn cumprod(&self, axis: Axis) -> Matrix {
        self.scan(axis, 1.0, |acc, v| acc * v)
    }

    pub fn cumsum(&self, axis: Axis) -> Matrix {
        self.scan(axis, 0.0, |acc, v| acc + v)
    }

    fn scan(&self, axis: Axis, init: f64, f: impl Fn(f64, f64) -> f64) -> Matrix {
        let mut out = self.clone();
        match axis {
            Axis::AlongRows => {
                for row in out.data.chunks_mut(self.cols.max(1)) {
                    let mut acc = init;
                    for v in row.iter_mut() {
                        acc = f(acc, *v);
                        *v = acc;
                    }
                }
            }
            Axis::AlongColumns => {
                for c in 0..self.cols {
                    let mut acc = init;
                    for r in 0..self.rows {
                        let v = &mut out.data[r * self.cols + c];
                        acc = f(acc, *v);
                        *v = acc;
                    }
                }
            }
        }
        out
    }

    /// Keeps entries `(m, n)` with `n >= m + offset`, zeroing the rest.
    pub fn triu(&self, offset: isize) -> Matrix {
        Matrix::from_fn(self.rows, self.cols, |r, c| {
            if c as isize >= r as isize + offset {
                self.get(r, c)
            } else {
                0.0
            }
        })
    }

    /// Cyclic shift by `shift` positions along the last axis; `roll(1)` maps
    /// `(a1, .., aN)` to `(aN, a1, .., aN-1)`.
    pub fn roll(&self, shift: isize) -> Matrix {
        if self.cols == 0 {
            return self.clone();
        }
        let n = self.cols as isize;
        let k = shift.rem_euclid(n) as usize;
        Matrix::from_fn(self.rows, self.cols, |r, c| {
            self.get(r, (c + self.cols - k) % self.cols)
        })
    }

    /// Reverses the last axis.
    pub fn flip(&self) -> Matrix {
        Matrix::from_fn(self.rows, self.cols, |r, c| self.get(r, self.cols - 1 - c))
    }

    pub fn sigmoid(&self) -> Matrix {
        self.map(sigmoid)
    }

    pub fn exp(&self) -> Matrix {
        self.map(f64::exp)
    }

    pub fn tanh(&self) -> Matrix {
        self.map(f64::tanh)
    }

    /// Natural logarithm; every entry must be strictly positive.
    pub fn ln(&self) -> Result<Matrix> {
        if let Some(v) = self.data.iter().find(|v| !(**v > 0.0)) {
            return Err(Error::domain(format!("log of non-positive value {v}")));
        }
        Ok(self.map(f64::ln))
    }

    /// Elementwise `1 / x`; every entry must be non-zero.
    pub fn recip(&self) -> Result<Matrix> {
        if self.data.iter().any(|v| *v == 0.0 || !v.is_finite()) {
            return Err(Error::domain("reciprocal of zero or non-finite value"));
        }
        Ok(self.map(|v| 1.0 / v))
    }

    /// Softmax over each row, with the row maximum subtracted first.
    pub fn softmax_rows(&self) -> Matrix {
        let mut out = self.clone();
        for row in out.data.chunks_mut(self.cols.max(1)) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        out
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// `rows x 1` column of per-row sums.
    pub fn row_sums(&self) -> Matrix {
        Matrix::column_vector(
            &(0..self.rows)
                .map(|r| self.row(r).iter().sum())
                .collect::<Vec<_>>(),
        )
    }

    /// `rows x 1` column of per-row maxima.
    pub fn row_max(&self) -> Matrix {
        Matrix::column_vector(
            &(0..self.rows)
                .map(|r| self.row(r).iter().copied().fold(f64::NEG_INFINITY, f64::max))
                .collect::<Vec<_>>(),
        )
    }

    /// Row `r` as a `1 x cols` matrix.
    pub fn select_row(&self, r: usize) -> Result<Matrix> {
        if r >= self.rows {
            return Err(Error::argument(format!(
                "row {r} out of range for {} rows",
                self.rows
            )));
        }
        Ok(Matrix::row_vector(self.row(r)))
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn vstack(parts: &[&Matrix]) -> Result<Matrix> {
        let Some(first) = parts.first() else {
            return Err(Error::argument("vstack of zero matrices"));
        };
        let cols = first.cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for part in parts {
            if part.cols != cols {
                return Err(Error::Shape {
                    op: "vstack",
                    left: first.shape(),
                    right: part.shape(),
                });
            }
            data.extend_from_slice(&part.data);
            rows += part.rows;
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> Result<f64> {
        self.ensure_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
