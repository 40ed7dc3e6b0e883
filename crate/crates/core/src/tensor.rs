//! Dense row-major `f64` matrices.
//!
//! This is the operand type for weights, activations and gradients, and the
//! element layout (row-major) is the one the wire codec serializes.

use std::fmt;

use thiserror::Error;

use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("invalid shape {rows}x{cols} for {len} elements")]
    InvalidShape { rows: usize, cols: usize, len: usize },
    #[error("matrix entry at ({row}, {col}) is not finite")]
    NonFinite { row: usize, col: usize },
    #[error("cannot split dimension {dim} into {shards} shards")]
    TooManyShards { dim: usize, shards: usize },
    #[error("{0}: empty input")]
    Empty(&'static str),
}

/// Which dimension a split or concatenation runs along.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            if r > 0 {
                write!(f, "; ")?;
            }
            for c in 0..self.cols {
                if c > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{}", self.get(r, c))?;
            }
        }
        write!(f, "]")
    }
}

impl Matrix {
    /// Builds a matrix from row-major data. Both dimensions must be positive
    /// and every entry finite.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(TensorError::InvalidShape {
                rows,
                cols,
                len: data.len(),
            });
        }
        if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite {
                row: idx / cols,
                col: idx % cols,
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows. Panics on ragged or empty input;
    /// meant for literals in tests and examples.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        assert!(!rows.is_empty(), "from_rows: no rows");
        let cols = rows[0].as_ref().len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "from_rows: ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self::new(rows.len(), cols, data).expect("from_rows: invalid literal")
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(rows > 0 && cols > 0, "from_fn: empty shape");
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self::from_fn(rows, cols, |_, _| value)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 1.0)
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    /// Column vector (`len x 1`).
    pub fn column(values: &[f64]) -> Self {
        Self::from_fn(values.len(), 1, |r, _| values[r])
    }

    /// Entries drawn uniformly from `[lo, hi)`.
    pub fn random_uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut Rng) -> Self {
        Self::from_fn(rows, cols, |_, _| rng.uniform_range(lo, hi))
    }

    /// Entries drawn from the standard normal distribution.
    pub fn random_normal(rows: usize, cols: usize, rng: &mut Rng) -> Self {
        Self::from_fn(rows, cols, |_, _| rng.normal())
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

    /// Always false: a matrix has at least one entry.
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    /// Row-major entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, TensorError> {
        if self.cols != other.rows {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let (m, n, p) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; m * p];
        for i in 0..m {
            let out_row = &mut out[i * p..(i + 1) * p];
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * p..(k + 1) * p];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Matrix {
            rows: m,
            cols: p,
            data: out,
        })
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    fn zip_with(
        &self,
        other: &Matrix,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Matrix, TensorError> {
        if self.shape() != other.shape() {
            return Err(TensorError::ShapeMismatch {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        })
    }

    /// Entrywise product.
    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix, TensorError> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix, TensorError> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix, TensorError> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn scale(&self, factor: f64) -> Matrix {
        self.map(|v| v * factor)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| f(*v)).collect(),
        }
    }

    /// Adds `bias[r]` to every entry of row `r`.
    pub fn add_column_broadcast(&self, bias: &[f64]) -> Result<Matrix, TensorError> {
        if bias.len() != self.rows {
            return Err(TensorError::ShapeMismatch {
                op: "add_column_broadcast",
                left: self.shape(),
                right: (bias.len(), 1),
            });
        }
        Ok(Matrix::from_fn(self.rows, self.cols, |r, c| {
            self.get(r, c) + bias[r]
        }))
    }

    /// Sum of each row, one value per row.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|r| self.row(r).iter().sum()).collect()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// Largest absolute entrywise difference. Shapes must match.
    pub fn max_abs_diff(&self, other: &Matrix) -> Result<f64, TensorError> {
        Ok(self.sub(other)?.max_abs())
    }

    /// Sub-block of rows `[start, start + len)`.
    pub fn row_block(&self, start: usize, len: usize) -> Matrix {
        Matrix {
            rows: len,
            cols: self.cols,
            data: self.data[start * self.cols..(start + len) * self.cols].to_vec(),
        }
    }

    /// Sub-block of columns `[start, start + len)`.
    pub fn col_block(&self, start: usize, len: usize) -> Matrix {
        Matrix::from_fn(self.rows, len, |r, c| self.get(r, start + c))
    }

    /// Sub-matrix made of the listed columns, in order.
    pub fn select_cols(&self, cols: &[usize]) -> Matrix {
        Matrix::from_fn(self.rows, cols.len(), |r, c| self.get(r, cols[c]))
    }

    /// Contiguous split into `n_shards` blocks along `axis`. Block sizes differ
    /// by at most one; the first `dim % n_shards` blocks get the extra row or
    /// column.
    pub fn split(&self, axis: Axis, n_shards: usize) -> Result<Vec<Matrix>, TensorError> {
        let dim = match axis {
            Axis::Rows => self.rows,
            Axis::Cols => self.cols,
        };
        let sizes = shard_sizes(dim, n_shards)?;
        let mut start = 0;
        Ok(sizes
            .into_iter()
            .map(|len| {
                let block = match axis {
                    Axis::Rows => self.row_block(start, len),
                    Axis::Cols => self.col_block(start, len),
                };
                start += len;
                block
            })
            .collect())
    }

    /// Block concatenation along `axis`.
    pub fn concat(parts: &[Matrix], axis: Axis) -> Result<Matrix, TensorError> {
        let first = parts.first().ok_or(TensorError::Empty("concat"))?;
        for p in &parts[1..] {
            let compatible = match axis {
                Axis::Rows => p.cols == first.cols,
                Axis::Cols => p.rows == first.rows,
            };
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    left: first.shape(),
                    right: p.shape(),
                });
            }
        }
        match axis {
            Axis::Rows => {
                let rows = parts.iter().map(|p| p.rows).sum();
                let mut data = Vec::with_capacity(rows * first.cols);
                for p in parts {
                    data.extend_from_slice(&p.data);
                }
                Ok(Matrix {
                    rows,
                    cols: first.cols,
                    data,
                })
            }
            Axis::Cols => {
                let cols = parts.iter().map(|p| p.cols).sum();
                let mut data = Vec::with_capacity(first.rows * cols);
                for r in 0..first.rows {
                    for p in parts {
                        data.extend_from_slice(p.row(r));
                    }
                }
                Ok(Matrix {
                    rows: first.rows,
                    cols,
                    data,
                })
            }
        }
    }

    /// Elementwise sum of equally shaped matrices, folded left to right.
    pub fn sum_all(parts: &[Matrix]) -> Result<Matrix, TensorError> {
        let first = parts.first().ok_or(TensorError::Empty("sum_all"))?;
        parts[1..]
            .iter()
            .try_fold(first.clone(), |acc, p| acc.add(p))
    }

    /// Row index of the largest entry in each column.
    pub fn argmax_per_column(&self) -> Vec<usize> {
        (0..self.cols)
            .map(|c| {
                let mut best = 0;
                for r in 1..self.rows {
                    if self.get(r, c) > self.get(best, c) {
                        best = r;
                    }
                }
                best
            })
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Block sizes used by [`Matrix::split`].
pub fn shard_sizes(dim: usize, n_shards: usize) -> Result<Vec<usize>, TensorError> {
    if n_shards == 0 || n_shards > dim {
        return Err(TensorError::TooManyShards {
            dim,
            shards: n_shards,
        });
    }
    let base = dim / n_shards;
    let extra = dim % n_shards;
    Ok((0..n_shards)
        .map(|i| base + usize::from(i < extra))
        .collect())
}
