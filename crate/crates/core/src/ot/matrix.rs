use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major real matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::invalid(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows.saturating_mul(cols),
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
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

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (o, v) in out.iter_mut().zip(self.row(i)) {
                *o += v;
            }
        }
        out
    }

    /// Sum of all entries, accumulated row by row.
    pub fn total(&self) -> f64 {
        self.row_sums().iter().sum()
    }

    /// Frobenius inner product, fixed left-to-right order.
    pub fn frobenius_dot(&self, other: &Matrix) -> f64 {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A set of support points, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix(Matrix);

impl EmbeddingMatrix {
    pub fn new(count: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if count == 0 || dim == 0 {
            return Err(Error::invalid(format!(
                "embedding matrix needs count >= 1 and dim >= 1, got {count}x{dim}"
            )));
        }
        let m = Matrix::new(count, dim, data)?;
        if let Some(pos) = m.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite embedding entry at row {}, col {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(Self(m))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = Matrix::from_rows(rows)?;
        Self::new(m.rows(), m.cols(), m.into_data())
    }

    pub fn count(&self) -> usize {
        self.0.rows()
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

impl Deref for EmbeddingMatrix {
    type Target = Matrix;

    fn deref(&self) -> &Matrix {
        &self.0
    }
}

/// Nonnegative weights over support points.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    weights: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("weights must be finite and nonnegative"));
        }
        if !weights.iter().any(|w| *w > 0.0) {
            return Err(Error::invalid("at least one weight must be positive"));
        }
        Ok(Self { weights })
    }

    /// `n` equal weights of exactly `1/n`.
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("uniform weights need n >= 1"));
        }
        Ok(Self {
            weights: vec![1.0 / n as f64; n],
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            weights: perm.iter().map(|&p| self.weights[p]).collect(),
        }
    }
}

/// Shorthand for [`DiscreteDistribution::uniform`].
pub fn uniform_weights(n: usize) -> Result<DiscreteDistribution> {
    DiscreteDistribution::uniform(n)
}

/// Pairwise transport costs between `rows` sources and `cols` targets.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix(Matrix);

impl CostMatrix {
    pub fn new(matrix: Matrix) -> Result<Self> {
        if matrix.rows() == 0 || matrix.cols() == 0 {
            return Err(Error::invalid("cost matrix must be at least 1x1"));
        }
        if !matrix.is_finite() {
            return Err(Error::invalid("cost matrix has non-finite entries"));
        }
        Ok(Self(matrix))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn transposed(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let data = self.0.data().iter().map(|c| c * factor).collect();
        Self(Matrix::new(self.rows(), self.cols(), data).expect("same shape"))
    }

    pub fn shifted(&self, offset: f64) -> Self {
        let data = self.0.data().iter().map(|c| c + offset).collect();
        Self(Matrix::new(self.rows(), self.cols(), data).expect("same shape"))
    }

    pub fn permute_rows(&self, perm: &[usize]) -> Self {
        let data = perm.iter().flat_map(|&p| self.0.row(p).to_vec()).collect();
        Self(Matrix::new(self.rows(), self.cols(), data).expect("same shape"))
    }
}

impl Deref for CostMatrix {
    type Target = Matrix;

    fn deref(&self) -> &Matrix {
        &self.0
    }
}

/// Nonnegative coupling between sources (rows) and targets (cols).
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    plan: Matrix,
    transported_mass: f64,
}

impl TransportPlan {
    /// Clamps rounding negatives to zero and records the total mass.
    pub fn new(mut plan: Matrix) -> Self {
        for v in plan.data_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let transported_mass = plan.total();
        Self {
            plan,
            transported_mass,
        }
    }

    pub fn transported_mass(&self) -> f64 {
        self.transported_mass
    }

    pub fn matrix(&self) -> &Matrix {
        &self.plan
    }

    pub fn into_matrix(self) -> Matrix {
        self.plan
    }
}

impl Deref for TransportPlan {
    type Target = Matrix;

    fn deref(&self) -> &Matrix {
        &self.plan
    }
}
