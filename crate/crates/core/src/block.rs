//! Dense row-major value blocks (time steps x channels).

use serde::{Deserialize, Serialize};

use crate::error::{shape_check, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Block {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        shape_check(data.len() == rows * cols, || {
            format!("block {rows}x{cols} needs {} values, got {}", rows * cols, data.len())
        })?;
        Ok(Self { rows, cols, data })
    }

    /// Builds a block from per-channel columns of equal length.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let cols = columns.len();
        let rows = columns.first().map_or(0, Vec::len);
        shape_check(columns.iter().all(|c| c.len() == rows), || {
            "ragged columns".to_string()
        })?;
        let mut out = Self::zeros(rows, cols);
        for (j, c) in columns.iter().enumerate() {
            out.set_column(j, c);
        }
        Ok(out)
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn set_column(&mut self, c: usize, values: &[f64]) {
        debug_assert_eq!(values.len(), self.rows);
        for (r, v) in values.iter().enumerate() {
            self.set(r, c, *v);
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Contiguous row range `[start, end)` as a new block.
    pub fn slice_rows(&self, start: usize, end: usize) -> Block {
        Block {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// Reorders (or duplicates) channels: output column `i` is input column `order[i]`.
    pub fn select_columns(&self, order: &[usize]) -> Block {
        let mut out = Block::zeros(self.rows, order.len());
        for (i, &src) in order.iter().enumerate() {
            for r in 0..self.rows {
                out.set(r, i, self.get(r, src));
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Block {
        Block { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Block) -> bool {
        self.shape() == other.shape()
    }
}
