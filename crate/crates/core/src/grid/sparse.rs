//! Compressed sparse matrix holding both a column-major and a row-major view.
//!
//! Estimators sweep the assignment matrix both ways (P u and P^T x), so both
//! orientations are materialized once at construction.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    col_ptr: Vec<usize>,
    col_rows: Vec<usize>,
    col_vals: Vec<f64>,
    row_ptr: Vec<usize>,
    row_cols: Vec<usize>,
    row_vals: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets. Duplicates are summed and
    /// exact zeros dropped.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        for (i, j, v) in triplets {
            if i >= nrows {
                return Err(Error::DimensionMismatch { expected: nrows, found: i + 1 });
            }
            if j >= ncols {
                return Err(Error::DimensionMismatch { expected: ncols, found: j + 1 });
            }
            if !v.is_finite() {
                return Err(Error::InvalidValue { index: j, value: v });
            }
            entries.push((i, j, v));
        }
        entries.sort_by_key(|&(i, j, _)| (j, i));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(entries.len());
        for (i, j, v) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == i && last.1 == j => last.2 += v,
                _ => merged.push((i, j, v)),
            }
        }
        merged.retain(|e| e.2 != 0.0);
        Ok(Self::from_sorted_columns(nrows, ncols, &merged))
    }

    /// `entries` must be sorted by (col, row) without duplicates.
    fn from_sorted_columns(nrows: usize, ncols: usize, entries: &[(usize, usize, f64)]) -> Self {
        let mut col_ptr = vec![0usize; ncols + 1];
        let mut row_ptr = vec![0usize; nrows + 1];
        for &(i, j, _) in entries {
            col_ptr[j + 1] += 1;
            row_ptr[i + 1] += 1;
        }
        for k in 0..ncols {
            col_ptr[k + 1] += col_ptr[k];
        }
        for k in 0..nrows {
            row_ptr[k + 1] += row_ptr[k];
        }
        let col_rows = entries.iter().map(|e| e.0).collect();
        let col_vals = entries.iter().map(|e| e.2).collect();

        let nnz = entries.len();
        let mut row_cols = vec![0usize; nnz];
        let mut row_vals = vec![0.0; nnz];
        let mut next = row_ptr.clone();
        // Column-sorted input yields column-sorted rows.
        for &(i, j, v) in entries {
            row_cols[next[i]] = j;
            row_vals[next[i]] = v;
            next[i] += 1;
        }
        Self { nrows, ncols, col_ptr, col_rows, col_vals, row_ptr, row_cols, row_vals }
    }

    pub fn from_columns(nrows: usize, columns: &[Vec<(usize, f64)>]) -> Result<Self> {
        let triplets = columns
            .iter()
            .enumerate()
            .flat_map(|(j, col)| col.iter().map(move |&(i, v)| (i, j, v)));
        Self::from_triplets(nrows, columns.len(), triplets)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.col_vals.len()
    }

    pub fn col(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.col_ptr[j]..self.col_ptr[j + 1];
        self.col_rows[r.clone()].iter().copied().zip(self.col_vals[r].iter().copied())
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.row_cols[r.clone()].iter().copied().zip(self.row_vals[r].iter().copied())
    }

    pub fn col_entries(&self, j: usize) -> (&[usize], &[f64]) {
        let r = self.col_ptr[j]..self.col_ptr[j + 1];
        (&self.col_rows[r.clone()], &self.col_vals[r])
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.ncols).flat_map(move |j| self.col(j).map(move |(i, v)| (i, j, v)))
    }

    /// y = M x
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.ncols);
        (0..self.nrows).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    /// y = M^T x
    pub fn tmul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.nrows);
        (0..self.ncols).map(|j| self.col(j).map(|(i, v)| v * x[i]).sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        (0..self.ncols).map(|j| self.col(j).map(|(_, v)| v).sum()).collect()
    }

    /// Keeps the listed columns in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Self {
        let mut entries = Vec::new();
        for (new_j, &j) in cols.iter().enumerate() {
            entries.extend(self.col(j).map(|(i, v)| (i, new_j, v)));
        }
        Self::from_sorted_columns(self.nrows, cols.len(), &entries)
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            m[(i, j)] = v;
        }
        m
    }
}
