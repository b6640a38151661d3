use alloc::vec::Vec;
use core::slice::ChunksExact;

use crate::error::{Error, Result};

/// A row-major `len x dim` matrix of points.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    data: Vec<f64>,
    dim: usize,
}

impl Points {
    /// Wraps row-major `data`; its length must be a multiple of `dim`.
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("point dimension must be positive"));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::invalid(
                "data length is not a multiple of the dimension",
            ));
        }
        Ok(Points { data, dim })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let first = rows.first().ok_or(Error::EmptyBatch)?;
        let dim = first.as_ref().len();
        let mut out = Points::with_capacity(dim, rows.len())?;
        for row in rows {
            out.push_row(row.as_ref())?;
        }
        Ok(out)
    }

    /// An empty matrix with room for `rows` points.
    pub fn with_capacity(dim: usize, rows: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("point dimension must be positive"));
        }
        Ok(Points {
            data: Vec::with_capacity(dim * rows),
            dim,
        })
    }

    pub fn zeros(len: usize, dim: usize) -> Result<Self> {
        Points::new(dim, alloc::vec![0.0; len * dim])
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Overwrites row 0 with a copy of row `i`.
    pub fn copy_row_to_front(&mut self, i: usize) {
        let dim = self.dim;
        self.data.copy_within(i * dim..(i + 1) * dim, 0);
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: row.len(),
            });
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn clear(&mut self) {
        self.data.clear();
    }

    /// Replaces the contents with the rows of `source` at `indices`, reusing
    /// the allocation.
    pub fn gather_from(&mut self, source: &Points, indices: &[usize]) -> Result<()> {
        if source.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: source.dim,
            });
        }
        self.data.clear();
        for &i in indices {
            self.data.extend_from_slice(source.row(i));
        }
        Ok(())
    }

    pub fn select(&self, indices: &[usize]) -> Points {
        let mut out = Points {
            data: Vec::with_capacity(indices.len() * self.dim),
            dim: self.dim,
        };
        for &i in indices {
            out.data.extend_from_slice(self.row(i));
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Arithmetic mean of the rows.
    pub fn mean(&self) -> Vec<f64> {
        let mut acc = alloc::vec![0.0; self.dim];
        for row in self.rows() {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        let n = self.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }
}
