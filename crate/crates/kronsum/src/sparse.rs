//! Compressed sparse rows and the matrix-free operator abstraction.
//!
//! Everything downstream of matricization works through [`MatVec`] so that
//! Gram matrices are never formed: the partial eigensolver and the copula
//! transform only ever see `A x` and `A^T x`.

use rayon::prelude::*;

/// Compressed sparse row matrix with explicit column count.
#[derive(Debug, Clone)]
pub struct Csr {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    /// Builds a CSR matrix from coordinate triplets.
    ///
    /// Triplets may arrive in any order; duplicates must have been merged by
    /// the caller. Indices are bounds-checked by debug assertion only.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        let triplets: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        for &(r, c, _) in &triplets {
            debug_assert!(r < nrows && c < ncols);
            counts[r + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let row_ptr = counts;
        let mut cursor = row_ptr.clone();
        let nnz = triplets.len();
        let mut col_idx = vec![0usize; nnz];
        let mut values = vec![0.0f64; nnz];
        for (r, c, v) in triplets {
            let slot = cursor[r];
            col_idx[slot] = c;
            values[slot] = v;
            cursor[r] += 1;
        }
        let mut csr = Csr {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        };
        csr.sort_rows();
        csr
    }

    fn sort_rows(&mut self) {
        for r in 0..self.nrows {
            let (lo, hi) = (self.row_ptr[r], self.row_ptr[r + 1]);
            let mut perm: Vec<usize> = (lo..hi).collect();
            perm.sort_by_key(|&i| self.col_idx[i]);
            let cols: Vec<usize> = perm.iter().map(|&i| self.col_idx[i]).collect();
            let vals: Vec<f64> = perm.iter().map(|&i| self.values[i]).collect();
            self.col_idx[lo..hi].copy_from_slice(&cols);
            self.values[lo..hi].copy_from_slice(&vals);
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Row `r` as parallel column/value slices.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.col_idx[lo..hi], &self.values[lo..hi])
    }

    /// Mutable values of row `r` (columns stay fixed).
    pub fn row_values_mut(&mut self, r: usize) -> &mut [f64] {
        let (lo, hi) = (self.row_ptr[r], self.row_ptr[r + 1]);
        &mut self.values[lo..hi]
    }

    /// The transposed matrix, also in CSR layout.
    pub fn transpose(&self) -> Csr {
        let mut counts = vec![0usize; self.ncols + 1];
        for &c in &self.col_idx {
            counts[c + 1] += 1;
        }
        for i in 0..self.ncols {
            counts[i + 1] += counts[i];
        }
        let row_ptr = counts;
        let mut cursor = row_ptr.clone();
        let mut col_idx = vec![0usize; self.nnz()];
        let mut values = vec![0.0f64; self.nnz()];
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let slot = cursor[c];
                col_idx[slot] = r;
                values[slot] = v;
                cursor[c] += 1;
            }
        }
        Csr {
            nrows: self.ncols,
            ncols: self.nrows,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// `out = self * x`, one parallel task per output row.
    pub fn matvec_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(out.len(), self.nrows);
        out.par_iter_mut().enumerate().for_each(|(r, o)| {
            let (cols, vals) = self.row(r);
            let mut acc = 0.0;
            for (&c, &v) in cols.iter().zip(vals) {
                acc += v * x[c];
            }
            *o = acc;
        });
    }

    /// Materializes the matrix densely; intended for oracles and small cases.
    pub fn to_dense(&self) -> ndarray::Array2<f64> {
        let mut dense = ndarray::Array2::zeros((self.nrows, self.ncols));
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                dense[[r, c]] += v;
            }
        }
        dense
    }

    /// Sum of squared entries.
    pub fn frobenius_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// Coordinate triplets in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter()
                .zip(vals)
                .map(move |(&c, &v)| (r, c, v))
                .collect::<Vec<_>>()
        })
    }
}

/// A real linear operator exposed through forward and adjoint products.
pub trait MatVec: Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    /// `out = A x` with `x.len() == ncols`, `out.len() == nrows`.
    fn matvec_into(&self, x: &[f64], out: &mut [f64]);
    /// `out = A^T x` with `x.len() == nrows`, `out.len() == ncols`.
    fn rmatvec_into(&self, x: &[f64], out: &mut [f64]);

    fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.nrows()];
        self.matvec_into(x, &mut out);
        out
    }

    fn rmatvec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols()];
        self.rmatvec_into(x, &mut out);
        out
    }

    /// `out = A A^T x`: the Gram product used by the partial eigensolver.
    fn gram_matvec_into(&self, x: &[f64], out: &mut [f64]) {
        let tmp = self.rmatvec(x);
        self.matvec_into(&tmp, out);
    }
}

/// A sparse operator storing both orientations for fast adjoint products.
#[derive(Debug, Clone)]
pub struct SparsePair {
    forward: Csr,
    adjoint: Csr,
}

impl SparsePair {
    pub fn new(forward: Csr) -> Self {
        let adjoint = forward.transpose();
        SparsePair { forward, adjoint }
    }

    pub fn forward(&self) -> &Csr {
        &self.forward
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.forward.frobenius_sq()
    }
}

impl MatVec for SparsePair {
    fn nrows(&self) -> usize {
        self.forward.nrows()
    }

    fn ncols(&self) -> usize {
        self.forward.ncols()
    }

    fn matvec_into(&self, x: &[f64], out: &mut [f64]) {
        self.forward.matvec_into(x, out);
    }

    fn rmatvec_into(&self, x: &[f64], out: &mut [f64]) {
        self.adjoint.matvec_into(x, out);
    }
}
