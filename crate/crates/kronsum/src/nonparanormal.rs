//! Row-wise Gaussian-copula rank transform over implicit concatenations.
//!
//! Count-style data violates Gaussian margins, so each row of an axis's
//! concatenated matricization is replaced by normal scores of its ranks.
//! Unstored entries are all zero and therefore all tie: they map to a single
//! per-row value `z_i`, which turns the transformed matrix into
//! `core + z 1^T` — original sparsity plus a rank-one correction. The
//! [`ShiftedSparse`] operator keeps that structure implicit so downstream
//! spectral work stays O(nnz + d) per product.

use rayon::prelude::*;

use crate::dataset::{Dataset, ModalityStructure};
use crate::error::{Error, Result};
use crate::normal::inverse_phi;
use crate::sparse::{Csr, MatVec};

/// How tied values share ranks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieMethod {
    /// Tied values receive the mean of the ranks they span (default).
    #[default]
    Average,
    /// Tied values receive the smallest rank of their block.
    Minimum,
}

/// Normal-scores transform of one row.
///
/// `values` are the stored entries of the row (order preserved in the
/// output); `implicit_zeros` counts unstored entries, which tie with any
/// stored zeros. Returns the transformed values and the shared transformed
/// value `z` of a zero entry. Ranks `r` in `1..=n` map to `Phi^-1(r/(n+1))`
/// where `n = values.len() + implicit_zeros`.
pub fn rank_transform_row(
    values: &[f64],
    implicit_zeros: usize,
    tie: TieMethod,
) -> (Vec<f64>, f64) {
    let n = values.len() + implicit_zeros;
    assert!(n > 0, "rank transform of an empty row");
    let scale = (n + 1) as f64;

    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));

    let negatives = values.iter().filter(|&&v| v < 0.0).count();
    let stored_zeros = values.iter().filter(|&&v| v == 0.0).count();
    let zero_block = stored_zeros + implicit_zeros;

    // Rank occupied by the start of the zero block (1-based).
    let zero_begin = negatives + 1;
    let zero_rank = if zero_block == 0 {
        // No zero exists; place the would-be zero between its neighbors so
        // the quantile stays strictly inside (0, 1) even for full rows.
        negatives as f64 + 0.5
    } else {
        match tie {
            TieMethod::Average => zero_begin as f64 + (zero_block as f64 - 1.0) / 2.0,
            TieMethod::Minimum => zero_begin as f64,
        }
    };
    let z = inverse_phi(zero_rank / scale);

    let mut out = vec![0.0; values.len()];
    let mut pos = 0;
    while pos < order.len() {
        let v = values[order[pos]];
        let mut end = pos + 1;
        while end < order.len() && values[order[end]] == v {
            end += 1;
        }
        let mapped = if v == 0.0 {
            z
        } else {
            // Stored entries strictly below v, plus the zero block if v > 0.
            let below = pos + if v > 0.0 { implicit_zeros } else { 0 };
            let begin = below + 1;
            let rank = match tie {
                TieMethod::Average => begin as f64 + (end - pos) as f64 / 2.0 - 0.5,
                TieMethod::Minimum => begin as f64,
            };
            inverse_phi(rank / scale)
        };
        for &idx in &order[pos..end] {
            out[idx] = mapped;
        }
        pos = end;
    }
    (out, z)
}

/// Sparse-plus-rank-one representation of a transformed matricization:
/// the dense equivalent is `core + zero_map 1^T`.
#[derive(Debug, Clone)]
pub struct ShiftedSparse {
    core: Csr,
    core_adjoint: Csr,
    zero_map: Vec<f64>,
    width: usize,
    gram_trace: f64,
}

impl ShiftedSparse {
    /// Builds the representation from a fully transformed CSR whose stored
    /// values are already normal scores; `zero_map[i]` is row i's zero score.
    fn new(mut transformed: Csr, zero_map: Vec<f64>) -> Self {
        let width = transformed.ncols();
        // Gram trace = squared Frobenius norm of the dense equivalent.
        let mut gram_trace = 0.0;
        for r in 0..transformed.nrows() {
            let (_, vals) = transformed.row(r);
            let stored: f64 = vals.iter().map(|v| v * v).sum();
            let implicit = (width - vals.len()) as f64;
            gram_trace += stored + implicit * zero_map[r] * zero_map[r];
        }
        // Store core = transformed - z 1^T on the sparsity pattern.
        for r in 0..transformed.nrows() {
            let z = zero_map[r];
            for v in transformed.row_values_mut(r) {
                *v -= z;
            }
        }
        let core_adjoint = transformed.transpose();
        ShiftedSparse {
            core: transformed,
            core_adjoint,
            zero_map,
            width,
            gram_trace,
        }
    }

    pub fn core(&self) -> &Csr {
        &self.core
    }

    pub fn zero_map(&self) -> &[f64] {
        &self.zero_map
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Exact trace of the Gram matrix of the dense equivalent.
    pub fn gram_trace(&self) -> f64 {
        self.gram_trace
    }

    /// Dense equivalent, for oracles and small cases only.
    pub fn to_dense(&self) -> ndarray::Array2<f64> {
        let mut dense = self.core.to_dense();
        for (mut row, &z) in dense.rows_mut().into_iter().zip(&self.zero_map) {
            row.mapv_inplace(|v| v + z);
        }
        dense
    }
}

impl MatVec for ShiftedSparse {
    fn nrows(&self) -> usize {
        self.core.nrows()
    }

    fn ncols(&self) -> usize {
        self.width
    }

    fn matvec_into(&self, x: &[f64], out: &mut [f64]) {
        self.core.matvec_into(x, out);
        let total: f64 = x.iter().sum();
        out.par_iter_mut()
            .zip(&self.zero_map)
            .for_each(|(o, &z)| *o += z * total);
    }

    fn rmatvec_into(&self, x: &[f64], out: &mut [f64]) {
        self.core_adjoint.matvec_into(x, out);
        let dot: f64 = x
            .iter()
            .zip(&self.zero_map)
            .map(|(&xi, &zi)| xi * zi)
            .sum();
        out.par_iter_mut().for_each(|o| *o += dot);
    }
}

/// Rank-transforms the concatenated matricization of `axis` across every
/// modality containing it. Rows are processed independently in parallel.
pub fn nonparanormal_matricization(
    dataset: &Dataset,
    structure: &ModalityStructure,
    axis: usize,
    tie: TieMethod,
) -> Result<ShiftedSparse> {
    let csr = crate::dataset::axis_csr(dataset, structure, axis)?;
    let width = csr.ncols();
    if width == 0 {
        return Err(Error::Structural(format!(
            "axis '{}' has an empty concatenated matricization",
            dataset.axis(axis).name
        )));
    }
    let rows: Vec<(Vec<f64>, f64)> = (0..csr.nrows())
        .into_par_iter()
        .map(|r| {
            let (_, vals) = csr.row(r);
            rank_transform_row(vals, width - vals.len(), tie)
        })
        .collect();
    let mut zero_map = Vec::with_capacity(csr.nrows());
    let mut transformed = csr;
    for (r, (vals, z)) in rows.into_iter().enumerate() {
        transformed.row_values_mut(r).copy_from_slice(&vals);
        zero_map.push(z);
    }
    Ok(ShiftedSparse::new(transformed, zero_map))
}
