//! Multi-modal tensor datasets and their axis bookkeeping.
//!
//! A dataset is a collection of sparse tensors ("modalities") whose axes may
//! be shared. Every estimation stage is per-axis: the central operation here
//! is matricization, which unfolds one modality along one axis into a sparse
//! `d_axis x (elements / d_axis)` matrix. The unfolding convention is fixed:
//! the *first* axis of a modality varies with the largest stride, both in
//! vectorization and in matricized column order, and every Kronecker-style
//! construction in this crate follows the same convention.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::sparse::{Csr, SparsePair};

/// A named dimension shared across modalities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Axis {
    pub name: String,
    pub len: usize,
}

/// One sparse tensor. Entries are stored as row-major linear offsets so the
/// memory cost is 16 bytes per stored value regardless of tensor order.
#[derive(Debug, Clone)]
pub struct Modality {
    pub name: String,
    /// Dataset axis ids, in tensor order (first axis = largest stride).
    pub axes: Vec<usize>,
    /// Axis lengths, parallel to `axes`.
    pub shape: Vec<usize>,
    /// Row-major strides, parallel to `axes`.
    strides: Vec<u64>,
    /// Sorted, deduplicated (linear offset, value) pairs; no explicit zeros.
    entries: Vec<(u64, f64)>,
}

impl Modality {
    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn order(&self) -> usize {
        self.axes.len()
    }

    /// Sum of squared stored values, `||D||_F^2`.
    pub fn frobenius_sq(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v * v).sum()
    }

    /// Iterates entries as (multi-index, value).
    pub fn entries(&self) -> impl Iterator<Item = (Vec<usize>, f64)> + '_ {
        self.entries.iter().map(move |&(lin, v)| {
            let idx = self
                .strides
                .iter()
                .zip(&self.shape)
                .map(|(&s, &d)| ((lin / s) % d as u64) as usize)
                .collect();
            (idx, v)
        })
    }

    fn position_of(&self, axis: usize) -> Option<usize> {
        self.axes.iter().position(|&a| a == axis)
    }
}

/// Derived dimension products for one modality.
#[derive(Debug, Clone)]
pub struct ModalityDims {
    /// Dataset axis ids in tensor order.
    pub axes: Vec<usize>,
    /// Product of axis lengths before each position (earlier = larger stride).
    pub before: Vec<u64>,
    /// Product of axis lengths after each position.
    pub after: Vec<u64>,
    /// Product of all other axis lengths at each position.
    pub coshape: Vec<u64>,
    /// Total element count of the modality.
    pub total: u64,
    /// Number of axes.
    pub order: usize,
}

impl ModalityDims {
    /// Coshape `d^modality_(not axis)` looked up by dataset axis id.
    pub fn coshape_of(&self, axis: usize) -> Option<u64> {
        self.axes
            .iter()
            .position(|&a| a == axis)
            .map(|p| self.coshape[p])
    }
}

/// Axis-wise and modality-wise dimension bookkeeping for a dataset.
#[derive(Debug, Clone)]
pub struct ModalityStructure {
    /// Axis lengths by axis id.
    pub axis_len: Vec<u64>,
    /// Per-modality dimension products, in dataset modality order.
    pub modalities: Vec<ModalityDims>,
    /// For each axis, the modalities containing it, in modality order.
    pub axis_members: Vec<Vec<usize>>,
    /// For each axis, the summed element count of member modalities.
    pub axis_total: Vec<u64>,
    /// For each axis, the summed coshape over member modalities (the column
    /// count of the concatenated matricization).
    pub axis_coshape: Vec<u64>,
}

impl ModalityStructure {
    pub fn n_axes(&self) -> usize {
        self.axis_len.len()
    }
}

/// A validated multi-modal dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    axes: Vec<Axis>,
    axis_ids: HashMap<String, usize>,
    modalities: Vec<Modality>,
}

/// Incremental construction of a [`Dataset`] with validation on the way in.
#[derive(Debug, Default)]
pub struct DatasetBuilder {
    axes: Vec<Axis>,
    axis_ids: HashMap<String, usize>,
    // Which modality first declared each axis, for conflict reporting.
    declared_by: Vec<String>,
    modalities: Vec<Modality>,
    modality_names: HashMap<String, usize>,
}

impl DatasetBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares a modality with named axes; returns its index for entry pushes.
    pub fn add_modality(&mut self, name: &str, axes: &[(&str, usize)]) -> Result<usize> {
        if axes.is_empty() {
            return Err(Error::Structural(format!(
                "modality '{name}' declares no axes"
            )));
        }
        if self.modality_names.contains_key(name) {
            return Err(Error::Structural(format!(
                "duplicate modality name '{name}'"
            )));
        }
        let mut ids = Vec::with_capacity(axes.len());
        for &(axis_name, len) in axes {
            if len == 0 {
                return Err(Error::Structural(format!(
                    "axis '{axis_name}' in modality '{name}' has length 0"
                )));
            }
            match self.axis_ids.get(axis_name) {
                Some(&id) => {
                    if self.axes[id].len != len {
                        return Err(Error::Structural(format!(
                            "axis '{}' has length {} in modality '{}' but length {} in modality '{}'",
                            axis_name, self.axes[id].len, self.declared_by[id], len, name
                        )));
                    }
                    if ids.contains(&id) {
                        return Err(Error::Structural(format!(
                            "axis '{axis_name}' appears twice in modality '{name}'"
                        )));
                    }
                    ids.push(id);
                }
                None => {
                    let id = self.axes.len();
                    self.axes.push(Axis {
                        name: axis_name.to_string(),
                        len,
                    });
                    self.axis_ids.insert(axis_name.to_string(), id);
                    self.declared_by.push(name.to_string());
                    ids.push(id);
                }
            }
        }
        let shape: Vec<usize> = ids.iter().map(|&id| self.axes[id].len).collect();
        // Overflow of the element count is a capacity error, not a panic.
        let mut total: u64 = 1;
        for &d in &shape {
            total = total.checked_mul(d as u64).ok_or_else(|| Error::Capacity {
                modality: name.to_string(),
                detail: format!("element count overflows u64 for shape {shape:?}"),
            })?;
        }
        let mut strides = vec![1u64; shape.len()];
        for p in (0..shape.len().saturating_sub(1)).rev() {
            strides[p] = strides[p + 1] * shape[p + 1] as u64;
        }
        self.modality_names
            .insert(name.to_string(), self.modalities.len());
        self.modalities.push(Modality {
            name: name.to_string(),
            axes: ids,
            shape,
            strides,
            entries: Vec::new(),
        });
        Ok(self.modalities.len() - 1)
    }

    /// Appends one entry to a declared modality.
    pub fn push_entry(&mut self, modality: usize, index: &[usize], value: f64) -> Result<()> {
        let m = &mut self.modalities[modality];
        if index.len() != m.order() {
            return Err(Error::Structural(format!(
                "entry for modality '{}' has {} indices, expected {}",
                m.name,
                index.len(),
                m.order()
            )));
        }
        if !value.is_finite() {
            return Err(Error::Structural(format!(
                "non-finite value {} in modality '{}'",
                value, m.name
            )));
        }
        let mut lin: u64 = 0;
        for ((&j, &d), &s) in index.iter().zip(&m.shape).zip(&m.strides) {
            if j >= d {
                return Err(Error::Structural(format!(
                    "index {} out of bounds (axis length {}) in modality '{}'",
                    j, d, m.name
                )));
            }
            lin += j as u64 * s;
        }
        m.entries.push((lin, value));
        Ok(())
    }

    /// Finalizes the dataset: entries are sorted, duplicate coordinates are
    /// summed, and exact zeros are dropped.
    pub fn finish(mut self) -> Result<Dataset> {
        if self.modalities.is_empty() {
            return Err(Error::Structural("dataset has no modalities".into()));
        }
        for m in &mut self.modalities {
            m.entries.sort_unstable_by_key(|&(lin, _)| lin);
            let mut merged: Vec<(u64, f64)> = Vec::with_capacity(m.entries.len());
            for &(lin, v) in m.entries.iter() {
                match merged.last_mut() {
                    Some((last, acc)) if *last == lin => *acc += v,
                    _ => merged.push((lin, v)),
                }
            }
            merged.retain(|&(_, v)| v != 0.0);
            merged.shrink_to_fit();
            m.entries = merged;
        }
        Ok(Dataset {
            axes: self.axes,
            axis_ids: self.axis_ids,
            modalities: self.modalities,
        })
    }
}

impl Dataset {
    pub fn builder() -> DatasetBuilder {
        DatasetBuilder::new()
    }

    /// Convenience constructor for one dense tensor modality.
    pub fn from_dense(
        modality: &str,
        axes: &[(&str, usize)],
        values: &[f64],
    ) -> Result<Dataset> {
        let mut b = Dataset::builder();
        let m = b.add_modality(modality, axes)?;
        let shape: Vec<usize> = axes.iter().map(|&(_, d)| d).collect();
        let total: usize = shape.iter().product();
        if values.len() != total {
            return Err(Error::Structural(format!(
                "dense payload has {} values, shape {:?} needs {}",
                values.len(),
                shape,
                total
            )));
        }
        let mut idx = vec![0usize; shape.len()];
        for &v in values {
            if v != 0.0 {
                b.push_entry(m, &idx, v)?;
            }
            for p in (0..shape.len()).rev() {
                idx[p] += 1;
                if idx[p] < shape[p] {
                    break;
                }
                idx[p] = 0;
            }
        }
        b.finish()
    }

    pub fn n_axes(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn axis(&self, id: usize) -> &Axis {
        &self.axes[id]
    }

    pub fn axis_id(&self, name: &str) -> Option<usize> {
        self.axis_ids.get(name).copied()
    }

    pub fn modalities(&self) -> &[Modality] {
        &self.modalities
    }

    pub fn modality(&self, idx: usize) -> &Modality {
        &self.modalities[idx]
    }

    pub fn total_nnz(&self) -> usize {
        self.modalities.iter().map(|m| m.nnz()).sum()
    }
}

/// Computes the dimension products used throughout estimation.
///
/// Fails with a capacity error if any derived count overflows `u64`.
pub fn build_structure(dataset: &Dataset) -> Result<ModalityStructure> {
    let axis_len: Vec<u64> = dataset.axes.iter().map(|a| a.len as u64).collect();
    let mut modalities = Vec::with_capacity(dataset.modalities.len());
    for m in &dataset.modalities {
        let order = m.order();
        let mut before = vec![1u64; order];
        let mut after = vec![1u64; order];
        let overflow = |detail: String| Error::Capacity {
            modality: m.name.clone(),
            detail,
        };
        for p in 1..order {
            before[p] = before[p - 1]
                .checked_mul(m.shape[p - 1] as u64)
                .ok_or_else(|| overflow("prefix product overflows u64".into()))?;
        }
        for p in (0..order.saturating_sub(1)).rev() {
            after[p] = after[p + 1]
                .checked_mul(m.shape[p + 1] as u64)
                .ok_or_else(|| overflow("suffix product overflows u64".into()))?;
        }
        let mut coshape = vec![0u64; order];
        for p in 0..order {
            coshape[p] = before[p]
                .checked_mul(after[p])
                .ok_or_else(|| overflow("coshape product overflows u64".into()))?;
        }
        let total = coshape[0]
            .checked_mul(m.shape[0] as u64)
            .ok_or_else(|| overflow("element count overflows u64".into()))?;
        modalities.push(ModalityDims {
            axes: m.axes.clone(),
            before,
            after,
            coshape,
            total,
            order,
        });
    }
    let mut axis_members = vec![Vec::new(); dataset.n_axes()];
    let mut axis_total = vec![0u64; dataset.n_axes()];
    let mut axis_coshape = vec![0u64; dataset.n_axes()];
    for (gi, dims) in modalities.iter().enumerate() {
        for (p, &axis) in dims.axes.iter().enumerate() {
            axis_members[axis].push(gi);
            axis_total[axis] =
                axis_total[axis]
                    .checked_add(dims.total)
                    .ok_or_else(|| Error::Capacity {
                        modality: dataset.modalities[gi].name.clone(),
                        detail: "summed element count overflows u64".into(),
                    })?;
            axis_coshape[axis] =
                axis_coshape[axis]
                    .checked_add(dims.coshape[p])
                    .ok_or_else(|| Error::Capacity {
                        modality: dataset.modalities[gi].name.clone(),
                        detail: "summed coshape overflows u64".into(),
                    })?;
        }
    }
    Ok(ModalityStructure {
        axis_len,
        modalities,
        axis_members,
        axis_total,
        axis_coshape,
    })
}

/// Unfolds one modality along `axis` into a sparse matrix.
///
/// Row `i` collects every stored entry whose index on `axis` equals `i`; the
/// column is the row-major linearization of the remaining indices in modality
/// order. Sparsity is preserved: cost is O(nnz) time and memory.
pub fn matricize(dataset: &Dataset, modality: usize, axis: usize) -> Result<Csr> {
    let m = dataset.modality(modality);
    let pos = m.position_of(axis).ok_or_else(|| {
        Error::Structural(format!(
            "axis '{}' is not an axis of modality '{}'",
            dataset.axis(axis).name,
            m.name
        ))
    })?;
    let d = m.shape[pos];
    let coshape: usize = m
        .shape
        .iter()
        .enumerate()
        .filter(|&(p, _)| p != pos)
        .map(|(_, &s)| s)
        .product();
    let triplets = m
        .entries
        .iter()
        .map(|&(lin, v)| unfold_entry(m, pos, lin, v));
    Ok(Csr::from_triplets(d, coshape, triplets))
}

fn unfold_entry(m: &Modality, pos: usize, lin: u64, v: f64) -> (usize, usize, f64) {
    let mut row = 0usize;
    let mut col = 0u64;
    for p in 0..m.order() {
        let j = (lin / m.strides[p]) % m.shape[p] as u64;
        if p == pos {
            row = j as usize;
        } else {
            col = col * m.shape[p] as u64 + j;
        }
    }
    (row, col as usize, v)
}

/// The concatenated matricization of every modality containing `axis`,
/// column blocks in modality order, as a single sparse operator.
pub fn axis_operator(dataset: &Dataset, structure: &ModalityStructure, axis: usize) -> Result<SparsePair> {
    Ok(SparsePair::new(axis_csr(dataset, structure, axis)?))
}

pub(crate) fn axis_csr(
    dataset: &Dataset,
    structure: &ModalityStructure,
    axis: usize,
) -> Result<Csr> {
    let members = &structure.axis_members[axis];
    if members.is_empty() {
        return Err(Error::Structural(format!(
            "axis '{}' belongs to no modality",
            dataset.axis(axis).name
        )));
    }
    let d = dataset.axis(axis).len;
    let width: u64 = structure.axis_coshape[axis];
    let width: usize = width.try_into().map_err(|_| Error::Capacity {
        modality: dataset.modality(members[0]).name.clone(),
        detail: "concatenated matricization width exceeds addressable memory".into(),
    })?;
    let mut triplets = Vec::with_capacity(
        members
            .iter()
            .map(|&gi| dataset.modality(gi).nnz())
            .sum::<usize>(),
    );
    let mut offset = 0usize;
    for &gi in members {
        let m = dataset.modality(gi);
        let pos = m.position_of(axis).expect("membership precomputed");
        for &(lin, v) in &m.entries {
            let (r, c, v) = unfold_entry(m, pos, lin, v);
            triplets.push((r, offset + c, v));
        }
        offset += structure.modalities[gi].coshape[pos] as usize;
    }
    Ok(Csr::from_triplets(d, width, triplets))
}

/// Exact `tr[S_axis]` for the concatenated Gram: the summed squared
/// Frobenius norm of member modalities.
pub fn axis_gram_trace(dataset: &Dataset, structure: &ModalityStructure, axis: usize) -> f64 {
    structure.axis_members[axis]
        .iter()
        .map(|&gi| dataset.modality(gi).frobenius_sq())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_matrix() -> Dataset {
        // 2x2 modality [[1, 2], [3, 4]].
        Dataset::from_dense("m", &[("r", 2), ("c", 2)], &[1.0, 2.0, 3.0, 4.0]).unwrap()
    }

    #[test]
    fn matricize_matrix_modality_is_identity_and_transpose() {
        let ds = toy_matrix();
        let m0 = matricize(&ds, 0, 0).unwrap().to_dense();
        assert_eq!(m0, ndarray::arr2(&[[1.0, 2.0], [3.0, 4.0]]));
        let m1 = matricize(&ds, 0, 1).unwrap().to_dense();
        assert_eq!(m1, ndarray::arr2(&[[1.0, 3.0], [2.0, 4.0]]));
    }

    #[test]
    fn structure_products() {
        let mut b = Dataset::builder();
        let g = b
            .add_modality("expr", &[("a", 4), ("b", 3), ("c", 2)])
            .unwrap();
        b.push_entry(g, &[0, 0, 0], 1.0).unwrap();
        let ds = b.finish().unwrap();
        let s = build_structure(&ds).unwrap();
        let dims = &s.modalities[0];
        assert_eq!(dims.total, 24);
        assert_eq!(dims.before, vec![1, 4, 12]);
        assert_eq!(dims.after, vec![6, 2, 1]);
        assert_eq!(dims.coshape, vec![6, 8, 12]);
        assert_eq!(s.axis_total, vec![24, 24, 24]);
        assert_eq!(s.axis_coshape, vec![6, 8, 12]);
    }

    #[test]
    fn overflow_is_capacity_error() {
        // Element count is 2^80: the builder must refuse politely.
        let mut b = Dataset::builder();
        match b.add_modality("huge", &[("x", 1 << 40), ("y", 1 << 40)]) {
            Err(Error::Capacity { modality, .. }) => assert_eq!(modality, "huge"),
            other => panic!("expected capacity error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_entries_merge_and_zeros_drop() {
        let mut b = Dataset::builder();
        let m = b.add_modality("m", &[("r", 2), ("c", 2)]).unwrap();
        b.push_entry(m, &[0, 1], 2.0).unwrap();
        b.push_entry(m, &[0, 1], 3.0).unwrap();
        b.push_entry(m, &[1, 0], 0.0).unwrap();
        let ds = b.finish().unwrap();
        assert_eq!(ds.modality(0).nnz(), 1);
        let entries: Vec<_> = ds.modality(0).entries().collect();
        assert_eq!(entries, vec![(vec![0, 1], 5.0)]);
    }

    #[test]
    fn conflicting_axis_lengths_name_both_modalities() {
        let mut b = Dataset::builder();
        b.add_modality("first", &[("shared", 3), ("x", 2)]).unwrap();
        let err = b
            .add_modality("second", &[("shared", 4), ("y", 2)])
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("first") && msg.contains("second"), "{msg}");
    }

    #[test]
    fn repeated_axis_in_one_modality_is_rejected() {
        let mut b = Dataset::builder();
        let err = b.add_modality("m", &[("a", 2), ("a", 2)]).unwrap_err();
        assert!(err.to_string().contains("twice"));
    }

    #[test]
    fn out_of_bounds_and_nonfinite_rejected() {
        let mut b = Dataset::builder();
        let m = b.add_modality("m", &[("a", 2)]).unwrap();
        assert!(b.push_entry(m, &[2], 1.0).is_err());
        assert!(b.push_entry(m, &[0], f64::NAN).is_err());
        assert!(b.push_entry(m, &[0, 1], 1.0).is_err());
    }

    #[test]
    fn gram_trace_matches_frobenius() {
        let ds = toy_matrix();
        let s = build_structure(&ds).unwrap();
        let expected = 1.0 + 4.0 + 9.0 + 16.0;
        for axis in 0..2 {
            assert_eq!(axis_gram_trace(&ds, &s, axis), expected);
        }
    }
}
