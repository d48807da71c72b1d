//! Dense brute-force reference operations.
//!
//! Everything here materializes full matrices and is meant for small
//! instances: validation oracles, synthetic sampling, and tests.  The fast
//! path never calls into this module.
//!
//! Conventions match the sparse pipeline: tensors are flattened row-major in
//! modality axis order (first axis has the largest stride), so the Kronecker
//! chain of a modality lists its axes left to right.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Kronecker product `a (x) b`.
pub fn kron(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let v = a[[i, j]];
            if v == 0.0 {
                continue;
            }
            for p in 0..br {
                for q in 0..bc {
                    out[[i * br + p, j * bc + q]] = v * b[[p, q]];
                }
            }
        }
    }
    out
}

fn identity(d: usize) -> Array2<f64> {
    Array2::eye(d)
}

/// Kronecker sum of square factors: `sum_l I (x) ... (x) F_l (x) ... (x) I`.
pub fn kron_sum(factors: &[Array2<f64>]) -> Array2<f64> {
    assert!(!factors.is_empty());
    let total: usize = factors.iter().map(|f| f.nrows()).product();
    let mut out = Array2::zeros((total, total));
    for (l, f) in factors.iter().enumerate() {
        let before: usize = factors[..l].iter().map(|f| f.nrows()).product();
        let after: usize = factors[l + 1..].iter().map(|f| f.nrows()).product();
        let mut term = kron(&identity(before), f);
        term = kron(&term, &identity(after));
        out += &term;
    }
    out
}

/// Partial trace of a `prod(dims) x prod(dims)` matrix onto mode `axis_pos`:
/// entry `(i, j)` sums `m[(.., i, ..), (.., j, ..)]` over matching context
/// indices.  This is the dense counterpart of the blockwise trace reduction
/// used throughout the estimator.
pub fn sb_trace(m: &Array2<f64>, dims: &[usize], axis_pos: usize) -> Array2<f64> {
    let total: usize = dims.iter().product();
    assert_eq!(m.nrows(), total);
    assert_eq!(m.ncols(), total);
    let d = dims[axis_pos];
    let after: usize = dims[axis_pos + 1..].iter().product();
    let before: usize = dims[..axis_pos].iter().product();
    let mut out = Array2::zeros((d, d));
    for b in 0..before {
        for a in 0..after {
            let base = b * d * after + a;
            for i in 0..d {
                for j in 0..d {
                    out[[i, j]] += m[[base + i * after, base + j * after]];
                }
            }
        }
    }
    out
}

/// Matricization of a row-major flattened tensor with the given axis moved
/// to the rows; columns run over the remaining axes in order, row-major.
pub fn dense_matricize(flat: &[f64], dims: &[usize], axis_pos: usize) -> Array2<f64> {
    let total: usize = dims.iter().product();
    assert_eq!(flat.len(), total);
    let d = dims[axis_pos];
    let after: usize = dims[axis_pos + 1..].iter().product();
    let before: usize = dims[..axis_pos].iter().product();
    let mut out = Array2::zeros((d, before * after));
    for b in 0..before {
        for i in 0..d {
            for a in 0..after {
                out[[i, b * after + a]] = flat[b * d * after + i * after + a];
            }
        }
    }
    out
}

/// Mode product: applies `matrix` (`r x dims[axis_pos]`) along one mode of a
/// row-major flattened tensor, returning the new flat tensor and dims.
pub fn mode_product(
    flat: &[f64],
    dims: &[usize],
    axis_pos: usize,
    matrix: &Array2<f64>,
) -> (Vec<f64>, Vec<usize>) {
    let d = dims[axis_pos];
    assert_eq!(matrix.ncols(), d);
    let r = matrix.nrows();
    let after: usize = dims[axis_pos + 1..].iter().product();
    let before: usize = dims[..axis_pos].iter().product();
    let mut new_dims = dims.to_vec();
    new_dims[axis_pos] = r;
    let mut out = vec![0.0; before * r * after];
    for b in 0..before {
        for i in 0..r {
            for s in 0..d {
                let w = matrix[[i, s]];
                if w == 0.0 {
                    continue;
                }
                let src = b * d * after + s * after;
                let dst = b * r * after + i * after;
                for a in 0..after {
                    out[dst + a] += w * flat[src + a];
                }
            }
        }
    }
    (out, new_dims)
}

/// Symmetric eigendecomposition, eigenvalues descending.  Returns
/// `(eigenvalues, eigenvectors)` with eigenvectors in columns.
pub fn symmetric_eig(m: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let d = m.nrows();
    let dm = nalgebra::DMatrix::from_fn(d, d, |i, j| m[[i, j]]);
    let eig = dm.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut vals = Array1::zeros(d);
    let mut vecs = Array2::zeros((d, d));
    for (col, &src) in order.iter().enumerate() {
        vals[col] = eig.eigenvalues[src];
        for row in 0..d {
            vecs[[row, col]] = eig.eigenvectors[(row, src)];
        }
    }
    (vals, vecs)
}

/// Log-determinant via Cholesky; errors when the matrix is not positive
/// definite.
pub fn log_det_pd(m: &Array2<f64>) -> Result<f64> {
    let d = m.nrows();
    let dm = nalgebra::DMatrix::from_fn(d, d, |i, j| m[[i, j]]);
    let chol = nalgebra::Cholesky::new(dm).ok_or_else(|| {
        Error::Domain("matrix is not positive definite".into())
    })?;
    Ok(2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

/// Dense inverse of a positive-definite matrix.
pub fn inverse_pd(m: &Array2<f64>) -> Result<Array2<f64>> {
    let d = m.nrows();
    let dm = nalgebra::DMatrix::from_fn(d, d, |i, j| m[[i, j]]);
    let chol = nalgebra::Cholesky::new(dm).ok_or_else(|| {
        Error::Domain("matrix is not positive definite".into())
    })?;
    let inv = chol.inverse();
    Ok(Array2::from_shape_fn((d, d), |(i, j)| inv[(i, j)]))
}
