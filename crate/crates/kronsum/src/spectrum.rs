//! Partial eigendecomposition of axis Gram matrices.
//!
//! For axis `l`, the concatenation of matricizations `D_l` has Gram
//! `S_l = D_l D_l^T`; its top eigenvectors are the axis's factor eigenvectors
//! and its eigenvalues drive the eigenvalue solver. The Gram matrix is never
//! formed: a seeded randomized subspace iteration works entirely through
//! matvec/rmatvec closures, so memory stays O(d * (k + oversampling)) plus
//! the operator itself.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::dataset::{axis_gram_trace, axis_operator, Dataset, ModalityStructure};
use crate::error::{Error, Result};
use crate::sparse::MatVec;

/// Extra subspace columns beyond the requested component count.
pub const OVERSAMPLING: usize = 10;
/// Power iterations applied before extracting Ritz pairs.
pub const POWER_ITERATIONS: usize = 4;
/// Relative floor under which retained eigenvalues flag rank deficiency.
pub const EIGENVALUE_FLOOR: f64 = 1e-12;
/// Relative residual tolerance for every kept eigenpair.
pub const RESIDUAL_TOL: f64 = 1e-6;
// Additional refinement sweeps allowed before reporting non-convergence.
const MAX_EXTRA_ITERATIONS: usize = 16;

/// Top-k eigenpairs of one axis Gram matrix.
#[derive(Debug, Clone)]
pub struct AxisSpectrum {
    /// Dataset axis id.
    pub axis: usize,
    /// Number of retained components.
    pub k: usize,
    /// Gram eigenvalues, strictly positive, descending.
    pub gram_eigenvalues: Array1<f64>,
    /// Orthonormal eigenvectors, `d x k`, columns matching `gram_eigenvalues`.
    pub eigenvectors: Array2<f64>,
    /// Exact Gram trace (sum of all eigenvalues, kept or not).
    pub full_trace: f64,
    /// Fraction of the trace captured by the retained components.
    pub explained_variance_ratio: f64,
    /// Worst relative eigenpair residual at acceptance.
    pub max_residual: f64,
    /// Power iterations actually performed.
    pub power_iterations: usize,
}

impl AxisSpectrum {
    /// Drops trailing components, keeping the leading `k`.
    pub fn truncate(&mut self, k: usize) {
        assert!(k >= 1 && k <= self.k);
        if k == self.k {
            return;
        }
        self.gram_eigenvalues = self.gram_eigenvalues.slice(ndarray::s![..k]).to_owned();
        self.eigenvectors = self.eigenvectors.slice(ndarray::s![.., ..k]).to_owned();
        self.k = k;
        self.explained_variance_ratio = self.gram_eigenvalues.sum() / self.full_trace;
    }
}

/// One row of a scree table.
#[derive(Debug, Clone, PartialEq)]
pub struct ScreeRow {
    /// 1-based component number.
    pub component: usize,
    pub eigenvalue: f64,
    /// This component's fraction of the full trace.
    pub fraction: f64,
    /// Cumulative fraction through this component.
    pub cumulative: f64,
}

/// Scree table of a spectrum: per-component and cumulative variance
/// fractions relative to the exact Gram trace.
pub fn spectrum_report(spectrum: &AxisSpectrum) -> Result<Vec<ScreeRow>> {
    let total = spectrum.full_trace;
    let kept: f64 = spectrum.gram_eigenvalues.sum();
    if !(total > 0.0) || total < kept * (1.0 - 1e-9) {
        return Err(Error::Domain(format!(
            "full trace {total} is below the retained eigenvalue mass {kept}"
        )));
    }
    let mut rows = Vec::with_capacity(spectrum.k);
    let mut cum = 0.0;
    for (i, &e) in spectrum.gram_eigenvalues.iter().enumerate() {
        let fraction = e / total;
        cum += fraction;
        rows.push(ScreeRow {
            component: i + 1,
            eigenvalue: e,
            fraction,
            cumulative: cum.min(1.0),
        });
    }
    Ok(rows)
}

/// Computes the top-k spectrum of `axis` from the raw (untransformed) data.
pub fn axis_spectrum(
    dataset: &Dataset,
    structure: &ModalityStructure,
    axis: usize,
    k: usize,
    seed: u64,
) -> Result<AxisSpectrum> {
    let op = axis_operator(dataset, structure, axis)?;
    let trace = axis_gram_trace(dataset, structure, axis);
    spectrum_from_operator(&op, &dataset.axis(axis).name, axis, trace, k, seed)
}

/// Computes a top-k spectrum through any matrix-free operator.
///
/// `full_trace` must be the exact Gram trace of the operator (the squared
/// Frobenius norm of its dense equivalent).
pub fn spectrum_from_operator(
    op: &dyn MatVec,
    axis_label: &str,
    axis: usize,
    full_trace: f64,
    k: usize,
    seed: u64,
) -> Result<AxisSpectrum> {
    let d = op.nrows();
    let m = op.ncols();
    let bound = d.min(m);
    if k == 0 {
        return Err(Error::Domain("component count must be at least 1".into()));
    }
    if k > bound {
        return Err(Error::Rank {
            axis: axis_label.to_string(),
            requested: k,
            bound,
        });
    }
    let s = (k + OVERSAMPLING).min(bound);

    // Range sketch: Y = A * Omega with per-column seeded Gaussian streams,
    // so enlarging k refines (never reshuffles) the earlier columns.
    let y = sample_range(op, s, seed);
    let mut q = orthonormalize(y);
    let mut iterations = 0;
    for _ in 0..POWER_ITERATIONS {
        q = orthonormalize(gram_product(op, &q));
        iterations += 1;
    }

    loop {
        let u = gram_product(op, &q);
        // Rayleigh-Ritz on the current subspace: W = Q^T S Q.
        let mut w = q.t().dot(&u);
        w = 0.5 * (&w + &w.t());
        let (vals, vecs) = symmetric_eig_desc(&w);
        let rank_now = q.ncols();
        if k > rank_now {
            return Err(Error::Rank {
                axis: axis_label.to_string(),
                requested: k,
                bound: rank_now,
            });
        }
        let e1 = vals[0];
        if !(e1 > 0.0) {
            return Err(Error::RankDeficient {
                axis: axis_label.to_string(),
                index: 1,
                value: e1,
                floor: 0.0,
            });
        }
        let floor = EIGENVALUE_FLOOR * e1;
        for (i, &e) in vals.iter().take(k).enumerate() {
            if e < floor {
                return Err(Error::RankDeficient {
                    axis: axis_label.to_string(),
                    index: i + 1,
                    value: e,
                    floor,
                });
            }
        }
        let p_top = vecs.slice(ndarray::s![.., ..k]);
        let v = q.dot(&p_top);
        // Residuals come free from U: S V = (S Q) P.
        let sv = u.dot(&p_top);
        let mut max_residual = 0.0f64;
        for c in 0..k {
            let mut norm_sq = 0.0;
            for r in 0..d {
                let diff = sv[[r, c]] - vals[c] * v[[r, c]];
                norm_sq += diff * diff;
            }
            max_residual = max_residual.max(norm_sq.sqrt());
        }
        let tol = RESIDUAL_TOL * e1;
        if max_residual <= tol {
            let kept: f64 = vals.iter().take(k).sum();
            let gram_eigenvalues = Array1::from_iter(vals.iter().take(k).copied());
            return Ok(AxisSpectrum {
                axis,
                k,
                gram_eigenvalues,
                eigenvectors: v,
                full_trace,
                explained_variance_ratio: if full_trace > 0.0 { kept / full_trace } else { 0.0 },
                max_residual,
                power_iterations: iterations,
            });
        }
        if iterations >= POWER_ITERATIONS + MAX_EXTRA_ITERATIONS {
            return Err(Error::Numerical {
                context: format!("partial eigendecomposition of axis '{axis_label}'"),
                residual: max_residual,
                tolerance: tol,
            });
        }
        // Not yet converged: reuse U as the next subspace iterate.
        q = orthonormalize(u);
        iterations += 1;
    }
}

/// `Y = A * Omega` column by column, never materializing Omega.
fn sample_range(op: &dyn MatVec, s: usize, seed: u64) -> Array2<f64> {
    let d = op.nrows();
    let m = op.ncols();
    let cols: Vec<Vec<f64>> = (0..s)
        .into_par_iter()
        .map(|c| {
            let mut rng = column_rng(seed, c as u64);
            let omega: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
            op.matvec(&omega)
        })
        .collect();
    let mut y = Array2::zeros((d, s));
    for (c, col) in cols.into_iter().enumerate() {
        y.column_mut(c).assign(&Array1::from(col));
    }
    y
}

fn column_rng(seed: u64, column: u64) -> ChaCha8Rng {
    // Distinct, platform-stable stream per column.
    let mut x = seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(column.wrapping_add(1));
    // splitmix64 finalizer.
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^= x >> 31;
    ChaCha8Rng::seed_from_u64(x)
}

/// `S * Q = A (A^T Q)` one parallel task per column.
fn gram_product(op: &dyn MatVec, q: &Array2<f64>) -> Array2<f64> {
    let d = op.nrows();
    let s = q.ncols();
    let cols: Vec<Vec<f64>> = (0..s)
        .into_par_iter()
        .map(|c| {
            let qc: Vec<f64> = q.column(c).to_vec();
            let mut out = vec![0.0; d];
            op.gram_matvec_into(&qc, &mut out);
            out
        })
        .collect();
    let mut u = Array2::zeros((d, s));
    for (c, col) in cols.into_iter().enumerate() {
        u.column_mut(c).assign(&Array1::from(col));
    }
    u
}

/// Modified Gram-Schmidt with reorthogonalization; drops dependent columns.
fn orthonormalize(y: Array2<f64>) -> Array2<f64> {
    let d = y.nrows();
    let max_norm = y
        .columns()
        .into_iter()
        .map(|c| c.dot(&c).sqrt())
        .fold(0.0f64, f64::max);
    let drop_tol = 1e-12 * max_norm.max(f64::MIN_POSITIVE);
    let mut kept: Vec<Array1<f64>> = Vec::with_capacity(y.ncols());
    for c in 0..y.ncols() {
        let mut v = y.column(c).to_owned();
        for _ in 0..2 {
            for q in &kept {
                let proj = q.dot(&v);
                v.scaled_add(-proj, q);
            }
        }
        let norm = v.dot(&v).sqrt();
        if norm > drop_tol {
            kept.push(v / norm);
        }
    }
    let mut q = Array2::zeros((d, kept.len()));
    for (c, col) in kept.into_iter().enumerate() {
        q.column_mut(c).assign(&col);
    }
    q
}

/// Eigendecomposition of a small dense symmetric matrix, descending.
pub(crate) fn symmetric_eig_desc(w: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = w.nrows();
    let mat = nalgebra::DMatrix::from_fn(n, n, |r, c| w[[r, c]]);
    let eig = mat.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let vals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = Array2::zeros((n, n));
    for (c, &i) in order.iter().enumerate() {
        for r in 0..n {
            vecs[[r, c]] = eig.eigenvectors[(r, i)];
        }
    }
    (vals, vecs)
}
