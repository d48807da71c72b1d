//! Identifiable reparameterization of the per-axis factors.
//!
//! A constant can be moved between factors sharing a modality without
//! changing any Kronecker sum, so only trace-zero factors plus one trace
//! parameter per independent modality are identifiable.  The trace
//! bookkeeping is exact: the coefficient matrix `M` (modalities x axes,
//! entry = co-shape) is reduced over arbitrary-precision rationals.

use ndarray::Array2;
use num::{BigInt, BigRational, BigUint, One, ToPrimitive, Zero};

use crate::dataset::ModalityStructure;
use crate::error::{Error, Result};

/// Exact trace-coefficient structure of a dataset.
#[derive(Debug, Clone)]
pub struct TraceStructure {
    /// Modalities x axes matrix; entry `(g, l)` is `d^g_{\l}`, 0 when `l` is
    /// not an axis of `g`.  Row `g` dotted with per-axis factor traces gives
    /// the modality trace `tau^g`.
    pub m_matrix: Vec<Vec<BigUint>>,
    /// Indices of the modalities whose rows form the basis (first maximal
    /// independent set, in modality order).
    pub basis_rows: Vec<usize>,
    /// The basis rows themselves, `rank x axes`.
    pub basis: Vec<Vec<BigUint>>,
    /// Per-modality coefficients over the basis: row `g` of `m_matrix`
    /// equals `sum_i coefficients[g][i] * basis[i]`, exactly.
    pub coefficients: Vec<Vec<BigRational>>,
    /// Row rank of `m_matrix`.
    pub rank: usize,
}

impl TraceStructure {
    /// Per-modality coefficients as floats.
    pub fn coefficients_f64(&self) -> Vec<Vec<f64>> {
        self.coefficients
            .iter()
            .map(|row| row.iter().map(|c| c.to_f64().unwrap()).collect())
            .collect()
    }
}

/// Builds the exact trace structure of a dataset.
pub fn build_trace_structure(structure: &ModalityStructure) -> TraceStructure {
    let n_axes = structure.n_axes();
    let n_mod = structure.modalities.len();
    let mut m_matrix: Vec<Vec<BigUint>> = vec![vec![BigUint::zero(); n_axes]; n_mod];
    for (g, dims) in structure.modalities.iter().enumerate() {
        for &l in &dims.axes {
            m_matrix[g][l] = BigUint::from(dims.coshape_of(l).unwrap());
        }
    }

    // Ordered Gaussian elimination over exact rationals. `echelon` rows are
    // pivot-normalized; `combo[e]` expresses echelon row e over the selected
    // original rows.
    let mut basis_rows: Vec<usize> = Vec::new();
    let mut echelon: Vec<Vec<BigRational>> = Vec::new();
    let mut pivots: Vec<usize> = Vec::new();
    let mut combo: Vec<Vec<BigRational>> = Vec::new();
    let mut coefficients: Vec<Vec<BigRational>> = Vec::with_capacity(n_mod);

    for g in 0..n_mod {
        let mut residual: Vec<BigRational> = m_matrix[g]
            .iter()
            .map(|v| BigRational::from_integer(BigInt::from(v.clone())))
            .collect();
        let mut coeff = vec![BigRational::zero(); basis_rows.len()];
        for (e, row) in echelon.iter().enumerate() {
            let t = residual[pivots[e]].clone();
            if t.is_zero() {
                continue;
            }
            for c in 0..n_axes {
                let delta = &t * &row[c];
                residual[c] -= delta;
            }
            for (i, w) in combo[e].iter().enumerate() {
                coeff[i] += &t * w;
            }
        }
        match residual.iter().position(|v| !v.is_zero()) {
            None => coefficients.push(coeff),
            Some(p) => {
                let f = residual[p].clone();
                let normalized: Vec<BigRational> =
                    residual.iter().map(|v| v / &f).collect();
                // New echelon row = (original row g - reduction) / f, so over
                // the selected originals it is (unit_g - coeff) / f.
                let mut new_combo: Vec<BigRational> = coeff
                    .iter()
                    .map(|c| -(c / &f))
                    .collect();
                new_combo.push(BigRational::one() / &f);
                for old in combo.iter_mut() {
                    old.push(BigRational::zero());
                }
                for old in coefficients.iter_mut() {
                    old.push(BigRational::zero());
                }
                basis_rows.push(g);
                echelon.push(normalized);
                pivots.push(p);
                combo.push(new_combo);
                let mut own = vec![BigRational::zero(); basis_rows.len()];
                own[basis_rows.len() - 1] = BigRational::one();
                coefficients.push(own);
            }
        }
    }

    let rank = basis_rows.len();
    for row in coefficients.iter_mut() {
        row.resize(rank, BigRational::zero());
    }
    let basis = basis_rows
        .iter()
        .map(|&g| m_matrix[g].clone())
        .collect();
    TraceStructure {
        m_matrix,
        basis_rows,
        basis,
        coefficients,
        rank,
    }
}

/// Identifiable trace data extracted from per-axis factors.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentifiableForm {
    /// Per-axis diagonal shift `tr[Psi_l] / d_l`; subtracting it from the
    /// factor's diagonal makes the factor trace-zero.
    pub axis_shifts: Vec<f64>,
    /// Per-axis traces of the raw factors.
    pub axis_traces: Vec<f64>,
    /// Per-modality traces `tau^g = sum_l d^g_{\l} tr[Psi_l] = tr[Omega^g]`.
    pub modality_traces: Vec<f64>,
}

/// Splits factor traces into trace-zero shifts and modality trace parameters.
///
/// In spectral form `tr[Psi_l]` is just the sum of the axis's precision
/// eigenvalues.  The original Kronecker sum of each modality is recovered
/// exactly as `(tau^g / d^g_total) I + kronecker_sum(shifted factors)`.
pub fn to_identifiable(axis_traces: &[f64], structure: &ModalityStructure) -> Result<IdentifiableForm> {
    let n = structure.n_axes();
    if axis_traces.len() != n {
        return Err(Error::Structural(format!(
            "expected {n} axis traces, got {}",
            axis_traces.len()
        )));
    }
    let axis_shifts: Vec<f64> = axis_traces
        .iter()
        .zip(&structure.axis_len)
        .map(|(&t, &d)| t / d as f64)
        .collect();
    let modality_traces = structure
        .modalities
        .iter()
        .map(|dims| {
            dims.axes
                .iter()
                .map(|&l| dims.coshape_of(l).unwrap() as f64 * axis_traces[l])
                .sum()
        })
        .collect();
    Ok(IdentifiableForm {
        axis_shifts,
        axis_traces: axis_traces.to_vec(),
        modality_traces,
    })
}

/// Dense variant: returns trace-zero copies of the factors plus the trace data.
pub fn to_identifiable_dense(
    factors: &[Array2<f64>],
    structure: &ModalityStructure,
) -> Result<(Vec<Array2<f64>>, IdentifiableForm)> {
    let n = structure.n_axes();
    if factors.len() != n {
        return Err(Error::Structural(format!(
            "expected {n} factors, got {}",
            factors.len()
        )));
    }
    let mut traces = Vec::with_capacity(n);
    for (l, f) in factors.iter().enumerate() {
        let d = structure.axis_len[l] as usize;
        if f.nrows() != d || f.ncols() != d {
            return Err(Error::Structural(format!(
                "factor for axis {l} is {}x{}, expected {d}x{d}",
                f.nrows(),
                f.ncols()
            )));
        }
        traces.push(f.diag().sum());
    }
    let form = to_identifiable(&traces, structure)?;
    let shifted = factors
        .iter()
        .zip(&form.axis_shifts)
        .map(|(f, &s)| {
            let mut out = f.clone();
            for i in 0..out.nrows() {
                out[[i, i]] -= s;
            }
            out
        })
        .collect();
    Ok((shifted, form))
}

/// Checks that per-modality variances are jointly realizable.
///
/// The hypothesis `Omega^g = I / sigma_sq[g]` pins every modality trace to
/// `d^g_total / sigma_sq[g]`; those pinned traces must lie in the range of
/// the trace map, i.e. some per-axis diagonal means `x_l` must satisfy
/// `sum_{l in g} x_l = 1 / sigma_sq[g]` for every modality.  Dependent rows
/// of `M` induce exact constraints which are verified here.
pub fn check_hypothesis_consistency(
    structure: &ModalityStructure,
    trace: &TraceStructure,
    sigma_sq: &[f64],
) -> Result<()> {
    let n_mod = structure.modalities.len();
    if sigma_sq.len() != n_mod {
        return Err(Error::Structural(format!(
            "expected {n_mod} variances, got {}",
            sigma_sq.len()
        )));
    }
    for (g, &s) in sigma_sq.iter().enumerate() {
        if !(s > 0.0) {
            return Err(Error::Hypothesis(format!(
                "modality {g}: variance must be positive, got {s}"
            )));
        }
    }
    // Row g of M equals sum_i a^g_i basis_i; in indicator units the same
    // dependence holds with weights a^g_i * d_total[sel_i] / d_total[g].
    for g in 0..n_mod {
        if trace.basis_rows.contains(&g) {
            continue;
        }
        let d_g = structure.modalities[g].total as f64;
        let mut implied = 0.0;
        for (i, &sel) in trace.basis_rows.iter().enumerate() {
            let w = trace.coefficients[g][i].to_f64().unwrap();
            if w == 0.0 {
                continue;
            }
            let d_sel = structure.modalities[sel].total as f64;
            implied += w * d_sel / d_g / sigma_sq[sel];
        }
        let target = 1.0 / sigma_sq[g];
        if (implied - target).abs() > 1e-9 * target.abs().max(implied.abs()) {
            return Err(Error::Hypothesis(format!(
                "modality {g}: requested variance {:.6e} conflicts with the variances of the \
                 modalities it depends on (implied 1/sigma^2 = {implied:.6e}, requested {target:.6e})",
                sigma_sq[g]
            )));
        }
    }
    Ok(())
}
