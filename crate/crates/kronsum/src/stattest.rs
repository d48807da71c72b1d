//! Wald tests for recovered edges under the empty-graph null.
//!
//! Under the null every modality is isotropic, `Omega^g = I / sigma_sq[g]`,
//! and the Fisher information of the identifiable parameters has a closed
//! form whose edge block is diagonal.  Each off-diagonal factor entry gets an
//! asymptotic z-score, a two-sided p-value, and a Bonferroni-corrected
//! p-value over all testable pairs of all axes.

use ndarray::Array2;

use crate::dataset::ModalityStructure;
use crate::error::{Error, Result};
use crate::identify::{check_hypothesis_consistency, TraceStructure};
use crate::normal::{inverse_phi, two_sided_p};

/// How the per-modality null variances are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmaMode {
    /// Every modality has variance 1.  Only jointly realizable on some
    /// structures; the consistency check rejects it otherwise.
    UnitVariance,
    /// Variance `1 / L^g` for a modality with `L^g` axes; realizable on every
    /// structure (each axis contributes mean diagonal 1).
    PerAxisStandardized,
}

/// The empty-graph null hypothesis: per-modality isotropic precision.
#[derive(Debug, Clone)]
pub struct NullHypothesis {
    pub mode: SigmaMode,
    /// Per-modality variance `(sigma^g)^2`.
    pub sigma_sq: Vec<f64>,
}

impl NullHypothesis {
    pub fn from_mode(mode: SigmaMode, structure: &ModalityStructure) -> Self {
        let sigma_sq = structure
            .modalities
            .iter()
            .map(|dims| match mode {
                SigmaMode::UnitVariance => 1.0,
                SigmaMode::PerAxisStandardized => 1.0 / dims.order as f64,
            })
            .collect();
        NullHypothesis { mode, sigma_sq }
    }

    pub fn unit_variance(structure: &ModalityStructure) -> Self {
        Self::from_mode(SigmaMode::UnitVariance, structure)
    }

    pub fn per_axis_standardized(structure: &ModalityStructure) -> Self {
        Self::from_mode(SigmaMode::PerAxisStandardized, structure)
    }
}

/// Identity-coefficient parameters `t` implied by the null: for each basis
/// modality, `Omega^{sel_i} = t_i I` so `t_i = 1 / sigma_sq[sel_i]`.  Errors
/// if the dependent modalities' variances contradict the basis ones.
pub fn implied_t(
    structure: &ModalityStructure,
    trace: &TraceStructure,
    h: &NullHypothesis,
) -> Result<Vec<f64>> {
    check_hypothesis_consistency(structure, trace, &h.sigma_sq)?;
    Ok(trace
        .basis_rows
        .iter()
        .map(|&g| 1.0 / h.sigma_sq[g])
        .collect())
}

/// Closed-form null Fisher information, stored block-wise.
///
/// Parameters are the identity coefficients `t` (one per basis row, with
/// `Omega^g = (t' a^g) I + kron-sum of trace-zero factors`), per-axis diagonal
/// entries (first entry of each axis fixed at zero), and per-axis
/// off-diagonal entries.  All blocks not listed are zero: edge
/// parameters only interact with themselves.
#[derive(Debug, Clone)]
pub struct FisherBlocks {
    /// `rank x rank` block over the trace parameters.
    pub t_t: Array2<f64>,
    /// `rank x n_axes`: entry `(i, l)` couples `t_i` with every diagonal
    /// parameter of axis `l` (the value does not depend on which one).
    pub t_diag: Array2<f64>,
    /// Per-axis self-coupling of a diagonal parameter; distinct diagonal
    /// parameters of the same axis do not interact.
    pub diag_self: Vec<f64>,
    /// `n_axes x n_axes`, zero diagonal: coupling between any diagonal
    /// parameter of one axis and any of another.
    pub diag_cross: Array2<f64>,
    /// Per-axis edge-block diagonal value `sum_g d_total sigma^4 / (4 d_l)`.
    pub edge_self: Vec<f64>,
}

/// Dense parameter layout used by [`FisherBlocks::assemble_dense`]:
/// `t` first, then per axis the diagonals `psi_{l,ii}, i = 2..d_l`, then per
/// axis the edges `(i, j), i < j` in lexicographic order.
#[derive(Debug, Clone)]
pub struct ParameterLayout {
    pub rank: usize,
    pub diag_start: Vec<usize>,
    pub edge_start: Vec<usize>,
    pub total: usize,
}

pub fn parameter_layout(structure: &ModalityStructure, rank: usize) -> ParameterLayout {
    let mut diag_start = Vec::with_capacity(structure.n_axes());
    let mut offset = rank;
    for &d in &structure.axis_len {
        diag_start.push(offset);
        offset += d as usize - 1;
    }
    let mut edge_start = Vec::with_capacity(structure.n_axes());
    for &d in &structure.axis_len {
        edge_start.push(offset);
        offset += d as usize * (d as usize - 1) / 2;
    }
    ParameterLayout {
        rank,
        diag_start,
        edge_start,
        total: offset,
    }
}

impl FisherBlocks {
    /// Expands the blocks to a dense matrix following [`parameter_layout`].
    /// Intended for small instances and cross-checking only.
    pub fn assemble_dense(&self, structure: &ModalityStructure) -> Array2<f64> {
        let rank = self.t_t.nrows();
        let layout = parameter_layout(structure, rank);
        let mut f = Array2::zeros((layout.total, layout.total));
        for i in 0..rank {
            for j in 0..rank {
                f[[i, j]] = self.t_t[[i, j]];
            }
        }
        let n_axes = structure.n_axes();
        for l in 0..n_axes {
            let d = structure.axis_len[l] as usize;
            for q in 0..d - 1 {
                let col = layout.diag_start[l] + q;
                for i in 0..rank {
                    f[[i, col]] = self.t_diag[[i, l]];
                    f[[col, i]] = self.t_diag[[i, l]];
                }
                f[[col, col]] = self.diag_self[l];
            }
            for q in 0..d * (d - 1) / 2 {
                let col = layout.edge_start[l] + q;
                f[[col, col]] = self.edge_self[l];
            }
        }
        for l1 in 0..n_axes {
            for l2 in 0..n_axes {
                if l1 == l2 {
                    continue;
                }
                let v = self.diag_cross[[l1, l2]];
                if v == 0.0 {
                    continue;
                }
                let d1 = structure.axis_len[l1] as usize;
                let d2 = structure.axis_len[l2] as usize;
                for q1 in 0..d1 - 1 {
                    for q2 in 0..d2 - 1 {
                        f[[layout.diag_start[l1] + q1, layout.diag_start[l2] + q2]] = v;
                    }
                }
            }
        }
        f
    }
}

/// Builds the null Fisher information blocks.  Fails with a hypothesis error
/// when no trace parameters realize the requested variances.
pub fn null_fisher_blocks(
    structure: &ModalityStructure,
    trace: &TraceStructure,
    h: &NullHypothesis,
) -> Result<FisherBlocks> {
    check_hypothesis_consistency(structure, trace, &h.sigma_sq)?;
    let rank = trace.rank;
    let n_axes = structure.n_axes();
    let coeffs = trace.coefficients_f64();
    let mut t_t = Array2::zeros((rank, rank));
    let mut t_diag = Array2::zeros((rank, n_axes));
    let mut diag_self = vec![0.0; n_axes];
    let mut diag_cross = Array2::zeros((n_axes, n_axes));
    let mut edge_self = vec![0.0; n_axes];
    for (g, dims) in structure.modalities.iter().enumerate() {
        let s2 = h.sigma_sq[g];
        // Shared per-modality weight d_total * sigma^4 / 2.
        let a_g = dims.total as f64 * s2 * s2 / 2.0;
        for i in 0..rank {
            if coeffs[g][i] == 0.0 {
                continue;
            }
            for j in 0..rank {
                t_t[[i, j]] += a_g * coeffs[g][i] * coeffs[g][j];
            }
        }
        for &l in &dims.axes {
            let d_l = structure.axis_len[l] as f64;
            for i in 0..rank {
                t_diag[[i, l]] += coeffs[g][i] * a_g / d_l;
            }
            diag_self[l] += a_g / d_l;
            edge_self[l] += a_g / (2.0 * d_l);
        }
        for &l1 in &dims.axes {
            for &l2 in &dims.axes {
                if l1 != l2 {
                    let d1 = structure.axis_len[l1] as f64;
                    let d2 = structure.axis_len[l2] as f64;
                    diag_cross[[l1, l2]] += a_g / (d1 * d2);
                }
            }
        }
    }
    Ok(FisherBlocks {
        t_t,
        t_diag,
        diag_self,
        diag_cross,
        edge_self,
    })
}

/// One tested edge: off-diagonal factor entry with its Wald statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeTestResult {
    pub axis: usize,
    pub i: usize,
    pub j: usize,
    pub psi: f64,
    pub z: f64,
    pub p_raw: f64,
    pub p_bonferroni: f64,
    pub n_tests: u64,
}

/// `sqrt(sum_{g with l in g} d_total (sigma^g)^4 / d_l)`: the factor turning
/// `psi / 2` into an asymptotic z-score for axis `l`.  For a single matrix
/// modality with unit variance this is the square root of the number of
/// samples seen by the axis.
pub fn axis_z_coefficient(axis: usize, structure: &ModalityStructure, h: &NullHypothesis) -> f64 {
    let d_l = structure.axis_len[axis] as f64;
    let mut sum = 0.0;
    for &g in &structure.axis_members[axis] {
        let s2 = h.sigma_sq[g];
        sum += structure.modalities[g].total as f64 * s2 * s2 / d_l;
    }
    sum.sqrt()
}

/// Total number of testable off-diagonal pairs across all axes.
pub fn total_tests(structure: &ModalityStructure) -> u64 {
    structure
        .axis_len
        .iter()
        .map(|&d| d * d.saturating_sub(1) / 2)
        .sum()
}

/// Wald test for a single off-diagonal entry, Bonferroni-corrected over all
/// pairs of all axes.
pub fn edge_test(
    psi: f64,
    axis: usize,
    i: usize,
    j: usize,
    structure: &ModalityStructure,
    h: &NullHypothesis,
) -> EdgeTestResult {
    let z = axis_z_coefficient(axis, structure, h) * psi / 2.0;
    let p_raw = two_sided_p(z).max(f64::MIN_POSITIVE);
    let n_tests = total_tests(structure);
    let p_bonferroni = (n_tests as f64 * p_raw).min(1.0);
    EdgeTestResult {
        axis,
        i,
        j,
        psi,
        z,
        p_raw,
        p_bonferroni,
        n_tests,
    }
}

/// Magnitude above which an edge on `axis` is Bonferroni-significant at
/// level `alpha`: `2 z_{1 - alpha/(2 n_tests)} / axis_z_coefficient`.
pub fn critical_magnitude(
    axis: usize,
    structure: &ModalityStructure,
    h: &NullHypothesis,
    alpha: f64,
    n_tests: u64,
) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!(
            "significance level must lie in (0, 1), got {alpha}"
        )));
    }
    if n_tests == 0 {
        return Err(Error::Domain("n_tests must be positive".into()));
    }
    let tail = alpha / (2.0 * n_tests as f64);
    let z_crit = -inverse_phi(tail);
    Ok(2.0 * z_crit / axis_z_coefficient(axis, structure, h))
}
