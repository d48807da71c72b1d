//! Maximum-likelihood estimation of the precision eigenvalues.
//!
//! With the eigenvectors fixed by the axis Gram spectra, the likelihood
//! reduces to a convex problem over the per-axis eigenvalue vectors
//! `lambda_l`.  Everything happens in the k-dimensional spectral domain:
//! the Kronecker-sum spectrum of one modality is the grid of sums
//! `lambda_{l1,i1} + lambda_{l2,i2} + ...`, and both the objective and its
//! gradient reduce over that grid.

use ndarray::Array1;

use crate::dataset::ModalityStructure;
use crate::error::{Error, Result};

/// Relative scale of the default per-axis eigenvalue floor.
pub const DEFAULT_EPSILON_SCALE: f64 = 1e-10;
/// Relative scale of the default gradient-norm convergence tolerance.
pub const DEFAULT_TOLERANCE_SCALE: f64 = 1e-8;
/// Default iteration cap.
pub const DEFAULT_MAX_ITERATIONS: usize = 10_000;
// Treat a component as sitting on the floor within this relative slack.
const PIN_SLACK: f64 = 1e-12;
// Give up shrinking the step below this.
const MIN_STEP: f64 = 1e-20;

/// Options for [`solve_eigenvalues`].
#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Per-axis floors; `None` selects `1e-10 * max_i(1 / E_{l,i})` per axis.
    pub epsilon: Option<Vec<f64>>,
    /// Gradient-sup-norm tolerance; `None` selects `1e-8 * max_l ||E_l||_inf`.
    pub tolerance: Option<f64>,
    /// Iteration cap.
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            epsilon: None,
            tolerance: None,
            max_iterations: DEFAULT_MAX_ITERATIONS,
        }
    }
}

/// Converged precision eigenvalues and solve diagnostics.
#[derive(Debug, Clone)]
pub struct EigenvalueSolution {
    /// Per-axis eigenvalue vectors, every entry in `[epsilon_l, bound]`.
    pub lambdas: Vec<Array1<f64>>,
    /// Accepted iterations performed.
    pub iterations: usize,
    /// Projected-gradient sup norm at exit.
    pub final_gradient_norm: f64,
    /// Per-axis floors in force.
    pub epsilon: Vec<f64>,
    /// Per-axis indices that converged onto the floor.
    pub pinned: Vec<Vec<usize>>,
    /// Human-readable advisories (currently: floor-pinned components).
    pub warnings: Vec<String>,
}

fn check_positive(lambdas: &[&Array1<f64>]) -> Result<()> {
    for (pos, l) in lambdas.iter().enumerate() {
        if l.is_empty() {
            return Err(Error::Domain(format!(
                "eigenvalue vector {pos} in the modality is empty"
            )));
        }
        if l.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Domain(format!(
                "eigenvalue vector {pos} in the modality has a non-positive entry"
            )));
        }
    }
    Ok(())
}

/// Sums `1 / (sum of eigenvalues)` over the modality grid, reduced onto every
/// axis at once: entry `i` of output `m` is the diagonal of the blockwise
/// trace of the inverted Kronecker-sum spectrum for that axis.
///
/// One grid sweep serves all axes, so the cost is O(L * prod k).
pub fn ks_diag_sbtrace_inverse_all(lambdas: &[&Array1<f64>]) -> Result<Vec<Array1<f64>>> {
    check_positive(lambdas)?;
    let n = lambdas.len();
    let mut out: Vec<Array1<f64>> = lambdas.iter().map(|l| Array1::zeros(l.len())).collect();
    match n {
        1 => {
            out[0] = lambdas[0].mapv(|v| 1.0 / v);
        }
        2 => {
            let (a, b) = (lambdas[0], lambdas[1]);
            for (i, &ai) in a.iter().enumerate() {
                let mut row = 0.0;
                for (j, &bj) in b.iter().enumerate() {
                    let r = 1.0 / (ai + bj);
                    row += r;
                    out[1][j] += r;
                }
                out[0][i] = row;
            }
        }
        _ => {
            let sizes: Vec<usize> = lambdas.iter().map(|l| l.len()).collect();
            let mut idx = vec![0usize; n];
            loop {
                let sum: f64 = idx.iter().zip(lambdas).map(|(&i, l)| l[i]).sum();
                let r = 1.0 / sum;
                for (m, &i) in idx.iter().enumerate() {
                    out[m][i] += r;
                }
                // Row-major odometer.
                let mut p = n;
                loop {
                    if p == 0 {
                        return Ok(out);
                    }
                    p -= 1;
                    idx[p] += 1;
                    if idx[p] < sizes[p] {
                        break;
                    }
                    idx[p] = 0;
                }
            }
        }
    }
    Ok(out)
}

/// The blockwise-trace diagonal for one axis of a modality.
///
/// `target` is the position of the axis within `lambdas`.
pub fn ks_diag_sbtrace_inverse(lambdas: &[&Array1<f64>], target: usize) -> Result<Array1<f64>> {
    if target >= lambdas.len() {
        return Err(Error::Domain(format!(
            "target position {target} out of range for a {}-axis modality",
            lambdas.len()
        )));
    }
    let mut all = ks_diag_sbtrace_inverse_all(lambdas)?;
    Ok(all.swap_remove(target))
}

fn modality_lambdas<'a>(
    structure: &ModalityStructure,
    modality: usize,
    lambdas: &'a [Array1<f64>],
) -> Vec<&'a Array1<f64>> {
    structure.modalities[modality]
        .axes
        .iter()
        .map(|&l| &lambdas[l])
        .collect()
}

fn validate_shapes(
    spectra: &[Array1<f64>],
    lambdas: &[Array1<f64>],
    structure: &ModalityStructure,
) -> Result<()> {
    let n = structure.n_axes();
    if spectra.len() != n || lambdas.len() != n {
        return Err(Error::Structural(format!(
            "expected {n} per-axis vectors, got {} spectra and {} eigenvalue vectors",
            spectra.len(),
            lambdas.len()
        )));
    }
    for l in 0..n {
        if spectra[l].len() != lambdas[l].len() {
            return Err(Error::Structural(format!(
                "axis {l}: {} gram eigenvalues but {} precision eigenvalues",
                spectra[l].len(),
                lambdas[l].len()
            )));
        }
    }
    Ok(())
}

/// Negative log likelihood in the spectral domain (up to the constant term):
/// `sum_l e^T lambda / 2  -  sum_gamma sum_grid log(eigenvalue sum) / 2`.
pub fn nll_value(
    spectra: &[Array1<f64>],
    lambdas: &[Array1<f64>],
    structure: &ModalityStructure,
) -> Result<f64> {
    validate_shapes(spectra, lambdas, structure)?;
    let mut value = 0.0;
    for l in 0..structure.n_axes() {
        value += 0.5 * spectra[l].dot(&lambdas[l]);
    }
    for m in 0..structure.modalities.len() {
        let parts = modality_lambdas(structure, m, lambdas);
        check_positive(&parts)?;
        value -= 0.5 * grid_log_sum(&parts);
    }
    Ok(value)
}

fn grid_log_sum(lambdas: &[&Array1<f64>]) -> f64 {
    match lambdas.len() {
        1 => lambdas[0].iter().map(|&v| v.ln()).sum(),
        2 => {
            let (a, b) = (lambdas[0], lambdas[1]);
            let mut total = 0.0;
            for &ai in a {
                for &bj in b {
                    total += (ai + bj).ln();
                }
            }
            total
        }
        n => {
            let sizes: Vec<usize> = lambdas.iter().map(|l| l.len()).collect();
            let mut idx = vec![0usize; n];
            let mut total = 0.0;
            loop {
                let sum: f64 = idx.iter().zip(lambdas).map(|(&i, l)| l[i]).sum();
                total += sum.ln();
                let mut p = n;
                loop {
                    if p == 0 {
                        return total;
                    }
                    p -= 1;
                    idx[p] += 1;
                    if idx[p] < sizes[p] {
                        break;
                    }
                    idx[p] = 0;
                }
            }
        }
    }
}

/// Gradient of [`nll_value`] with respect to every `lambda_l`:
/// `grad_l = (E_l - sum_{gamma containing l} sbtrace_l) / 2`.
pub fn nll_gradient(
    spectra: &[Array1<f64>],
    lambdas: &[Array1<f64>],
    structure: &ModalityStructure,
) -> Result<Vec<Array1<f64>>> {
    validate_shapes(spectra, lambdas, structure)?;
    let mut grads: Vec<Array1<f64>> = spectra.iter().map(|e| e.mapv(|v| 0.5 * v)).collect();
    for m in 0..structure.modalities.len() {
        let parts = modality_lambdas(structure, m, lambdas);
        let traces = ks_diag_sbtrace_inverse_all(&parts)?;
        for (pos, &l) in structure.modalities[m].axes.iter().enumerate() {
            grads[l].scaled_add(-0.5, &traces[pos]);
        }
    }
    Ok(grads)
}

/// Solves for the precision eigenvalues by projected gradient descent with
/// backtracking, from the `lambda = 1/E` initialization.
///
/// The step is clamped to the per-axis floor; a candidate is accepted only
/// when it does not increase the objective, otherwise the step size halves.
/// After acceptance the step size recovers by 1.5x, capped at 1.
pub fn solve_eigenvalues(
    spectra: &[Array1<f64>],
    structure: &ModalityStructure,
    options: &SolverOptions,
) -> Result<EigenvalueSolution> {
    let n = structure.n_axes();
    if spectra.len() != n {
        return Err(Error::Structural(format!(
            "expected {n} spectra, got {}",
            spectra.len()
        )));
    }
    for (l, e) in spectra.iter().enumerate() {
        if e.is_empty() || e.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Domain(format!(
                "axis {l}: gram eigenvalues must be strictly positive and nonempty"
            )));
        }
    }

    let epsilon: Vec<f64> = match &options.epsilon {
        Some(eps) => {
            if eps.len() != n || eps.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::Domain(
                    "per-axis floors must be positive, one per axis".into(),
                ));
            }
            eps.clone()
        }
        None => spectra
            .iter()
            .map(|e| {
                let inv_max = e.iter().fold(0.0f64, |acc, &v| acc.max(1.0 / v));
                DEFAULT_EPSILON_SCALE * inv_max
            })
            .collect(),
    };
    let tol = match options.tolerance {
        Some(t) => {
            if !(t > 0.0) {
                return Err(Error::Domain("tolerance must be positive".into()));
            }
            t
        }
        None => {
            let e_max = spectra
                .iter()
                .flat_map(|e| e.iter().copied())
                .fold(0.0f64, f64::max);
            DEFAULT_TOLERANCE_SCALE * e_max
        }
    };

    // Initialization per the closed single-axis form, clamped to the floor.
    let mut lambdas: Vec<Array1<f64>> = spectra
        .iter()
        .zip(&epsilon)
        .map(|(e, &eps)| e.mapv(|v| (1.0 / v).max(eps)))
        .collect();
    let mut current = nll_value(spectra, &lambdas, structure)?;
    let mut mu = 1.0f64;
    let mut iterations = 0usize;
    let mut gnorm;

    loop {
        let grads = nll_gradient(spectra, &lambdas, structure)?;
        // Projected residual: a component resting on the floor only counts
        // when the objective would still improve by moving up.
        gnorm = 0.0f64;
        for l in 0..n {
            let eps = epsilon[l];
            for (i, &g) in grads[l].iter().enumerate() {
                let pinned = lambdas[l][i] <= eps * (1.0 + PIN_SLACK);
                let residual = if pinned { (-g).max(0.0) } else { g.abs() };
                gnorm = gnorm.max(residual);
            }
        }
        if gnorm <= tol {
            break;
        }
        if iterations >= options.max_iterations {
            return Err(Error::Convergence {
                iterations,
                gradient_norm: gnorm,
                tolerance: tol,
            });
        }

        loop {
            let candidate: Vec<Array1<f64>> = lambdas
                .iter()
                .zip(&grads)
                .zip(&epsilon)
                .map(|((l, g), &eps)| {
                    Array1::from_iter(
                        l.iter()
                            .zip(g.iter())
                            .map(|(&li, &gi)| (li - mu * gi).max(eps)),
                    )
                })
                .collect();
            let value = nll_value(spectra, &candidate, structure)?;
            if value <= current {
                lambdas = candidate;
                current = value;
                mu = (mu * 1.5).min(1.0);
                break;
            }
            mu *= 0.5;
            if mu < MIN_STEP {
                return Err(Error::Convergence {
                    iterations,
                    gradient_norm: gnorm,
                    tolerance: tol,
                });
            }
        }
        iterations += 1;
    }

    let mut pinned: Vec<Vec<usize>> = Vec::with_capacity(n);
    let mut warnings = Vec::new();
    for l in 0..n {
        let eps = epsilon[l];
        let hits: Vec<usize> = lambdas[l]
            .iter()
            .enumerate()
            .filter(|(_, &v)| v <= eps * (1.0 + PIN_SLACK))
            .map(|(i, _)| i)
            .collect();
        if !hits.is_empty() {
            warnings.push(format!(
                "axis {l}: {} eigenvalue(s) sit on the floor {eps:.3e}; the factor looks \
                 rank-deficient at this k — reduce the component count",
                hits.len()
            ));
        }
        pinned.push(hits);
    }

    Ok(EigenvalueSolution {
        lambdas,
        iterations,
        final_gradient_norm: gnorm,
        epsilon,
        pinned,
        warnings,
    })
}
