//! End-to-end estimation: transform, spectra, eigenvalue solve, graph
//! recomposition, and edge testing, with per-stage wall-clock accounting.

use ndarray::Array1;
use std::time::Instant;

use crate::dataset::{axis_gram_trace, axis_operator, build_structure, Dataset, ModalityStructure};
use crate::error::{Error, Result};
use crate::identify::{build_trace_structure, check_hypothesis_consistency};
use crate::nonparanormal::{nonparanormal_matricization, TieMethod};
use crate::recompose::{recompose_threshold, FactorGraph, RuleVariant, ThresholdRule};
use crate::solver::{solve_eigenvalues, SolverOptions};
use crate::sparse::MatVec;
use crate::spectrum::{spectrum_from_operator, spectrum_report, AxisSpectrum, ScreeRow};
use crate::stattest::{NullHypothesis, SigmaMode};

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// How many components to keep on one axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ComponentSpec {
    /// Fixed component count.
    Count(usize),
    /// Minimal k whose cumulative explained-variance fraction reaches the
    /// target, which must lie in (0, 1].
    VarianceTarget(f64),
}

/// Per-axis or uniform component choice.
#[derive(Debug, Clone, PartialEq)]
pub enum Components {
    Uniform(ComponentSpec),
    PerAxis(Vec<ComponentSpec>),
}

/// Retention rule requested for every axis; the null-variance mode used by
/// significance thresholding comes from the pipeline-level resolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdSpec {
    TopOverall(usize),
    TopPerVertex(usize),
    DegreeDownweightedTopOverall(usize),
    Significance { alpha: f64 },
}

/// Full pipeline configuration.
#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub components: Components,
    /// Apply the rank-based normalizing transform before the spectra.
    pub nonparanormal: bool,
    pub tie: TieMethod,
    pub threshold: ThresholdSpec,
    pub min_edges_per_vertex: usize,
    /// Null-variance mode; `None` resolves to per-axis standardized when the
    /// nonparanormal transform is on (the transform fixes marginal variances
    /// to 1, splitting evenly across axes) and unit variance otherwise.
    pub sigma_mode: Option<SigmaMode>,
    pub solver: SolverOptions,
    pub seed: u64,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            components: Components::Uniform(ComponentSpec::VarianceTarget(0.9)),
            nonparanormal: true,
            tie: TieMethod::Average,
            threshold: ThresholdSpec::Significance { alpha: 0.05 },
            min_edges_per_vertex: 0,
            sigma_mode: None,
            solver: SolverOptions::default(),
            seed: 0,
        }
    }
}

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageTimings {
    pub transform: f64,
    pub spectra: f64,
    pub solve: f64,
    pub recompose: f64,
    pub test: f64,
    pub total: f64,
}

/// Everything estimated for one axis.
#[derive(Debug, Clone)]
pub struct AxisEstimate {
    pub axis_index: usize,
    pub axis_name: String,
    /// Retained Gram spectrum (eigenvectors shared with the factor).
    pub spectrum: AxisSpectrum,
    pub scree: Vec<ScreeRow>,
    /// Estimated precision eigenvalues, parallel to the kept components.
    pub lambdas: Array1<f64>,
    pub graph: FactorGraph,
    /// True when significance retained nothing and the degree-downweighted
    /// fallback produced this graph.
    pub fallback_applied: bool,
}

impl AxisEstimate {
    pub fn k(&self) -> usize {
        self.spectrum.k
    }

    pub fn explained_variance_ratio(&self) -> f64 {
        self.spectrum.explained_variance_ratio
    }
}

/// Output of [`estimate`].
#[derive(Debug, Clone)]
pub struct EstimateResult {
    pub axes: Vec<AxisEstimate>,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub epsilon: Vec<f64>,
    pub sigma_mode: SigmaMode,
    pub warnings: Vec<String>,
    pub timings: StageTimings,
}

fn resolve_spec(components: &Components, axis: usize, n_axes: usize) -> Result<ComponentSpec> {
    let spec = match components {
        Components::Uniform(s) => *s,
        Components::PerAxis(v) => {
            if v.len() != n_axes {
                return Err(Error::Structural(format!(
                    "per-axis component list has {} entries for {n_axes} axes",
                    v.len()
                )));
            }
            v[axis]
        }
    };
    match spec {
        ComponentSpec::Count(0) => Err(Error::Domain(
            "component count must be at least 1".into(),
        )),
        ComponentSpec::VarianceTarget(v) if !(v > 0.0 && v <= 1.0) => Err(Error::Domain(format!(
            "explained-variance target must lie in (0, 1], got {v}"
        ))),
        other => Ok(other),
    }
}

/// Minimal k whose cumulative explained fraction reaches `target`.
fn minimal_k(spectrum: &AxisSpectrum, target: f64) -> usize {
    let mut cum = 0.0;
    for (i, &e) in spectrum.gram_eigenvalues.iter().enumerate() {
        cum += e;
        if cum >= target * spectrum.full_trace - 1e-12 * spectrum.full_trace {
            return i + 1;
        }
    }
    spectrum.k
}

/// Computes the spectrum for one axis under a component specification,
/// growing the sketch until a variance target is met or rank runs out.
fn spectrum_with_spec(
    op: &dyn MatVec,
    label: &str,
    axis: usize,
    full_trace: f64,
    spec: ComponentSpec,
    seed: u64,
) -> Result<AxisSpectrum> {
    match spec {
        ComponentSpec::Count(k) => spectrum_from_operator(op, label, axis, full_trace, k, seed),
        ComponentSpec::VarianceTarget(target) => {
            let mut bound = op.nrows().min(op.ncols());
            let mut k_try = bound.min(8);
            loop {
                match spectrum_from_operator(op, label, axis, full_trace, k_try, seed) {
                    Ok(mut spectrum) => {
                        let k = minimal_k(&spectrum, target);
                        if k < k_try || k_try >= bound {
                            spectrum.truncate(k.min(spectrum.k));
                            return Ok(spectrum);
                        }
                        k_try = (k_try * 2).min(bound);
                    }
                    Err(Error::RankDeficient { index, .. }) if index > 1 && k_try > index - 1 => {
                        // The data rank ended early; settle for what exists.
                        bound = index - 1;
                        k_try = bound;
                    }
                    Err(e) => return Err(e),
                }
            }
        }
    }
}

/// Runs the full estimation pipeline on a dataset.
pub fn estimate(dataset: &Dataset, options: &PipelineOptions) -> Result<EstimateResult> {
    let started = Instant::now();
    let structure = build_structure(dataset)?;
    let n_axes = structure.n_axes();
    if let ThresholdSpec::Significance { alpha } = options.threshold {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Domain(format!(
                "significance level must lie in (0, 1), got {alpha}"
            )));
        }
    }
    let sigma_mode = options.sigma_mode.unwrap_or(if options.nonparanormal {
        SigmaMode::PerAxisStandardized
    } else {
        SigmaMode::UnitVariance
    });
    let trace = build_trace_structure(&structure);
    let h = NullHypothesis::from_mode(sigma_mode, &structure);
    check_hypothesis_consistency(&structure, &trace, &h.sigma_sq)?;
    let mut warnings: Vec<String> = Vec::new();

    // Transform stage: per-axis matrix-free operators.
    let t_stage = Instant::now();
    let mut ops: Vec<Box<dyn MatVec>> = Vec::with_capacity(n_axes);
    let mut traces: Vec<f64> = Vec::with_capacity(n_axes);
    for axis in 0..n_axes {
        if options.nonparanormal {
            let op = nonparanormal_matricization(dataset, &structure, axis, options.tie)?;
            traces.push(op.gram_trace());
            ops.push(Box::new(op));
        } else {
            let op = axis_operator(dataset, &structure, axis)?;
            traces.push(axis_gram_trace(dataset, &structure, axis));
            ops.push(Box::new(op));
        }
    }
    let transform_secs = t_stage.elapsed().as_secs_f64();

    // Spectra stage.
    let t_stage = Instant::now();
    let mut spectra: Vec<AxisSpectrum> = Vec::with_capacity(n_axes);
    for axis in 0..n_axes {
        let spec = resolve_spec(&options.components, axis, n_axes)?;
        let axis_seed = splitmix64(options.seed ^ ((axis as u64 + 1) << 17));
        let spectrum = spectrum_with_spec(
            ops[axis].as_ref(),
            &dataset.axis(axis).name,
            axis,
            traces[axis],
            spec,
            axis_seed,
        )?;
        spectra.push(spectrum);
    }
    drop(ops);
    let spectra_secs = t_stage.elapsed().as_secs_f64();

    // Eigenvalue solve stage.
    let t_stage = Instant::now();
    let gram_eigs: Vec<Array1<f64>> = spectra.iter().map(|s| s.gram_eigenvalues.clone()).collect();
    let solution = solve_eigenvalues(&gram_eigs, &structure, &options.solver)?;
    warnings.extend(solution.warnings.iter().cloned());
    let solve_secs = t_stage.elapsed().as_secs_f64();

    // Recompose stage.
    let t_stage = Instant::now();
    let mut graphs: Vec<FactorGraph> = Vec::with_capacity(n_axes);
    let mut fallbacks = vec![false; n_axes];
    for axis in 0..n_axes {
        let axis_meta = dataset.axis(axis);
        let base_variant = match options.threshold {
            ThresholdSpec::TopOverall(n) => RuleVariant::TopOverall(n),
            ThresholdSpec::TopPerVertex(n) => RuleVariant::TopPerVertex(n),
            ThresholdSpec::DegreeDownweightedTopOverall(n) => {
                RuleVariant::DegreeDownweightedTopOverall(n)
            }
            ThresholdSpec::Significance { alpha } => RuleVariant::Significance {
                alpha,
                sigma_hypothesis: sigma_mode,
            },
        };
        // Probe the rule without the vertex floor so a significance rule
        // that retains nothing can be detected and replaced.
        let probe = recompose_threshold(
            axis_meta,
            &spectra[axis],
            &solution.lambdas[axis],
            &ThresholdRule::new(base_variant),
            &structure,
        )?;
        let mut final_variant = base_variant;
        if probe.edges.is_empty() {
            if let ThresholdSpec::Significance { alpha } = options.threshold {
                let n = 10 * axis_meta.len;
                warnings.push(format!(
                    "axis '{}': no edges significant at alpha={alpha}; falling back to \
                     degree-downweighted top {n} edges",
                    axis_meta.name
                ));
                fallbacks[axis] = true;
                final_variant = RuleVariant::DegreeDownweightedTopOverall(n);
            }
        }
        let needs_rerun = fallbacks[axis] || options.min_edges_per_vertex > 0;
        let graph = if needs_rerun {
            let rule = ThresholdRule {
                variant: final_variant,
                min_edges_per_vertex: options.min_edges_per_vertex,
            };
            recompose_threshold(
                axis_meta,
                &spectra[axis],
                &solution.lambdas[axis],
                &rule,
                &structure,
            )?
        } else {
            probe
        };
        graphs.push(graph);
    }
    let recompose_secs = t_stage.elapsed().as_secs_f64();

    // Test stage: Wald statistics on every retained edge.
    let t_stage = Instant::now();
    for g in graphs.iter_mut() {
        g.attach_stats(&structure, &h);
    }
    let test_secs = t_stage.elapsed().as_secs_f64();

    let mut axes = Vec::with_capacity(n_axes);
    for (axis, (spectrum, graph)) in spectra.into_iter().zip(graphs).enumerate() {
        let scree = spectrum_report(&spectrum)?;
        axes.push(AxisEstimate {
            axis_index: axis,
            axis_name: dataset.axis(axis).name.clone(),
            scree,
            lambdas: solution.lambdas[axis].clone(),
            graph,
            fallback_applied: fallbacks[axis],
            spectrum,
        });
    }
    let total = started.elapsed().as_secs_f64();
    Ok(EstimateResult {
        axes,
        iterations: solution.iterations,
        gradient_norm: solution.final_gradient_norm,
        epsilon: solution.epsilon,
        sigma_mode,
        warnings,
        timings: StageTimings {
            transform: transform_secs,
            spectra: spectra_secs,
            solve: solve_secs,
            recompose: recompose_secs,
            test: test_secs,
            total,
        },
    })
}

/// Spectrum-only entry point (the `spectrum` subcommand): transforms and
/// decomposes one axis without solving.
pub fn spectrum_only(
    dataset: &Dataset,
    structure: &ModalityStructure,
    axis: usize,
    spec: ComponentSpec,
    nonparanormal: bool,
    tie: TieMethod,
    seed: u64,
) -> Result<AxisSpectrum> {
    let axis_seed = splitmix64(seed ^ ((axis as u64 + 1) << 17));
    if nonparanormal {
        let op = nonparanormal_matricization(dataset, structure, axis, tie)?;
        let trace = op.gram_trace();
        spectrum_with_spec(&op, &dataset.axis(axis).name, axis, trace, spec, axis_seed)
    } else {
        let op = axis_operator(dataset, structure, axis)?;
        let trace = axis_gram_trace(dataset, structure, axis);
        spectrum_with_spec(&op, &dataset.axis(axis).name, axis, trace, spec, axis_seed)
    }
}
