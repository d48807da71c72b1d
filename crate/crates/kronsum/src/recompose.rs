//! Recomposition of thresholded factor graphs from spectral estimates.
//!
//! The estimated factor of an axis is `Psi = V diag(Lambda) V^T` with `V`
//! `d x k`; only off-diagonal entries are identifiable, and only a sparse
//! subset is worth keeping.  The dense product is never materialized:
//! row blocks of fixed height are produced one at a time and fed through a
//! bounded selection, so peak memory is the retained edges plus `O(k d)`.

use ndarray::{Array1, Array2, Axis as NdAxis};
use rayon::prelude::*;
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::collections::HashSet;

use crate::dataset::{Axis, ModalityStructure};
use crate::error::{Error, Result};
use crate::spectrum::AxisSpectrum;
use crate::stattest::{critical_magnitude, edge_test, total_tests, NullHypothesis, SigmaMode};

/// Rows recomposed per block; bounds scratch memory at `32 * d` floats.
const BLOCK_ROWS: usize = 32;

/// Retention rule variants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RuleVariant {
    /// Keep the `n` largest off-diagonal magnitudes of the whole factor.
    TopOverall(usize),
    /// Keep each vertex's `n` largest-magnitude incident entries.
    TopPerVertex(usize),
    /// Keep the overall top `n` ranked by `|psi_ij| / sqrt(w_i w_j)` where
    /// `w_i` is the vertex's total off-diagonal magnitude.
    DegreeDownweightedTopOverall(usize),
    /// Keep entries whose magnitude exceeds the Bonferroni-corrected Wald
    /// critical value at level `alpha` under the given null variances.
    Significance {
        alpha: f64,
        sigma_hypothesis: SigmaMode,
    },
}

/// A retention rule plus the optional per-vertex floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdRule {
    pub variant: RuleVariant,
    /// After the rule runs, every vertex is topped up to this many incident
    /// edges using its strongest remaining entries (0 disables).
    pub min_edges_per_vertex: usize,
}

impl ThresholdRule {
    pub fn new(variant: RuleVariant) -> Self {
        ThresholdRule {
            variant,
            min_edges_per_vertex: 0,
        }
    }
}

/// Wald statistics attached to an edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeStats {
    pub z: f64,
    pub p_raw: f64,
    pub p_bonferroni: f64,
    pub n_tests: u64,
}

/// One retained off-diagonal entry, `i < j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
    pub stats: Option<EdgeStats>,
}

/// Sparse symmetric thresholded factor for one axis.
#[derive(Debug, Clone)]
pub struct FactorGraph {
    pub axis: Axis,
    pub axis_index: usize,
    /// Retained edges sorted by `(i, j)`.
    pub edges: Vec<Edge>,
    /// Number of retained edges incident to each vertex.
    pub degrees: Vec<u32>,
}

impl FactorGraph {
    fn from_edges(axis: Axis, axis_index: usize, mut edges: Vec<Edge>) -> Self {
        edges.sort_by(|a, b| (a.i, a.j).cmp(&(b.i, b.j)));
        let mut degrees = vec![0u32; axis.len];
        for e in &edges {
            degrees[e.i] += 1;
            degrees[e.j] += 1;
        }
        FactorGraph {
            axis,
            axis_index,
            edges,
            degrees,
        }
    }

    /// Fills per-edge Wald statistics in place.
    pub fn attach_stats(&mut self, structure: &ModalityStructure, h: &NullHypothesis) {
        for e in self.edges.iter_mut() {
            let r = edge_test(e.weight, self.axis_index, e.i, e.j, structure, h);
            e.stats = Some(EdgeStats {
                z: r.z,
                p_raw: r.p_raw,
                p_bonferroni: r.p_bonferroni,
                n_tests: r.n_tests,
            });
        }
    }
}

/// A candidate entry during selection; `key` is the ranking magnitude
/// (plain `|weight|` or the degree-downweighted variant).
#[derive(Debug, Clone, Copy)]
struct Candidate {
    key: f64,
    i: u32,
    j: u32,
    weight: f64,
}

impl Candidate {
    fn beats(&self, other: &Candidate) -> bool {
        match self.key.total_cmp(&other.key) {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => (self.i, self.j) < (other.i, other.j),
        }
    }
}

/// Heap ordering such that the maximum element is the WORST candidate:
/// smallest key, ties resolved so larger `(i, j)` is worse.
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .key
            .total_cmp(&self.key)
            .then_with(|| (self.i, self.j).cmp(&(other.i, other.j)))
    }
}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}

/// Bounded top-`n` selection with deterministic lexicographic tie-breaking.
struct TopSelector {
    limit: usize,
    heap: BinaryHeap<Candidate>,
}

impl TopSelector {
    fn new(limit: usize) -> Self {
        TopSelector {
            limit,
            heap: BinaryHeap::with_capacity(limit.min(1024) + 1),
        }
    }

    fn offer(&mut self, c: Candidate) {
        if self.limit == 0 {
            return;
        }
        if self.heap.len() < self.limit {
            self.heap.push(c);
        } else if c.beats(self.heap.peek().unwrap()) {
            self.heap.pop();
            self.heap.push(c);
        }
    }

    fn absorb(&mut self, other: TopSelector) {
        for c in other.heap {
            self.offer(c);
        }
    }

    /// Best-first order.
    fn into_sorted(self) -> Vec<Candidate> {
        let mut v: Vec<Candidate> = self.heap.into_vec();
        v.sort();
        v
    }
}

/// Streams the rows of `V diag(Lambda) V^T` through `row_fn` in parallel
/// stripes; each stripe owns one accumulator, results returned in stripe
/// order so the outcome is independent of scheduling.
fn sweep_rows<T, I, F>(scaled: &Array2<f64>, v: &Array2<f64>, init: I, row_fn: F) -> Vec<T>
where
    T: Send,
    I: Fn() -> T + Sync,
    F: Fn(&mut T, usize, &[f64]) + Sync,
{
    let d = v.nrows();
    let stripes = rayon::current_num_threads().max(1).min(d.max(1));
    let per = d.div_ceil(stripes);
    (0..stripes)
        .into_par_iter()
        .map(|s| {
            let start = s * per;
            let stop = ((s + 1) * per).min(d);
            let mut acc = init();
            if start >= stop {
                return acc;
            }
            // One reusable row-major scratch block per stripe; `dot` is not
            // used because its result layout is not guaranteed.
            let mut buf = Array2::<f64>::zeros((BLOCK_ROWS.min(stop - start), d));
            let mut row_start = start;
            while row_start < stop {
                let row_stop = (row_start + BLOCK_ROWS).min(stop);
                let rows = row_stop - row_start;
                ndarray::linalg::general_mat_mul(
                    1.0,
                    &scaled.slice(ndarray::s![row_start..row_stop, ..]),
                    &v.t(),
                    0.0,
                    &mut buf.slice_mut(ndarray::s![..rows, ..]),
                );
                for local in 0..rows {
                    let row = buf.index_axis(NdAxis(0), local);
                    row_fn(&mut acc, row_start + local, row.as_slice().unwrap());
                }
                row_start = row_stop;
            }
            acc
        })
        .collect()
}

fn scaled_vectors(spectrum: &AxisSpectrum, lambda: &Array1<f64>) -> Array2<f64> {
    let mut scaled = spectrum.eigenvectors.clone();
    for (mut col, &l) in scaled.columns_mut().into_iter().zip(lambda.iter()) {
        col.mapv_inplace(|x| x * l);
    }
    scaled
}

/// Off-diagonal row magnitudes `w_i = sum_{j != i} |psi_ij|`.
fn row_masses(scaled: &Array2<f64>, v: &Array2<f64>) -> Vec<f64> {
    let d = v.nrows();
    let parts = sweep_rows(
        scaled,
        v,
        Vec::new,
        |acc: &mut Vec<(usize, f64)>, i, row| {
            let mut m = 0.0;
            for (j, &w) in row.iter().enumerate() {
                if j != i {
                    m += w.abs();
                }
            }
            acc.push((i, m));
        },
    );
    let mut masses = vec![0.0; d];
    for part in parts {
        for (i, m) in part {
            masses[i] = m;
        }
    }
    masses
}

fn merge_selectors(parts: Vec<TopSelector>, limit: usize) -> Vec<Candidate> {
    let mut total = TopSelector::new(limit);
    for p in parts {
        total.absorb(p);
    }
    total.into_sorted()
}

fn candidates_to_edges(cands: Vec<Candidate>) -> Vec<Edge> {
    cands
        .into_iter()
        .map(|c| Edge {
            i: c.i as usize,
            j: c.j as usize,
            weight: c.weight,
            stats: None,
        })
        .collect()
}

/// Deduplicates `(i, j)` pairs, keeping the first occurrence after a
/// deterministic sort.
fn dedupe_edges(mut edges: Vec<Edge>) -> Vec<Edge> {
    edges.sort_by(|a, b| {
        (a.i, a.j)
            .cmp(&(b.i, b.j))
            .then_with(|| a.weight.total_cmp(&b.weight))
    });
    edges.dedup_by(|next, kept| next.i == kept.i && next.j == kept.j);
    edges
}

/// Builds the thresholded factor graph for one axis.
///
/// `lambda` holds the estimated precision eigenvalues matching
/// `spectrum.eigenvectors`; a length mismatch is a structural error.
pub fn recompose_threshold(
    axis: &Axis,
    spectrum: &AxisSpectrum,
    lambda: &Array1<f64>,
    rule: &ThresholdRule,
    structure: &ModalityStructure,
) -> Result<FactorGraph> {
    let d = spectrum.eigenvectors.nrows();
    if axis.len != d {
        return Err(Error::Structural(format!(
            "axis {} has {} vertices but the spectrum holds {d}",
            axis.name, axis.len
        )));
    }
    if lambda.len() != spectrum.k || spectrum.eigenvectors.ncols() != spectrum.k {
        return Err(Error::Structural(format!(
            "axis {}: spectrum rank {} does not match {} eigenvalue estimates",
            axis.name,
            spectrum.k,
            lambda.len()
        )));
    }
    let v = &spectrum.eigenvectors;
    let scaled = scaled_vectors(spectrum, lambda);

    let mut edges = match rule.variant {
        RuleVariant::TopOverall(n) => {
            let parts = sweep_rows(
                &scaled,
                v,
                || TopSelector::new(n),
                |acc, i, row| {
                    for (j, &w) in row.iter().enumerate().skip(i + 1) {
                        if w != 0.0 {
                            acc.offer(Candidate {
                                key: w.abs(),
                                i: i as u32,
                                j: j as u32,
                                weight: w,
                            });
                        }
                    }
                },
            );
            candidates_to_edges(merge_selectors(parts, n))
        }
        RuleVariant::TopPerVertex(n) => {
            let parts = sweep_rows(
                &scaled,
                v,
                Vec::new,
                |acc: &mut Vec<Edge>, i, row| {
                    let mut local = TopSelector::new(n);
                    for (j, &w) in row.iter().enumerate() {
                        if j != i && w != 0.0 {
                            let (a, b) = if i < j { (i, j) } else { (j, i) };
                            local.offer(Candidate {
                                key: w.abs(),
                                i: a as u32,
                                j: b as u32,
                                weight: w,
                            });
                        }
                    }
                    acc.extend(candidates_to_edges(local.into_sorted()));
                },
            );
            dedupe_edges(parts.into_iter().flatten().collect())
        }
        RuleVariant::DegreeDownweightedTopOverall(n) => {
            let masses = row_masses(&scaled, v);
            let parts = sweep_rows(
                &scaled,
                v,
                || TopSelector::new(n),
                |acc, i, row| {
                    for (j, &w) in row.iter().enumerate().skip(i + 1) {
                        if w != 0.0 {
                            let denom = (masses[i] * masses[j]).sqrt();
                            acc.offer(Candidate {
                                key: w.abs() / denom,
                                i: i as u32,
                                j: j as u32,
                                weight: w,
                            });
                        }
                    }
                },
            );
            candidates_to_edges(merge_selectors(parts, n))
        }
        RuleVariant::Significance {
            alpha,
            sigma_hypothesis,
        } => {
            let h = NullHypothesis::from_mode(sigma_hypothesis, structure);
            let n_tests = total_tests(structure);
            let cutoff = critical_magnitude(spectrum.axis, structure, &h, alpha, n_tests)?;
            let parts = sweep_rows(
                &scaled,
                v,
                Vec::new,
                |acc: &mut Vec<Edge>, i, row| {
                    for (j, &w) in row.iter().enumerate().skip(i + 1) {
                        if w.abs() > cutoff {
                            acc.push(Edge {
                                i,
                                j,
                                weight: w,
                                stats: None,
                            });
                        }
                    }
                },
            );
            parts.into_iter().flatten().collect()
        }
    };

    if rule.min_edges_per_vertex > 0 {
        edges = top_up_vertices(&scaled, v, edges, rule.min_edges_per_vertex);
    }
    Ok(FactorGraph::from_edges(axis.clone(), spectrum.axis, edges))
}

/// Adds each vertex's strongest unused entries until it has at least `m`
/// incident edges (or runs out of nonzero entries).
fn top_up_vertices(scaled: &Array2<f64>, v: &Array2<f64>, edges: Vec<Edge>, m: usize) -> Vec<Edge> {
    let d = v.nrows();
    let parts = sweep_rows(
        scaled,
        v,
        Vec::new,
        |acc: &mut Vec<(usize, Vec<Candidate>)>, i, row| {
            let mut local = TopSelector::new(m);
            for (j, &w) in row.iter().enumerate() {
                if j != i && w != 0.0 {
                    let (a, b) = if i < j { (i, j) } else { (j, i) };
                    local.offer(Candidate {
                        key: w.abs(),
                        i: a as u32,
                        j: b as u32,
                        weight: w,
                    });
                }
            }
            acc.push((i, local.into_sorted()));
        },
    );
    let mut per_vertex: Vec<Vec<Candidate>> = vec![Vec::new(); d];
    for part in parts {
        for (i, cands) in part {
            per_vertex[i] = cands;
        }
    }
    let mut kept: HashSet<(usize, usize)> = edges.iter().map(|e| (e.i, e.j)).collect();
    let mut degrees = vec![0usize; d];
    for e in &edges {
        degrees[e.i] += 1;
        degrees[e.j] += 1;
    }
    let mut edges = edges;
    for i in 0..d {
        if degrees[i] >= m {
            continue;
        }
        for c in &per_vertex[i] {
            if degrees[i] >= m {
                break;
            }
            let pair = (c.i as usize, c.j as usize);
            if kept.insert(pair) {
                degrees[pair.0] += 1;
                degrees[pair.1] += 1;
                edges.push(Edge {
                    i: pair.0,
                    j: pair.1,
                    weight: c.weight,
                    stats: None,
                });
            }
        }
    }
    edges
}
