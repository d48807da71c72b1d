//! Shared oracles and generators for the integration tests.  Everything in
//! here is written directly from definitions (dense constructions, explicit
//! sorts) so the library's optimized paths can be checked against it.

#![allow(dead_code)]

use kronsum::dataset::Dataset;
use kronsum::nonparanormal::TieMethod;
use kronsum::normal::inverse_phi;
use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Builds one sparse random modality per shape; values uniform in
/// [-1, 1], each cell present with probability `fill`.
pub fn random_sparse_dataset(
    shapes: &[(&str, &[(&str, usize)])],
    fill: f64,
    seed: u64,
) -> Dataset {
    let mut r = rng(seed);
    let mut b = Dataset::builder();
    for (name, axes) in shapes {
        let m = b.add_modality(name, axes).unwrap();
        let dims: Vec<usize> = axes.iter().map(|&(_, d)| d).collect();
        let total: usize = dims.iter().product();
        let mut index = vec![0usize; dims.len()];
        for _ in 0..total {
            if r.random::<f64>() < fill {
                let value = r.random_range(-1.0..1.0);
                if value != 0.0 {
                    b.push_entry(m, &index, value).unwrap();
                }
            }
            for pos in (0..dims.len()).rev() {
                index[pos] += 1;
                if index[pos] < dims[pos] {
                    break;
                }
                index[pos] = 0;
            }
        }
    }
    b.finish().unwrap()
}

/// Row-major dense copy of one modality.
pub fn modality_dense(dataset: &Dataset, modality: usize) -> Vec<f64> {
    let m = dataset.modality(modality);
    let total: usize = m.shape.iter().product();
    let mut flat = vec![0.0; total];
    for (index, value) in m.entries() {
        let mut pos = 0usize;
        for (x, d) in index.iter().zip(&m.shape) {
            pos = pos * d + x;
        }
        flat[pos] = value;
    }
    flat
}

/// Merges several datasets into one, prefixing modality names to keep them
/// unique; axes unify by name as usual.
pub fn merge_datasets(parts: &[Dataset]) -> Dataset {
    let mut b = Dataset::builder();
    for (p, ds) in parts.iter().enumerate() {
        for g in 0..ds.modalities().len() {
            let m = ds.modality(g);
            let axes: Vec<(String, usize)> = m
                .axes
                .iter()
                .map(|&a| (ds.axis(a).name.clone(), ds.axis(a).len))
                .collect();
            let axis_refs: Vec<(&str, usize)> =
                axes.iter().map(|(n, d)| (n.as_str(), *d)).collect();
            let name = format!("part{p}_{}", m.name);
            let handle = b.add_modality(&name, &axis_refs).unwrap();
            for (index, value) in m.entries() {
                b.push_entry(handle, &index, value).unwrap();
            }
        }
    }
    b.finish().unwrap()
}

/// Independent dense row-wise rank transform: ranks with the requested tie
/// handling over the full row (implicit zeros included), mapped through the
/// normal quantile at rank/(n+1).
pub fn dense_rank_transform(rows: &Array2<f64>, tie: TieMethod) -> Array2<f64> {
    let (d, n) = rows.dim();
    let mut out = Array2::zeros((d, n));
    for i in 0..d {
        let row: Vec<f64> = rows.row(i).to_vec();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| row[a].total_cmp(&row[b]));
        let mut ranks = vec![0.0f64; n];
        let mut start = 0;
        while start < n {
            let mut stop = start + 1;
            while stop < n && row[order[stop]] == row[order[start]] {
                stop += 1;
            }
            let rank = match tie {
                TieMethod::Minimum => (start + 1) as f64,
                TieMethod::Average => ((start + 1) + stop) as f64 / 2.0,
            };
            for &pos in &order[start..stop] {
                ranks[pos] = rank;
            }
            start = stop;
        }
        for j in 0..n {
            out[[i, j]] = inverse_phi(ranks[j] / (n as f64 + 1.0));
        }
    }
    out
}

/// Retention rules replayed literally on a dense symmetric matrix.  Exact
/// zeros are never candidates; ties break by `(i, j)` lexicographic order.
pub enum DenseRule {
    TopOverall(usize),
    TopPerVertex(usize),
    DegreeDownweightedTopOverall(usize),
    CutoffExclusive(f64),
}

pub fn dense_rule_oracle(psi: &Array2<f64>, rule: &DenseRule, min_per_vertex: usize) -> Vec<(usize, usize, f64)> {
    let d = psi.nrows();
    let all_pairs = || {
        let mut v = Vec::new();
        for i in 0..d {
            for j in i + 1..d {
                if psi[[i, j]] != 0.0 {
                    v.push((i, j, psi[[i, j]]));
                }
            }
        }
        v
    };
    let take_top = |mut scored: Vec<(f64, usize, usize, f64)>, n: usize| {
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| (a.1, a.2).cmp(&(b.1, b.2))));
        scored.truncate(n);
        scored
            .into_iter()
            .map(|(_, i, j, w)| (i, j, w))
            .collect::<Vec<_>>()
    };
    let mut edges: Vec<(usize, usize, f64)> = match rule {
        DenseRule::TopOverall(n) => take_top(
            all_pairs().into_iter().map(|(i, j, w)| (w.abs(), i, j, w)).collect(),
            *n,
        ),
        DenseRule::TopPerVertex(n) => {
            let mut kept = Vec::new();
            for v in 0..d {
                let incident: Vec<(f64, usize, usize, f64)> = (0..d)
                    .filter(|&u| u != v && psi[[v, u]] != 0.0)
                    .map(|u| {
                        let (a, b) = if v < u { (v, u) } else { (u, v) };
                        (psi[[v, u]].abs(), a, b, psi[[a, b]])
                    })
                    .collect();
                kept.extend(take_top(incident, *n));
            }
            kept.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
            kept.dedup_by(|a, b| (a.0, a.1) == (b.0, b.1));
            kept
        }
        DenseRule::DegreeDownweightedTopOverall(n) => {
            let mass: Vec<f64> = (0..d)
                .map(|i| (0..d).filter(|&j| j != i).map(|j| psi[[i, j]].abs()).sum())
                .collect();
            take_top(
                all_pairs()
                    .into_iter()
                    .map(|(i, j, w)| (w.abs() / (mass[i] * mass[j]).sqrt(), i, j, w))
                    .collect(),
                *n,
            )
        }
        DenseRule::CutoffExclusive(c) => all_pairs()
            .into_iter()
            .filter(|&(_, _, w)| w.abs() > *c)
            .collect(),
    };

    if min_per_vertex > 0 {
        let mut kept: std::collections::HashSet<(usize, usize)> =
            edges.iter().map(|&(i, j, _)| (i, j)).collect();
        let mut degrees = vec![0usize; d];
        for &(i, j, _) in &edges {
            degrees[i] += 1;
            degrees[j] += 1;
        }
        for v in 0..d {
            if degrees[v] >= min_per_vertex {
                continue;
            }
            let mut incident: Vec<(f64, usize, usize, f64)> = (0..d)
                .filter(|&u| u != v && psi[[v, u]] != 0.0)
                .map(|u| {
                    let (a, b) = if v < u { (v, u) } else { (u, v) };
                    (psi[[v, u]].abs(), a, b, psi[[a, b]])
                })
                .collect();
            incident.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| (a.1, a.2).cmp(&(b.1, b.2))));
            for (_, a, b, w) in incident {
                if degrees[v] >= min_per_vertex {
                    break;
                }
                if kept.insert((a, b)) {
                    degrees[a] += 1;
                    degrees[b] += 1;
                    edges.push((a, b, w));
                }
            }
        }
    }
    edges.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    edges
}

/// Random symmetric positive-definite matrix with unit-scale entries.
pub fn random_spd(d: usize, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    let g = Array2::from_shape_fn((d, d), |_| r.random_range(-1.0..1.0));
    let mut m = g.dot(&g.t()) / d as f64;
    for i in 0..d {
        m[[i, i]] += 1.0;
    }
    m
}

/// Dense symmetric matrix from a factor's edge list.
pub fn graph_to_dense(d: usize, edges: &[(usize, usize, f64)]) -> Array2<f64> {
    let mut m = Array2::zeros((d, d));
    for &(i, j, w) in edges {
        m[[i, j]] = w;
        m[[j, i]] = w;
    }
    m
}

/// Max-abs difference between two matrices.
pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Max-abs difference between two vectors.
pub fn max_abs_diff_vec(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
