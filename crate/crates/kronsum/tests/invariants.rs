//! Property-based invariants over randomized inputs: ingest semantics,
//! rank-transform structure, spectrum capture monotonicity, solver
//! feasibility and optimality bounds, Wald-test monotonicity, and the shape
//! of precision-recall sweeps.

mod common;

use std::collections::{BTreeMap, BTreeSet};

use kronsum::dataset::{build_structure, matricize, Dataset, ModalityStructure};
use kronsum::identify::build_trace_structure;
use kronsum::nonparanormal::{nonparanormal_matricization, rank_transform_row, TieMethod};
use kronsum::solver::{nll_gradient, solve_eigenvalues, SolverOptions};
use kronsum::spectrum::{axis_spectrum, RESIDUAL_TOL};
use kronsum::stattest::{
    critical_magnitude, edge_test, null_fisher_blocks, total_tests, NullHypothesis,
};
use kronsum::synth::pr_curve;
use ndarray::{s, Array1, Array2};
use proptest::prelude::*;

/// Modality structure from named shapes; entry values are irrelevant.
fn structure_of(shapes: &[&[(&str, usize)]]) -> ModalityStructure {
    let mut b = Dataset::builder();
    for (g, axes) in shapes.iter().enumerate() {
        let m = b.add_modality(&format!("m{g}"), axes).unwrap();
        b.push_entry(m, &vec![0; axes.len()], 1.0).unwrap();
    }
    build_structure(&b.finish().unwrap()).unwrap()
}

/// Three full-rank shapes: a single matrix, two matrices sharing an axis,
/// and a three-modality chain over four axes.
fn shape_case(case: usize) -> ModalityStructure {
    match case {
        0 => structure_of(&[&[("a", 3), ("b", 2)]]),
        1 => structure_of(&[&[("a", 3), ("b", 2)], &[("a", 3), ("c", 2)]]),
        _ => structure_of(&[
            &[("a", 2), ("b", 2)],
            &[("b", 2), ("c", 3)],
            &[("c", 3), ("d", 2)],
        ]),
    }
}

fn build_two_axis(d0: usize, d1: usize, entries: &[(usize, usize, f64)]) -> Dataset {
    let mut b = Dataset::builder();
    let m = b.add_modality("m", &[("r", d0), ("c", d1)]).unwrap();
    for &(i, j, v) in entries {
        b.push_entry(m, &[i, j], v).unwrap();
    }
    b.finish().unwrap()
}

fn stored_cells(ds: &Dataset) -> BTreeMap<(usize, usize), f64> {
    ds.modality(0)
        .entries()
        .map(|(idx, v)| ((idx[0], idx[1]), v))
        .collect()
}

fn ingest_case() -> impl Strategy<Value = ((usize, usize), Vec<(usize, usize, f64)>)> {
    (2usize..5, 2usize..5).prop_flat_map(|(d0, d1)| {
        // Half-integer values keep every partial sum exact, so duplicate
        // merging is order-independent and zero sums are exact zeros.
        let entries = proptest::collection::vec(
            (0..d0, 0..d1, (-6i32..=6).prop_map(|k| f64::from(k) * 0.5)),
            0..40,
        );
        (Just((d0, d1)), entries)
    })
}

proptest! {
    #[test]
    fn ingest_sums_duplicates_and_drops_zeros(((d0, d1), entries) in ingest_case()) {
        let mut dense: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for &(i, j, v) in &entries {
            *dense.entry((i, j)).or_insert(0.0) += v;
        }
        dense.retain(|_, v| *v != 0.0);

        let stored = stored_cells(&build_two_axis(d0, d1, &entries));
        prop_assert_eq!(&stored, &dense);

        // Insertion order is immaterial.
        let mut reversed = entries.clone();
        reversed.reverse();
        let stored_rev = stored_cells(&build_two_axis(d0, d1, &reversed));
        prop_assert_eq!(&stored_rev, &dense);
    }
}

fn row_case() -> impl Strategy<Value = (Vec<f64>, usize, bool, Vec<usize>)> {
    (
        proptest::collection::vec((-4i32..=4).prop_map(|k| f64::from(k) * 0.75), 1..24),
        0usize..5,
        any::<bool>(),
    )
        .prop_flat_map(|(values, zeros, avg)| {
            let order: Vec<usize> = (0..values.len()).collect();
            (Just(values), Just(zeros), Just(avg), Just(order).prop_shuffle())
        })
}

proptest! {
    #[test]
    fn rank_transform_is_equivariant_monotone_and_tie_consistent(
        (values, zeros, avg, perm) in row_case()
    ) {
        let tie = if avg { TieMethod::Average } else { TieMethod::Minimum };
        let (out, zmap) = rank_transform_row(&values, zeros, tie);

        prop_assert!(zmap.is_finite());
        for (i, &vi) in values.iter().enumerate() {
            prop_assert!(out[i].is_finite());
            for (j, &vj) in values.iter().enumerate() {
                if vi < vj {
                    prop_assert!(out[i] < out[j]);
                } else if vi == vj {
                    prop_assert_eq!(out[i], out[j]);
                }
            }
        }

        // Reordering the stored values reorders the scores identically.
        let shuffled: Vec<f64> = perm.iter().map(|&i| values[i]).collect();
        let (out_s, zmap_s) = rank_transform_row(&shuffled, zeros, tie);
        prop_assert_eq!(zmap_s, zmap);
        for (k, &i) in perm.iter().enumerate() {
            prop_assert_eq!(out_s[k], out[i]);
        }

        // A stored zero scores exactly like an implicit one.
        if zeros >= 1 {
            let mut with_explicit = values.clone();
            with_explicit.push(0.0);
            let (out_e, zmap_e) = rank_transform_row(&with_explicit, zeros - 1, tie);
            prop_assert_eq!(zmap_e, zmap);
            prop_assert_eq!(out_e[values.len()], zmap);
            for i in 0..values.len() {
                prop_assert_eq!(out_e[i], out[i]);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn transformed_matricization_matches_the_dense_row_oracle(
        da in 2usize..5,
        db in 2usize..5,
        dc in 2usize..5,
        fill in 0.2f64..0.9,
        seed in any::<u64>(),
        avg in any::<bool>(),
    ) {
        let ds = common::random_sparse_dataset(
            &[
                ("m1", &[("a", da), ("b", db)]),
                ("m2", &[("a", da), ("c", dc)]),
            ],
            fill,
            seed,
        );
        let st = build_structure(&ds).unwrap();
        let tie = if avg { TieMethod::Average } else { TieMethod::Minimum };

        for axis in 0..st.n_axes() {
            let sh = nonparanormal_matricization(&ds, &st, axis, tie).unwrap();

            let blocks: Vec<Array2<f64>> = st.axis_members[axis]
                .iter()
                .map(|&g| matricize(&ds, g, axis).unwrap().to_dense())
                .collect();
            let d = st.axis_len[axis] as usize;
            let width: usize = blocks.iter().map(|b| b.ncols()).sum();
            let mut concat = Array2::zeros((d, width));
            let mut col = 0;
            for b in &blocks {
                concat.slice_mut(s![.., col..col + b.ncols()]).assign(b);
                col += b.ncols();
            }
            let want = common::dense_rank_transform(&concat, tie);

            let got = sh.to_dense();
            prop_assert_eq!(got.dim(), want.dim());
            for (x, y) in got.iter().zip(want.iter()) {
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()));
            }
            let frob: f64 = want.iter().map(|v| v * v).sum();
            prop_assert!((sh.gram_trace() - frob).abs() <= 1e-9 * (1.0 + frob));
        }
    }
}

fn spectrum_case() -> impl Strategy<Value = (usize, usize, f64, u64, usize, usize, usize)> {
    (4usize..8, 4usize..8, 0.4f64..0.9, any::<u64>(), 0usize..2).prop_flat_map(
        |(d0, d1, fill, seed, axis)| {
            let kmax = d0.min(d1);
            (1usize..kmax).prop_flat_map(move |k1| {
                ((k1 + 1)..=kmax).prop_map(move |k2| (d0, d1, fill, seed, axis, k1, k2))
            })
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn captured_variance_grows_with_the_panel(
        (d0, d1, fill, seed, axis, k1, k2) in spectrum_case()
    ) {
        let ds =
            common::random_sparse_dataset(&[("m", &[("a", d0), ("b", d1)])], fill, seed);
        let st = build_structure(&ds).unwrap();
        let r1 = axis_spectrum(&ds, &st, axis, k1, 11);
        let r2 = axis_spectrum(&ds, &st, axis, k2, 13);
        // Draws without enough numerical rank for the larger panel are
        // rejected by the solver; nothing to compare there.
        prop_assume!(r1.is_ok() && r2.is_ok());
        let (s1, s2) = (r1.unwrap(), r2.unwrap());

        for s in [&s1, &s2] {
            let e1 = s.gram_eigenvalues[0];
            prop_assert!(e1 > 0.0);
            for w in s.gram_eigenvalues.windows(2) {
                prop_assert!(w[1] > 0.0);
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12));
            }
            prop_assert!(s.explained_variance_ratio > 0.0);
            prop_assert!(s.explained_variance_ratio <= 1.0 + 1e-9);
            prop_assert!(s.max_residual <= RESIDUAL_TOL * e1 * (1.0 + 1e-9));
        }
        prop_assert!(s1.explained_variance_ratio <= s2.explained_variance_ratio + 1e-9);
    }
}

fn solver_case() -> impl Strategy<Value = (usize, Vec<Vec<f64>>)> {
    (0usize..3).prop_flat_map(|case| {
        let n_axes = [2, 3, 4][case];
        (
            Just(case),
            proptest::collection::vec(
                proptest::collection::vec(0.05f64..3.0, 2..5),
                n_axes..=n_axes,
            ),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn solver_outputs_are_feasible_stationary_and_bounded((case, raw) in solver_case()) {
        let structure = shape_case(case);
        let spectra: Vec<Array1<f64>> = raw.into_iter().map(Array1::from_vec).collect();
        // 1e-6 keeps randomly drawn, badly conditioned grids comfortably
        // above the solver's floating-point resolution floor.
        let opts = SolverOptions {
            tolerance: Some(1e-6),
            max_iterations: 100_000,
            ..SolverOptions::default()
        };
        let sol = solve_eigenvalues(&spectra, &structure, &opts).unwrap();
        let g = nll_gradient(&spectra, &sol.lambdas, &structure).unwrap();
        for l in 0..spectra.len() {
            let co: f64 = structure.axis_members[l]
                .iter()
                .map(|&m| {
                    structure.modalities[m]
                        .axes
                        .iter()
                        .filter(|&&a| a != l)
                        .map(|&a| spectra[a].len() as f64)
                        .product::<f64>()
                })
                .sum();
            for i in 0..spectra[l].len() {
                let lam = sol.lambdas[l][i];
                prop_assert!(lam >= sol.epsilon[l] * (1.0 - 1e-12));
                prop_assert!(lam <= co / spectra[l][i] * (1.0 + 1e-9));
                let pinned = lam <= sol.epsilon[l] * (1.0 + 1e-9);
                let residual = if pinned { (-g[l][i]).max(0.0) } else { g[l][i].abs() };
                prop_assert!(residual <= 1e-6 * 1.01, "axis {} comp {}: {}", l, i, residual);
            }
        }
    }
}

proptest! {
    #[test]
    fn wald_tests_are_monotone_and_bonferroni_consistent(
        case in 0usize..3,
        unit in any::<bool>(),
        axis_pick in 0usize..8,
        a in 1e-4f64..2.0,
        delta in 1e-3f64..1.0,
        alpha in 0.01f64..0.3,
    ) {
        let structure = shape_case(case);
        let h = if unit {
            NullHypothesis::unit_variance(&structure)
        } else {
            NullHypothesis::per_axis_standardized(&structure)
        };
        let axis = axis_pick % structure.n_axes();
        let b = a + delta;
        let n = total_tests(&structure);

        // |z| strictly increasing and p strictly decreasing in |psi|.
        let ta = edge_test(a, axis, 0, 1, &structure, &h);
        let tb = edge_test(b, axis, 0, 1, &structure, &h);
        prop_assert!(ta.z.abs() < tb.z.abs());
        prop_assert!(ta.p_raw > tb.p_raw);
        prop_assert_eq!(ta.n_tests, n);
        prop_assert_eq!(ta.p_bonferroni, (n as f64 * ta.p_raw).min(1.0));

        // Two-sided: only the magnitude matters.
        let tneg = edge_test(-a, axis, 0, 1, &structure, &h);
        prop_assert_eq!(tneg.z, -ta.z);
        prop_assert_eq!(tneg.p_raw, ta.p_raw);

        // A zero entry is never evidence.
        let t0 = edge_test(0.0, axis, 0, 1, &structure, &h);
        prop_assert_eq!(t0.z, 0.0);
        prop_assert_eq!(t0.p_raw, 1.0);
        prop_assert_eq!(t0.p_bonferroni, 1.0);

        // The critical magnitude separates significant from not.
        let crit = critical_magnitude(axis, &structure, &h, alpha, n).unwrap();
        prop_assert!(crit > 0.0);
        let above = edge_test(crit * 1.001, axis, 0, 1, &structure, &h);
        let below = edge_test(crit * 0.999, axis, 0, 1, &structure, &h);
        prop_assert!(above.p_bonferroni < alpha);
        prop_assert!(below.p_bonferroni > alpha);
    }
}

#[test]
fn fisher_blocks_assemble_symmetric() {
    for case in 0..3 {
        let structure = shape_case(case);
        let trace = build_trace_structure(&structure);
        for h in [
            NullHypothesis::unit_variance(&structure),
            NullHypothesis::per_axis_standardized(&structure),
        ] {
            let f = null_fisher_blocks(&structure, &trace, &h)
                .unwrap()
                .assemble_dense(&structure);
            for i in 0..f.nrows() {
                for j in 0..i {
                    assert_eq!(f[[i, j]], f[[j, i]], "case {case} entry ({i}, {j})");
                }
            }
        }
    }
}

fn pr_case() -> impl Strategy<Value = (Vec<(usize, usize, f64)>, Vec<(usize, usize)>)> {
    (4usize..9)
        .prop_flat_map(|d| {
            (
                proptest::collection::vec((0..d, 0..d, -8i32..=8), 1..30),
                proptest::collection::vec((0..d, 0..d), 1..10),
            )
        })
        .prop_map(|(raw_est, raw_truth)| {
            // Normalize to unique upper-triangle candidates with quantized
            // weights so magnitude ties are common.
            let mut seen: BTreeMap<(usize, usize), f64> = BTreeMap::new();
            for (i, j, k) in raw_est {
                if i != j {
                    seen.entry((i.min(j), i.max(j))).or_insert(f64::from(k) / 4.0);
                }
            }
            let est = seen.into_iter().map(|((i, j), w)| (i, j, w)).collect();
            let truth = raw_truth.into_iter().filter(|&(i, j)| i != j).collect();
            (est, truth)
        })
}

proptest! {
    #[test]
    fn pr_sweep_is_monotone_and_normalized((est, truth) in pr_case()) {
        prop_assume!(!est.is_empty());
        prop_assume!(!truth.is_empty());
        let curve = pr_curve(&est, &truth).unwrap();
        prop_assert!(!curve.points.is_empty());

        for w in curve.points.windows(2) {
            prop_assert!(w[1].threshold < w[0].threshold);
            prop_assert!(w[1].recall >= w[0].recall);
        }
        for p in &curve.points {
            prop_assert!((0.0..=1.0).contains(&p.precision));
            prop_assert!((0.0..=1.0).contains(&p.recall));
        }
        prop_assert!(curve.auprc >= 0.0);
        prop_assert!(curve.auprc <= 1.0 + 1e-12);

        // The loosest threshold retains every candidate.
        let truth_set: BTreeSet<(usize, usize)> =
            truth.iter().map(|&(i, j)| (i.min(j), i.max(j))).collect();
        let hits = est
            .iter()
            .filter(|&&(i, j, _)| truth_set.contains(&(i, j)))
            .count();
        let last = curve.points.last().unwrap();
        prop_assert_eq!(last.recall, hits as f64 / truth_set.len() as f64);
    }
}
