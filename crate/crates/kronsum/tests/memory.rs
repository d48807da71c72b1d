//! Peak-allocation tracking for the streaming code paths.
//!
//! A counting global allocator measures how much the heap grows inside each
//! stage on a tall axis.  The bounds are far below the cost of a dense
//! `d x d` intermediate, so a regression to dense materialization fails
//! immediately, while panel-sized buffers pass with a wide margin.

mod common;

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use kronsum::dataset::{build_structure, Dataset};
use kronsum::nonparanormal::{nonparanormal_matricization, TieMethod};
use kronsum::recompose::{recompose_threshold, RuleVariant, ThresholdRule};
use kronsum::spectrum::{axis_spectrum, AxisSpectrum};
use ndarray::{Array1, Array2};
use rand::Rng;

struct CountingAllocator;

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

fn note_alloc(size: usize) {
    let now = CURRENT.fetch_add(size, Ordering::Relaxed) + size;
    PEAK.fetch_max(now, Ordering::Relaxed);
}

fn note_dealloc(size: usize) {
    CURRENT.fetch_sub(size, Ordering::Relaxed);
}

unsafe impl GlobalAlloc for CountingAllocator {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc(layout) };
        if !p.is_null() {
            note_alloc(layout.size());
        }
        p
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc_zeroed(layout) };
        if !p.is_null() {
            note_alloc(layout.size());
        }
        p
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = unsafe { System.realloc(ptr, layout, new_size) };
        if !p.is_null() {
            note_dealloc(layout.size());
            note_alloc(new_size);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) };
        note_dealloc(layout.size());
    }
}

#[global_allocator]
static ALLOCATOR: CountingAllocator = CountingAllocator;

/// Serializes whole test bodies: concurrent tests would pollute the peak.
static MEASURE: Mutex<()> = Mutex::new(());

fn hold() -> std::sync::MutexGuard<'static, ()> {
    MEASURE.lock().unwrap_or_else(|e| e.into_inner())
}

fn measured_peak<T>(f: impl FnOnce() -> T) -> (T, usize) {
    let baseline = CURRENT.load(Ordering::Relaxed);
    PEAK.store(baseline, Ordering::Relaxed);
    let out = f();
    let peak = PEAK.load(Ordering::Relaxed).max(baseline);
    (out, peak - baseline)
}

const MIB: usize = 1024 * 1024;

#[test]
fn spectrum_of_a_tall_axis_stays_panel_sized() {
    let _g = hold();
    let d = 50_000usize;
    let ds = common::random_sparse_dataset(&[("wide", &[("rows", d), ("cols", 25)])], 0.2, 5);
    let s = build_structure(&ds).unwrap();
    let (spec, peak) = measured_peak(|| axis_spectrum(&ds, &s, 0, 20, 42).unwrap());
    assert_eq!(spec.k, 20);
    for w in spec.gram_eigenvalues.windows(2) {
        assert!(w[0] >= w[1]);
    }
    // A dense 50,000 x 50,000 Gram would need ~20 GiB.
    assert!(
        peak <= 192 * MIB,
        "spectrum peak heap growth {} MiB",
        peak / MIB
    );
}

#[test]
fn nonparanormal_transform_is_linear_in_entries() {
    let _g = hold();
    let d = 50_000usize;
    let ds = common::random_sparse_dataset(&[("wide", &[("rows", d), ("cols", 25)])], 0.2, 7);
    let s = build_structure(&ds).unwrap();
    let ((), peak) = measured_peak(|| {
        let shifted = nonparanormal_matricization(&ds, &s, 0, TieMethod::Average).unwrap();
        drop(shifted);
    });
    // The shifted-sparse form stores the entries twice (forward and adjoint)
    // plus one value per matricization row; nothing scales with d^2.
    assert!(
        peak <= 128 * MIB,
        "nonparanormal peak heap growth {} MiB",
        peak / MIB
    );
}

#[test]
fn recomposition_streams_the_tall_factor() {
    let _g = hold();
    let d = 30_000usize;
    let k = 20usize;
    let mut r = common::rng(9);
    // Orthonormality is irrelevant to the allocation profile.
    let eigenvectors = Array2::from_shape_fn((d, k), |_| r.random_range(-1.0..1.0));
    let spectrum = AxisSpectrum {
        axis: 0,
        k,
        gram_eigenvalues: Array1::linspace(2.0 * k as f64, 2.0, k),
        eigenvectors,
        full_trace: 4.0 * k as f64 * k as f64,
        explained_variance_ratio: 0.9,
        max_residual: 0.0,
        power_iterations: 3,
    };
    let lambda = Array1::from_shape_fn(k, |i| 0.2 + 1.0 / (i + 1) as f64);
    let mut b = Dataset::builder();
    b.add_modality("wide", &[("rows", d), ("cols", 25)]).unwrap();
    let ds = b.finish().unwrap();
    let s = build_structure(&ds).unwrap();
    let axis = ds.axis(0).clone();
    let rule = ThresholdRule::new(RuleVariant::TopPerVertex(2));

    // Pin the worker count so the per-worker stripe buffers are predictable.
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(4)
        .build()
        .unwrap();
    let (graph, peak) = measured_peak(|| {
        pool.install(|| recompose_threshold(&axis, &spectrum, &lambda, &rule, &s).unwrap())
    });
    assert!(!graph.edges.is_empty());
    assert_eq!(graph.degrees.len(), d);
    // A dense product would need d^2 ~ 7.2 GiB; four stripe buffers plus the
    // per-vertex selectors and the returned edges stay panel-sized.
    assert!(
        peak <= 160 * MIB,
        "recompose peak heap growth {} MiB",
        peak / MIB
    );
}
