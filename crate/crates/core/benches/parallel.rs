//! Parallel vs sequential throughput of the batch data generators.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use bscan_core::cpsynth::{extract_defect_patches, generate_cp_batch, PasteAttemptPolicy};
use bscan_core::dataset::phantom::generate_phantoms_with;
use bscan_core::dataset::{extract_canvases, PhantomConfig};
use bscan_core::maskgen::{extract_aspect_ratios, sample_position_masks};
use bscan_core::Parallelism;

const MODES: [(&str, Parallelism); 2] = [("par", Parallelism::Parallel), ("seq", Parallelism::Sequential)];

fn phantoms(c: &mut Criterion) {
    let cfg = PhantomConfig {
        count: 64,
        ..Default::default()
    };
    let mut g = c.benchmark_group("phantom_64");
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| generate_phantoms_with(&cfg, 1, mode).unwrap())
        });
    }
    g.finish();
}

fn copy_paste(c: &mut Criterion) {
    let data = generate_phantoms_with(
        &PhantomConfig {
            count: 100,
            ..Default::default()
        },
        2,
        Parallelism::Parallel,
    )
    .unwrap();
    let policy = PasteAttemptPolicy::default();
    let canvases = extract_canvases(&data);
    let patches = extract_defect_patches(&data, &policy);
    let mut g = c.benchmark_group("cp_256");
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| generate_cp_batch(&canvases, &patches, (1, 4), &policy, 256, 3, mode).unwrap())
        });
    }
    g.finish();
}

fn masks(c: &mut Criterion) {
    let data = generate_phantoms_with(
        &PhantomConfig {
            count: 100,
            ..Default::default()
        },
        4,
        Parallelism::Parallel,
    )
    .unwrap();
    let pool = extract_aspect_ratios(&data).unwrap();
    let mut g = c.benchmark_group("masks_1024");
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| sample_position_masks(&pool, 128, 128, (1, 4), 1024, 5, mode).unwrap())
        });
    }
    g.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = phantoms, copy_paste, masks
}
criterion_main!(benches);
