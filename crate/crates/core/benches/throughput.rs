//! Rayon pool versus a single-thread pool on the data-parallel kernels.
//!
//! Build with `--no-default-features` to time the sequential fallback instead;
//! then both groups run the same sequential code.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;
use rayon::ThreadPool;
use stegolab::corpus::synthetic_cover;
use stegolab::ica::{center_whiten, fastica_symmetric, IcaOptions};
use stegolab::imageio::to_blocks;
use stegolab::lsb_stego::compute_locks;
use stegolab::prng::priority_order;
use stegolab::sparse_coding::{ksvd, omp_batch};
use stegolab::KeyedPrng;

fn pools() -> Vec<(&'static str, ThreadPool)> {
    let all = rayon::ThreadPoolBuilder::new().build().unwrap();
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    vec![("rayon", all), ("single", one)]
}

fn bench_sparse(c: &mut Criterion) {
    let cover = synthetic_cover(128, 128, 1);
    let blocks = to_blocks(&cover, 8).unwrap();
    let learned = ksvd(&blocks.data, 129, 31, 1, 0).unwrap();
    let mut group = c.benchmark_group("sparse");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::new("omp_batch", name), |b| {
            b.iter(|| pool.install(|| omp_batch(&learned.dictionary, &blocks.data, 31, 0.0).unwrap()))
        });
        group.bench_function(BenchmarkId::new("ksvd_sweep", name), |b| {
            b.iter(|| pool.install(|| ksvd(&blocks.data, 129, 31, 1, 0).unwrap()))
        });
    }
    group.finish();
}

fn bench_ica(c: &mut Criterion) {
    let mut rng = KeyedPrng::new(3);
    let t = 20_000;
    let s = DMatrix::from_fn(4, t, |i, _| {
        let u = rng.next_f64();
        if i % 2 == 0 {
            u - 0.5
        } else {
            -(1.0 - u).ln() * if rng.next_bit() == 1 { 1.0 } else { -1.0 }
        }
    });
    let a = DMatrix::from_fn(4, 4, |i, j| 1.0 / (1.0 + i as f64 + 2.0 * j as f64) + if i == j { 1.0 } else { 0.0 });
    let (z, _) = center_whiten(&(a * s), 4).unwrap();
    let opts = IcaOptions::default();
    let mut group = c.benchmark_group("ica");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::new("fastica_symmetric", name), |b| {
            b.iter(|| pool.install(|| fastica_symmetric(&z, 4, &opts).unwrap()))
        });
    }
    group.finish();
}

fn bench_lsb(c: &mut Criterion) {
    let cover = synthetic_cover(512, 512, 2);
    let mut group = c.benchmark_group("lsb");
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::new("priority_order", name), |b| {
            b.iter(|| pool.install(|| priority_order(7, cover.len())))
        });
        group.bench_function(BenchmarkId::new("compute_locks", name), |b| {
            b.iter(|| pool.install(|| compute_locks(&cover, 7)))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_sparse, bench_ica, bench_lsb);
criterion_main!(benches);
