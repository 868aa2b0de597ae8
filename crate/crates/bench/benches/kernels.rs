use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use optomvm_bench::{bench_config, test_matrix};
use optomvm_core::{gemm, AnalogBackend, MvmEngine, OracleBackend};

fn mvm(c: &mut Criterion) {
    let config = bench_config();
    let mut engine = MvmEngine::from_config(&config, 1).unwrap();
    let w = test_matrix(8, 8, 1);
    let v = test_matrix(8, 1, 2).into_vec();
    c.bench_function("mvm_8x8", |b| {
        b.iter(|| engine.mvm(black_box(&w), black_box(&v)).unwrap())
    });
}

fn calibration(c: &mut Criterion) {
    let config = bench_config();
    c.bench_function("calibrate_8x8", |b| {
        b.iter(|| MvmEngine::from_config(black_box(&config), 1).unwrap())
    });
}

fn blocked_gemm(c: &mut Criterion) {
    let config = bench_config();
    let analog = AnalogBackend::new(MvmEngine::from_config(&config, 1).unwrap(), 2);
    let oracle = OracleBackend { tile: 8 };
    let mut group = c.benchmark_group("gemm");
    for n in [16usize, 64] {
        let a = test_matrix(n, n, 3);
        let bm = test_matrix(n, n, 4);
        group.bench_with_input(BenchmarkId::new("oracle", n), &n, |b, _| {
            b.iter(|| gemm(&a, &bm, &oracle, 1).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("analog", n), &n, |b, _| {
            b.iter(|| gemm(&a, &bm, &analog, 1).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, mvm, calibration, blocked_gemm);
criterion_main!(benches);
