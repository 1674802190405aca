use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use ept_bench::SEED;
use ept_core::model::{AttentionKernel, KernelFaults, ScratchMeter};
use ept_core::verify::KernelCase;

const SIZES: [usize; 3] = [64, 256, 512];
const TILE: usize = 64;

fn kernels(c: &mut Criterion) {
    let mut group = c.benchmark_group("attention");
    group.sample_size(10);
    for n in SIZES {
        let case = KernelCase::random(&[n], n, 4, 16, SEED, 0.05);
        group.throughput(Throughput::Elements((n * n) as u64));
        for (name, kernel) in [("naive", AttentionKernel::Naive), ("tiled", AttentionKernel::Tiled { tile: TILE })] {
            group.bench_with_input(BenchmarkId::new(name, n), &case, |b, case| {
                b.iter(|| case.run(kernel, &ScratchMeter::new(), KernelFaults::default()))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
