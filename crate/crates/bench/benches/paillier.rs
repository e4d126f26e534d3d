use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fcd_bench::{keys, rng};
use fcd_core::paillier::keygen;

fn primitives(c: &mut Criterion) {
    let mut group = c.benchmark_group("paillier");
    for bits in [512, 1024, 2048] {
        let (pk, sk) = keys(bits);
        let mut r = rng(1);
        let x = pk.encode(3.25).unwrap();
        let k = pk.encode(-1.5).unwrap();
        let a = pk.encrypt(&x, &mut r);
        let b = pk.encrypt(&x, &mut r);
        group.bench_with_input(BenchmarkId::new("encrypt", bits), &bits, |bench, _| bench.iter(|| pk.encrypt(&x, &mut r)));
        group.bench_with_input(BenchmarkId::new("decrypt", bits), &bits, |bench, _| bench.iter(|| sk.decrypt(&pk, &a).unwrap()));
        group.bench_with_input(BenchmarkId::new("add", bits), &bits, |bench, _| bench.iter(|| pk.add(&a, &b).unwrap()));
        group.bench_with_input(BenchmarkId::new("scalar_mul", bits), &bits, |bench, _| {
            bench.iter(|| pk.scalar_mul(&a, &k).unwrap())
        });
    }
    group.finish();
}

fn key_generation(c: &mut Criterion) {
    let mut group = c.benchmark_group("keygen");
    group.sample_size(10);
    let mut r = rng(2);
    group.bench_function("1024", |bench| bench.iter(|| keygen(1024, &mut r).unwrap()));
    group.finish();
}

criterion_group!(benches, primitives, key_generation);
criterion_main!(benches);
