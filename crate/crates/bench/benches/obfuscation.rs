use std::hint::black_box;

use blindtrain::master::{local_pool, OffloadConfig, OffloadExecutor, PartitionPlan};
use blindtrain::nn::ParallelPolicy;
use blindtrain::worker::WorkerMode;
use blindtrain::{KeySpace, Rng, SecretKey, Verifier};
use blindtrain_bench::operands;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const SIZES: [usize; 3] = [32, 64, 128];

fn blinding(c: &mut Criterion) {
    let mut group = c.benchmark_group("blinding");
    for n in SIZES {
        let (a, b) = operands(n, n, n, 1);
        let key = SecretKey::generate(n, n, n, KeySpace::default(), &mut Rng::new(2));
        let (ae, be) = key.enc_pair(&a, &b).unwrap();
        let c_enc = ae.matmul(&be).unwrap();
        group.bench_with_input(BenchmarkId::new("matmul", n), &n, |bch, _| {
            bch.iter(|| black_box(&a).matmul(black_box(&b)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("keygen", n), &n, |bch, _| {
            let mut rng = Rng::new(3);
            bch.iter(|| SecretKey::generate(n, n, n, KeySpace::default(), &mut rng))
        });
        group.bench_with_input(BenchmarkId::new("enc_pair", n), &n, |bch, _| {
            bch.iter(|| key.enc_pair(black_box(&a), black_box(&b)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("dec_verify_k10", n), &n, |bch, _| {
            let mut rng = Rng::new(4);
            bch.iter(|| key.dec(black_box(&c_enc), &a, &b, Verifier::new(10), &mut rng).unwrap())
        });
    }
    group.finish();
}

fn offload(c: &mut Criterion) {
    let mut group = c.benchmark_group("offload_forward");
    group.sample_size(20);
    for workers in [1, 2, 4] {
        let mut pool = local_pool(&vec![WorkerMode::Honest; workers], 5).unwrap();
        let plan = PartitionPlan {
            layers: vec![ParallelPolicy::TensorParallel],
            n_workers: workers,
        };
        let mut exec = OffloadExecutor::new(&mut pool, plan, OffloadConfig::new(10, 6)).unwrap();
        let (w, x) = operands(128, 128, 64, 7);
        group.bench_with_input(BenchmarkId::new("tp_128x128x64", workers), &workers, |bch, _| {
            bch.iter(|| exec.offload_forward_layer(0, &w, &x, None).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, blinding, offload);
criterion_main!(benches);
