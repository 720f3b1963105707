use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use condcl_bench::{fixture, requests};
use condcl_core::cache::{cached_embed, cached_operator, EmbeddingCache, OperatorCache};
use condcl_core::hypernet::{condition_operator, hadamard_compose, project};
use condcl_core::EncoderProvider;

const NK_DIVISOR: usize = 12;

fn projection(c: &mut Criterion) {
    let mut group = c.benchmark_group("project");
    for nh in [64, 256, 768] {
        let f = fixture(nh, nh / NK_DIVISOR, 16, 0);
        let dense = condition_operator(&f.full, &f.conditions[0]).unwrap();
        let factored = condition_operator(&f.lowrank, &f.conditions[0]).unwrap();
        let h_s = &f.sentences[0];
        group.bench_with_input(BenchmarkId::new("dense", nh), &nh, |b, _| {
            b.iter(|| project(black_box(&dense), black_box(h_s)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("factored", nh), &nh, |b, _| {
            b.iter(|| project(black_box(&factored), black_box(h_s)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("hadamard", nh), &nh, |b, _| {
            b.iter(|| hadamard_compose(black_box(&f.conditions[0]), black_box(h_s)).unwrap())
        });
    }
    group.finish();
}

fn generation(c: &mut Criterion) {
    let mut group = c.benchmark_group("generate");
    group.sample_size(20);
    for nh in [64, 256] {
        let f = fixture(nh, nh / NK_DIVISOR, 4, 1);
        group.bench_with_input(BenchmarkId::new("full", nh), &nh, |b, _| {
            b.iter(|| condition_operator(&f.full, black_box(&f.conditions[1])).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("lowrank", nh), &nh, |b, _| {
            b.iter(|| condition_operator(&f.lowrank, black_box(&f.conditions[1])).unwrap())
        });
    }
    group.finish();
}

fn caches(c: &mut Criterion) {
    let nh = 64;
    let f = fixture(nh, nh / NK_DIVISOR, 1, 2);
    let provider = EncoderProvider::Hashing { dim: nh, seed: 2 };
    let reqs = requests(40, 5);
    let mut group = c.benchmark_group("cache_replay");
    group.throughput(Throughput::Elements(reqs.len() as u64));
    group.bench_function("tri", |b| {
        b.iter(|| {
            let cache = EmbeddingCache::new();
            for (s, cond) in &reqs {
                black_box(cached_embed(&cache, &provider, s).unwrap());
                black_box(cached_embed(&cache, &provider, cond).unwrap());
            }
        })
    });
    group.bench_function("hyper-lowrank", |b| {
        b.iter(|| {
            let sents = EmbeddingCache::new();
            let ops = OperatorCache::new();
            for (s, cond) in &reqs {
                let h = cached_embed(&sents, &provider, s).unwrap();
                let op = cached_operator(&ops, &f.lowrank, &provider, cond).unwrap();
                black_box(project(&op, &h).unwrap());
            }
        })
    });
    group.finish();
}

criterion_group!(benches, projection, generation, caches);
criterion_main!(benches);
