use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;

use shift_core::codec::{decode_cluster, decode_cluster_with, encode_cluster, DecodeStrategy};
use shift_core::synthetic::{sample_cluster, uniform_central};

fn codec(c: &mut Criterion) {
    let dim = 300;
    let n = 100_000;
    let p = uniform_central(dim).unwrap();
    let points = sample_cluster(&p, n, 1);

    let mut group = c.benchmark_group("codec");
    group.throughput(Throughput::Elements(n as u64));
    for bits in [2u32, 4, 8] {
        group.bench_with_input(BenchmarkId::new("encode", bits), &bits, |b, &bits| {
            b.iter(|| encode_cluster(black_box(&points), 0, 7, bits, dim).unwrap())
        });
        let messages = encode_cluster(&points, 0, 7, bits, dim).unwrap();
        group.bench_with_input(BenchmarkId::new("decode", bits), &bits, |b, &bits| {
            b.iter(|| decode_cluster(black_box(&messages), 0, 7, bits, dim).unwrap())
        });
        group.bench_with_input(
            BenchmarkId::new("decode-parallel", bits),
            &bits,
            |b, &bits| {
                b.iter(|| {
                    decode_cluster_with(
                        black_box(&messages),
                        0,
                        7,
                        bits,
                        dim,
                        DecodeStrategy::ParallelEntries,
                    )
                    .unwrap()
                })
            },
        );
    }
    group.finish();
}

criterion_group!(benches, codec);
criterion_main!(benches);
