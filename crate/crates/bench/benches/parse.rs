use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use structeval::fixtures::SHAREGPT_GRAMMAR;
use structeval::{parse, Grammar};
use structeval_bench::conversation;

fn bench_parse(c: &mut Criterion) {
    let g = Grammar::load(SHAREGPT_GRAMMAR).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut group = c.benchmark_group("parse_sharegpt");
    for rounds in [1, 4, 16] {
        let text = conversation(rounds, &mut rng);
        group.throughput(Throughput::Bytes(text.len() as u64));
        group.bench_with_input(BenchmarkId::from_parameter(rounds), &text, |b, text| {
            b.iter(|| parse(&g, black_box(text)))
        });
    }
    group.finish();

    // Rejection has to scan the whole input before giving up.
    c.bench_function("parse_unstructured", |b| {
        b.iter(|| parse(&g, black_box("How are you? I'm doing well.")))
    });
}

fn bench_load(c: &mut Criterion) {
    c.bench_function("grammar_load", |b| b.iter(|| Grammar::load(black_box(SHAREGPT_GRAMMAR)).unwrap()));
}

criterion_group!(benches, bench_parse, bench_load);
criterion_main!(benches);
