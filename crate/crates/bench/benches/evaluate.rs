use criterion::{criterion_group, criterion_main, Criterion};
use structeval::corpus::{AttributeLevel, AttributeSpec, CorpusRole};
use structeval::fixtures::SHAREGPT_GRAMMAR;
use structeval::metrics::{evaluate, MetricConfig, RunInfo};
use structeval::tree::{BuiltinAttribute, KeyPairPattern, Relation};
use structeval::Grammar;
use structeval_bench::corpus;

fn bench_evaluate(c: &mut Criterion) {
    let g = Grammar::load(SHAREGPT_GRAMMAR).unwrap();
    let cfg = MetricConfig {
        key_pair_patterns: vec![KeyPairPattern::new("query", "response", Relation::NextSibling)],
        attribute_specs: vec![
            AttributeSpec::builtin("num_nodes", AttributeLevel::Sample, BuiltinAttribute::NumNodes, None),
            AttributeSpec::builtin("query_len", AttributeLevel::Node, BuiltinAttribute::TokenLength, Some(&["query"])),
        ],
        ..MetricConfig::default()
    };
    let info = RunInfo {
        dataset: "bench".into(),
        method: "bench".into(),
        epsilon: None,
    };
    let real = corpus(200, 1, CorpusRole::Real);
    let synth = corpus(200, 2, CorpusRole::Synthetic);

    let mut group = c.benchmark_group("evaluate");
    group.sample_size(10);
    group.bench_function("sharegpt_200", |b| b.iter(|| evaluate(&real, &synth, &g, &cfg, &info).unwrap()));
    group.finish();
}

criterion_group!(benches, bench_evaluate);
criterion_main!(benches);
