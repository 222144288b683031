//! Path counting, rule scoring and augmentation throughput.

use criterion::{criterion_group, criterion_main, Criterion};
use rulekit_core::augment::{augment_pipeline, AugmentConfig};
use rulekit_core::metrics::{score_rules, FilterConfig};
use rulekit_core::paths::path_count_rows;
use rulekit_core::walk::WalkConfig;
use rulekit_core::EntityId;
use std::hint::black_box;

fn benches(c: &mut Criterion) {
    let bench = rulekit_bench::synthetic();
    let kg = &bench.kg;
    let heads: Vec<EntityId> = kg.entities().collect();
    let longest = bench.original.iter().max_by_key(|r| r.body.len()).expect("rules");

    c.bench_function("path_count_rows/all_heads", |b| {
        b.iter(|| black_box(path_count_rows(kg, &longest.body, &heads).nnz()))
    });
    c.bench_function("score_rules/original", |b| {
        b.iter(|| black_box(score_rules(kg, &bench.original, &FilterConfig::default())))
    });
    let no_walk = AugmentConfig {
        enable_random_walk: false,
        ..AugmentConfig::all()
    };
    c.bench_function("augment/abduce_invert_filter", |b| {
        b.iter(|| {
            augment_pipeline(
                &bench.original,
                kg,
                &no_walk,
                &WalkConfig::default(),
                &FilterConfig::default(),
            )
            .expect("augment")
            .len()
        })
    });
}

criterion_group! {
    name = group;
    config = Criterion::default().sample_size(20);
    targets = benches
}
criterion_main!(group);
