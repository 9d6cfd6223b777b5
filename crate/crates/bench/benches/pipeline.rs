use criterion::{criterion_group, criterion_main, Criterion};
use semfaith::intervene::build_deletion_suite;
use semfaith::metrics::{em, f1, negation_report};
use semfaith::synth::{generate_pa_items, pa_variants, DEFAULT_COLORS};
use semfaith_bench::story_corpus;
use std::collections::BTreeMap;
use std::hint::black_box;

fn interventions(c: &mut Criterion) {
    let corpus = story_corpus(200);
    c.bench_function("deletion_suite_200", |b| b.iter(|| build_deletion_suite(black_box(&corpus), None).unwrap()));
    c.bench_function("pa_corpus", |b| {
        b.iter(|| pa_variants(&generate_pa_items(black_box(&DEFAULT_COLORS)).unwrap()).unwrap())
    });
}

fn metrics(c: &mut Criterion) {
    c.bench_function("f1", |b| b.iter(|| f1(black_box("the red ball in the park"), black_box("a red ball near the park"))));
    c.bench_function("em", |b| b.iter(|| em(black_box("The Park!"), black_box("park"))));
    let answers: BTreeMap<String, String> = (0..1000)
        .map(|i| (format!("q{i}"), if i % 3 == 0 { "yes" } else { "no" }.to_string()))
        .collect();
    c.bench_function("negation_report_1000", |b| {
        b.iter(|| negation_report(&answers, &answers, &answers, black_box(&answers)).unwrap())
    });
}

criterion_group!(benches, interventions, metrics);
criterion_main!(benches);
