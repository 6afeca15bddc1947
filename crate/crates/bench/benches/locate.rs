use criterion::{criterion_group, criterion_main, Criterion};

fn bench_locate(_c: &mut Criterion) {}

criterion_group!(benches, bench_locate);
criterion_main!(benches);
