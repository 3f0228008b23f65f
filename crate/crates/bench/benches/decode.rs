use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use infgen_bench::{desk_fixture, DECODE_SIDES};
use infgen_core::decoder::TargetResolution;

fn decode(c: &mut Criterion) {
    let (model, z) = desk_fixture(1).expect("fixture");
    let mut group = c.benchmark_group("decode");
    group.sample_size(10);
    for side in DECODE_SIDES {
        let t = TargetResolution::new(side, side).expect("target");
        group.throughput(Throughput::Elements((side * side) as u64));
        group.bench_with_input(BenchmarkId::from_parameter(side), &t, |b, &t| {
            b.iter(|| model.decode(&z, t).expect("decode"))
        });
    }
    group.finish();
}

fn decode_tokens(c: &mut Criterion) {
    let (model, z) = desk_fixture(2).expect("fixture");
    let mut group = c.benchmark_group("decode_tokens");
    group.sample_size(10);
    for side in DECODE_SIDES {
        let t = TargetResolution::new(side, side).expect("target");
        group.bench_with_input(BenchmarkId::from_parameter(side), &t, |b, &t| {
            b.iter(|| model.decoder.decode_tokens(&z, t).expect("tokens"))
        });
    }
    group.finish();
}

fn encode(c: &mut Criterion) {
    let (model, _) = desk_fixture(3).expect("fixture");
    let image = infgen_core::training::synthetic_image(4, 64, 64).expect("image");
    c.bench_function("encode_64", |b| {
        b.iter(|| model.encode_images(std::slice::from_ref(&image)).expect("encode"))
    });
}

criterion_group!(benches, decode, decode_tokens, encode);
criterion_main!(benches);
