use aliasfree::arch::{build_dconnear, memory_block_forward, ModelSpec};
use aliasfree::nn::{
    dilated_depthwise_conv, nearest_upsample, pointwise_conv, strided_conv, subpixel_conv, transposed_conv, Direction,
};
use aliasfree::signal::design_lowpass;
use aliasfree_bench::{bias, test_signal, weights2, weights3};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

const T: usize = 4096;

fn memory_block(c: &mut Criterion) {
    let mut g = c.benchmark_group("memory_block");
    for h in [16, 64] {
        let spec = ModelSpec { h, k1: 16, k2: 16, ..ModelSpec::default() };
        let block = build_dconnear(&spec, 0).unwrap().memory_block(0);
        let x = test_signal(h, T);
        g.bench_with_input(BenchmarkId::from_parameter(h), &x, |b, x| b.iter(|| memory_block_forward(black_box(x), &block).unwrap()));
    }
    g.finish();
}

fn convolutions(c: &mut Criterion) {
    let x = test_signal(32, T);
    let mut g = c.benchmark_group("conv");
    let w = weights2(32, 32);
    g.bench_function("pointwise_32", |b| b.iter(|| pointwise_conv(black_box(&x), &w, &bias(32)).unwrap()));
    let a = weights2(32, 16);
    g.bench_function("depthwise_k16_d4", |b| {
        b.iter(|| dilated_depthwise_conv(black_box(&x), &a, 4, Direction::History).unwrap())
    });
    let w = weights3(32, 32, 16);
    g.bench_function("strided_k16_s2", |b| b.iter(|| strided_conv(black_box(&x), &w, None, 2, None).unwrap()));
    let taps = design_lowpass(0.5, 127).unwrap();
    g.bench_function("strided_k16_s2_prefilter", |b| {
        b.iter(|| strided_conv(black_box(&x), &w, None, 2, Some(&taps)).unwrap())
    });
    let half = test_signal(32, T / 2);
    g.bench_function("transposed_k16_s2", |b| b.iter(|| transposed_conv(black_box(&half), &w, None, 2).unwrap()));
    let ws = weights3(64, 32, 16);
    g.bench_function("subpixel_k16_x2", |b| b.iter(|| subpixel_conv(black_box(&half), &ws, None, 2).unwrap()));
    g.bench_function("nearest_x2", |b| b.iter(|| nearest_upsample(black_box(&half), 2).unwrap()));
    g.finish();
}

criterion_group!(benches, memory_block, convolutions);
criterion_main!(benches);
