use criterion::{criterion_group, criterion_main, Criterion};

use lsfa_core::compressed_stream::{encode_gop, CodecParams, Frame};
use lsfa_core::networks::{extract_large, extract_tiny, init_weights, NetworkSpec};
use lsfa_core::tensor_ops::{bilinear_warp, conv2d, ConvKernel, FeatureMap, MotionField, MotionResolution};

fn checkered_frame(h: usize, w: usize) -> Frame {
    let mut f = Frame::zeros(h, w);
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let v = (((x / 8 + y / 8 + c) % 2) * 160 + 40) as u8;
                f.set(c, y, x, v);
            }
        }
    }
    f
}

fn bench_conv2d(c: &mut Criterion) {
    let input = FeatureMap::constant(32, 8, 8, 0.5);
    let mut kernel = ConvKernel::zeros(32, 32, 3, 3, 1, 1);
    for c in 0..32 {
        let idx = kernel.w_idx(c, c, 1, 1);
        kernel.weights[idx] = 1.0;
    }
    c.bench_function("conv2d_32x8x8_k3", |b| {
        b.iter(|| conv2d(&input, &kernel).unwrap())
    });
}

fn bench_encode_gop(c: &mut Criterion) {
    let frames: Vec<Frame> = (0..12).map(|_| checkered_frame(128, 128)).collect();
    let params = CodecParams::default();
    c.bench_function("encode_gop_128_l12", |b| {
        b.iter(|| encode_gop(&frames, &params).unwrap())
    });
}

fn bench_warp(c: &mut Criterion) {
    let feature = FeatureMap::constant(32, 8, 8, 1.0);
    let flow = MotionField::uniform(8, 8, 0.3, -0.7, MotionResolution::FeatureCells);
    c.bench_function("bilinear_warp_32x8x8", |b| {
        b.iter(|| bilinear_warp(&feature, &flow).unwrap())
    });
}

fn bench_extractors(c: &mut Criterion) {
    let w = init_weights(&NetworkSpec::default(), 3).unwrap();
    let frame = checkered_frame(128, 128);
    c.bench_function("extract_large_128", |b| {
        b.iter(|| extract_large(&frame, &w).unwrap())
    });
    c.bench_function("extract_tiny_128", |b| {
        b.iter(|| extract_tiny(&frame, &w).unwrap())
    });
}

criterion_group!(
    benches,
    bench_conv2d,
    bench_encode_gop,
    bench_warp,
    bench_extractors
);
criterion_main!(benches);
