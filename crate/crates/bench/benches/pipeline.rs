//! Benchmarks for the hot paths: occlusion transforms, convolution
//! forwards, detector frame inference, and rank retrieval.

use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::{Array2, Array3, Array4};
use occlugait_core::data_model::{SilhouetteFrame, SilhouetteVideo, FRAME_SIZE};
use occlugait_core::detector::{DetectorConfig, DetectorNetwork};
use occlugait_core::evaluation::rank_retrieval;
use occlugait_core::nn::{Conv2d, Conv3d};
use occlugait_core::occlusion::{apply, sample_dynamic_spec, sample_spec};
use occlugait_core::seed;
use rand::Rng;
use std::hint::black_box;

fn blob_video(frames: usize, seed_v: u64) -> SilhouetteVideo {
    let mut rng = seed::rng(seed_v);
    let frames = (0..frames)
        .map(|_| {
            let r0 = rng.gen_range(2usize..40);
            let c0 = rng.gen_range(2usize..40);
            let px = Array2::from_shape_fn((FRAME_SIZE, FRAME_SIZE), |(r, c)| {
                u8::from(r >= r0 && r < r0 + 20 && c >= c0 && c < c0 + 12)
            });
            SilhouetteFrame::from_binary(px).unwrap()
        })
        .collect();
    SilhouetteVideo::new(frames, "s0", "q0").unwrap()
}

fn bench_occlusion(c: &mut Criterion) {
    let video = blob_video(30, 1);
    let all = (0..9).collect();
    let consistent = sample_spec(&all, 7).unwrap();
    let dynamic = sample_dynamic_spec(7);
    c.bench_function("occlusion_consistent_30f", |b| {
        b.iter(|| apply(black_box(&video), black_box(&consistent)).unwrap())
    });
    c.bench_function("occlusion_dynamic_30f", |b| {
        b.iter(|| apply(black_box(&video), black_box(&dynamic)).unwrap())
    });
}

fn bench_convs(c: &mut Criterion) {
    let mut rng = seed::rng(2);
    let conv2 = Conv2d::<f32>::new(1, 32, 3, 1, &mut rng);
    let x2 = Array3::from_shape_fn((1, 64, 64), |_| rng.gen::<f32>());
    c.bench_function("conv2d_1x64x64_to_32", |b| {
        b.iter(|| conv2.forward(black_box(&x2)))
    });
    let conv3 = Conv3d::<f32>::new(8, 16, 3, 1, &mut rng);
    let x3 = Array4::from_shape_fn((8, 10, 8, 8), |_| rng.gen::<f32>());
    c.bench_function("conv3d_8x10x8x8_to_16", |b| {
        b.iter(|| conv3.forward(black_box(&x3)))
    });
}

fn bench_detector(c: &mut Criterion) {
    let det = DetectorNetwork::<f32>::new(
        DetectorConfig {
            input_size: 64,
            conv_channels: vec![8, 16, 32],
            feature_dim: 64,
            num_classes: 9,
        },
        3,
    );
    let frame = blob_video(1, 4).frames[0].clone();
    c.bench_function("detector_forward_frame_reduced", |b| {
        b.iter(|| det.forward_frame(black_box(&frame)).unwrap())
    });
}

fn bench_retrieval(c: &mut Criterion) {
    let mut rng = seed::rng(5);
    let gen = |n: usize, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<Vec<f32>> {
        (0..n)
            .map(|_| (0..1024).map(|_| rng.gen::<f32>()).collect())
            .collect()
    };
    let gallery = gen(100, &mut rng);
    let probes = gen(100, &mut rng);
    let gal_sub: Vec<String> = (0..100).map(|i| format!("s{}", i % 25)).collect();
    let probe_sub = gal_sub.clone();
    c.bench_function("rank_retrieval_100x100_d1024", |b| {
        b.iter(|| {
            rank_retrieval(
                black_box(&probes),
                &probe_sub,
                black_box(&gallery),
                &gal_sub,
                5,
            )
            .unwrap()
        })
    });
}

criterion_group!(
    benches,
    bench_occlusion,
    bench_convs,
    bench_detector,
    bench_retrieval
);
criterion_main!(benches);
