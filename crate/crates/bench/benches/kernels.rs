use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use faintline::filters::{canny, CannyParams};
use faintline::ops::conv::{conv2d, reference};
use faintline::Tensor;
use faintline_bench::{activations, model, noisy_pattern};

fn conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv3x3");
    for &(channels, side) in &[(8usize, 64usize), (16, 64), (32, 32)] {
        let x = activations(channels, side);
        let w = Tensor::from_vec(
            [channels, channels, 3, 3],
            (0..channels * channels * 9).map(|i| ((i * 7919) % 101) as f32 / 101.0 - 0.5).collect(),
        )
        .unwrap();
        let b = Tensor::zeros([channels, 1, 1, 1]);
        let id = format!("{channels}ch_{side}px");
        group.throughput(Throughput::Elements((channels * channels * 9 * side * side) as u64));
        group.bench_with_input(BenchmarkId::new("optimized", &id), &x, |bench, x| {
            bench.iter(|| conv2d(black_box(x), &w, &b, 1, 1).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("reference", &id), &x, |bench, x| {
            bench.iter(|| reference::conv2d(black_box(x), &w, &b, 1, 1).unwrap())
        });
    }
    group.finish();
}

fn unet_forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("unet_forward_width8");
    group.sample_size(10);
    let net = model(8);
    for side in [64usize, 128, 256] {
        let x = activations(1, side);
        group.throughput(Throughput::Elements((side * side) as u64));
        group.bench_with_input(BenchmarkId::from_parameter(side), &x, |bench, x| {
            bench.iter(|| net.forward(black_box(x)).unwrap())
        });
    }
    group.finish();
}

fn canny_baseline(c: &mut Criterion) {
    let mut group = c.benchmark_group("canny");
    for side in [128usize, 256] {
        let img = noisy_pattern(side);
        group.bench_with_input(BenchmarkId::from_parameter(side), &img, |bench, img| {
            bench.iter(|| canny(black_box(img), CannyParams::default()).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, conv, unet_forward, canny_baseline);
criterion_main!(benches);
