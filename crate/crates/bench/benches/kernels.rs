//! Hot-path benchmarks: forward projection, ramp filtering, FBP, the Rips
//! reduction, and network forward/backward.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sparseview_core::homology::{normalized_distances, rips_persistence, PointCloud};
use sparseview_core::image::{rasterize, Ellipse, EllipsePhantom};
use sparseview_core::nn::{build_network, LearnMode, NetSpec, Tensor4};
use sparseview_core::tomo::{fbp, project, ramp_filter, Geometry};

fn disk_image(n: usize) -> sparseview_core::Image {
    let phantom = EllipsePhantom::new(vec![Ellipse::disk(0.1, -0.05, 0.5, 1.0)]);
    rasterize(&phantom, n).unwrap()
}

fn bench_projection(c: &mut Criterion) {
    let mut group = c.benchmark_group("project");
    for &(n, views) in &[(64usize, 48usize), (128, 96)] {
        let img = disk_image(n);
        let geom = Geometry::standard(n, views);
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("{n}px_{views}v")),
            &(img, geom),
            |b, (img, geom)| b.iter(|| project(img, geom).unwrap()),
        );
    }
    group.finish();
}

fn bench_ramp_and_fbp(c: &mut Criterion) {
    let n = 128;
    let img = disk_image(n);
    let geom = Geometry::standard(n, 96);
    let sino = project(&img, &geom).unwrap();
    c.bench_function("ramp_filter_128px_96v", |b| {
        b.iter(|| ramp_filter(&sino).unwrap())
    });
    c.bench_function("fbp_128px_96v", |b| b.iter(|| fbp(&sino, n).unwrap()));
}

fn bench_rips(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for &n in &[16usize, 32] {
        let points: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let dm = normalized_distances(&PointCloud { dim: 8, points }).unwrap();
        c.bench_function(&format!("rips_persistence_{n}pts"), |b| {
            b.iter(|| rips_persistence(&dm, 256).unwrap())
        });
    }
}

fn bench_network(c: &mut Criterion) {
    let spec = NetSpec {
        stages: 3,
        base_channels: 8,
        multi_scale: true,
        mode: LearnMode::Residual,
    };
    let mut net = build_network(&spec, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut x = Tensor4::zeros([1, 1, 64, 64]);
    let mut y = Tensor4::zeros([1, 1, 64, 64]);
    for v in x.data.iter_mut().chain(y.data.iter_mut()) {
        *v = rng.gen_range(-1.0..1.0);
    }
    c.bench_function("net_forward_64px", |b| {
        b.iter(|| net.forward(&x, true).unwrap())
    });
    c.bench_function("net_forward_backward_64px", |b| {
        b.iter(|| net.forward_backward(&x, &y, 1e-5).unwrap())
    });
}

criterion_group!(
    benches,
    bench_projection,
    bench_ramp_and_fbp,
    bench_rips,
    bench_network
);
criterion_main!(benches);
