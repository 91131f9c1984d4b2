use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use masc::detections::nms;
use masc::geometry::BBox;
use masc::orientation::radon_variance_downsampled;
use masc::pipeline::{count_stage, CountingConfig, OrientationSource};
use masc::raster::{classical_detect, exg, ClassicalConfig};
use masc::rawframe::{consensus, cumulative_chain, project_all, DEFAULT_PIXEL_BUDGET};
use masc_bench::{field, flight, random_boxes};

fn bench_nms(c: &mut Criterion) {
    let mut group = c.benchmark_group("nms");
    for n in [500usize, 2000, 8000] {
        let dets = random_boxes(n, 2000.0, 1);
        group.bench_with_input(BenchmarkId::from_parameter(n), &dets, |b, dets| {
            b.iter(|| nms(black_box(dets), 0.25, 0.25))
        });
    }
    group.finish();
}

fn bench_raw_frames(c: &mut Criterion) {
    let f = field(3, 6, 30);
    let fl = flight(&f, 400, 200);
    c.bench_function("raw/chain_project_consensus", |b| {
        b.iter(|| {
            let chain = cumulative_chain(black_box(&fl.frames)).unwrap();
            let scene = project_all(&fl.frames, &chain, DEFAULT_PIXEL_BUDGET).unwrap();
            consensus(&scene, 0.25, 0.25)
        })
    });
}

fn bench_counting(c: &mut Criterion) {
    let f = field(3, 4, 20);
    let extent = BBox::new(0.0, 0.0, f.image.width() as f64, f.image.height() as f64);
    let cfg = CountingConfig::default();
    c.bench_function("count/fixed_theta", |b| {
        b.iter(|| count_stage(black_box(&f.detections), &extent, OrientationSource::Fixed(90.0), &cfg).unwrap())
    });
    let map = exg(&f.image).unwrap();
    c.bench_function("count/radon_orientation", |b| {
        b.iter(|| radon_variance_downsampled(black_box(&map), 128).unwrap())
    });
}

fn bench_classical(c: &mut Criterion) {
    let f = field(1, 4, 12);
    let cfg = ClassicalConfig::default();
    c.bench_function("classical/detect_field", |b| {
        b.iter(|| classical_detect(black_box(&f.image), &cfg).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = bench_nms, bench_raw_frames, bench_counting, bench_classical
}
criterion_main!(benches);
