use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use logitgate::harness::{generate_synthetic, SyntheticSpec};
use logitgate::selection::{calibrate_thresholds, filter_select, CalibrationMode, DistanceMetric};
use logitgate::{Architecture, ProxyParams};

fn bench_selection(c: &mut Criterion) {
    let mut group = c.benchmark_group("selection");
    group.sample_size(20);
    for n in [500, 2000] {
        let spec = SyntheticSpec {
            train_size: n,
            test_size: 4,
            ..SyntheticSpec::default()
        };
        let (train, _) = generate_synthetic(&spec, 2).unwrap();
        let proxy = ProxyParams::random(Architecture::LinearSoftmax, train.dim(), train.num_classes(), 0);
        let thresholds = calibrate_thresholds(
            &train,
            &proxy,
            0.06,
            DistanceMetric::Euclidean,
            CalibrationMode::PermissiveRun,
        )
        .unwrap();
        group.bench_with_input(BenchmarkId::new("calibrate", n), &train, |b, train| {
            b.iter(|| {
                calibrate_thresholds(
                    black_box(train),
                    &proxy,
                    0.06,
                    DistanceMetric::Euclidean,
                    CalibrationMode::PermissiveRun,
                )
                .unwrap()
            })
        });
        group.bench_with_input(BenchmarkId::new("filter", n), &train, |b, train| {
            b.iter(|| filter_select(black_box(train), &proxy, &thresholds).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_selection);
criterion_main!(benches);
