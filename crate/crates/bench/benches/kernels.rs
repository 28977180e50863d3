use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use imtinet_bench::{slstm_params, uniform_matrix};
use imtinet_core::model::{init_parameters, model_forward, synthetic_input, ModelConfig, Variant};
use imtinet_core::recurrent::{slstm_forward, ForgetMode};
use imtinet_core::stats::frame_stats;

fn slstm(c: &mut Criterion) {
    let mut g = c.benchmark_group("slstm_forward");
    for (t, h) in [(20, 8), (100, 128)] {
        let p = slstm_params(h, h, 1);
        let x = uniform_matrix(t, h, 1.0, 2);
        g.bench_with_input(BenchmarkId::from_parameter(format!("T{t}_H{h}")), &x, |b, x| {
            b.iter(|| slstm_forward(black_box(x.view()), &p).unwrap())
        });
    }
    g.finish();
}

fn stats(c: &mut Criterion) {
    let mut g = c.benchmark_group("frame_stats");
    for d in [8, 768] {
        let e = uniform_matrix(1, d, 3.0, 3);
        let row = e.as_slice().unwrap().to_vec();
        g.bench_with_input(BenchmarkId::from_parameter(d), &row, |b, row| {
            b.iter(|| frame_stats(black_box(row)).unwrap())
        });
    }
    g.finish();
}

fn forward(c: &mut Criterion) {
    let mut g = c.benchmark_group("model_forward");
    g.sample_size(20);
    for variant in [Variant::CnnSlstm, Variant::CnnBlstm] {
        let cfg = ModelConfig::toy(variant, ForgetMode::Exponential);
        let p = init_parameters(&cfg, 0).unwrap();
        let x = synthetic_input(&cfg, 50, 1).unwrap();
        g.bench_function(BenchmarkId::new("toy_T50", variant.as_str()), |b| {
            b.iter(|| model_forward(&cfg, &p, black_box(&x)).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, slstm, stats, forward);
criterion_main!(benches);
