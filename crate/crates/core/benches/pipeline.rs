use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array4;
use nightadapt::data::synth::{source_sample, target_pair, SynthConfig};
use nightadapt::data::{class_proportions, InMemoryPairs, InMemorySplit};
use nightadapt::evaluation::evaluate_probabilities;
use nightadapt::relight::loss::light_loss;
use nightadapt::reweight::ClassWeights;
use nightadapt::trainer::{make_batch, TrainData, TrainState};
use nightadapt::{Config, LabelSet};
use nightadapt_nn::exec::{map_range, with_exec, Exec};
use nightadapt_nn::ops::softmax_channels;

const MODES: [(Exec, &str); 2] = [(Exec::Sequential, "sequential"), (Exec::Parallel, "parallel")];

fn synth() -> SynthConfig {
    SynthConfig {
        size: 64,
        n_scenes: 8,
        ..SynthConfig::default()
    }
}

fn data() -> TrainData {
    let sc = synth();
    let src: Vec<_> = (0..sc.n_scenes).map(|i| source_sample(1, i, &sc)).collect();
    let pairs: Vec<_> = (0..sc.n_scenes).map(|i| target_pair(1, i, &sc)).collect();
    TrainData {
        source: InMemorySplit {
            ids: (0..sc.n_scenes).map(|i| i.to_string()).collect(),
            images: src.iter().map(|s| s.0.clone()).collect(),
            labels: Some(src.into_iter().map(|s| s.1).collect()),
        },
        pairs: InMemoryPairs {
            ids: (0..sc.n_scenes).map(|i| i.to_string()).collect(),
            day: pairs.iter().map(|p| p.day.clone()).collect(),
            night: pairs.into_iter().map(|p| p.night).collect(),
        },
        val: None,
    }
}

fn bench_iteration(c: &mut Criterion) {
    let data = data();
    let labels = LabelSet::synthetic();
    let a = class_proportions(data.source.labels.as_ref().unwrap().iter().map(|l| l.view()), &labels).unwrap();
    let cfg = Config {
        relight_width: 8,
        seg_width: 8,
        disc_channels: [16, 32, 32, 32],
        source_crop: 64,
        target_crop: 64,
        max_iters: 1_000_000,
        ..Config::default()
    };
    let mut group = c.benchmark_group("train_iteration_64px_b2");
    group.sample_size(10);
    for (mode, name) in MODES {
        let mut st = TrainState::<f32>::new(cfg.clone(), labels.clone(), a.clone()).unwrap();
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                with_exec(mode, || {
                    let batch = make_batch(&cfg, &data, st.iteration).unwrap();
                    st.train_iteration(black_box(&batch)).unwrap()
                })
            })
        });
    }
    group.finish();
}

fn bench_light_loss(c: &mut Criterion) {
    let i = Array4::from_shape_fn((2, 3, 64, 64), |(b, c, y, x)| ((b + c + y * 3 + x * 7) % 17) as f64 / 17.0);
    let r = i.mapv(|v| 0.9 * v + 0.05);
    c.bench_function("light_loss_64px_b2", |b| {
        b.iter(|| light_loss(black_box(i.view()), black_box(r.view()), 0.4, (10.0, 1.0, 1.0)).unwrap())
    });
}

fn bench_evaluation(c: &mut Criterion) {
    let labels = LabelSet::synthetic();
    let k = labels.len();
    let n = 32;
    let probs: Vec<Array4<f32>> = (0..n)
        .map(|s| {
            let z = Array4::from_shape_fn((1, k, 64, 64), |(_, c, y, x)| ((c * 31 + y * 7 + x * 3 + s) % 11) as f32 / 3.0);
            softmax_channels(z.view())
        })
        .collect();
    let gts: Vec<_> = (0..n).map(|s| source_sample(2, s, &synth()).1).collect();
    let w = ClassWeights::from_proportions(&vec![1.0 / k as f64; k], 0.16, 1.0).unwrap();
    let mut group = c.benchmark_group("evaluate_32_images_64px");
    for (mode, name) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| with_exec(mode, || evaluate_probabilities(black_box(&probs), &gts, &labels, &w).unwrap()))
        });
    }
    group.finish();
}

fn bench_synthesis(c: &mut Criterion) {
    let sc = synth();
    let mut group = c.benchmark_group("render_16_pairs_64px");
    for (mode, name) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| with_exec(mode, || map_range(16, |i| target_pair(black_box(3), i, &sc))))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_iteration, bench_light_loss, bench_evaluation, bench_synthesis);
criterion_main!(benches);
