//! Desk-scale synthetic experiment shared by the acceptance suite and the
//! `desk` example.

#![allow(dead_code)]

use std::path::Path;
use std::time::Instant;

use nightadapt::data::synth::{night_val_sample, source_sample, target_pair, SynthConfig};
use nightadapt::data::{InMemoryPairs, InMemorySplit};
use nightadapt::evaluation::{evaluate_probabilities, predict_split, MetricsReport};
use nightadapt::reweight::{clamp_absent, ClassWeights};
use nightadapt::trainer::{predictor, pretrain_source, run_training, RunOptions, Start, TrainData, TrainState};
use nightadapt::{Config, LabelSet, StaticLossKind};
use nightadapt_nn::exec;

pub const DESK_SEED: u64 = 0;

pub fn desk_synth() -> SynthConfig {
    SynthConfig {
        size: 64,
        n_scenes: 200,
        ..SynthConfig::default()
    }
}

pub fn desk_config() -> Config {
    let env = |k: &str, d: u64| std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d);
    Config {
        relight_width: 8,
        seg_width: 8,
        disc_channels: [16, 32, 32, 32],
        batch_size: 2,
        source_crop: 64,
        source_scale: (0.75, 1.25),
        target_crop: 64,
        target_scale: (0.9, 1.1),
        base_lr: 1e-2,
        pretrain_lr: 1e-2,
        disc_lr: 1e-4,
        max_iters: env("DESK_ITERS", 2000),
        pretrain_iters: env("DESK_PRETRAIN", 2000),
        checkpoint_every: 0,
        seed: DESK_SEED,
        ..Config::default()
    }
}

/// Synthetic splits held in memory.
pub fn desk_data(seed: u64, sc: &SynthConfig) -> (TrainData, InMemorySplit) {
    let n = sc.n_scenes;
    let src = exec::map_range(n, |i| source_sample(seed, i, sc));
    let pairs = exec::map_range(n, |i| target_pair(seed, i, sc));
    let val = exec::map_range(sc.n_val(), |i| night_val_sample(seed, i, sc));
    let ids = |k: usize| (0..k).map(|i| format!("{i:04}")).collect::<Vec<_>>();
    let source = InMemorySplit {
        ids: ids(n),
        images: src.iter().map(|s| s.0.clone()).collect(),
        labels: Some(src.into_iter().map(|s| s.1).collect()),
    };
    let pairs = InMemoryPairs {
        ids: ids(n),
        day: pairs.iter().map(|p| p.day.clone()).collect(),
        night: pairs.into_iter().map(|p| p.night).collect(),
    };
    let val = InMemorySplit {
        ids: ids(val.len()),
        images: val.iter().map(|s| s.0.clone()).collect(),
        labels: Some(val.into_iter().map(|s| s.1).collect()),
    };
    (TrainData { source, pairs, val: None }, val)
}

/// Evaluation of one trained model at several test-time stds.
pub struct Scores {
    pub by_std: Vec<(f64, MetricsReport)>,
}

impl Scores {
    pub fn at(&self, std: f64) -> &MetricsReport {
        &self.by_std.iter().find(|(s, _)| *s == std).expect("evaluated std").1
    }
}

pub fn score(state: &TrainState<f32>, val: &InMemorySplit, stds: &[f64]) -> Scores {
    let f = predictor(state);
    let probs = predict_split(&f, &val.images).unwrap();
    let gts = val.labels.as_ref().unwrap();
    let a = clamp_absent(&state.proportions);
    let by_std = stds
        .iter()
        .map(|&s| {
            let w = ClassWeights::from_proportions(&a, s, 1.0).unwrap();
            let (m, _) = evaluate_probabilities(&probs, gts, &state.labels, &w).unwrap();
            (s, MetricsReport::from_confusion(&m, &state.labels, s, probs.len()).unwrap())
        })
        .collect();
    Scores { by_std }
}

pub struct DeskResults {
    pub baseline: Scores,
    pub full: Scores,
    pub no_static: Scores,
    pub seconds: f64,
}

pub const STDS: [f64; 3] = [0.0, 0.05, 0.16];

/// Pretraining, the full model and the static-loss ablation on one seed.
/// The prediction re-weighting ablation is the full model scored with std 0.
pub fn run_desk(out: &Path) -> DeskResults {
    let t0 = Instant::now();
    let cfg = desk_config();
    let labels = LabelSet::synthetic();
    let (data, val) = desk_data(cfg.seed, &desk_synth());
    let pre = pretrain_source(cfg.clone(), labels.clone(), &data.source).unwrap();
    eprintln!(
        "pretrain: {} iters, loss {:.4} -> {:.4} ({:.0}s)",
        pre.losses.len(),
        pre.losses.first().unwrap_or(&f64::NAN),
        pre.losses.last().unwrap_or(&f64::NAN),
        t0.elapsed().as_secs_f64()
    );
    let archive = pre.state.to_archive();
    let baseline = {
        let mut st = pre.state;
        st.cfg.use_relight = false;
        score(&st, &val, &STDS)
    };
    let train = |name: &str, cfg: Config| {
        let t = Instant::now();
        let opts = RunOptions {
            out_dir: out.join(name),
            start: Start::PretrainedArchive(archive.clone()),
            stop_at: None,
        };
        let res = run_training(cfg, labels.clone(), &data, &opts).unwrap();
        let s = score(&res.state, &val, &STDS);
        eprintln!("{name}: {:.0}s", t.elapsed().as_secs_f64());
        s
    };
    let full = train("full", cfg.clone());
    let no_static = train(
        "no_static",
        Config {
            static_loss: StaticLossKind::None,
            ..cfg.clone()
        },
    );
    DeskResults {
        baseline,
        full,
        no_static,
        seconds: t0.elapsed().as_secs_f64(),
    }
}
