//! Alternating generator/discriminator optimization and source-only pretraining.

pub mod augment;
mod state;

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array3, Array4, Axis};
use nightadapt_nn::archive::Archive;
use nightadapt_nn::layers::zero_grad;
use nightadapt_nn::optim::Sgd;
use nightadapt_nn::Mode;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use augment::{augment_sample, hflip, Geometry};
pub use state::{Architecture, Batch, DiscLosses, LossBreakdown, Predictions, TrainState};

use crate::config::Config;
use crate::data::{InMemoryPairs, InMemorySplit};
use crate::evaluation::{evaluate_dataset, MetricsReport};
use crate::labels::LabelSet;
use crate::segmentation::weighted_ce;
use crate::types::{Domain, LikelihoodMap};
use crate::{Error, Result};

/// `base·(1 − iter/max_iter)^power`.
pub fn poly_lr(base: f64, iter: u64, max_iter: u64, power: f64) -> Result<f64> {
    if iter > max_iter {
        return Err(Error::InvalidArgument(format!("iteration {iter} beyond schedule end {max_iter}")));
    }
    if max_iter == 0 {
        return Ok(base);
    }
    Ok(base * (1.0 - iter as f64 / max_iter as f64).powf(power))
}

fn domain_tag(d: Domain) -> u64 {
    match d {
        Domain::Source => 1,
        Domain::TargetDay => 2,
        Domain::TargetNight => 3,
    }
}

fn rng_for(seed: u64, stream: u64, word: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ word.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(stream);
    rng
}

/// Index of the `pos`-th draw from a dataset of `n` items, cycling through
/// a fresh permutation each epoch. Stateless, so a resumed run draws the
/// same samples as an uninterrupted one.
pub fn sample_index(seed: u64, domain: Domain, pos: u64, n: usize) -> usize {
    let epoch = pos / n as u64;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng_for(seed, 0x5A_0000 + domain_tag(domain), epoch));
    perm[(pos % n as u64) as usize]
}

fn augment_rng(seed: u64, iter: u64, domain: Domain, b: usize) -> ChaCha8Rng {
    rng_for(seed, 0xA6_0000 + domain_tag(domain) * 256 + b as u64, iter)
}

fn stack<T: Clone, D: ndarray::Dimension>(items: &[ndarray::Array<T, D>]) -> ndarray::Array<T, D::Larger> {
    let views: Vec<_> = items.iter().map(|a| a.view()).collect();
    ndarray::stack(Axis(0), &views).expect("equal crop sizes")
}

/// Training data held in memory.
pub struct TrainData {
    pub source: InMemorySplit,
    pub pairs: InMemoryPairs,
    /// Labeled night split for periodic validation.
    pub val: Option<InMemorySplit>,
}

impl TrainData {
    fn check(&self) -> Result<()> {
        if self.source.is_empty() {
            return Err(Error::Dataset("source split is empty".into()));
        }
        if self.source.labels.is_none() {
            return Err(Error::Dataset("source split has no labels".into()));
        }
        if self.pairs.is_empty() {
            return Err(Error::Dataset("no target day/night pairs".into()));
        }
        Ok(())
    }
}

/// Labeled source batch for iteration `iter`.
pub fn source_batch(cfg: &Config, split: &InMemorySplit, iter: u64) -> Result<(Array4<f32>, Array3<u8>)> {
    let labels = split.labels.as_ref().ok_or_else(|| Error::Dataset("source split has no labels".into()))?;
    let mut imgs = Vec::with_capacity(cfg.batch_size);
    let mut gts = Vec::with_capacity(cfg.batch_size);
    for b in 0..cfg.batch_size {
        let i = sample_index(cfg.seed, Domain::Source, iter * cfg.batch_size as u64 + b as u64, split.len());
        let mut rng = augment_rng(cfg.seed, iter, Domain::Source, b);
        let (img, gt) = augment_sample(&split.images[i], Some(&labels[i]), cfg.source_crop, cfg.source_scale, cfg.flip, &mut rng);
        imgs.push(img);
        gts.push(gt.expect("label given"));
    }
    Ok((stack(&imgs), stack(&gts)))
}

/// Full batch for iteration `iter`. Day and night images of a pair share one geometry.
pub fn make_batch(cfg: &Config, data: &TrainData, iter: u64) -> Result<Batch<f32>> {
    let (source, source_gt) = source_batch(cfg, &data.source, iter)?;
    let mut day = Vec::with_capacity(cfg.batch_size);
    let mut night = Vec::with_capacity(cfg.batch_size);
    let mut valid = Vec::with_capacity(cfg.batch_size);
    for b in 0..cfg.batch_size {
        let i = sample_index(cfg.seed, Domain::TargetDay, iter * cfg.batch_size as u64 + b as u64, data.pairs.len());
        let mut rng = augment_rng(cfg.seed, iter, Domain::TargetDay, b);
        let (_, h, w) = data.pairs.day[i].dim();
        let g = Geometry::sample(h, w, cfg.target_crop, cfg.target_scale, cfg.flip, &mut rng);
        day.push(g.apply_image(&data.pairs.day[i]));
        night.push(g.apply_image(&data.pairs.night[i]));
        valid.push(g.valid_mask());
    }
    Ok(Batch {
        source,
        source_gt,
        day: stack(&day),
        night: stack(&night),
        target_valid: stack(&valid),
    })
}

/// One line of the loss log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub iter: u64,
    pub lr: f64,
    pub losses: LossBreakdown,
    pub disc: DiscLosses,
}

pub const LOSS_HEADER: [&str; 11] = [
    "iter", "lr", "l_tv", "l_exp", "l_ssim", "l_seg", "l_static", "l_adv", "l_total", "d_d", "d_n",
];

impl LossRecord {
    pub fn fields(&self) -> Vec<String> {
        let l = &self.losses;
        let mut v = vec![self.iter.to_string()];
        v.extend(
            [self.lr, l.l_tv, l.l_exp, l.l_ssim, l.l_seg, l.l_static, l.l_adv, l.l_total, self.disc.d_day, self.disc.d_night]
                .iter()
                .map(|x| x.to_string()),
        );
        v
    }
}

/// Rewrites `path` keeping only rows with `iter < keep_below`.
fn truncate_log(path: &Path, header: &[&str], keep_below: u64) -> Result<()> {
    let mut kept = Vec::new();
    if path.exists() {
        let mut rd = csv::Reader::from_path(path)?;
        for row in rd.records() {
            let row = row?;
            let it: u64 = row.get(0).and_then(|s| s.parse().ok()).unwrap_or(u64::MAX);
            if it < keep_below {
                kept.push(row);
            }
        }
    }
    let mut wr = csv::Writer::from_path(path)?;
    wr.write_record(header)?;
    for row in &kept {
        wr.write_record(row)?;
    }
    wr.flush()?;
    Ok(())
}

fn append_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let f = fs::OpenOptions::new().append(true).open(path)?;
    Ok(csv::WriterBuilder::new().has_headers(false).from_writer(f))
}

/// Where a training run starts from.
#[derive(Default)]
pub enum Start {
    /// Fresh initialisation.
    #[default]
    Scratch,
    /// Fresh initialisation with segmentation weights from a pretraining checkpoint.
    Pretrained(PathBuf),
    /// As `Pretrained`, from an archive already in memory.
    PretrainedArchive(Archive),
    /// Continue a previous run from its checkpoint.
    Resume(PathBuf),
}

pub struct RunOptions {
    pub out_dir: PathBuf,
    pub start: Start,
    /// Stop after this iteration instead of `max_iters` (the LR schedule is unaffected).
    pub stop_at: Option<u64>,
}

pub struct RunOutcome {
    pub state: TrainState<f32>,
    /// Records written in this invocation.
    pub records: Vec<LossRecord>,
    pub validations: Vec<(u64, f64)>,
}

/// Evaluation-mode predictor over a training state.
pub fn predictor(state: &TrainState<f32>) -> impl Fn(Array4<f32>) -> Result<Array4<f32>> + Sync + '_ {
    move |x| state.predict(x)
}

/// Evaluates `state` on a labeled split with test-time weights at `std_test`.
pub fn evaluate_state(state: &TrainState<f32>, split: &InMemorySplit, std_test: f64, out: Option<&Path>) -> Result<MetricsReport> {
    let f = predictor(state);
    // std 0 yields uniform weights, i.e. a plain argmax
    let std = if state.cfg.reweight_prediction { std_test } else { 0.0 };
    let proportions = crate::reweight::clamp_absent(&state.proportions);
    evaluate_dataset(&f, split, &state.labels, &proportions, std, out)
}

/// The alternating training loop. Writes `losses.csv`, periodic
/// `latest.ckpt`, optional `val.csv` and `final.ckpt` into `opts.out_dir`.
pub fn run_training(cfg: Config, labels: LabelSet, data: &TrainData, opts: &RunOptions) -> Result<RunOutcome> {
    data.check()?;
    let proportions = crate::data::class_proportions(
        data.source.labels.as_ref().expect("checked").iter().map(|l| l.view()),
        &labels,
    )?;
    let mut state = match &opts.start {
        Start::Resume(p) => {
            let st = TrainState::<f32>::load(p)?;
            if st.cfg != cfg {
                log::warn!("resuming with the configuration stored in {}", p.display());
            }
            st
        }
        Start::Scratch => TrainState::new(cfg, labels, proportions)?,
        Start::Pretrained(p) => {
            let mut st = TrainState::new(cfg, labels, proportions)?;
            let a = Archive::load(p).map_err(|e| Error::Checkpoint(format!("{}: {e}", p.display())))?;
            st.load_segmentation_from(&a)?;
            st
        }
        Start::PretrainedArchive(a) => {
            let mut st = TrainState::new(cfg, labels, proportions)?;
            st.load_segmentation_from(a)?;
            st
        }
    };
    let cfg = state.cfg.clone();
    fs::create_dir_all(&opts.out_dir)?;
    let loss_path = opts.out_dir.join("losses.csv");
    let val_path = opts.out_dir.join("val.csv");
    truncate_log(&loss_path, &LOSS_HEADER, state.iteration)?;
    let mut log_wr = append_writer(&loss_path)?;
    let validating = cfg.val_every > 0 && data.val.is_some();
    if validating {
        truncate_log(&val_path, &["iter", "miou"], state.iteration + 1)?;
    }

    let end = opts.stop_at.unwrap_or(cfg.max_iters).min(cfg.max_iters);
    let mut records = Vec::new();
    let mut validations = Vec::new();
    while state.iteration < end {
        let iter = state.iteration;
        let batch = make_batch(&cfg, data, iter)?;
        let lr = state.generator_lr()?;
        if let Some((losses, disc)) = state.train_iteration(&batch)? {
            let rec = LossRecord { iter, lr, losses, disc };
            log_wr.write_record(rec.fields())?;
            log_wr.flush()?;
            records.push(rec);
            if iter % 100 == 0 {
                log::info!("iter {iter}: l_total {:.4} l_seg {:.4} d_d {:.4} d_n {:.4}", losses.l_total, losses.l_seg, disc.d_day, disc.d_night);
            }
        }
        let done = state.iteration;
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
            state.save(opts.out_dir.join("latest.ckpt"))?;
        }
        if validating && done % cfg.val_every == 0 {
            let rep = evaluate_state(&state, data.val.as_ref().expect("checked"), cfg.std_test, None)?;
            log::info!("iter {done}: validation mIoU {:.2}", 100.0 * rep.miou);
            let mut wr = append_writer(&val_path)?;
            wr.write_record([done.to_string(), rep.miou.to_string()])?;
            wr.flush()?;
            validations.push((done, rep.miou));
        }
    }
    if state.iteration == cfg.max_iters {
        state.save(opts.out_dir.join("final.ckpt"))?;
    } else {
        state.save(opts.out_dir.join("latest.ckpt"))?;
    }
    Ok(RunOutcome {
        state,
        records,
        validations,
    })
}

pub struct PretrainOutcome {
    pub state: TrainState<f32>,
    /// Source loss before each update.
    pub losses: Vec<f64>,
}

/// Trains the segmentation network alone on labeled source data with the
/// (re-weighted) cross-entropy for `cfg.pretrain_iters` iterations. The
/// returned state has iteration 0 and untouched relighting and
/// discriminator networks.
pub fn pretrain_source(cfg: Config, labels: LabelSet, source: &InMemorySplit) -> Result<PretrainOutcome> {
    let gts = source.labels.as_ref().ok_or_else(|| Error::Dataset("pretraining needs source labels".into()))?;
    if source.is_empty() {
        return Err(Error::Dataset("source split is empty".into()));
    }
    let proportions = crate::data::class_proportions(gts.iter().map(|l| l.view()), &labels)?;
    let mut state = TrainState::<f32>::new(cfg, labels, proportions)?;
    let cfg = state.cfg.clone();
    let weights = if cfg.reweight_ce {
        state.train_weights().w
    } else {
        vec![1.0; state.labels.len()]
    };
    let ignore = state.labels.ignore_index();
    let mut sgd = Sgd::new(cfg.momentum, cfg.weight_decay);
    let mut losses = Vec::with_capacity(cfg.pretrain_iters as usize);
    for iter in 0..cfg.pretrain_iters {
        // a distinct seed keeps pretraining draws independent of adaptation draws
        let (x, gt) = source_batch(&Config { seed: cfg.seed ^ 0x50_5245, ..cfg.clone() }, source, iter)?;
        zero_grad(state.seg.as_mut());
        let (z, cache) = state.seg.forward(x, Mode::Train)?;
        let ce = match weighted_ce(&LikelihoodMap::logits(z), gt.view(), &weights, ignore) {
            Ok(ce) => ce,
            Err(Error::Degenerate(msg)) => {
                log::warn!("pretraining iteration {iter}: skipping degenerate batch ({msg})");
                continue;
            }
            Err(e) => return Err(e),
        };
        state.seg.backward(cache, ce.grad);
        let lr = poly_lr(cfg.pretrain_lr, iter, cfg.pretrain_iters, cfg.poly_power)?;
        sgd.step(lr, "seg", state.seg.as_mut());
        losses.push(ce.value);
        if iter % 200 == 0 {
            log::info!("pretrain iter {iter}: l_seg {:.4}", ce.value);
        }
    }
    Ok(PretrainOutcome { state, losses })
}
