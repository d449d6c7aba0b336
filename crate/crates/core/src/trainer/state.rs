//! Network parameters, optimizer state, and the per-iteration update steps.

use ndarray::{Array3, Array4, Axis};
use nightadapt_nn::archive::Archive;
use nightadapt_nn::layers::zero_grad;
use nightadapt_nn::ops::{softmax_backward, softmax_channels};
use nightadapt_nn::optim::{Adam, Sgd};
use nightadapt_nn::{exec, Cache, Float, Layer, Mode};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::poly_lr;
use crate::adversarial::{disc_loss, gen_adv_loss, Discriminator};
use crate::config::{Config, LightDomains, StaticLossKind};
use crate::labels::LabelSet;
use crate::relight::{light_loss, RelightNet};
use crate::reweight::{clamp_absent, ClassWeights};
use crate::segmentation::{weighted_ce, DeskSegNet, SegNet};
use crate::static_supervision::{make_pseudo_label, static_loss};
use crate::types::LikelihoodMap;
use crate::{Error, Result};

const CHECKPOINT_FORMAT: &str = "nightadapt-checkpoint";

/// One training sample per domain, already augmented.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub source: Array4<T>,
    pub source_gt: Array3<u8>,
    pub day: Array4<T>,
    pub night: Array4<T>,
    /// False on padding introduced by cropping the target pair.
    pub target_valid: Array3<bool>,
}

/// Logged generator loss components.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub l_tv: f64,
    pub l_exp: f64,
    pub l_ssim: f64,
    pub l_light: f64,
    pub l_seg: f64,
    pub l_static: f64,
    pub l_adv: f64,
    pub l_total: f64,
}

impl LossBreakdown {
    /// `β1·L_light + β2·L_seg + β3·L_static + β4·L_adv`.
    pub fn total(l_light: f64, l_seg: f64, l_static: f64, l_adv: f64, beta: [f64; 4]) -> f64 {
        beta[0] * l_light + beta[1] * l_seg + beta[2] * l_static + beta[3] * l_adv
    }
}

/// Detached softmax predictions of the three domains, input to the discriminators.
#[derive(Clone, Debug)]
pub struct Predictions<T> {
    pub source: Array4<T>,
    pub day: Array4<T>,
    pub night: Array4<T>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct DiscLosses {
    pub d_day: f64,
    pub d_night: f64,
}

/// Network shapes recorded in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub classes: usize,
    pub relight_width: usize,
    pub seg_width: usize,
    pub disc_channels: [usize; 4],
}

impl Architecture {
    pub fn from_config(cfg: &Config, classes: usize) -> Self {
        Self {
            classes,
            relight_width: cfg.relight_width,
            seg_width: cfg.seg_width,
            disc_channels: cfg.disc_channels,
        }
    }
}

pub struct TrainState<T: Float = f32> {
    pub cfg: Config,
    pub labels: LabelSet,
    /// Source class proportions the weights are derived from.
    pub proportions: Vec<f64>,
    pub arch: Architecture,
    pub relight: RelightNet<T>,
    pub seg: Box<dyn SegNet<T>>,
    pub disc_day: Discriminator<T>,
    pub disc_night: Discriminator<T>,
    pub sgd: Sgd<T>,
    pub adam_day: Adam<T>,
    pub adam_night: Adam<T>,
    pub iteration: u64,
}

fn softmax<T: Float>(z: &Array4<T>) -> Array4<T> {
    softmax_channels(z.view())
}

fn add_into<T: Float>(acc: &mut Option<Array4<T>>, g: Array4<T>) {
    match acc {
        Some(a) => *a += &g,
        None => *acc = Some(g),
    }
}

fn scale<T: Float>(g: Array4<T>, s: f64) -> Array4<T> {
    let s = T::of(s);
    g.mapv(|v| v * s)
}

impl<T: Float> TrainState<T> {
    /// Fresh networks initialised from `cfg.seed`.
    pub fn new(cfg: Config, labels: LabelSet, proportions: Vec<f64>) -> Result<Self> {
        let cfg = cfg.validate()?;
        if proportions.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} class proportions for {} classes",
                proportions.len(),
                labels.len()
            )));
        }
        let arch = Architecture::from_config(&cfg, labels.len());
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(0xA11CE);
        let relight = RelightNet::new(arch.relight_width, &mut rng);
        let seg: Box<dyn SegNet<T>> = Box::new(DeskSegNet::new(arch.classes, arch.seg_width, &mut rng));
        let disc_day = Discriminator::new(arch.classes, arch.disc_channels, &mut rng);
        let disc_night = Discriminator::new(arch.classes, arch.disc_channels, &mut rng);
        Ok(Self {
            sgd: Sgd::new(cfg.momentum, cfg.weight_decay),
            adam_day: Adam::new(cfg.adam_beta1, cfg.adam_beta2),
            adam_night: Adam::new(cfg.adam_beta1, cfg.adam_beta2),
            cfg,
            labels,
            proportions,
            arch,
            relight,
            seg,
            disc_day,
            disc_night,
            iteration: 0,
        })
    }

    /// Normalised weights for training (`std_train`).
    pub fn train_weights(&self) -> ClassWeights {
        ClassWeights::from_proportions(&clamp_absent(&self.proportions), self.cfg.std_train, self.cfg.reweight_avg)
            .expect("clamped proportions are positive")
    }

    /// Normalised weights for inference; uniform when prediction re-weighting is off.
    pub fn test_weights(&self, std: f64) -> ClassWeights {
        if !self.cfg.reweight_prediction {
            return ClassWeights::uniform(self.labels.len());
        }
        ClassWeights::from_proportions(&clamp_absent(&self.proportions), std, self.cfg.reweight_avg)
            .expect("clamped proportions are positive")
    }

    fn relight_forward(&mut self, x: &Array4<T>) -> Result<(Array4<T>, Option<Cache<T>>)> {
        if self.cfg.use_relight {
            let (r, c) = self.relight.run(x.clone(), Mode::Train)?;
            Ok((r, Some(c)))
        } else {
            Ok((x.clone(), None))
        }
    }

    /// Forward and backward pass of the total generator objective. Gradients
    /// are accumulated into the relighting and segmentation parameters (and,
    /// as a side effect, the discriminators, whose gradients the caller must
    /// discard). Returns the loss breakdown and detached predictions.
    pub fn generator_pass(&mut self, batch: &Batch<T>) -> Result<(LossBreakdown, Predictions<T>)> {
        let cfg = self.cfg.clone();
        let beta = [cfg.beta_light, cfg.beta_seg, cfg.beta_static, cfg.beta_adv];
        let ignore = self.labels.ignore_index();
        let inputs = [&batch.source, &batch.day, &batch.night];

        let mut relit = Vec::with_capacity(3);
        let mut rcaches = Vec::with_capacity(3);
        let mut logits = Vec::with_capacity(3);
        let mut scaches = Vec::with_capacity(3);
        for x in inputs {
            let (r, rc) = self.relight_forward(x)?;
            let (z, sc) = self.seg.forward(r.clone(), Mode::Train)?;
            relit.push(r);
            rcaches.push(rc);
            logits.push(z);
            scaches.push(sc);
        }
        let probs: Vec<Array4<T>> = logits.iter().map(softmax).collect();
        let mut d_relit: [Option<Array4<T>>; 3] = [None, None, None];
        let mut d_probs: [Option<Array4<T>>; 3] = [None, None, None];
        let mut d_logits: [Option<Array4<T>>; 3] = [None, None, None];
        let mut out = LossBreakdown::default();

        // light loss, averaged over the participating domains
        if cfg.use_relight && cfg.use_light_loss {
            let e = batch.night.iter().map(|v| v.f64()).sum::<f64>() / batch.night.len().max(1) as f64;
            let domains: &[usize] = match cfg.light_domains {
                LightDomains::All => &[0, 1, 2],
                LightDomains::Targets => &[1, 2],
            };
            let nd = domains.len() as f64;
            let alpha = (cfg.alpha_tv, cfg.alpha_exp, cfg.alpha_ssim);
            for &d in domains {
                let (terms, g) = light_loss(inputs[d].view(), relit[d].view(), e, alpha)?;
                out.l_tv += terms.l_tv / nd;
                out.l_exp += terms.l_exp / nd;
                out.l_ssim += terms.l_ssim / nd;
                out.l_light += terms.l_light / nd;
                add_into(&mut d_relit[d], scale(g, beta[0] / nd));
            }
        }

        // supervised source loss
        let train_w = self.train_weights();
        let ce_w = if cfg.reweight_ce { train_w.w.clone() } else { vec![1.0; self.labels.len()] };
        let seg = weighted_ce(&LikelihoodMap::logits(logits[0].clone()), batch.source_gt.view(), &ce_w, ignore)?;
        out.l_seg = seg.value;
        add_into(&mut d_logits[0], scale(seg.grad, beta[1]));

        // static loss against day pseudo labels
        if cfg.static_loss != StaticLossKind::None {
            let pw = if cfg.reweight_pseudo { train_w } else { ClassWeights::uniform(self.labels.len()) };
            let pseudo = make_pseudo_label(probs[1].view(), &pw, &self.labels, Some(batch.target_valid.view()))?;
            let st = static_loss(probs[2].view(), pseudo.view(), cfg.focal_gamma, cfg.static_loss, ignore)?;
            out.l_static = st.value;
            add_into(&mut d_probs[2], scale(st.grad, beta[2]));
        }

        // adversarial loss: target predictions should look like source predictions
        if beta[3] != 0.0 {
            let (sd, cd) = self.disc_day.forward(probs[1].clone(), Mode::Train)?;
            let (sn, cn) = self.disc_night.forward(probs[2].clone(), Mode::Train)?;
            let (adv, gd, gn) = gen_adv_loss(sd.view(), sn.view(), cfg.adv_real);
            out.l_adv = adv;
            let dpd = self.disc_day.backward(cd, scale(gd, beta[3]));
            let dpn = self.disc_night.backward(cn, scale(gn, beta[3]));
            add_into(&mut d_probs[1], dpd);
            add_into(&mut d_probs[2], dpn);
        }

        out.l_total = LossBreakdown::total(out.l_light, out.l_seg, out.l_static, out.l_adv, beta);

        // backward through softmax, segmentation and relighting
        for d in (0..3).rev() {
            if let Some(dp) = d_probs[d].take() {
                add_into(&mut d_logits[d], softmax_backward(probs[d].view(), dp.view()));
            }
            let dz = d_logits[d].take().unwrap_or_else(|| Array4::zeros(logits[d].raw_dim()));
            let sc = scaches.pop().expect("one cache per domain");
            let dr = self.seg.backward(sc, dz);
            add_into(&mut d_relit[d], dr);
            let rc = rcaches.pop().expect("one cache per domain");
            if let (Some(rc), Some(g)) = (rc, d_relit[d].take()) {
                self.relight.backward(rc, g);
            }
        }

        let mut it = probs.into_iter();
        let preds = Predictions {
            source: it.next().expect("source"),
            day: it.next().expect("day"),
            night: it.next().expect("night"),
        };
        Ok((out, preds))
    }

    pub fn zero_generator_grads(&mut self) {
        zero_grad(&mut self.relight);
        zero_grad(self.seg.as_mut());
    }

    /// One SGD update of the relighting and segmentation networks at the
    /// poly learning rate. Discriminator parameters are not touched.
    /// `Ok(None)` means the batch was degenerate and the update was skipped.
    pub fn generator_step(&mut self, batch: &Batch<T>) -> Result<Option<(LossBreakdown, Predictions<T>)>> {
        self.zero_generator_grads();
        let res = self.generator_pass(batch);
        zero_grad(&mut self.disc_day);
        zero_grad(&mut self.disc_night);
        let (losses, preds) = match res {
            Ok(v) => v,
            Err(Error::Degenerate(msg)) => {
                log::warn!("iteration {}: skipping degenerate batch ({msg})", self.iteration);
                self.zero_generator_grads();
                return Ok(None);
            }
            Err(e) => return Err(e),
        };
        let lr = self.generator_lr()?;
        if self.cfg.use_relight {
            self.sgd.step(lr, "relight", &mut self.relight);
        }
        self.sgd.step(lr, "seg", self.seg.as_mut());
        Ok(Some((losses, preds)))
    }

    pub fn generator_lr(&self) -> Result<f64> {
        poly_lr(self.cfg.base_lr, self.iteration, self.cfg.max_iters, self.cfg.poly_power)
    }

    pub fn disc_lr(&self) -> Result<f64> {
        poly_lr(self.cfg.disc_lr, self.iteration, self.cfg.max_iters, self.cfg.poly_power)
    }

    /// One Adam update of each discriminator on detached predictions. The two
    /// discriminators are independent and run concurrently in parallel mode.
    pub fn discriminator_step(&mut self, preds: &Predictions<T>) -> Result<DiscLosses> {
        let lr = self.disc_lr()?;
        let (r, f) = (self.cfg.adv_real, self.cfg.adv_fake);
        let step = |d: &mut Discriminator<T>, adam: &mut Adam<T>, name: &str, tgt: &Array4<T>| -> Result<f64> {
            zero_grad(d);
            let (ss, cs) = d.forward(preds.source.clone(), Mode::Train)?;
            let (st, ct) = d.forward(tgt.clone(), Mode::Train)?;
            let (loss, gs, gt) = disc_loss(ss.view(), st.view(), r, f)?;
            d.backward(cs, gs);
            d.backward(ct, gt);
            adam.step(lr, name, d);
            Ok(loss)
        };
        let (dd, dn) = exec::join(
            || step(&mut self.disc_day, &mut self.adam_day, "disc_day", &preds.day),
            || step(&mut self.disc_night, &mut self.adam_night, "disc_night", &preds.night),
        );
        Ok(DiscLosses {
            d_day: dd?,
            d_night: dn?,
        })
    }

    /// Generator step, then discriminator step, then the counter advances.
    pub fn train_iteration(&mut self, batch: &Batch<T>) -> Result<Option<(LossBreakdown, DiscLosses)>> {
        let out = match self.generator_step(batch)? {
            Some((losses, preds)) => {
                let d = self.discriminator_step(&preds)?;
                Some((losses, d))
            }
            None => None,
        };
        self.iteration += 1;
        Ok(out)
    }

    /// Eval-mode class probabilities for a `B×3×H×W` batch.
    pub fn predict(&self, x: Array4<T>) -> Result<Array4<T>> {
        let r = if self.cfg.use_relight { self.relight.relight(x)? } else { x };
        Ok(softmax(&self.seg.infer(r)?))
    }

    /// Eval-mode relighting of a `3×H×W` image.
    pub fn relight_image(&self, img: &ndarray::Array3<T>) -> Result<ndarray::Array3<T>> {
        let r = self.relight.relight(img.clone().insert_axis(Axis(0)))?;
        Ok(r.index_axis_move(Axis(0), 0))
    }

    // ----- checkpoints -----

    pub fn to_archive(&self) -> Archive {
        let header = json!({
            "format": CHECKPOINT_FORMAT,
            "iteration": self.iteration,
            "config": self.cfg,
            "labels": self.labels,
            "proportions": self.proportions,
            "arch": self.arch,
            "adam_day_steps": self.adam_day.steps,
            "adam_night_steps": self.adam_night.steps,
        });
        let mut a = Archive::new(header);
        a.store_layer("relight", &self.relight);
        a.store_layer("seg", self.seg.as_ref());
        a.store_layer("disc_day", &self.disc_day);
        a.store_layer("disc_night", &self.disc_night);
        for (k, v) in &self.sgd.buffers {
            a.insert(format!("opt.sgd.{k}"), v);
        }
        for (tag, adam) in [("adam_day", &self.adam_day), ("adam_night", &self.adam_night)] {
            for (k, v) in &adam.first {
                a.insert(format!("opt.{tag}.m.{k}"), v);
            }
            for (k, v) in &adam.second {
                a.insert(format!("opt.{tag}.v.{k}"), v);
            }
        }
        a
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        let h = &a.header;
        if h.get("format").and_then(|v| v.as_str()) != Some(CHECKPOINT_FORMAT) {
            return Err(Error::Checkpoint("not a training checkpoint".into()));
        }
        let field = |k: &str| h.get(k).cloned().ok_or_else(|| Error::Checkpoint(format!("header lacks `{k}`")));
        let cfg: Config = parse("config", field("config")?)?;
        let labels: LabelSet = parse("labels", field("labels")?)?;
        let proportions: Vec<f64> = parse("proportions", field("proportions")?)?;
        let arch: Architecture = parse("arch", field("arch")?)?;
        let iteration: u64 = parse("iteration", field("iteration")?)?;
        let mut cfg_arch = cfg.clone();
        cfg_arch.relight_width = arch.relight_width;
        cfg_arch.seg_width = arch.seg_width;
        cfg_arch.disc_channels = arch.disc_channels;
        let mut st = Self::new(cfg_arch, labels, proportions)?;
        a.restore_layer("relight", &mut st.relight)?;
        a.restore_layer("seg", st.seg.as_mut())?;
        a.restore_layer("disc_day", &mut st.disc_day)?;
        a.restore_layer("disc_night", &mut st.disc_night)?;
        for (name, t) in &a.tensors {
            let arr = || t.mapv(T::of);
            if let Some(k) = name.strip_prefix("opt.sgd.") {
                st.sgd.buffers.insert(k.to_string(), arr());
            } else if let Some(rest) = name.strip_prefix("opt.adam_day.") {
                insert_adam(&mut st.adam_day, rest, arr());
            } else if let Some(rest) = name.strip_prefix("opt.adam_night.") {
                insert_adam(&mut st.adam_night, rest, arr());
            }
        }
        st.adam_day.steps = parse("adam_day_steps", field("adam_day_steps")?)?;
        st.adam_night.steps = parse("adam_night_steps", field("adam_night_steps")?)?;
        st.iteration = iteration;
        Ok(st)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        Ok(self.to_archive().save(path)?)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let a = Archive::load(path.as_ref()).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_archive(&a)
    }

    /// Copies segmentation weights from a source-only checkpoint.
    pub fn load_segmentation_from(&mut self, a: &Archive) -> Result<()> {
        a.restore_layer("seg", self.seg.as_mut())?;
        Ok(())
    }
}

fn parse<V: serde::de::DeserializeOwned>(k: &str, v: serde_json::Value) -> Result<V> {
    serde_json::from_value(v).map_err(|e| Error::Checkpoint(format!("header `{k}`: {e}")))
}

fn insert_adam<T: Float>(adam: &mut Adam<T>, rest: &str, v: ndarray::ArrayD<T>) {
    if let Some(k) = rest.strip_prefix("m.") {
        adam.first.insert(k.to_string(), v);
    } else if let Some(k) = rest.strip_prefix("v.") {
        adam.second.insert(k.to_string(), v);
    }
}
