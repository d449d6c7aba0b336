//! Training configuration, its flat `key = value` file format and validation.
//!
//! Defaults are the published settings. Desk-scale runs override the
//! architecture widths, crop sizes, iteration counts and learning rates.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Which formulation supervises the night prediction on static categories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StaticLossKind {
    /// Focal modulation by the pseudo-class probability, log of the 3×3 matched probability.
    Windowed,
    /// Modulation and log both use the 3×3 matched probability.
    Matched,
    /// Plain cross-entropy against the pseudo label.
    CrossEntropy,
    /// Standard focal loss against the pseudo label, no local window.
    Focal,
    None,
}

impl StaticLossKind {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "windowed" => Self::Windowed,
            "matched" => Self::Matched,
            "ce" => Self::CrossEntropy,
            "focal" => Self::Focal,
            "none" => Self::None,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Windowed => "windowed",
            Self::Matched => "matched",
            Self::CrossEntropy => "ce",
            Self::Focal => "focal",
            Self::None => "none",
        }
    }
}

/// Domains whose relighted output enters the light loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LightDomains {
    All,
    Targets,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub alpha_tv: f64,
    pub alpha_exp: f64,
    pub alpha_ssim: f64,
    pub beta_light: f64,
    pub beta_seg: f64,
    pub beta_static: f64,
    pub beta_adv: f64,
    pub std_train: f64,
    pub std_test: f64,
    pub reweight_avg: f64,
    pub focal_gamma: f64,

    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub poly_power: f64,
    pub max_iters: u64,
    pub disc_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub pretrain_iters: u64,
    pub pretrain_lr: f64,

    pub batch_size: usize,
    pub source_crop: usize,
    pub source_scale: (f64, f64),
    pub target_crop: usize,
    pub target_scale: (f64, f64),
    pub flip: bool,
    pub seed: u64,

    pub relight_width: usize,
    pub seg_width: usize,
    pub disc_channels: [usize; 4],
    pub adv_real: f64,
    pub adv_fake: f64,

    pub use_relight: bool,
    pub use_light_loss: bool,
    pub light_domains: LightDomains,
    pub static_loss: StaticLossKind,
    pub reweight_ce: bool,
    pub reweight_pseudo: bool,
    pub reweight_prediction: bool,
    pub pretrain: bool,

    pub checkpoint_every: u64,
    pub val_every: u64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            alpha_tv: 10.0,
            alpha_exp: 1.0,
            alpha_ssim: 1.0,
            beta_light: 0.01,
            beta_seg: 1.0,
            beta_static: 1.0,
            beta_adv: 0.01,
            std_train: 0.05,
            std_test: 0.16,
            reweight_avg: 1.0,
            focal_gamma: 1.0,

            base_lr: 2.5e-4,
            momentum: 0.9,
            weight_decay: 5e-4,
            poly_power: 0.9,
            max_iters: 35_000,
            disc_lr: 2.5e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.99,
            pretrain_iters: 150_000,
            pretrain_lr: 2.5e-4,

            batch_size: 2,
            source_crop: 512,
            source_scale: (0.5, 1.0),
            target_crop: 960,
            target_scale: (0.9, 1.1),
            flip: true,
            seed: 0,

            relight_width: 32,
            seg_width: 32,
            disc_channels: [64, 128, 256, 256],
            adv_real: 1.0,
            adv_fake: 0.0,

            use_relight: true,
            use_light_loss: true,
            light_domains: LightDomains::All,
            static_loss: StaticLossKind::Windowed,
            reweight_ce: true,
            reweight_pseudo: true,
            reweight_prediction: true,
            pretrain: true,

            checkpoint_every: 5_000,
            val_every: 0,
        }
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse::<f64>()
        .map_err(|_| Error::config(key, format!("expected a number, got {v:?}")))
}

fn parse_u64(key: &str, v: &str) -> Result<u64> {
    v.parse::<u64>()
        .map_err(|_| Error::config(key, format!("expected a non-negative integer, got {v:?}")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    parse_u64(key, v).map(|n| n as usize)
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::config(key, format!("expected true/false, got {v:?}"))),
    }
}

fn parse_pair(key: &str, v: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(Error::config(key, format!("expected `lo, hi`, got {v:?}")));
    }
    Ok((parse_f64(key, parts[0])?, parse_f64(key, parts[1])?))
}

impl Config {
    /// Reads a config file on top of the defaults.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Applies every `key = value` line of `text`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::config(
                    &format!("line {}", lineno + 1),
                    format!("expected `key = value`, got {raw:?}"),
                ));
            };
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Sets one field by its file key. Unknown keys are an error.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "alpha_tv" => self.alpha_tv = parse_f64(key, v)?,
            "alpha_exp" => self.alpha_exp = parse_f64(key, v)?,
            "alpha_ssim" => self.alpha_ssim = parse_f64(key, v)?,
            "beta_light" => self.beta_light = parse_f64(key, v)?,
            "beta_seg" => self.beta_seg = parse_f64(key, v)?,
            "beta_static" => self.beta_static = parse_f64(key, v)?,
            "beta_adv" => self.beta_adv = parse_f64(key, v)?,
            "std_train" => self.std_train = parse_f64(key, v)?,
            "std_test" => self.std_test = parse_f64(key, v)?,
            "reweight_avg" => self.reweight_avg = parse_f64(key, v)?,
            "focal_gamma" => self.focal_gamma = parse_f64(key, v)?,
            "base_lr" => self.base_lr = parse_f64(key, v)?,
            "momentum" => self.momentum = parse_f64(key, v)?,
            "weight_decay" => self.weight_decay = parse_f64(key, v)?,
            "poly_power" => self.poly_power = parse_f64(key, v)?,
            "max_iters" => self.max_iters = parse_u64(key, v)?,
            "disc_lr" => self.disc_lr = parse_f64(key, v)?,
            "adam_beta1" => self.adam_beta1 = parse_f64(key, v)?,
            "adam_beta2" => self.adam_beta2 = parse_f64(key, v)?,
            "pretrain_iters" => self.pretrain_iters = parse_u64(key, v)?,
            "pretrain_lr" => self.pretrain_lr = parse_f64(key, v)?,
            "batch_size" => self.batch_size = parse_usize(key, v)?,
            "source_crop" => self.source_crop = parse_usize(key, v)?,
            "source_scale" => self.source_scale = parse_pair(key, v)?,
            "target_crop" => self.target_crop = parse_usize(key, v)?,
            "target_scale" => self.target_scale = parse_pair(key, v)?,
            "flip" => self.flip = parse_bool(key, v)?,
            "seed" => self.seed = parse_u64(key, v)?,
            "relight_width" => self.relight_width = parse_usize(key, v)?,
            "seg_width" => self.seg_width = parse_usize(key, v)?,
            "disc_channels" => {
                let parts = v
                    .split(',')
                    .map(|p| parse_usize(key, p.trim()))
                    .collect::<Result<Vec<_>>>()?;
                self.disc_channels = parts
                    .try_into()
                    .map_err(|_| Error::config(key, "expected four comma-separated widths"))?;
            }
            "adv_real" => self.adv_real = parse_f64(key, v)?,
            "adv_fake" => self.adv_fake = parse_f64(key, v)?,
            "use_relight" => self.use_relight = parse_bool(key, v)?,
            "use_light_loss" => self.use_light_loss = parse_bool(key, v)?,
            "light_domains" => {
                self.light_domains = match v {
                    "all" => LightDomains::All,
                    "targets" => LightDomains::Targets,
                    _ => return Err(Error::config(key, "expected `all` or `targets`")),
                }
            }
            "static_loss" => {
                self.static_loss = StaticLossKind::parse(v)
                    .ok_or_else(|| Error::config(key, "expected windowed, matched, ce, focal or none"))?
            }
            "reweight_ce" => self.reweight_ce = parse_bool(key, v)?,
            "reweight_pseudo" => self.reweight_pseudo = parse_bool(key, v)?,
            "reweight_prediction" => self.reweight_prediction = parse_bool(key, v)?,
            "pretrain" => self.pretrain = parse_bool(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse_u64(key, v)?,
            "val_every" => self.val_every = parse_u64(key, v)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Checks every invariant and returns the config unchanged on success.
    /// Reports the first violation by key.
    pub fn validate(self) -> Result<Self> {
        let non_negative = [
            ("alpha_tv", self.alpha_tv),
            ("alpha_exp", self.alpha_exp),
            ("alpha_ssim", self.alpha_ssim),
            ("beta_light", self.beta_light),
            ("beta_seg", self.beta_seg),
            ("beta_static", self.beta_static),
            ("beta_adv", self.beta_adv),
            ("focal_gamma", self.focal_gamma),
            ("weight_decay", self.weight_decay),
            ("poly_power", self.poly_power),
        ];
        for (key, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(key, format!("must be a finite value >= 0, got {v}")));
            }
        }
        let positive = [
            ("std_train", self.std_train),
            ("std_test", self.std_test),
            ("reweight_avg", self.reweight_avg),
            ("base_lr", self.base_lr),
            ("disc_lr", self.disc_lr),
            ("pretrain_lr", self.pretrain_lr),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(key, format!("must be > 0, got {v}")));
            }
        }
        let unit = [
            ("momentum", self.momentum),
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ];
        for (key, v) in unit {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::config(key, format!("must lie in [0, 1), got {v}")));
            }
        }
        for (key, crop) in [("source_crop", self.source_crop), ("target_crop", self.target_crop)] {
            if crop == 0 || crop % 32 != 0 {
                return Err(Error::config(key, format!("crop not divisible by 32 ({crop})")));
            }
        }
        for (key, (lo, hi)) in [("source_scale", self.source_scale), ("target_scale", self.target_scale)] {
            if !(lo > 0.0 && lo <= hi && hi <= 2.0) {
                return Err(Error::config(key, format!("scale range must satisfy 0 < lo <= hi <= 2, got ({lo}, {hi})")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.max_iters == 0 {
            return Err(Error::config("max_iters", "must be at least 1"));
        }
        if self.relight_width == 0 || self.seg_width == 0 || self.disc_channels.contains(&0) {
            return Err(Error::config("width", "network widths must be positive"));
        }
        if self.adv_real == self.adv_fake {
            return Err(Error::config("adv_real", "source and target adversarial labels must differ"));
        }
        Ok(self)
    }

    /// The config as `key = value` lines, accepted back by [`Config::apply_text`].
    pub fn to_text(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Config {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [d0, d1, d2, d3] = self.disc_channels;
        writeln!(f, "alpha_tv = {}", self.alpha_tv)?;
        writeln!(f, "alpha_exp = {}", self.alpha_exp)?;
        writeln!(f, "alpha_ssim = {}", self.alpha_ssim)?;
        writeln!(f, "beta_light = {}", self.beta_light)?;
        writeln!(f, "beta_seg = {}", self.beta_seg)?;
        writeln!(f, "beta_static = {}", self.beta_static)?;
        writeln!(f, "beta_adv = {}", self.beta_adv)?;
        writeln!(f, "std_train = {}", self.std_train)?;
        writeln!(f, "std_test = {}", self.std_test)?;
        writeln!(f, "reweight_avg = {}", self.reweight_avg)?;
        writeln!(f, "focal_gamma = {}", self.focal_gamma)?;
        writeln!(f, "base_lr = {}", self.base_lr)?;
        writeln!(f, "momentum = {}", self.momentum)?;
        writeln!(f, "weight_decay = {}", self.weight_decay)?;
        writeln!(f, "poly_power = {}", self.poly_power)?;
        writeln!(f, "max_iters = {}", self.max_iters)?;
        writeln!(f, "disc_lr = {}", self.disc_lr)?;
        writeln!(f, "adam_beta1 = {}", self.adam_beta1)?;
        writeln!(f, "adam_beta2 = {}", self.adam_beta2)?;
        writeln!(f, "pretrain_iters = {}", self.pretrain_iters)?;
        writeln!(f, "pretrain_lr = {}", self.pretrain_lr)?;
        writeln!(f, "batch_size = {}", self.batch_size)?;
        writeln!(f, "source_crop = {}", self.source_crop)?;
        writeln!(f, "source_scale = {}, {}", self.source_scale.0, self.source_scale.1)?;
        writeln!(f, "target_crop = {}", self.target_crop)?;
        writeln!(f, "target_scale = {}, {}", self.target_scale.0, self.target_scale.1)?;
        writeln!(f, "flip = {}", self.flip)?;
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "relight_width = {}", self.relight_width)?;
        writeln!(f, "seg_width = {}", self.seg_width)?;
        writeln!(f, "disc_channels = {d0}, {d1}, {d2}, {d3}")?;
        writeln!(f, "adv_real = {}", self.adv_real)?;
        writeln!(f, "adv_fake = {}", self.adv_fake)?;
        writeln!(f, "use_relight = {}", self.use_relight)?;
        writeln!(f, "use_light_loss = {}", self.use_light_loss)?;
        writeln!(
            f,
            "light_domains = {}",
            match self.light_domains {
                LightDomains::All => "all",
                LightDomains::Targets => "targets",
            }
        )?;
        writeln!(f, "static_loss = {}", self.static_loss.name())?;
        writeln!(f, "reweight_ce = {}", self.reweight_ce)?;
        writeln!(f, "reweight_pseudo = {}", self.reweight_pseudo)?;
        writeln!(f, "reweight_prediction = {}", self.reweight_prediction)?;
        writeln!(f, "pretrain = {}", self.pretrain)?;
        writeln!(f, "checkpoint_every = {}", self.checkpoint_every)?;
        writeln!(f, "val_every = {}", self.val_every)
    }
}
