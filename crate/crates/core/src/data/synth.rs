//! Procedural street scenes with paired day and night renderings.
//!
//! Each scene is an albedo image plus a label map over [`SYNTHETIC`]
//! categories. Day renderings apply a mild per-domain tint; night renderings
//! apply a fixed darkening, gamma, colour tint and additive noise to a copy
//! translated by at most `max_shift` pixels.
//!
//! [`SYNTHETIC`]: crate::labels::SYNTHETIC

use std::fs;
use std::path::Path;

use ndarray::{s, Array2, Array3};
use nightadapt_nn::exec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::io::{save_label, save_rgb};
use crate::{Error, Result};

pub const ROAD: u8 = 0;
pub const SIDEWALK: u8 = 1;
pub const BUILDING: u8 = 2;
pub const POLE: u8 = 3;
pub const VEGETATION: u8 = 4;
pub const SKY: u8 = 5;
pub const CAR: u8 = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NightStyle {
    pub gain: f32,
    pub gamma: f32,
    pub tint: [f32; 3],
    pub noise: f32,
    pub max_shift: usize,
}

impl Default for NightStyle {
    fn default() -> Self {
        Self {
            gain: 0.3,
            gamma: 1.7,
            tint: [0.8, 0.9, 1.25],
            noise: 0.02,
            max_shift: 3,
        }
    }
}

impl NightStyle {
    /// Noise-free night transform of one albedo value in channel `c`.
    pub fn apply(&self, a: f32, c: usize) -> f32 {
        self.gain * a.max(0.0).powf(self.gamma) * self.tint[c]
    }

    /// Inverse of [`NightStyle::apply`].
    pub fn invert(&self, v: f32, c: usize) -> f32 {
        (v.max(0.0) / (self.gain * self.tint[c])).powf(1.0 / self.gamma)
    }
}

/// Colour multipliers for the source and target-day renderings.
pub const SOURCE_TINT: [f32; 3] = [1.03, 1.0, 0.95];
pub const TARGET_DAY_TINT: [f32; 3] = [0.95, 0.97, 1.02];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub size: usize,
    /// Scenes per split: `n_scenes` source images, `n_scenes` day/night pairs
    /// and `max(1, n_scenes / 4)` labeled night validation images.
    pub n_scenes: usize,
    pub night: NightStyle,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            size: 64,
            n_scenes: 200,
            night: NightStyle::default(),
        }
    }
}

impl SynthConfig {
    pub fn n_val(&self) -> usize {
        (self.n_scenes / 4).max(1)
    }
}

/// A rendered scene at padded resolution.
#[derive(Clone, Debug)]
pub struct Scene {
    pub albedo: Array3<f32>,
    pub label: Array2<u8>,
}

fn jitter(rng: &mut ChaCha8Rng, base: [f32; 3], amount: f32) -> [f32; 3] {
    let g: f32 = rng.random_range(1.0 - amount..1.0 + amount);
    [base[0] * g, base[1] * g, base[2] * g]
}

fn fill(scene: &mut Scene, y: usize, x: usize, class: u8, color: [f32; 3]) {
    scene.label[[y, x]] = class;
    for c in 0..3 {
        scene.albedo[[c, y, x]] = color[c];
    }
}

/// Renders one scene of `n×n` pixels.
pub fn render_scene(rng: &mut ChaCha8Rng, n: usize) -> Scene {
    let nf = n as f32;
    let mut sc = Scene {
        albedo: Array3::zeros((3, n, n)),
        label: Array2::from_elem((n, n), SKY),
    };
    let horizon = (nf * rng.random_range(0.36..0.5)) as usize;

    // sky, brighter towards the horizon
    let sky = jitter(rng, [0.55, 0.72, 0.95], 0.06);
    for y in 0..n {
        let t = (y as f32 / horizon.max(1) as f32).min(1.0);
        let col = [sky[0] + 0.15 * t, sky[1] + 0.1 * t, sky[2]];
        for x in 0..n {
            fill(&mut sc, y, x, SKY, col);
        }
    }

    // buildings
    let n_build = rng.random_range(2..5);
    for _ in 0..n_build {
        let w = rng.random_range(nf * 0.15..nf * 0.4) as usize;
        let x0 = rng.random_range(0..n.saturating_sub(w / 2).max(1));
        let top = rng.random_range(nf * 0.05..(horizon as f32 - 3.0).max(nf * 0.06)) as usize;
        let base = jitter(rng, [0.62, 0.55, 0.5], 0.2);
        let win = [base[0] * 0.55, base[1] * 0.55, base[2] * 0.6];
        let phase = rng.random_range(0..4);
        for y in top..(horizon + 2).min(n) {
            for x in x0..(x0 + w).min(n) {
                let window = (y + phase) % 5 < 2 && (x + phase) % 4 < 2 && y + 3 < horizon;
                fill(&mut sc, y, x, BUILDING, if window { win } else { base });
            }
        }
    }

    // ground: grass everywhere, then sidewalks and road as a trapezoid
    let grass = jitter(rng, [0.3, 0.55, 0.22], 0.12);
    let road = jitter(rng, [0.34, 0.34, 0.36], 0.1);
    let walk = jitter(rng, [0.66, 0.6, 0.54], 0.08);
    let cx = nf / 2.0 + rng.random_range(-nf * 0.12..nf * 0.12);
    let bottom_half = rng.random_range(nf * 0.28..nf * 0.4);
    let ground = horizon + 1;
    let road_span = |y: usize| -> (f32, f32) {
        let t = (y.saturating_sub(ground)) as f32 / (n - ground).max(1) as f32;
        let half = 1.5 + t * bottom_half;
        (half, half * 1.3 + 1.0)
    };
    for y in ground..n {
        let (half, walk_half) = road_span(y);
        for x in 0..n {
            let dx = (x as f32 + 0.5 - cx).abs();
            if dx < half {
                let lane = dx < 0.8 && (y / 3) % 2 == 0;
                fill(&mut sc, y, x, ROAD, if lane { [0.85, 0.85, 0.8] } else { road });
            } else if dx < walk_half {
                fill(&mut sc, y, x, SIDEWALK, walk);
            } else {
                fill(&mut sc, y, x, VEGETATION, grass);
            }
        }
    }

    // tree canopies around the horizon
    let n_trees = rng.random_range(1..4);
    for _ in 0..n_trees {
        let r = rng.random_range(nf * 0.07..nf * 0.15);
        let ty = horizon as f32 - rng.random_range(0.0..r);
        let side = if rng.random_bool(0.5) { -1.0 } else { 1.0 };
        let tx = cx + side * rng.random_range(bottom_half * 0.6..nf * 0.55);
        let leaf = jitter(rng, [0.18, 0.42, 0.16], 0.15);
        for y in 0..n {
            for x in 0..n {
                let (fy, fx) = (y as f32 + 0.5 - ty, x as f32 + 0.5 - tx);
                if fy * fy + fx * fx < r * r {
                    let shade = if (x + 2 * y) % 3 == 0 { 0.8 } else { 1.0 };
                    fill(&mut sc, y, x, VEGETATION, [leaf[0] * shade, leaf[1] * shade, leaf[2] * shade]);
                }
            }
        }
    }

    // a thin pole beside the road
    if rng.random_bool(0.7) {
        let yb = rng.random_range((ground + 2).min(n - 1)..n);
        let (_, walk_half) = road_span(yb);
        let side = if rng.random_bool(0.5) { -1.0 } else { 1.0 };
        let x = (cx + side * (walk_half - 1.0)).round();
        let len = rng.random_range(10..18);
        let col = jitter(rng, [0.16, 0.16, 0.19], 0.1);
        if x >= 0.0 && (x as usize) + 1 < n {
            let x = x as usize;
            for y in yb.saturating_sub(len)..yb {
                fill(&mut sc, y, x, POLE, col);
                fill(&mut sc, y, x + 1, POLE, col);
            }
        }
    }

    // cars on the road, scaled by distance to the horizon
    let n_cars = rng.random_range(0..3);
    let palette = [[0.8, 0.12, 0.1], [0.12, 0.2, 0.75], [0.92, 0.92, 0.9], [0.9, 0.78, 0.12]];
    for _ in 0..n_cars {
        let yb = rng.random_range((ground + 4).min(n - 1)..n);
        let t = (yb - ground) as f32 / (n - ground).max(1) as f32;
        let w = (4.0 + 12.0 * t) as usize;
        let h = (w as f32 * 0.6).ceil() as usize;
        let (half, _) = road_span(yb);
        let x0 = (cx + rng.random_range(-half..half) - w as f32 / 2.0).max(0.0) as usize;
        let body = palette[rng.random_range(0..palette.len())];
        for y in yb.saturating_sub(h)..yb {
            for x in x0..(x0 + w).min(n) {
                let glass = y < yb.saturating_sub(h) + h / 3 + 1 && x > x0 && x + 1 < x0 + w;
                fill(&mut sc, y, x, CAR, if glass { [0.15, 0.18, 0.22] } else { body });
            }
        }
    }

    // fixed per-scene albedo texture
    let tex = Normal::new(0.0f32, 0.025).expect("valid std");
    for v in sc.albedo.iter_mut() {
        *v = (*v + tex.sample(rng)).clamp(0.02, 1.0);
    }
    sc
}

/// Day rendering: albedo times a per-domain tint, clamped.
pub fn render_day(albedo: &Array3<f32>, tint: [f32; 3]) -> Array3<f32> {
    let mut out = albedo.clone();
    for c in 0..3 {
        out.slice_mut(s![c, .., ..]).mapv_inplace(|v| (v * tint[c]).clamp(0.0, 1.0));
    }
    out
}

/// Night rendering with additive Gaussian noise, clamped.
pub fn render_night(albedo: &Array3<f32>, style: &NightStyle, rng: &mut ChaCha8Rng) -> Array3<f32> {
    let noise = Normal::new(0.0f32, style.noise.max(0.0)).expect("valid std");
    let mut out = albedo.clone();
    for c in 0..3 {
        for v in out.slice_mut(s![c, .., ..]).iter_mut() {
            *v = (style.apply(*v, c) + noise.sample(rng)).clamp(0.0, 1.0);
        }
    }
    out
}

fn crop3(a: &Array3<f32>, y: usize, x: usize, n: usize) -> Array3<f32> {
    a.slice(s![.., y..y + n, x..x + n]).to_owned()
}

fn crop2(a: &Array2<u8>, y: usize, x: usize, n: usize) -> Array2<u8> {
    a.slice(s![y..y + n, x..x + n]).to_owned()
}

/// One target pair: day image, night image, the shared label map at the day
/// position, and the night offset `(dy, dx)` relative to the day crop.
pub struct SynthPair {
    pub day: Array3<f32>,
    pub night: Array3<f32>,
    pub day_label: Array2<u8>,
    pub night_label: Array2<u8>,
    pub shift: (i32, i32),
}

fn scene_rng(seed: u64, split: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((split << 32) | index as u64);
    rng
}

pub fn source_sample(seed: u64, index: usize, cfg: &SynthConfig) -> (Array3<f32>, Array2<u8>) {
    let mut rng = scene_rng(seed, 0, index);
    let sc = render_scene(&mut rng, cfg.size);
    (render_day(&sc.albedo, SOURCE_TINT), sc.label)
}

pub fn target_pair(seed: u64, index: usize, cfg: &SynthConfig) -> SynthPair {
    let mut rng = scene_rng(seed, 1, index);
    let m = cfg.night.max_shift;
    let padded = cfg.size + 2 * m;
    let sc = render_scene(&mut rng, padded);
    let ms = m as i32;
    let dy = rng.random_range(-ms..=ms);
    let dx = rng.random_range(-ms..=ms);
    let (ny, nx) = ((ms + dy) as usize, (ms + dx) as usize);
    let day = render_day(&crop3(&sc.albedo, m, m, cfg.size), TARGET_DAY_TINT);
    let night = render_night(&crop3(&sc.albedo, ny, nx, cfg.size), &cfg.night, &mut rng);
    SynthPair {
        day,
        night,
        day_label: crop2(&sc.label, m, m, cfg.size),
        night_label: crop2(&sc.label, ny, nx, cfg.size),
        shift: (dy, dx),
    }
}

pub fn night_val_sample(seed: u64, index: usize, cfg: &SynthConfig) -> (Array3<f32>, Array2<u8>) {
    let mut rng = scene_rng(seed, 2, index);
    let sc = render_scene(&mut rng, cfg.size);
    (render_night(&sc.albedo, &cfg.night, &mut rng), sc.label)
}

/// Writes the four splits under `root`:
///
/// ```text
/// source/{images,labels}/NNNN.png
/// target_day/images/NNNN.png
/// target_night/images/NNNN.png
/// pairs.tsv            night<TAB>day
/// shifts.tsv           id<TAB>dy<TAB>dx
/// night_val/{images,labels}/NNNN.png
/// synth.json           generator settings
/// ```
pub fn synth_generate(root: impl AsRef<Path>, seed: u64, cfg: &SynthConfig) -> Result<()> {
    let root = root.as_ref();
    if cfg.size == 0 || cfg.size % 32 != 0 {
        return Err(Error::InvalidArgument(format!("scene size {} is not divisible by 32", cfg.size)));
    }
    if cfg.n_scenes == 0 {
        return Err(Error::InvalidArgument("at least one scene is required".into()));
    }
    for d in [
        "source/images",
        "source/labels",
        "target_day/images",
        "target_night/images",
        "night_val/images",
        "night_val/labels",
    ] {
        fs::create_dir_all(root.join(d))?;
    }
    let name = |i: usize| format!("{i:04}.png");

    let source = exec::map_range(cfg.n_scenes, |i| source_sample(seed, i, cfg));
    for (i, (img, lbl)) in source.iter().enumerate() {
        save_rgb(root.join("source/images").join(name(i)), img.view())?;
        save_label(root.join("source/labels").join(name(i)), lbl.view())?;
    }

    let pairs = exec::map_range(cfg.n_scenes, |i| target_pair(seed, i, cfg));
    let mut pairs_tsv = String::new();
    let mut shifts_tsv = String::new();
    for (i, p) in pairs.iter().enumerate() {
        save_rgb(root.join("target_day/images").join(name(i)), p.day.view())?;
        save_rgb(root.join("target_night/images").join(name(i)), p.night.view())?;
        pairs_tsv.push_str(&format!("{}\t{}\n", name(i), name(i)));
        shifts_tsv.push_str(&format!("{i:04}\t{}\t{}\n", p.shift.0, p.shift.1));
    }
    fs::write(root.join("pairs.tsv"), pairs_tsv)?;
    fs::write(root.join("shifts.tsv"), shifts_tsv)?;

    let val = exec::map_range(cfg.n_val(), |i| night_val_sample(seed, i, cfg));
    for (i, (img, lbl)) in val.iter().enumerate() {
        save_rgb(root.join("night_val/images").join(name(i)), img.view())?;
        save_label(root.join("night_val/labels").join(name(i)), lbl.view())?;
    }

    let meta = serde_json::json!({ "seed": seed, "config": cfg });
    fs::write(root.join("synth.json"), serde_json::to_string_pretty(&meta).expect("serializable"))?;
    Ok(())
}
