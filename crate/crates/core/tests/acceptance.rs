//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any failed.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::desk;
use ndarray::{Array3, Array4};
use nightadapt::adversarial::{disc_loss, gen_adv_loss, output_size, Discriminator};
use nightadapt::evaluation::{confusion_matrix, iou_from_confusion, ConfusionMatrix};
use nightadapt::relight::loss::{exposure_loss, exposure_loss_with_patch, light_loss, ssim_loss, tv_loss, SSIM_C1, SSIM_C2};
use nightadapt::relight::RelightNet;
use nightadapt::reweight::normalize_weights;
use nightadapt::segmentation::{weighted_ce, DeskSegNet, SegNet};
use nightadapt::static_supervision::static_loss;
use nightadapt::trainer::{run_training, RunOptions, Start, TrainData};
use nightadapt::{Config, LabelSet, LikelihoodMap, MapKind, StaticLossKind};
use nightadapt_nn::ops::softmax_channels;
use nightadapt_nn::Layer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn uniform4(rng: &mut ChaCha8Rng, shape: (usize, usize, usize, usize), lo: f64, hi: f64) -> Array4<f64> {
    Array4::from_shape_simple_fn(shape, || rng.random_range(lo..hi))
}

fn random_probs(rng: &mut ChaCha8Rng, shape: (usize, usize, usize, usize)) -> Array4<f64> {
    softmax_channels(uniform4(rng, shape, -3.0, 3.0).view())
}

fn random_labels(rng: &mut ChaCha8Rng, shape: (usize, usize, usize), k: u8, ignore_rate: f64) -> Array3<u8> {
    Array3::from_shape_simple_fn(shape, || if rng.random_bool(ignore_rate) { 255 } else { rng.random_range(0..k) })
}

// ----- straight-loop oracles -----

fn oracle_tv(i: &Array4<f64>, r: &Array4<f64>) -> f64 {
    let (b, c, h, w) = i.dim();
    let mut s = 0.0;
    for bi in 0..b {
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let d = i[[bi, ci, y, x]] - r[[bi, ci, y, x]];
                    if x + 1 < w {
                        let e = i[[bi, ci, y, x + 1]] - r[[bi, ci, y, x + 1]] - d;
                        s += e * e;
                    }
                    if y + 1 < h {
                        let e = i[[bi, ci, y + 1, x]] - r[[bi, ci, y + 1, x]] - d;
                        s += e * e;
                    }
                }
            }
        }
    }
    s / i.len() as f64
}

fn oracle_exposure(r: &Array4<f64>, e: f64, patch: usize) -> f64 {
    let (b, c, h, w) = r.dim();
    let mut s = 0.0;
    let mut m = 0;
    for bi in 0..b {
        for ci in 0..c {
            for py in (0..h).step_by(patch) {
                for px in (0..w).step_by(patch) {
                    let mut acc = 0.0;
                    for y in py..py + patch {
                        for x in px..px + patch {
                            acc += r[[bi, ci, y, x]];
                        }
                    }
                    s += (acc / (patch * patch) as f64 - e).abs();
                    m += 1;
                }
            }
        }
    }
    s / m as f64
}

fn oracle_ssim(i: &Array4<f64>, r: &Array4<f64>) -> f64 {
    let (b, c, h, w) = i.dim();
    let mut s = 0.0;
    let mut n = 0;
    for bi in 0..b {
        for ci in 0..c {
            for y in 1..h - 1 {
                for x in 1..w - 1 {
                    let win = |a: &Array4<f64>| -> Vec<f64> {
                        let mut v = Vec::with_capacity(9);
                        for yy in y - 1..=y + 1 {
                            for xx in x - 1..=x + 1 {
                                v.push(a[[bi, ci, yy, xx]]);
                            }
                        }
                        v
                    };
                    let (p, q) = (win(i), win(r));
                    let mp = p.iter().sum::<f64>() / 9.0;
                    let mq = q.iter().sum::<f64>() / 9.0;
                    let vp = p.iter().map(|v| (v - mp).powi(2)).sum::<f64>() / 9.0;
                    let vq = q.iter().map(|v| (v - mq).powi(2)).sum::<f64>() / 9.0;
                    let cpq = p.iter().zip(&q).map(|(a, b)| (a - mp) * (b - mq)).sum::<f64>() / 9.0;
                    let ssim = ((2.0 * mp * mq + SSIM_C1) * (2.0 * cpq + SSIM_C2))
                        / ((mp * mp + mq * mq + SSIM_C1) * (vp + vq + SSIM_C2));
                    s += (1.0 - ssim) / 2.0;
                    n += 1;
                }
            }
        }
    }
    s / n as f64
}

fn oracle_weighted_ce(p: &Array4<f64>, gt: &Array3<u8>, w: &[f64]) -> f64 {
    let (b, k, h, wd) = p.dim();
    let mut s = 0.0;
    let mut n = 0;
    for bi in 0..b {
        for y in 0..h {
            for x in 0..wd {
                let g = gt[[bi, y, x]];
                if g == 255 {
                    continue;
                }
                n += 1;
                s += w[g as usize] * p[[bi, g as usize, y, x]].max(1e-12).ln();
            }
        }
    }
    -s / (n * k) as f64
}

fn oracle_static(p: &Array4<f64>, pseudo: &Array3<u8>, gamma: f64) -> f64 {
    let (b, k, h, w) = p.dim();
    let mut s = 0.0;
    let mut n = 0;
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                let cs = pseudo[[bi, y, x]];
                if cs == 255 {
                    continue;
                }
                n += 1;
                // max over window positions j and classes c of o(c, j)·P(c, i)
                let mut best = 0.0f64;
                for c in 0..k {
                    for yy in y as isize - 1..=y as isize + 1 {
                        for xx in x as isize - 1..=x as isize + 1 {
                            if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                                continue;
                            }
                            let o = if pseudo[[bi, yy as usize, xx as usize]] as usize == c { 1.0 } else { 0.0 };
                            best = best.max(o * p[[bi, c, y, x]]);
                        }
                    }
                }
                let q = p[[bi, cs as usize, y, x]];
                s += (1.0 - q).powf(gamma) * best.max(1e-12).ln();
            }
        }
    }
    -s / n as f64
}

fn oracle_mse(d: &Array4<f64>, t: f64) -> f64 {
    let mut s = 0.0;
    for v in d.iter() {
        s += (v - t) * (v - t);
    }
    s / d.len() as f64
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: Vec<(&str, f64)> = ["tv", "exposure", "ssim", "weighted_ce", "static", "gen_adv", "disc"]
        .iter()
        .map(|n| (*n, 0.0))
        .collect();
    let trials = 25;
    for _ in 0..trials {
        let (h, w) = (rng.random_range(3..=8), rng.random_range(3..=8));
        let b = rng.random_range(1..=2);
        let i = uniform4(&mut rng, (b, 3, h, w), 0.0, 1.0);
        let r = uniform4(&mut rng, (b, 3, h, w), -0.2, 1.2);
        let mut note = |k: usize, a: f64, o: f64| worst[k].1 = f64::max(worst[k].1, (a - o).abs());
        note(0, tv_loss(i.view(), r.view()).unwrap().value, oracle_tv(&i, &r));
        let (eh, ew) = (2 * rng.random_range(1..=4), 2 * rng.random_range(1..=4));
        let re = uniform4(&mut rng, (b, 3, eh, ew), 0.0, 1.0);
        let e = rng.random_range(0.0..1.0);
        note(1, exposure_loss_with_patch(re.view(), e, 2).unwrap().value, oracle_exposure(&re, e, 2));
        note(2, ssim_loss(i.view(), r.view()).unwrap().value, oracle_ssim(&i, &r));

        let k = rng.random_range(2..=6);
        let p = random_probs(&mut rng, (b, k, h, w));
        let gt = random_labels(&mut rng, (b, h, w), k as u8, 0.2);
        if gt.iter().all(|&g| g == 255) {
            continue;
        }
        let wts: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..1.5)).collect();
        let map = LikelihoodMap { data: p.clone(), kind: MapKind::Probabilities };
        note(3, weighted_ce(&map, gt.view(), &wts, 255).unwrap().value, oracle_weighted_ce(&p, &gt, &wts));
        let gamma = [0.0, 1.0, 2.0][rng.random_range(0..3)];
        note(4, static_loss(p.view(), gt.view(), gamma, StaticLossKind::Windowed, 255).unwrap().value, oracle_static(&p, &gt, gamma));

        let dd = uniform4(&mut rng, (b, 1, h, w), -1.0, 2.0);
        let dn = uniform4(&mut rng, (b, 1, h, w), -1.0, 2.0);
        note(5, gen_adv_loss(dd.view(), dn.view(), 1.0).0, oracle_mse(&dd, 1.0) + oracle_mse(&dn, 1.0));
        let ds = uniform4(&mut rng, (b, 1, h, w), -1.0, 2.0);
        note(6, disc_loss(ds.view(), dd.view(), 1.0, 0.0).unwrap().0, 0.5 * oracle_mse(&ds, 1.0) + 0.5 * oracle_mse(&dd, 0.0));
    }
    // the default 32×32 pooling once
    let r = uniform4(&mut rng, (1, 3, 64, 64), 0.0, 1.0);
    let exp_dev = (exposure_loss(r.view(), 0.4).unwrap().value - oracle_exposure(&r, 0.4, 32)).abs();
    let max = worst.iter().map(|w| w.1).fold(exp_dev, f64::max);
    let secs = t.elapsed().as_secs_f64();
    let detail = format!(
        "{} losses x {trials} random inputs, max abs deviation {max:.1e} ({})",
        worst.len(),
        worst.iter().map(|(n, v)| format!("{n} {v:.0e}")).collect::<Vec<_>>().join(", ")
    );
    check(max < 1e-6 && secs < 10.0, format!("{detail}, {secs:.1}s"))
}

/// Norm-wise relative error `‖a − n‖ / max(‖a‖, ‖n‖)` against central differences.
fn fd_rel_error(x: &Array4<f64>, analytic: &Array4<f64>, f: impl Fn(&Array4<f64>) -> f64) -> f64 {
    let h = 1e-5;
    let mut num = Array4::<f64>::zeros(x.raw_dim());
    let mut xp = x.clone();
    for idx in 0..x.len() {
        let orig = xp.as_slice().unwrap()[idx];
        xp.as_slice_mut().unwrap()[idx] = orig + h;
        let up = f(&xp);
        xp.as_slice_mut().unwrap()[idx] = orig - h;
        let dn = f(&xp);
        xp.as_slice_mut().unwrap()[idx] = orig;
        num.as_slice_mut().unwrap()[idx] = (up - dn) / (2.0 * h);
    }
    let diff = (analytic - &num).mapv(|v| v * v).sum().sqrt();
    let scale = analytic.mapv(|v| v * v).sum().sqrt().max(num.mapv(|v| v * v).sum().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn criterion_2() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut results: Vec<(String, f64)> = Vec::new();
    let i = uniform4(&mut rng, (1, 3, 8, 8), 0.0, 1.0);
    let r = uniform4(&mut rng, (1, 3, 8, 8), 0.0, 1.0);
    let g = tv_loss(i.view(), r.view()).unwrap().grad;
    results.push(("tv".into(), fd_rel_error(&r, &g, |r| tv_loss(i.view(), r.view()).unwrap().value)));
    let g = exposure_loss_with_patch(r.view(), 0.45, 4).unwrap().grad;
    results.push(("exposure".into(), fd_rel_error(&r, &g, |r| exposure_loss_with_patch(r.view(), 0.45, 4).unwrap().value)));
    let i1 = uniform4(&mut rng, (1, 1, 8, 8), 0.0, 1.0);
    let r1 = uniform4(&mut rng, (1, 1, 8, 8), 0.0, 1.0);
    let g = ssim_loss(i1.view(), r1.view()).unwrap().grad;
    results.push(("ssim".into(), fd_rel_error(&r1, &g, |r| ssim_loss(i1.view(), r.view()).unwrap().value)));
    // the combined loss pools exposure over 32x32 patches
    let i32 = uniform4(&mut rng, (1, 3, 32, 32), 0.0, 1.0);
    let r32 = uniform4(&mut rng, (1, 3, 32, 32), 0.0, 1.0);
    let (_, g) = light_loss(i32.view(), r32.view(), 0.4, (10.0, 1.0, 1.0)).unwrap();
    results.push((
        "light".into(),
        fd_rel_error(&r32, &g, |r| light_loss(i32.view(), r.view(), 0.4, (10.0, 1.0, 1.0)).unwrap().0.l_light),
    ));

    let k = 4;
    let z = uniform4(&mut rng, (1, k, 3, 3), -2.0, 2.0);
    let gt = random_labels(&mut rng, (1, 3, 3), k as u8, 0.1);
    let wts = [0.9, 1.1, 1.0, 0.95];
    let ce = |z: &Array4<f64>| weighted_ce(&LikelihoodMap::logits(z.clone()), gt.view(), &wts, 255).unwrap();
    results.push(("weighted_ce/logits".into(), fd_rel_error(&z, &ce(&z).grad, |z| ce(z).value)));
    let p = random_probs(&mut rng, (1, k, 3, 3));
    let cep = |p: &Array4<f64>| weighted_ce(&LikelihoodMap { data: p.clone(), kind: MapKind::Probabilities }, gt.view(), &wts, 255).unwrap();
    results.push(("weighted_ce/probs".into(), fd_rel_error(&p, &cep(&p).grad, |p| cep(p).value)));
    let pseudo = random_labels(&mut rng, (1, 3, 3), k as u8, 0.1);
    for kind in [StaticLossKind::Windowed, StaticLossKind::Matched, StaticLossKind::CrossEntropy, StaticLossKind::Focal] {
        let st = |p: &Array4<f64>| static_loss(p.view(), pseudo.view(), 1.0, kind, 255).unwrap();
        results.push((format!("static/{}", kind.name()), fd_rel_error(&p, &st(&p).grad, |p| st(p).value)));
    }
    let dd = uniform4(&mut rng, (1, 1, 4, 4), -1.0, 2.0);
    let dn = uniform4(&mut rng, (1, 1, 4, 4), -1.0, 2.0);
    let (_, gd, gn) = gen_adv_loss(dd.view(), dn.view(), 1.0);
    results.push(("gen_adv/day".into(), fd_rel_error(&dd, &gd, |d| gen_adv_loss(d.view(), dn.view(), 1.0).0)));
    results.push(("gen_adv/night".into(), fd_rel_error(&dn, &gn, |d| gen_adv_loss(dd.view(), d.view(), 1.0).0)));
    let (_, gs, gt2) = disc_loss(dd.view(), dn.view(), 1.0, 0.0).unwrap();
    results.push(("disc/src".into(), fd_rel_error(&dd, &gs, |d| disc_loss(d.view(), dn.view(), 1.0, 0.0).unwrap().0)));
    results.push(("disc/tgt".into(), fd_rel_error(&dn, &gt2, |d| disc_loss(dd.view(), d.view(), 1.0, 0.0).unwrap().0)));

    let worst = results.iter().cloned().fold(("".to_string(), 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let secs = t.elapsed().as_secs_f64();
    check(
        worst.1 < 1e-4 && secs < 30.0,
        format!("{} gradients, worst relative error {:.1e} ({}), {secs:.1}s", results.len(), worst.1, worst.0),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let k = rng.random_range(2..25);
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..10.0)).collect();
        let std = rng.random_range(0.01..0.5);
        let avg = rng.random_range(0.5..2.0);
        let w = normalize_weights(&raw, std, avg).w;
        let mean = w.iter().sum::<f64>() / k as f64;
        let sd = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / k as f64).sqrt();
        worst = worst.max((mean - avg).abs()).max((sd - std).abs());
    }
    let two = normalize_weights(&[0.0, 2.0], 0.05, 1.0).w;
    check(
        worst < 1e-9 && two == vec![0.95, 1.05],
        format!("200 random vectors, worst mean/std deviation {worst:.1e}; [0, 2] -> {two:?}"),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let d = Discriminator::<f32>::new(2, [2, 2, 2, 2], &mut rng);
    let s = d.score(Array4::zeros((1, 2, 512, 512))).unwrap();
    let relight = RelightNet::<f32>::new(4, &mut rng);
    let seg = DeskSegNet::<f32>::new(5, 4, &mut rng);
    let mut ok = s.dim() == (1, 1, 125, 125) && output_size(512) == Some(125);
    let mut shapes = Vec::new();
    for (h, w) in [(64, 64), (96, 128)] {
        let x = Array4::<f32>::zeros((1, 3, h, w));
        let r = relight.relight(x.clone()).unwrap();
        let z = seg.infer(x).unwrap();
        ok &= r.dim() == (1, 3, h, w) && z.dim() == (1, 5, h, w) && seg.num_classes() == 5;
        shapes.push(format!("{h}x{w} -> relight {:?}, seg {:?}", r.dim(), z.dim()));
    }
    check(ok, format!("disc 512x512 -> {:?}; {}", s.dim(), shapes.join("; ")))
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let gt = random_labels(&mut rng, (2, 6, 6), 4, 0.0);
    let mut onehot = Array4::<f64>::zeros((2, 4, 6, 6));
    for ((b, y, x), &c) in gt.indexed_iter() {
        onehot[[b, c as usize, y, x]] = 1.0;
    }
    let st = static_loss(onehot.view(), gt.view(), 1.0, StaticLossKind::Windowed, 255).unwrap().value;
    let img = Array4::<f64>::from_elem((1, 3, 64, 64), 0.37);
    let (light, _) = light_loss(img.view(), img.view(), 0.37, (10.0, 1.0, 1.0)).unwrap();
    let real = Array4::<f64>::ones((1, 1, 5, 5));
    let fake = Array4::<f64>::zeros((1, 1, 5, 5));
    let (d, _, _) = disc_loss(real.view(), fake.view(), 1.0, 0.0).unwrap();
    let (g, _, _) = gen_adv_loss(real.view(), real.view(), 1.0);
    check(
        st == 0.0 && light.l_light == 0.0 && d == 0.0 && g == 0.0,
        format!("static {st}, light {}, disc {d}, gen_adv {g}", light.l_light),
    )
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut mismatches = 0;
    for _ in 0..50 {
        let k = rng.random_range(2..8usize);
        let shape = (rng.random_range(1..3), rng.random_range(1..12), rng.random_range(1..12));
        let gt = random_labels(&mut rng, shape, k as u8, 0.1);
        let pred = random_labels(&mut rng, shape, k as u8, 0.0);
        let m = confusion_matrix(&pred, &gt, k, 255).unwrap();
        let got = iou_from_confusion(&m);
        // set-based IoU straight from the pixel sets
        let mut ious = Vec::new();
        for c in 0..k as u8 {
            let (mut inter, mut union) = (0u64, 0u64);
            for (p, g) in pred.iter().zip(gt.iter()) {
                if *g == 255 {
                    continue;
                }
                let (a, b) = (*p == c, *g == c);
                inter += (a && b) as u64;
                union += (a || b) as u64;
            }
            ious.push(if union == 0 { None } else { Some(inter as f64 / union as f64) });
        }
        let defined: Vec<f64> = ious.iter().flatten().copied().collect();
        match got {
            Ok((iou, miou)) if !defined.is_empty() => {
                let want = defined.iter().sum::<f64>() / defined.len() as f64;
                if iou != ious || miou != want {
                    mismatches += 1;
                }
            }
            Err(_) if defined.is_empty() => {}
            _ => mismatches += 1,
        }
    }
    let m = ConfusionMatrix::from_rows(&[vec![3, 1], vec![1, 3]]).unwrap();
    let (_, miou) = iou_from_confusion(&m).unwrap();
    check(
        mismatches == 0 && miou == 0.6,
        format!("50 random instances, {mismatches} mismatches; [[3,1],[1,3]] -> mIoU {miou}"),
    )
}

fn criteria_7_8() -> (Outcome, Outcome) {
    let dir = tempfile::tempdir().unwrap();
    let r = desk::run_desk(dir.path());
    let base = r.baseline.at(0.0).miou;
    let full = r.full.at(0.16).miou;
    let full_uniform = r.full.at(0.0).miou;
    let no_static = r.no_static.at(0.16).miou;
    let pct = |v: f64| 100.0 * v;
    let ok7 = full - base >= 0.05 && no_static < full && full_uniform < full && r.seconds <= 900.0;
    let c7 = check(
        ok7,
        format!(
            "night-val mIoU: source-only {:.2}, full {:.2} (gain {:+.2}), w/o static {:.2}, w/o prediction re-weighting {:.2}; {:.0}s",
            pct(base),
            pct(full),
            pct(full - base),
            pct(no_static),
            pct(full_uniform),
            r.seconds
        ),
    );
    let labels = LabelSet::synthetic();
    let rare = labels.index_of("pole").expect("rare class");
    let at = |s: f64| r.full.at(s).iou[rare];
    let c8 = match (at(0.16), at(0.0)) {
        (Some(hi), Some(lo)) => check(hi >= lo, format!("pole IoU {:.2} at std 0.16 vs {:.2} at std 0", pct(hi), pct(lo))),
        (hi, lo) => Err(format!("pole IoU undefined ({hi:?}, {lo:?})")),
    };
    (c7, c8)
}

fn criterion_9() -> Outcome {
    let (data, _) = desk::desk_data(9, &nightadapt::data::synth::SynthConfig {
        size: 32,
        n_scenes: 6,
        ..Default::default()
    });
    let cfg = Config {
        relight_width: 4,
        seg_width: 4,
        disc_channels: [8, 8, 8, 8],
        batch_size: 2,
        source_crop: 32,
        target_crop: 32,
        max_iters: 12,
        checkpoint_every: 5,
        seed: 9,
        ..Config::default()
    };
    let labels = LabelSet::synthetic();
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, start: Start, stop_at: Option<u64>, data: &TrainData| {
        let opts = RunOptions {
            out_dir: dir.path().join(name),
            start,
            stop_at,
        };
        run_training(cfg.clone(), labels.clone(), data, &opts).unwrap();
        std::fs::read_to_string(dir.path().join(name).join("losses.csv")).unwrap()
    };
    let a = run("a", Start::Scratch, None, &data);
    let b = run("b", Start::Scratch, None, &data);
    // interrupted after iteration 7; the last periodic checkpoint is at 5
    run("c", Start::Scratch, Some(7), &data);
    let ck = dir.path().join("resume-5.ckpt");
    let partial = run("p", Start::Scratch, Some(5), &data);
    std::fs::copy(dir.path().join("p").join("latest.ckpt"), &ck).unwrap();
    let c = run("c", Start::Resume(ck), None, &data);
    let rows = a.lines().count() - 1;
    check(
        a == b && a == c && rows == 12 && partial.lines().count() == 6,
        format!("{rows} logged iterations; repeat run identical: {}; resumed from iteration 5 identical: {}", a == b, a == c),
    )
}

fn run_guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    })
}

fn report(n: usize, name: &str, o: &Outcome) {
    match o {
        Ok(d) => println!("criterion {n} [{name}]: PASS - {d}"),
        Err(d) => println!("criterion {n} [{name}]: FAIL - {d}"),
    }
}

/// `ACCEPTANCE_ONLY=2,9` restricts the run to the listed criteria.
fn selected(n: usize) -> bool {
    match std::env::var("ACCEPTANCE_ONLY") {
        Ok(v) => v.split(',').any(|t| t.trim().parse() == Ok(n)),
        Err(_) => true,
    }
}

fn main() {
    let mut failed = 0;
    let mut record = |n: usize, name: &str, o: Outcome| {
        report(n, name, &o);
        failed += o.is_err() as usize;
    };
    let guarded: [(usize, &str, fn() -> Outcome); 6] = [
        (1, "loss oracles", criterion_1),
        (2, "gradient suite", criterion_2),
        (3, "re-weighting contract", criterion_3),
        (4, "shape contract", criterion_4),
        (5, "zero fixed points", criterion_5),
        (6, "mIoU oracle", criterion_6),
    ];
    for (n, name, f) in guarded {
        if selected(n) {
            record(n, name, run_guarded(f));
        }
    }
    if selected(7) || selected(8) {
        let (c7, c8) =
            catch_unwind(criteria_7_8).unwrap_or_else(|_| (Err("desk run panicked".into()), Err("desk run panicked".into())));
        record(7, "desk-scale adaptation", c7);
        record(8, "small-object re-weighting", c8);
    }
    if selected(9) {
        record(9, "determinism", run_guarded(criterion_9));
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all selected acceptance criteria passed");
}
