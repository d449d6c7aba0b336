//! Confusion matrices, IoU, dataset evaluation and prediction export.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3, Array4, ArrayView2, Axis};
use nightadapt_nn::exec;
use serde::{Deserialize, Serialize};

use crate::data::io::save_color_label;
use crate::data::InMemorySplit;
use crate::labels::LabelSet;
use crate::reweight::{reweighted_argmax, ClassWeights};
use crate::{Error, Result};

/// `K×K` counts, rows are ground truth and columns predictions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Shape("confusion matrix must be square".into()));
        }
        Ok(Self {
            k,
            counts: rows.concat(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds every pixel whose ground truth is not `ignore`.
    pub fn accumulate(&mut self, pred: ArrayView2<'_, u8>, gt: ArrayView2<'_, u8>, ignore: u8) -> Result<()> {
        if pred.dim() != gt.dim() {
            return Err(Error::Shape(format!("prediction {:?} vs ground truth {:?}", pred.dim(), gt.dim())));
        }
        for (&p, &g) in pred.iter().zip(gt.iter()) {
            if g == ignore {
                continue;
            }
            let (p, g) = (p as usize, g as usize);
            if p >= self.k || g >= self.k {
                return Err(Error::InvalidArgument(format!("label {} outside [0, {})", p.max(g), self.k)));
            }
            self.counts[g * self.k + p] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.k, other.k, "merging matrices of different size");
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.k).map(|r| r.to_vec()).collect()
    }
}

/// Confusion matrix of a batch of `B×H×W` predictions.
pub fn confusion_matrix(pred: &Array3<u8>, gt: &Array3<u8>, k: usize, ignore: u8) -> Result<ConfusionMatrix> {
    if pred.dim() != gt.dim() {
        return Err(Error::Shape(format!("prediction {:?} vs ground truth {:?}", pred.dim(), gt.dim())));
    }
    let mut m = ConfusionMatrix::new(k);
    for (p, g) in pred.outer_iter().zip(gt.outer_iter()) {
        m.accumulate(p, g, ignore)?;
    }
    Ok(m)
}

/// Per-class IoU (`None` where the class is absent from both prediction and
/// ground truth) and their mean over the defined classes.
pub fn iou_from_confusion(m: &ConfusionMatrix) -> Result<(Vec<Option<f64>>, f64)> {
    let k = m.k;
    let mut ious = Vec::with_capacity(k);
    for c in 0..k {
        let tp = m.get(c, c);
        let row: u64 = (0..k).map(|j| m.get(c, j)).sum();
        let col: u64 = (0..k).map(|i| m.get(i, c)).sum();
        let den = row + col - tp;
        ious.push(if den == 0 { None } else { Some(tp as f64 / den as f64) });
    }
    let defined: Vec<f64> = ious.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::Degenerate("no class has any ground-truth or predicted pixel".into()));
    }
    let miou = defined.iter().sum::<f64>() / defined.len() as f64;
    Ok((ious, miou))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: Vec<String>,
    pub iou: Vec<Option<f64>>,
    pub miou: f64,
    pub std_test: f64,
    pub images: usize,
}

impl MetricsReport {
    pub fn from_confusion(m: &ConfusionMatrix, labels: &LabelSet, std_test: f64, images: usize) -> Result<Self> {
        let (iou, miou) = iou_from_confusion(m)?;
        Ok(Self {
            classes: labels.names().to_vec(),
            iou,
            miou,
            std_test,
            images,
        })
    }

    pub fn iou_of(&self, name: &str) -> Option<f64> {
        let k = self.classes.iter().position(|c| c == name)?;
        self.iou[k]
    }

    /// Plain-text per-class table.
    pub fn table(&self) -> String {
        let width = self.classes.iter().map(|c| c.len()).max().unwrap_or(5).max(5);
        let mut out = String::new();
        for (name, iou) in self.classes.iter().zip(&self.iou) {
            let v = iou.map(|v| format!("{:6.2}", 100.0 * v)).unwrap_or_else(|| "   n/a".into());
            out.push_str(&format!("{name:<width$}  {v}\n"));
        }
        out.push_str(&format!("{:<width$}  {:6.2}\n", "mIoU", 100.0 * self.miou));
        out
    }
}

/// Produces `1×K×H×W` class probabilities for a single `3×H×W` image.
pub type Predictor<'a> = dyn Fn(Array4<f32>) -> Result<Array4<f32>> + Sync + 'a;

/// Runs `model` on every image, in parallel when enabled.
pub fn predict_split(model: &Predictor<'_>, images: &[Array3<f32>]) -> Result<Vec<Array4<f32>>> {
    exec::map_range(images.len(), |i| model(images[i].clone().insert_axis(Axis(0))))
        .into_iter()
        .collect()
}

/// Re-weighted argmax predictions and their accumulated confusion matrix.
pub fn evaluate_probabilities(
    probs: &[Array4<f32>],
    gts: &[Array2<u8>],
    labels: &LabelSet,
    weights: &ClassWeights,
) -> Result<(ConfusionMatrix, Vec<Array2<u8>>)> {
    if probs.len() != gts.len() {
        return Err(Error::Shape(format!("{} predictions for {} labels", probs.len(), gts.len())));
    }
    if probs.is_empty() {
        return Err(Error::Degenerate("empty evaluation split".into()));
    }
    let parts: Vec<Result<(ConfusionMatrix, Array2<u8>)>> = exec::map_range(probs.len(), |i| {
        let pred = reweighted_argmax(probs[i].view(), weights)?.index_axis_move(Axis(0), 0);
        let mut m = ConfusionMatrix::new(labels.len());
        m.accumulate(pred.view(), gts[i].view(), labels.ignore_index())?;
        Ok((m, pred))
    });
    let mut total = ConfusionMatrix::new(labels.len());
    let mut preds = Vec::with_capacity(parts.len());
    for part in parts {
        let (m, p) = part?;
        total.merge(&m);
        preds.push(p);
    }
    Ok((total, preds))
}

/// Full evaluation of a labeled split. When `out` is given, writes
/// `metrics.json` and colour-coded predictions to `out/pred/<id>.png`.
pub fn evaluate_dataset(
    model: &Predictor<'_>,
    split: &InMemorySplit,
    labels: &LabelSet,
    proportions: &[f64],
    std_test: f64,
    out: Option<&Path>,
) -> Result<MetricsReport> {
    let gts = split
        .labels
        .as_ref()
        .ok_or_else(|| Error::Dataset("evaluation split has no labels".into()))?;
    let probs = predict_split(model, &split.images)?;
    let weights = ClassWeights::from_proportions(proportions, std_test, 1.0)?;
    let (m, preds) = evaluate_probabilities(&probs, gts, labels, &weights)?;
    let report = MetricsReport::from_confusion(&m, labels, std_test, split.len())?;
    if let Some(out) = out {
        fs::create_dir_all(out.join("pred"))?;
        let palette = palette(labels);
        for (id, p) in split.ids.iter().zip(&preds) {
            save_color_label(out.join("pred").join(format!("{id}.png")), p.view(), &palette)?;
        }
        let json = serde_json::to_string_pretty(&report).expect("serializable");
        fs::write(out.join("metrics.json"), json)?;
    }
    Ok(report)
}

/// mIoU for each test-time std. Probabilities are computed by the caller once.
pub fn std_sweep(
    probs: &[Array4<f32>],
    gts: &[Array2<u8>],
    labels: &LabelSet,
    proportions: &[f64],
    stds: &[f64],
) -> Result<Vec<(f64, MetricsReport)>> {
    stds.iter()
        .map(|&s| {
            let w = ClassWeights::from_proportions(proportions, s, 1.0)?;
            let (m, _) = evaluate_probabilities(probs, gts, labels, &w)?;
            Ok((s, MetricsReport::from_confusion(&m, labels, s, probs.len())?))
        })
        .collect()
}

/// `std,miou` rows.
pub fn sweep_csv(rows: &[(f64, MetricsReport)]) -> String {
    let mut out = String::from("std,miou\n");
    for (s, r) in rows {
        out.push_str(&format!("{s},{}\n", r.miou));
    }
    out
}

/// Standard colours of the urban-scene categories, by name.
pub fn class_color(name: &str) -> [u8; 3] {
    match name {
        "road" => [128, 64, 128],
        "sidewalk" => [244, 35, 232],
        "building" => [70, 70, 70],
        "wall" => [102, 102, 156],
        "fence" => [190, 153, 153],
        "pole" => [153, 153, 153],
        "traffic light" => [250, 170, 30],
        "traffic sign" => [220, 220, 0],
        "vegetation" => [107, 142, 35],
        "terrain" => [152, 251, 152],
        "sky" => [70, 130, 180],
        "person" => [220, 20, 60],
        "rider" => [255, 0, 0],
        "car" => [0, 0, 142],
        "truck" => [0, 0, 70],
        "bus" => [0, 60, 100],
        "train" => [0, 80, 100],
        "motorcycle" => [0, 0, 230],
        "bicycle" => [119, 11, 32],
        other => {
            // FNV-1a
            let mut h: u32 = 0x811c_9dc5;
            for b in other.bytes() {
                h ^= b as u32;
                h = h.wrapping_mul(0x0100_0193);
            }
            [(h >> 16) as u8, (h >> 8) as u8, h as u8]
        }
    }
}

pub fn palette(labels: &LabelSet) -> Vec<[u8; 3]> {
    labels.names().iter().map(|n| class_color(n)).collect()
}
