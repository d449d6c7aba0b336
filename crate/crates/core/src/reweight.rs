//! Class weights from source label frequencies and re-weighted argmax.

use ndarray::{Array3, ArrayView4};
use nightadapt_nn::Float;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Proportion assigned to categories missing from the whole source split.
pub const ABSENT_PROPORTION: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub w: Vec<f64>,
    pub std_used: f64,
    pub avg_used: f64,
}

impl ClassWeights {
    /// Every class weighted `1`; equivalent to a plain argmax.
    pub fn uniform(k: usize) -> Self {
        Self {
            w: vec![1.0; k],
            std_used: 0.0,
            avg_used: 1.0,
        }
    }

    /// Normalised weights from class proportions, or uniform when `std` is zero.
    pub fn from_proportions(a: &[f64], std: f64, avg: f64) -> Result<Self> {
        if std == 0.0 {
            return Ok(Self {
                w: vec![avg; a.len()],
                std_used: 0.0,
                avg_used: avg,
            });
        }
        Ok(normalize_weights(&raw_class_weights(a)?, std, avg))
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

/// `w'_k = -ln a_k`.
pub fn raw_class_weights(a: &[f64]) -> Result<Vec<f64>> {
    if a.is_empty() {
        return Err(Error::InvalidArgument("no class proportions".into()));
    }
    if let Some(k) = a.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "proportion of class {k} is {}; every class must be present",
            a[k]
        )));
    }
    let s: f64 = a.iter().sum();
    if (s - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidArgument(format!("proportions sum to {s}, expected 1")));
    }
    Ok(a.iter().map(|v| -v.ln()).collect())
}

/// Replaces zero proportions by [`ABSENT_PROPORTION`] and logs each one.
pub fn clamp_absent(a: &[f64]) -> Vec<f64> {
    a.iter()
        .enumerate()
        .map(|(k, &v)| {
            if v > 0.0 {
                v
            } else {
                log::warn!("class {k} never occurs in the source labels; using proportion {ABSENT_PROPORTION}");
                ABSENT_PROPORTION
            }
        })
        .collect()
}

/// Shifts and scales `raw` to mean `avg` and population std `std`.
/// Constant inputs map to `avg` everywhere.
pub fn normalize_weights(raw: &[f64], std: f64, avg: f64) -> ClassWeights {
    let k = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / k;
    let var = raw.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / k;
    let sd = var.sqrt();
    let w = if sd <= f64::EPSILON * mean.abs().max(1.0) {
        vec![avg; raw.len()]
    } else {
        raw.iter().map(|v| (v - mean) / sd * std + avg).collect()
    };
    ClassWeights {
        w,
        std_used: std,
        avg_used: avg,
    }
}

/// Per-pixel `argmax_k w_k·P_k`, ties to the smallest index.
pub fn reweighted_argmax<T: Float>(p: ArrayView4<'_, T>, w: &ClassWeights) -> Result<Array3<u8>> {
    let (b, k, h, wd) = p.dim();
    if w.len() != k {
        return Err(Error::Shape(format!("{} weights for {k} classes", w.len())));
    }
    if k > u8::MAX as usize {
        return Err(Error::InvalidArgument(format!("{k} classes do not fit in 8-bit labels")));
    }
    Ok(Array3::from_shape_fn((b, h, wd), |(bi, y, x)| {
        let mut best = 0usize;
        let mut best_v = f64::NEG_INFINITY;
        for c in 0..k {
            let v = w.w[c] * p[[bi, c, y, x]].f64();
            if v > best_v {
                best_v = v;
                best = c;
            }
        }
        best as u8
    }))
}
