//! Batch containers shared by every stage of the pipeline.

use ndarray::{Array3, Array4, ArrayView4};
use nightadapt_nn::ops::softmax_channels;
use nightadapt_nn::Float;

use crate::{Error, Result};

/// Which of the three training domains a batch was drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Domain {
    Source,
    TargetDay,
    TargetNight,
}

impl Domain {
    pub const ALL: [Domain; 3] = [Domain::Source, Domain::TargetDay, Domain::TargetNight];

    pub fn index(self) -> usize {
        match self {
            Domain::Source => 0,
            Domain::TargetDay => 1,
            Domain::TargetNight => 2,
        }
    }
}

/// `B×3×H×W` images with intensities nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBatch<T = f32> {
    pub data: Array4<T>,
    pub domain: Domain,
}

impl<T: Float> ImageBatch<T> {
    pub fn new(data: Array4<T>, domain: Domain) -> Result<Self> {
        if data.dim().1 != 3 {
            return Err(Error::Shape(format!("images need 3 channels, got {}", data.dim().1)));
        }
        Ok(Self { data, domain })
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        self.data.dim()
    }

    /// Mean over every pixel and channel.
    pub fn mean_intensity(&self) -> f64 {
        let n = self.data.len().max(1) as f64;
        self.data.iter().map(|v| v.f64()).sum::<f64>() / n
    }
}

/// `B×H×W` class indices; the label set's ignore index marks unlabeled pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelBatch {
    pub data: Array3<u8>,
}

impl LabelBatch {
    pub fn new(data: Array3<u8>) -> Self {
        Self { data }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.data.dim()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MapKind {
    Logits,
    Probabilities,
}

/// Per-pixel class scores `B×K×H×W`.
#[derive(Clone, Debug, PartialEq)]
pub struct LikelihoodMap<T = f32> {
    pub data: Array4<T>,
    pub kind: MapKind,
}

impl<T: Float> LikelihoodMap<T> {
    pub fn logits(data: Array4<T>) -> Self {
        Self {
            data,
            kind: MapKind::Logits,
        }
    }

    /// Wraps probabilities after checking that every pixel is a distribution.
    pub fn probabilities(data: Array4<T>) -> Result<Self> {
        check_distribution(data.view(), 1e-5)?;
        Ok(Self {
            data,
            kind: MapKind::Probabilities,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.data.dim().1
    }

    /// The probability view of this map.
    pub fn softmax(&self) -> LikelihoodMap<T> {
        match self.kind {
            MapKind::Probabilities => self.clone(),
            MapKind::Logits => LikelihoodMap {
                data: softmax_channels(self.data.view()),
                kind: MapKind::Probabilities,
            },
        }
    }
}

fn check_distribution<T: Float>(p: ArrayView4<'_, T>, tol: f64) -> Result<()> {
    let (b, k, h, w) = p.dim();
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for c in 0..k {
                    let v = p[[bi, c, y, x]].f64();
                    if v < 0.0 {
                        return Err(Error::InvalidArgument(format!(
                            "negative probability {v} at ({bi},{c},{y},{x})"
                        )));
                    }
                    s += v;
                }
                if (s - 1.0).abs() > tol {
                    return Err(Error::InvalidArgument(format!(
                        "probabilities at ({bi},{y},{x}) sum to {s}"
                    )));
                }
            }
        }
    }
    Ok(())
}

/// A scalar loss and its gradient with respect to one input.
#[derive(Clone, Debug)]
pub struct LossGrad<T> {
    pub value: f64,
    pub grad: Array4<T>,
}
