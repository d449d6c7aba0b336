//! One-stage day-to-night domain adaptation for semantic segmentation.
//!
//! A shared relighting network and segmentation network process a labeled
//! daytime source domain and an unlabeled pair of coarsely aligned day/night
//! target domains. Training combines a light loss on the relighted images,
//! weighted cross-entropy on the source, a static loss that supervises night
//! predictions with day pseudo labels, and least-squares adversarial losses
//! from two output-space discriminators.
//!
//! The crate also ships a synthetic paired-scene generator so the whole
//! pipeline can be exercised on a desktop CPU.

pub mod adversarial;
pub mod config;
pub mod data;
mod error;
pub mod evaluation;
pub mod labels;
pub mod relight;
pub mod reweight;
pub mod segmentation;
pub mod static_supervision;
pub mod trainer;
pub mod types;

pub use config::{Config, LightDomains, StaticLossKind};
pub use error::{Error, Result};
pub use labels::LabelSet;
pub use reweight::ClassWeights;
pub use types::{Domain, ImageBatch, LabelBatch, LikelihoodMap, LossGrad, MapKind};
