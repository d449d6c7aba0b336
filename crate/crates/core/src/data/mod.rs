//! Dataset ingestion and the synthetic scene generator.

pub mod index;
pub mod io;
pub mod synth;

pub use index::{
    class_proportions, load_paired_index, DatasetIndex, InMemoryPairs, InMemorySplit, PairedIndex, PairedSample,
    Record,
};
