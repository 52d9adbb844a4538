//! Dataset ingestion, deterministic splits, experiment configuration,
//! and synthetic dataset generators.

mod config;
mod split;
pub mod synth;

pub use config::{
    load_dataset, DataConfig, Dataset, EmbeddingConfig, ExperimentConfig, GammaConfig,
    KernelConfig, Merge, ModelConfig, SplitConfig, SynthSpec, TableFormat, TableSource,
    TrainingConfig,
};
pub use split::{make_split, Split, SplitSpec};
