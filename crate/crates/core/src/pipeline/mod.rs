//! End-to-end pipeline: synthetic data, the key/non-key inference
//! scheduler, triplet training, the ablation harness, runtime profiling,
//! and feature visualization.

mod ablate;
mod config;
mod infer;
mod profile;
mod synth;
mod train;
mod viz;

pub use ablate::{
    default_ablation_grid, format_ablation_table, run_ablation, AblationRow, AblationVariant,
};
pub use config::{AblationFlags, PipelineConfig, TrainConfig};
pub use infer::{run_inference, TimingReport};
pub use profile::{profile, ProfileReport};
pub use synth::{generate_synthetic_dataset, SyntheticClip, SyntheticDatasetSpec};
pub use train::{train, train_with_losses, TrainContext};
pub use viz::export_feature_viz;
