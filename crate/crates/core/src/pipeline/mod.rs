//! Everything around the model: loading and scaling views, the subject
//! split, the regression head on the fused latent, metrics, the
//! hyperparameter sweep and a synthetic cohort generator.

pub mod audit;
pub mod dataset;
pub mod experiment;
pub mod grid;
pub mod head;
pub mod metrics;
pub mod scale;
pub mod split;
pub mod synth;

pub use dataset::{genotype_view_rows, load_dataset, load_views, MultiViewBatch, MultiViewDataset, View};
pub use experiment::{
    evaluate, latents_with_dropped, run_experiment, Evaluation, ExperimentConfig, ExperimentOutcome,
    ModelShape,
};
pub use grid::{grid_search, grid_to_csv, grid_to_json, view_subsets, GridResult, GridSpec};
pub use head::LinearHead;
pub use metrics::{compute_metrics, MetricsReport};
pub use scale::{minmax_scale, DatasetScaler, ScaleMode, ScaleParams};
pub use split::{split_subjects, train_test_split, SplitManifest};
pub use synth::{synth_generate, SynthCohort, SynthSpec, SynthTruth, SynthViewSpec, GENETIC_VIEW};
