//! Synthetic data, training, experiments and the CLI.

pub mod cli;
pub mod dataset;
pub mod experiments;
pub mod model;
pub mod optim;
pub mod train;

pub use crate::config::RunConfig;
pub use dataset::{generate_dataset, Sample, Split, ZslDataset};
pub use experiments::{ablate, dataset_for, gradcheck_model, run, RunOutcome};
pub use model::ModelParams;
pub use optim::Adam;
pub use train::{train, TrainLog};
