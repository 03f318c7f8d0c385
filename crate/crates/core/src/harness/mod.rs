//! Training, evaluation, robustness benchmark, ablations and map export.

mod config;
mod eval;
mod train;

pub use config::RunConfig;
pub use eval::{
    ablate, bench_noise, evaluate, export_maps, load_model, median, noisy_poses, AblationAxis, AblationRow, AblationSummary,
    AblationTable, NoiseRow, NoiseSetting, NoiseTable,
};
pub use train::{planned_steps, train_model, StepRecord, TrainLog};
