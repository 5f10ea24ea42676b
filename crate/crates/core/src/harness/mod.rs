//! Desk-scale synthetic data, optimizer, training, and evaluation.

pub mod data;
pub mod optim;
pub mod train;

pub use data::{
    generate_heldout_dataset, generate_synthetic_dataset, Caption, DataConfig, EncodedSplit, Encoders, Scene,
    SyntheticDataset, CLS_TOKEN, PATCH_NOISE,
};
pub use optim::{adamw_step, AdamWHyper, OptimizerState};
pub use train::{
    argmin_lowest, distance_matrix, evaluate, grid_row, grid_tsv, strategy_grid, train, train_from, EpochHook,
    EpochRecord, GridRow, Metrics, Seeds, TrainConfig, TrainOutcome, GRID_HEADER,
};
