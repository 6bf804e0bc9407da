//! Losses, the training loop and experiment drivers.

pub mod experiments;
pub mod loss;
pub mod trainer;

pub use experiments::{
    default_coefficient_grid, default_fractions, fraction_split, run_coefficient_grid,
    run_combiner_ablation, run_learnable_mode_ablation, run_station_fraction_experiment,
    score_predictions, train_and_score, write_cells_csv, write_fraction_csv, CellResult,
    FractionPoint, FractionSplit, RunScore, TrainedRun,
};
pub use loss::{base_loss, hybrid_loss, hybrid_loss_node, loss_node, HybridCoefficients, HybridLoss, LossKind};
pub use trainer::{
    batch_ranges, read_log_csv, train_model, EpochRecord, TrainingConfig, TrainingLog, LOG_COLUMNS,
};
