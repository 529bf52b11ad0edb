//! Experiment plumbing: configuration, the three comparative studies, their
//! reports, and the command-line interface.

pub mod cli;
mod config;
mod report;
mod studies;

pub use config::{
    DataConfig, ExperimentConfig, ModelConfig, PieceIdConfig, PretrainStudyConfig, Table1Config, TierConfig,
    TABLE1_VARIANTS,
};
pub use report::{tier_name, Report, ReportRow, Study, CSV_HEADER};
pub use studies::{
    audio_sequences, checkpoint_path, ensure_clean, generate_split, parallel_map, pool_anchors, pool_pairs, replay,
    run_pieceid, run_pretraining, run_study, run_table1, sheet_sequences, tier_pools, training_pairs, PieceIdOutcome,
    Split, TAG_BASELINE, TAG_PRETRAINED,
};
