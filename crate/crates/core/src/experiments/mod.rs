//! Experiment protocols behind the `pfn` command-line tool.

mod commands;
mod config;
mod sweep;

pub use commands::*;
pub use config::{
    log_grid, AblationSpec, BandInfoConfig, DataConfig, ExperimentConfig, FilterMode, NoiseConfig,
    TimingConfig,
};
pub use sweep::{cell_hash, CellStatus, ResumableSweep, SweepResult, SweepRow};
