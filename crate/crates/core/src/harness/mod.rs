//! Experiment orchestration: configs, metrics, map images and runners.

mod config;
mod experiment;
mod metrics;
mod render;

pub use config::{ExperimentConfig, LearningRates, LrEntry, PoolConfig, SwitchConfig, TaskEntry};
pub use experiment::{
    hash_tree, no_switch_pair, pair_for, render_module_maps, run_suite, run_switch, run_switch_suite, run_task,
    train_base, CellResult, Lab, SuiteSummary, SwitchOptions, SwitchRecord, SwitchSummary,
};
pub use metrics::{auc, rgain, ta_n_auc, tgain, LearningCurve};
pub use render::{color, ppm, rasterize, render_reward_map};
