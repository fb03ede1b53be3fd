//! Network family: configurations, model construction and execution, model files.

pub mod config;
pub mod io;
pub mod model;

pub use config::{
    enumerate_configs, feature_widths, total_downsample, validate_config, ConfigGrid,
    NetworkConfig,
};
pub use io::{load_folded, load_model, save_folded, save_model};
pub use model::{plan_stages, Model, ProbMap, Stage, StageKind, StagePlan, TrainCache};
