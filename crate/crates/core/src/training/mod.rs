//! Training orchestration: k-means targets, the Adam/warmup machinery, layer
//! selectors and the staged pipeline behind the freeze registry.

pub mod config;
pub mod data;
pub mod kmeans;
pub mod optimizer;
pub mod selectors;
pub mod stages;

pub use config::{StageConfig, StageKind};
pub use data::{load_split_items, BatchSchedule, Corpus, TrainItem};
pub use kmeans::{assign_nearest, kmeans, ClusterAssignment, KmeansResult};
pub use optimizer::{lr_schedule, Adam};
pub use selectors::{apply_selectors, parse_selectors, Selector};
pub use stages::{
    finetune_full, pretrain, train_asr_decoder, tune_cluster_prompt, RunLogEntry, StageMetrics,
    StageOutcome,
};
