//! Data, training stages, evaluation and persistence.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod evaluate;
pub mod train;

pub use checkpoint::{
    load_archive, load_checkpoint, save_archive, save_checkpoint, single_network_archive, Archive, ArchiveMeta,
    Checkpoint, CHECKPOINT_VERSION,
};
pub use config::{
    AttackLayerConfig, EvalGrid, Networks, RunConfig, Schedule, Seeds, SplitSizes, SurrogateConfig, SurrogateLoss,
    Task, VggConfig, WatermarkConfig, CONFIG_VERSION,
};
pub use data::{
    generate_watermark, load_pairs, load_split, load_watermark, plan_splits, prepare_splits, synth_dataset,
    DatasetSplits, PairedDataset, Split, SplitPlan,
};
pub use evaluate::{evaluate, extraction_report, quality, Evaluation, Quality};
pub use train::{
    load_vgg, marked_pairs, train_adversarial, train_host, train_initial, train_surrogate, validate_marking,
    EpochRecord, Stage, Validation, Watermarks,
};
