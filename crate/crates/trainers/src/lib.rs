//! Training procedures: base pretraining, DreamBooth-style
//! personalization in three parameter spaces, single-image editing, and
//! Cut-Mix-Unmix multi-subject training.

pub mod config;
pub mod cutmix;
pub mod dataset;
pub mod edit;
pub mod finetune;
pub mod metrics;
pub mod multi;
pub mod render;

pub use config::{TrainConfig, TrainMode};
pub use cutmix::{compose_cutmix, unmix_loss, wrong_region_attention, CutMixSample, SubjectSlot};
pub use dataset::{eval_denoise_loss, generate_priors, SubjectDataset};
pub use edit::{single_image_edit, EditOptions, EditRun};
pub use finetune::{
    finetune, finetune_single_image, pretrain, train_schedule, FinetuneArtifact, FinetuneRun,
};
pub use metrics::{metrics_to_csv, MetricsRow, StepType, METRICS_HEADER};
pub use multi::{evaluation_cutmix_samples, train_multi_subject, MultiSubjectRun};
pub use render::{combine_and_render, combine_checkpoints, render, CombineMethod, RenderOpts};
