//! Stage training, the two-iteration pipeline and the ablation harness.

pub mod ablation;
pub mod config;
pub mod loss;
pub mod optim;
pub mod pipeline;
pub mod prepare;
pub mod stage;

pub use ablation::{arm_name, arm_slug, run_ablation, AblationFlag, ArmResult};
pub use config::StageConfig;
pub use loss::{LossTerms, LossWeights, SslOptions};
pub use optim::{ema_decay_at, ema_update, AdamW};
pub use pipeline::{
    base_model_config, build_pseudo_store, derive_seed, initial_model, report_from_dir, run_pipeline,
    run_stage, stage_seed, system_posteriors, write_pipeline_outputs, MemberSpec, PipelineConfig,
    PipelineResult, StageSet,
};
pub use prepare::{input_statistics, prepare_training_sets};
pub use stage::{predict, train_stage, Coverage, EvalOptions, SelectionRecord, StageData, StageRun};
