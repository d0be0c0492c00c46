use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::error::{Error, Result};
use crate::ingest::BatchComposition;
use crate::types::Stage;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    pub lr_cnn: f64,
    pub lr_rnn: f64,
    pub lr_tf: f64,
    /// Layer-wise decay of the embedder learning rate, per layer from the output.
    pub lr_dec: f64,
    pub weight_decay: f64,
    pub w_strong: f64,
    pub w_weak: f64,
    pub w_mt: f64,
    pub w_ict: f64,
    pub w_pseudo: f64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch: BatchComposition,
    pub augment: AugmentConfig,
    /// Teacher EMA decay.
    pub ema_decay: f64,
    /// Beta shape parameter for the ICT interpolation weight.
    pub ict_alpha: f64,
    pub embedder_frozen: bool,
    pub use_pseudo_loss: bool,
    pub ssl_on_maestro: bool,
    pub ssl_class_mask: bool,
    pub separate_rnn: bool,
    pub hard_pseudo: bool,
    pub pseudo_all_classes: bool,
    pub train_desed_only: bool,
    pub train_maestro_only: bool,
    pub class_mapping: bool,
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig::stage1()
    }
}

impl StageConfig {
    /// Frozen embedder, CRNN trained from scratch.
    pub fn stage1() -> Self {
        StageConfig {
            lr_cnn: 1e-3,
            lr_rnn: 1e-3,
            lr_tf: 0.0,
            lr_dec: 1.0,
            weight_decay: 1e-2,
            w_strong: 1.0,
            w_weak: 0.5,
            w_mt: 40.0,
            w_ict: 10.0,
            w_pseudo: 1.0,
            epochs: 20,
            steps_per_epoch: 4,
            batch: BatchComposition::STAGE1,
            augment: AugmentConfig::default(),
            ema_decay: 0.999,
            ict_alpha: 1.0,
            embedder_frozen: true,
            use_pseudo_loss: false,
            ssl_on_maestro: true,
            ssl_class_mask: false,
            separate_rnn: false,
            hard_pseudo: false,
            pseudo_all_classes: false,
            train_desed_only: false,
            train_maestro_only: false,
            class_mapping: true,
        }
    }

    /// Joint fine-tuning of the CRNN and the embedder.
    pub fn stage2() -> Self {
        StageConfig {
            lr_cnn: 1e-4,
            lr_rnn: 1e-3,
            lr_tf: 1e-4,
            lr_dec: 0.5,
            weight_decay: 1e-3,
            batch: BatchComposition::STAGE2,
            embedder_frozen: false,
            ..StageConfig::stage1()
        }
    }

    /// Defaults of `stage`: the pseudo-label loss is on in the first stage of
    /// the second iteration only.
    pub fn preset(stage: Stage) -> Self {
        let mut cfg = if stage.step() == 1 {
            StageConfig::stage1()
        } else {
            StageConfig::stage2()
        };
        cfg.use_pseudo_loss = stage == Stage::I2S1;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [self.lr_cnn, self.lr_rnn, self.lr_tf, self.lr_dec, self.weight_decay];
        if rates.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("learning rates and weight decay must be non-negative".into()));
        }
        let weights = [self.w_strong, self.w_weak, self.w_mt, self.w_ict, self.w_pseudo];
        if weights.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.ema_decay) || !(self.ict_alpha > 0.0) {
            return Err(Error::Config("ema_decay must lie in [0, 1] and ict_alpha be positive".into()));
        }
        if self.train_desed_only && self.train_maestro_only {
            return Err(Error::Config("train_desed_only and train_maestro_only exclude each other".into()));
        }
        if self.epochs > 0 && (self.steps_per_epoch == 0 || self.batch.total() == 0) {
            return Err(Error::Config("training needs steps and a non-empty batch".into()));
        }
        self.augment.validate()
    }
}
