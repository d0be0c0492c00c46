//! Decoupled-weight-decay Adam with per-group learning rates, and the
//! mean-teacher EMA.

use crate::error::{Error, Result};
use crate::model::{ParamGroup, ParamStore, ToyModel};
use crate::train::config::StageConfig;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Learning rate of a parameter group under `cfg`.
pub fn group_lr(group: ParamGroup, cfg: &StageConfig) -> f64 {
    match group {
        ParamGroup::Cnn => cfg.lr_cnn,
        ParamGroup::Rnn => cfg.lr_rnn,
        ParamGroup::Embedder { depth } => cfg.lr_tf * cfg.lr_dec.powi(depth as i32),
    }
}

#[derive(Clone, Debug)]
pub struct AdamW {
    lrs: Vec<f64>,
    weight_decay: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

impl AdamW {
    /// One state slot per parameter of `model`; `trainable` parameters get
    /// their group rate, the rest rate 0.
    pub fn new(model: &ToyModel, cfg: &StageConfig, trainable: &dyn Fn(&str) -> bool) -> Self {
        let lrs = model
            .params
            .names()
            .iter()
            .map(|n| {
                if trainable(n) {
                    group_lr(model.param_group(n), cfg)
                } else {
                    0.0
                }
            })
            .collect();
        AdamW::with_rates(lrs, cfg.weight_decay, &model.params)
    }

    pub fn with_rates(lrs: Vec<f64>, weight_decay: f64, params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        AdamW {
            lrs,
            weight_decay,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn learning_rates(&self) -> &[f64] {
        &self.lrs
    }

    /// Applies one update. `grads[i]` is `None` for parameters without a
    /// gradient; those with rate 0 are left untouched. Nothing is modified
    /// when any gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Option<Vec<f64>>]) -> Result<()> {
        if grads.len() != self.lrs.len() {
            return Err(Error::Shape(format!(
                "{} gradients for {} parameters",
                grads.len(),
                self.lrs.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if let Some(k) = g.iter().position(|v| !v.is_finite()) {
                    return Err(Error::Numerical(format!(
                        "non-finite gradient at {}[{k}]",
                        params.names()[i]
                    )));
                }
            }
        }
        self.step += 1;
        let bc1 = 1.0 - BETA1.powi(self.step);
        let bc2 = 1.0 - BETA2.powi(self.step);
        for (i, tensor) in params.tensors_mut().iter_mut().enumerate() {
            let lr = self.lrs[i];
            if lr == 0.0 {
                continue;
            }
            let decay = 1.0 - lr * self.weight_decay;
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (k, p) in tensor.data.iter_mut().enumerate() {
                *p *= decay;
                let g = grads[i].as_ref().map_or(0.0, |g| g[k]);
                m[k] = BETA1 * m[k] + (1.0 - BETA1) * g;
                v[k] = BETA2 * v[k] + (1.0 - BETA2) * g * g;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }
}

/// `θ_teacher ← τ·θ_teacher + (1−τ)·θ_student`, element-wise.
pub fn ema_update(teacher: &mut ParamStore, student: &ParamStore, tau: f64) -> Result<()> {
    if !teacher.same_layout(student) {
        return Err(Error::Shape("teacher and student parameter layouts differ".into()));
    }
    for (t, s) in teacher.tensors_mut().iter_mut().zip(student.tensors()) {
        for (a, b) in t.data.iter_mut().zip(&s.data) {
            *a = tau * *a + (1.0 - tau) * b;
        }
    }
    Ok(())
}

/// Decay used at optimizer step `step` (0-based): the configured decay,
/// capped by `1 − 1/(step+1)` so the teacher follows the student early on.
pub fn ema_decay_at(tau: f64, step: usize) -> f64 {
    tau.min(1.0 - 1.0 / (step as f64 + 1.0))
}
