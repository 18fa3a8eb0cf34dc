use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Optimizer and schedule settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub min_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub adam_eps: f64,
    /// Decoupled weight decay; zero disables it.
    #[serde(default)]
    pub weight_decay: f64,
    /// Sequences per optimizer step.
    pub global_batch: usize,
    #[serde(default)]
    pub seed: u64,
    /// Global gradient-norm clip.
    #[serde(default)]
    pub grad_clip: Option<f64>,
    /// Write a checkpoint every this many steps (and always at the end).
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.95
}

fn default_eps() -> f64 {
    1e-8
}

impl TrainConfig {
    /// Full-scale pretraining settings: peak 1.6e-4 after 750 warmup steps,
    /// cosine down to 1e-5, Adam betas (0.9, 0.95), 128 sequences per step.
    /// `total_steps` covers 18.5B tokens at 2048 tokens per sequence.
    pub fn large() -> Self {
        TrainConfig {
            peak_lr: 1.6e-4,
            min_lr: 1e-5,
            warmup_steps: 750,
            total_steps: Self::steps_for(1.0, 18_500_000_000, 128, 2048),
            beta1: 0.9,
            beta2: 0.95,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            global_batch: 128,
            seed: 0,
            grad_clip: None,
            checkpoint_every: None,
        }
    }

    /// `ceil(epochs * corpus_tokens / (batch * seq_len))`, at least 1.
    pub fn steps_for(epochs: f64, corpus_tokens: u64, batch: usize, seq_len: usize) -> usize {
        let per_step = (batch * seq_len).max(1) as f64;
        ((epochs * corpus_tokens as f64 / per_step).ceil() as usize).max(1)
    }

    /// Follow-up instruction tuning: a tenth of the steps at a tenth of the
    /// peak rate, same optimizer settings.
    pub fn finetune_from(&self) -> Self {
        let total = (self.total_steps / 10).max(2);
        TrainConfig {
            peak_lr: self.peak_lr / 10.0,
            min_lr: self.min_lr.min(self.peak_lr / 10.0),
            warmup_steps: (self.warmup_steps / 10).min(total - 1),
            total_steps: total,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.min_lr > 0.0 && self.min_lr <= self.peak_lr) {
            return bad(format!("need 0 < min_lr <= peak_lr, got {} and {}", self.min_lr, self.peak_lr));
        }
        if self.warmup_steps >= self.total_steps {
            return bad(format!(
                "warmup_steps {} must be below total_steps {}",
                self.warmup_steps, self.total_steps
            ));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("{name} {b} not in (0, 1)"));
            }
        }
        if !(self.adam_eps > 0.0) || self.weight_decay < 0.0 {
            return bad("adam_eps must be positive and weight_decay non-negative".into());
        }
        if self.global_batch == 0 {
            return bad("global_batch must be positive".into());
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return bad("grad_clip must be positive".into());
        }
        if self.checkpoint_every == Some(0) {
            return bad("checkpoint_every must be positive".into());
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: TrainConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Parse { line: e.line(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Linear warmup from zero, then cosine annealing to `min_lr` at
    /// `total_steps`.
    pub fn lr_at(&self, step: usize) -> Result<f64> {
        if step > self.total_steps {
            return Err(Error::StepOutOfRange { step, total: self.total_steps });
        }
        if step <= self.warmup_steps {
            if self.warmup_steps == 0 {
                return Ok(self.peak_lr);
            }
            return Ok(self.peak_lr * step as f64 / self.warmup_steps as f64);
        }
        let progress = (step - self.warmup_steps) as f64 / (self.total_steps - self.warmup_steps) as f64;
        Ok(self.min_lr + 0.5 * (self.peak_lr - self.min_lr) * (1.0 + (std::f64::consts::PI * progress).cos()))
    }
}
