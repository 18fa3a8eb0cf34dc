use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where the per-layer normalizations sit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormPlacement {
    /// LN before attention and LN before the MLP.
    PreLn,
    /// As `PreLn`, plus an LN on the attention output before the residual
    /// add.
    Sandwich,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub seq_len: usize,
    pub num_layers: usize,
    pub hidden: usize,
    pub intermediate: usize,
    pub heads: usize,
    /// Fraction of each head's dimensions that are rotated.
    #[serde(default = "default_rotary_fraction")]
    pub rotary_fraction: f64,
    #[serde(default = "default_rope_base")]
    pub rope_base: f64,
    #[serde(default = "default_ln_epsilon")]
    pub ln_epsilon: f64,
    /// Biases on the Q/K/V/O and MLP projections.
    #[serde(default = "default_true")]
    pub bias: bool,
    #[serde(default = "default_placement")]
    pub norm_placement: NormPlacement,
}

fn default_rotary_fraction() -> f64 {
    0.5
}

fn default_rope_base() -> f64 {
    10_000.0
}

fn default_ln_epsilon() -> f64 {
    1e-5
}

fn default_true() -> bool {
    true
}

fn default_placement() -> NormPlacement {
    NormPlacement::PreLn
}

impl ModelConfig {
    /// The 7B layout: 32 layers, hidden 4096, intermediate 10880, 32 heads,
    /// 2048 positions, 56000-token vocabulary.
    pub fn large() -> Self {
        ModelConfig {
            vocab_size: 56_000,
            seq_len: 2048,
            num_layers: 32,
            hidden: 4096,
            intermediate: 10_880,
            heads: 32,
            rotary_fraction: 0.5,
            rope_base: 10_000.0,
            ln_epsilon: 1e-5,
            bias: true,
            norm_placement: NormPlacement::PreLn,
        }
    }

    /// Desk-scale default keeping the intermediate/hidden ratio 2.65625.
    pub fn desk() -> Self {
        ModelConfig {
            vocab_size: 4096,
            seq_len: 256,
            num_layers: 4,
            hidden: 128,
            intermediate: 340,
            heads: 4,
            ..Self::large()
        }
    }

    /// Smallest configuration used for gradient checking.
    pub fn tiny() -> Self {
        ModelConfig {
            vocab_size: 64,
            seq_len: 8,
            num_layers: 2,
            hidden: 16,
            intermediate: 42,
            heads: 2,
            ..Self::large()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    /// `floor(rotary_fraction * head_dim)` rounded down to an even number.
    pub fn rotary_dims(&self) -> usize {
        let r = (self.rotary_fraction * self.head_dim() as f64).floor() as usize;
        r - r % 2
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.vocab_size == 0 || self.seq_len == 0 || self.hidden == 0 || self.intermediate == 0 {
            return bad("model dimensions must be positive".into());
        }
        if self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return bad(format!("hidden {} not divisible by heads {}", self.hidden, self.heads));
        }
        if !(self.rotary_fraction > 0.0 && self.rotary_fraction <= 1.0) {
            return bad(format!("rotary_fraction {} not in (0, 1]", self.rotary_fraction));
        }
        if !(self.ln_epsilon > 0.0) {
            return bad("ln_epsilon must be positive".into());
        }
        if !(self.rope_base > 0.0) {
            return bad("rope_base must be positive".into());
        }
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ModelConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Parse { line: e.line(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }
}
