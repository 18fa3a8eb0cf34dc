//! Decoder-only transformer: LayerNorm1P, GeLU MLP, partial rotary
//! embeddings and an untied output projection, with analytic gradients.

mod checkpoint;
mod config;
mod forward;
pub mod ops;
mod params;
mod scalar;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader, ManifestEntry, CHECKPOINT_VERSION};
pub use config::{ModelConfig, NormPlacement};
pub use forward::{forward, loss, loss_and_grads, Example};
pub use ops::{causal_attention, cross_entropy_loss, gelu, layer_norm_1p, rope_apply};
pub use params::{LayerParams, ModelParams, TensorInfo};
pub use scalar::Scalar;
