//! Optimization loop: warmup + cosine schedule, Adam, pretraining over
//! packed sequences, masked instruction tuning and sampling.

mod adam;
mod finetune;
mod generate;
mod schedule;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mix::PackedData;
use crate::model::{loss_and_grads, save_checkpoint, Example, ModelConfig, ModelParams};
use crate::rng::{stream_rng, tag};

pub use adam::{adam_step, grad_norm, AdamState};
pub use finetune::{build_finetune_example, finetune_example, prepare_finetune};
pub use generate::{argmax, generate, generate_tokens, SamplingOptions};
pub use schedule::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Pretrain,
    Finetune,
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    /// Input tokens processed so far.
    pub tokens: u64,
    /// Passes over the training data so far, fractional.
    pub epoch: f64,
}

/// Where the loop writes its artifacts; all optional.
#[derive(Debug, Clone, Default)]
pub struct TrainOutputs {
    pub checkpoint: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub metrics: Vec<StepMetrics>,
    pub final_loss: f64,
}

/// Next-token examples from packed sequences: a sequence of `n` tokens
/// predicts its last `n - 1`.
pub fn pretrain_examples(data: &PackedData, model: &ModelConfig) -> Result<Vec<Example>> {
    let n = data.header.seq_len;
    if n < 2 || n - 1 > model.seq_len {
        return Err(Error::Config(format!(
            "packed sequences of {n} tokens do not fit a model context of {}",
            model.seq_len
        )));
    }
    if data.header.vocab_size > model.vocab_size {
        return Err(Error::Config(format!(
            "data vocabulary {} exceeds model vocabulary {}",
            data.header.vocab_size, model.vocab_size
        )));
    }
    Ok((0..data.num_sequences()).map(|i| Example::from_window(data.sequence(i))).collect())
}

/// Batches of example indices: each epoch is a fresh seeded permutation and
/// batches run across epoch boundaries.
struct BatchOrder {
    len: usize,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl BatchOrder {
    fn new(len: usize, seed: u64) -> Self {
        let mut b = BatchOrder { len, seed, epoch: 0, order: Vec::new(), pos: 0 };
        b.reshuffle();
        b
    }

    fn reshuffle(&mut self) {
        use rand::seq::SliceRandom;
        self.order = (0..self.len).collect();
        self.order.shuffle(&mut stream_rng(self.seed ^ tag("epoch"), self.epoch));
        self.pos = 0;
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.len {
                self.epoch += 1;
                self.reshuffle();
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Runs `cfg.total_steps` Adam updates; update `k` uses `lr_at(k)`. The
/// logged loss is the batch loss before that update. A non-finite loss
/// stops training with an error after saving the current weights next to
/// the checkpoint path with a `.diverged` suffix.
pub fn train(
    params: &mut ModelParams<f32>,
    model: &ModelConfig,
    data: &[Example],
    cfg: &TrainConfig,
    outputs: &TrainOutputs,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training examples"));
    }
    let corpus_tokens: u64 = data.iter().map(|e| e.inputs.len() as u64).sum();
    let mut log = match &outputs.metrics {
        Some(p) => Some((BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?), p)),
        None => None,
    };
    let mut state = AdamState::new(model);
    let mut order = BatchOrder::new(data.len(), cfg.seed);
    let mut tokens = 0u64;
    let mut metrics = Vec::with_capacity(cfg.total_steps);

    for step in 1..=cfg.total_steps {
        let batch: Vec<Example> =
            order.next_batch(cfg.global_batch).into_iter().map(|i| data[i].clone()).collect();
        let (loss, grads) = loss_and_grads(params, model, &batch)?;
        if !loss.is_finite() {
            if let Some(ckpt) = &outputs.checkpoint {
                save_checkpoint(&diverged_path(ckpt), model, params, step - 1)?;
            }
            return Err(Error::NonFiniteLoss { step });
        }
        let lr = cfg.lr_at(step)?;
        adam_step(params, &grads, &mut state, lr, cfg)?;
        tokens += batch.iter().map(|e| e.inputs.len() as u64).sum::<u64>();
        let m = StepMetrics {
            step,
            loss: f64::from(loss),
            lr,
            tokens,
            epoch: crate::mix::epoch_progress(tokens, corpus_tokens)?,
        };
        if let Some((w, p)) = &mut log {
            serde_json::to_writer(&mut *w, &m)?;
            w.write_all(b"\n").map_err(|e| Error::io(&**p, e))?;
        }
        metrics.push(m);
        if let (Some(every), Some(ckpt)) = (cfg.checkpoint_every, &outputs.checkpoint) {
            if step % every == 0 && step != cfg.total_steps {
                save_checkpoint(ckpt, model, params, step)?;
            }
        }
    }
    if let Some((w, p)) = &mut log {
        w.flush().map_err(|e| Error::io(&**p, e))?;
    }
    if let Some(ckpt) = &outputs.checkpoint {
        save_checkpoint(ckpt, model, params, cfg.total_steps)?;
    }
    let final_loss = metrics.last().map(|m| m.loss).unwrap_or(f64::NAN);
    Ok(TrainOutcome { metrics, final_loss })
}

fn diverged_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".diverged");
    PathBuf::from(s)
}

/// Reads a metrics log back.
pub fn read_metrics(path: &Path) -> Result<Vec<StepMetrics>> {
    crate::corpus::read_jsonl(path)
}
