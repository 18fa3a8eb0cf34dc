use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bpe::TokenizerModel;
use crate::error::{Error, Result};
use crate::model::{forward, ModelConfig, ModelParams, Scalar};
use crate::rng::{stream_rng, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingOptions {
    pub max_new: usize,
    /// Zero selects greedy decoding.
    pub temperature: f64,
    /// Keep only the `top_k` most likely tokens; zero keeps all.
    pub top_k: usize,
    pub seed: u64,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        SamplingOptions { max_new: 64, temperature: 0.0, top_k: 0, seed: 0 }
    }
}

/// Highest-logit id, lowest id on ties.
pub fn argmax<T: Scalar>(row: &[T]) -> u32 {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best as u32
}

fn sample_row<T: Scalar>(row: &[T], opts: &SamplingOptions, rng: &mut impl Rng) -> u32 {
    if opts.temperature <= 0.0 || opts.top_k == 1 {
        return argmax(row);
    }
    let mut order: Vec<usize> = (0..row.len()).collect();
    // stable sort keeps lower ids first among equal logits
    order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap_or(std::cmp::Ordering::Equal));
    if opts.top_k > 0 {
        order.truncate(opts.top_k);
    }
    let top = row[order[0]].as_f64();
    let weights: Vec<f64> =
        order.iter().map(|&i| ((row[i].as_f64() - top) / opts.temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (&i, w) in order.iter().zip(&weights) {
        if u < *w {
            return i as u32;
        }
        u -= w;
    }
    *order.last().expect("non-empty vocabulary") as u32
}

/// Extends `prompt` one token at a time, keeping at most `seq_len` tokens of
/// context. Stops after `max_new` tokens or when `stop` is produced (the
/// stop token is not returned).
pub fn generate_tokens<T: Scalar>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    prompt: &[u32],
    opts: &SamplingOptions,
    stop: Option<u32>,
) -> Result<Vec<u32>> {
    if prompt.is_empty() {
        return Err(Error::Empty("prompt"));
    }
    let mut rng = stream_rng(opts.seed, tag("generate"));
    let mut ctx = prompt.to_vec();
    let mut out = Vec::new();
    for _ in 0..opts.max_new {
        let start = ctx.len().saturating_sub(config.seq_len);
        let window = &ctx[start..];
        let logits = forward(params, config, window)?;
        let v = config.vocab_size;
        let last = &logits[(window.len() - 1) * v..];
        let next = sample_row(last, opts, &mut rng);
        if Some(next) == stop {
            break;
        }
        out.push(next);
        ctx.push(next);
    }
    Ok(out)
}

/// Text continuation of `prompt`, stopping at `<eod>`.
pub fn generate<T: Scalar>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    tokenizer: &TokenizerModel,
    prompt: &str,
    opts: &SamplingOptions,
) -> Result<String> {
    let ids = tokenizer.encode(prompt);
    if ids.is_empty() {
        return Err(Error::Empty("prompt"));
    }
    if ids.len() >= config.seq_len {
        return Err(Error::Shape(format!(
            "prompt has {} tokens, model context is {}",
            ids.len(),
            config.seq_len
        )));
    }
    let out = generate_tokens(params, config, &ids, opts, Some(tokenizer.eod_id()?))?;
    tokenizer.decode(&out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_lowest_id() {
        assert_eq!(argmax(&[0.1, 0.5, 0.5, -1.0f32]), 1);
        assert_eq!(argmax(&[2.0, 2.0f64]), 0);
    }

    #[test]
    fn greedy_and_top1_agree() {
        let cfg = ModelConfig::tiny();
        let p = ModelParams::<f32>::init(&cfg, 3).unwrap();
        let greedy = SamplingOptions { max_new: 12, ..Default::default() };
        let a = generate_tokens(&p, &cfg, &[1, 2], &greedy, None).unwrap();
        let b = generate_tokens(&p, &cfg, &[1, 2], &greedy, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 12); // context cropping past seq_len 8
        let top1 = SamplingOptions { temperature: 1.3, top_k: 1, seed: 9, ..greedy };
        assert_eq!(generate_tokens(&p, &cfg, &[1, 2], &top1, None).unwrap(), a);
    }

    #[test]
    fn sampling_is_seeded() {
        let cfg = ModelConfig::tiny();
        let mut p = ModelParams::<f32>::init(&cfg, 3).unwrap();
        p.output.iter_mut().for_each(|w| *w *= 0.01);
        let o = |seed| SamplingOptions { max_new: 20, temperature: 1.0, top_k: 0, seed };
        let a = generate_tokens(&p, &cfg, &[5], &o(1), None).unwrap();
        assert_eq!(a, generate_tokens(&p, &cfg, &[5], &o(1), None).unwrap());
        assert_ne!(a, generate_tokens(&p, &cfg, &[5], &o(2), None).unwrap());
    }

    #[test]
    fn stops_at_stop_token_and_rejects_empty_prompt() {
        let cfg = ModelConfig::tiny();
        let mut p = ModelParams::<f32>::zeros(&cfg);
        p.final_beta[0] = 1.0;
        p.output[7] = 5.0;
        let opts = SamplingOptions { max_new: 5, ..Default::default() };
        assert_eq!(generate_tokens(&p, &cfg, &[1], &opts, None).unwrap(), vec![7; 5]);
        assert!(generate_tokens(&p, &cfg, &[1], &opts, Some(7)).unwrap().is_empty());
        assert!(generate_tokens(&p, &cfg, &[], &opts, None).is_err());
    }
}
