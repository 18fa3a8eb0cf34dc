use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{ModelConfig, NormPlacement, Scalar};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, tag};

/// Weights of one transformer block. Linear weights are stored
/// `[in x out]` row-major so that `y = x W + b`. Disabled biases and the
/// optional post-attention norm are empty vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub ln1_gamma: Vec<T>,
    pub ln1_beta: Vec<T>,
    pub wq: Vec<T>,
    pub bq: Vec<T>,
    pub wk: Vec<T>,
    pub bk: Vec<T>,
    pub wv: Vec<T>,
    pub bv: Vec<T>,
    pub wo: Vec<T>,
    pub bo: Vec<T>,
    pub ln_attn_gamma: Vec<T>,
    pub ln_attn_beta: Vec<T>,
    pub ln2_gamma: Vec<T>,
    pub ln2_beta: Vec<T>,
    pub w_up: Vec<T>,
    pub b_up: Vec<T>,
    pub w_down: Vec<T>,
    pub b_down: Vec<T>,
}

/// All model weights. The output projection is its own matrix, never
/// shared with the input embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    /// `[vocab x hidden]`
    pub embedding: Vec<T>,
    pub layers: Vec<LayerParams<T>>,
    pub final_gamma: Vec<T>,
    pub final_beta: Vec<T>,
    /// `[hidden x vocab]`
    pub output: Vec<T>,
}

/// Name and shape of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

impl<T: Scalar> ModelParams<T> {
    /// Every tensor set to zero, shaped for `config`.
    pub fn zeros(config: &ModelConfig) -> Self {
        let h = config.hidden;
        let i = config.intermediate;
        let b = |n: usize| if config.bias { vec![T::zero(); n] } else { Vec::new() };
        let sandwich = |n: usize| {
            if config.norm_placement == NormPlacement::Sandwich {
                vec![T::zero(); n]
            } else {
                Vec::new()
            }
        };
        let layer = || LayerParams {
            ln1_gamma: vec![T::zero(); h],
            ln1_beta: vec![T::zero(); h],
            wq: vec![T::zero(); h * h],
            bq: b(h),
            wk: vec![T::zero(); h * h],
            bk: b(h),
            wv: vec![T::zero(); h * h],
            bv: b(h),
            wo: vec![T::zero(); h * h],
            bo: b(h),
            ln_attn_gamma: sandwich(h),
            ln_attn_beta: sandwich(h),
            ln2_gamma: vec![T::zero(); h],
            ln2_beta: vec![T::zero(); h],
            w_up: vec![T::zero(); h * i],
            b_up: b(i),
            w_down: vec![T::zero(); i * h],
            b_down: b(h),
        };
        ModelParams {
            embedding: vec![T::zero(); config.vocab_size * h],
            layers: (0..config.num_layers).map(|_| layer()).collect(),
            final_gamma: vec![T::zero(); h],
            final_beta: vec![T::zero(); h],
            output: vec![T::zero(); h * config.vocab_size],
        }
    }

    /// Normal(0, 0.02) matrices, with the attention-output and MLP-down
    /// projections further scaled by `1/sqrt(2 * num_layers)`. Biases, LN
    /// gains (applied as `1 + gamma`) and LN shifts start at zero.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut p = Self::zeros(config);
        let std = 0.02;
        let scaled = std / (2.0 * config.num_layers.max(1) as f64).sqrt();
        let mut rng = stream_rng(seed, tag("init"));
        let fill = |v: &mut [T], s: f64, rng: &mut rand_chacha::ChaCha8Rng| {
            let dist = Normal::new(0.0, s).expect("valid std");
            for x in v.iter_mut() {
                *x = T::from_f64(dist.sample(rng));
            }
        };
        fill(&mut p.embedding, std, &mut rng);
        for l in &mut p.layers {
            fill(&mut l.wq, std, &mut rng);
            fill(&mut l.wk, std, &mut rng);
            fill(&mut l.wv, std, &mut rng);
            fill(&mut l.wo, scaled, &mut rng);
            fill(&mut l.w_up, std, &mut rng);
            fill(&mut l.w_down, scaled, &mut rng);
        }
        fill(&mut p.output, std, &mut rng);
        Ok(p)
    }

    /// Tensor names, shapes and data in canonical (checkpoint) order.
    /// Empty tensors are skipped.
    pub fn tensors(&self) -> Vec<(TensorInfo, &[T])> {
        let infos = self.infos();
        let mut refs: Vec<&[T]> = vec![&self.embedding];
        for l in &self.layers {
            refs.extend([
                &l.ln1_gamma[..],
                &l.ln1_beta,
                &l.wq,
                &l.bq,
                &l.wk,
                &l.bk,
                &l.wv,
                &l.bv,
                &l.wo,
                &l.bo,
                &l.ln_attn_gamma,
                &l.ln_attn_beta,
                &l.ln2_gamma,
                &l.ln2_beta,
                &l.w_up,
                &l.b_up,
                &l.w_down,
                &l.b_down,
            ]);
        }
        refs.extend([&self.final_gamma[..], &self.final_beta, &self.output]);
        infos.into_iter().zip(refs).filter(|(_, d)| !d.is_empty()).collect()
    }

    /// Mutable counterpart of [`ModelParams::tensors`], same order.
    pub fn tensors_mut(&mut self) -> Vec<(TensorInfo, &mut Vec<T>)> {
        let infos = self.infos();
        let mut refs: Vec<&mut Vec<T>> = vec![&mut self.embedding];
        for l in &mut self.layers {
            refs.extend([
                &mut l.ln1_gamma,
                &mut l.ln1_beta,
                &mut l.wq,
                &mut l.bq,
                &mut l.wk,
                &mut l.bk,
                &mut l.wv,
                &mut l.bv,
                &mut l.wo,
                &mut l.bo,
                &mut l.ln_attn_gamma,
                &mut l.ln_attn_beta,
                &mut l.ln2_gamma,
                &mut l.ln2_beta,
                &mut l.w_up,
                &mut l.b_up,
                &mut l.w_down,
                &mut l.b_down,
            ]);
        }
        refs.extend([&mut self.final_gamma, &mut self.final_beta, &mut self.output]);
        infos.into_iter().zip(refs).filter(|(_, d)| !d.is_empty()).collect()
    }

    // Names and shapes of every slot, empty ones included.
    fn infos(&self) -> Vec<TensorInfo> {
        let h = self.final_gamma.len();
        let v = self.embedding.len().checked_div(h).unwrap_or(0);
        let t = |name: String, shape: Vec<usize>| TensorInfo { name, shape };
        let mut out = vec![t("embedding".into(), vec![v, h])];
        for (n, l) in self.layers.iter().enumerate() {
            let i = l.w_up.len().checked_div(h).unwrap_or(0);
            let p = |s: &str| format!("layers.{n}.{s}");
            out.extend([
                t(p("ln1.gamma"), vec![h]),
                t(p("ln1.beta"), vec![h]),
                t(p("attn.wq"), vec![h, h]),
                t(p("attn.bq"), vec![h]),
                t(p("attn.wk"), vec![h, h]),
                t(p("attn.bk"), vec![h]),
                t(p("attn.wv"), vec![h, h]),
                t(p("attn.bv"), vec![h]),
                t(p("attn.wo"), vec![h, h]),
                t(p("attn.bo"), vec![h]),
                t(p("ln_attn.gamma"), vec![h]),
                t(p("ln_attn.beta"), vec![h]),
                t(p("ln2.gamma"), vec![h]),
                t(p("ln2.beta"), vec![h]),
                t(p("mlp.w_up"), vec![h, i]),
                t(p("mlp.b_up"), vec![i]),
                t(p("mlp.w_down"), vec![i, h]),
                t(p("mlp.b_down"), vec![h]),
            ]);
        }
        out.extend([
            t("final_ln.gamma".into(), vec![h]),
            t("final_ln.beta".into(), vec![h]),
            t("output".into(), vec![h, v]),
        ]);
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, d)| d.len()).sum()
    }

    /// Adds `other` element-wise.
    pub fn add_assign(&mut self, other: &ModelParams<T>) -> Result<()> {
        let mut theirs = other.tensors().into_iter().map(|(_, d)| d);
        for (info, mine) in self.tensors_mut() {
            let t = theirs
                .next()
                .filter(|t| t.len() == mine.len())
                .ok_or_else(|| Error::Shape(format!("tensor {} differs", info.name)))?;
            for (a, &b) in mine.iter_mut().zip(t) {
                *a += b;
            }
        }
        Ok(())
    }

    /// Multiplies every element by `s`.
    pub fn scale(&mut self, s: T) {
        for (_, t) in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= s);
        }
    }

    /// Converts element type.
    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let c = |v: &Vec<T>| v.iter().map(|x| U::from_f64(x.as_f64())).collect::<Vec<U>>();
        ModelParams {
            embedding: c(&self.embedding),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    ln1_gamma: c(&l.ln1_gamma),
                    ln1_beta: c(&l.ln1_beta),
                    wq: c(&l.wq),
                    bq: c(&l.bq),
                    wk: c(&l.wk),
                    bk: c(&l.bk),
                    wv: c(&l.wv),
                    bv: c(&l.bv),
                    wo: c(&l.wo),
                    bo: c(&l.bo),
                    ln_attn_gamma: c(&l.ln_attn_gamma),
                    ln_attn_beta: c(&l.ln_attn_beta),
                    ln2_gamma: c(&l.ln2_gamma),
                    ln2_beta: c(&l.ln2_beta),
                    w_up: c(&l.w_up),
                    b_up: c(&l.b_up),
                    w_down: c(&l.w_down),
                    b_down: c(&l.b_down),
                })
                .collect(),
            final_gamma: c(&self.final_gamma),
            final_beta: c(&self.final_beta),
            output: c(&self.output),
        }
    }

    /// Fills every tensor (including LN gains and biases) with
    /// Normal(0, `std`) draws; test helper for exercising every path.
    pub fn randomize(&mut self, std: f64, rng: &mut impl Rng) {
        let dist = Normal::new(0.0, std).expect("valid std");
        for (_, t) in self.tensors_mut() {
            for x in t.iter_mut() {
                *x = T::from_f64(dist.sample(rng));
            }
        }
    }
}
