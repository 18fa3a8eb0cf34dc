use super::{ModelConfig, Scalar};
use crate::error::{Error, Result};

/// `(x - mean) / sqrt(var + eps) * (1 + gamma) + beta` with the population
/// variance.
pub fn layer_norm_1p<T: Scalar>(x: &[T], gamma: &[T], beta: &[T], eps: f64) -> Vec<T> {
    assert_eq!(x.len(), gamma.len());
    assert_eq!(x.len(), beta.len());
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = [T::zero()];
    layer_norm_rows(x, gamma, beta, eps, x.len(), &mut y, &mut xhat, &mut rstd);
    y
}

/// Row-wise LayerNorm1P over a `[rows x h]` matrix. Stores the normalized
/// input and reciprocal std for the backward pass.
#[allow(clippy::too_many_arguments)]
pub(crate) fn layer_norm_rows<T: Scalar>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    eps: f64,
    h: usize,
    y: &mut [T],
    xhat: &mut [T],
    rstd: &mut [T],
) {
    let eps = T::from_f64(eps);
    let n = T::from_f64(h as f64);
    for (r, row) in x.chunks_exact(h).enumerate() {
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        let base = r * h;
        for j in 0..h {
            let xh = (row[j] - mean) * rs;
            xhat[base + j] = xh;
            y[base + j] = xh * (T::one() + gamma[j]) + beta[j];
        }
    }
}

/// Backward of [`layer_norm_rows`]. Adds into `dx`, `dgamma` and `dbeta`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn layer_norm_rows_backward<T: Scalar>(
    dy: &[T],
    xhat: &[T],
    rstd: &[T],
    gamma: &[T],
    h: usize,
    dx: &mut [T],
    dgamma: &mut [T],
    dbeta: &mut [T],
) {
    let n = T::from_f64(h as f64);
    let mut dxhat = vec![T::zero(); h];
    for (r, rs) in rstd.iter().enumerate() {
        let base = r * h;
        let mut mean_d = T::zero();
        let mut mean_dx = T::zero();
        for j in 0..h {
            let g = dy[base + j];
            dgamma[j] += g * xhat[base + j];
            dbeta[j] += g;
            dxhat[j] = g * (T::one() + gamma[j]);
            mean_d += dxhat[j];
            mean_dx += dxhat[j] * xhat[base + j];
        }
        mean_d /= n;
        mean_dx /= n;
        for j in 0..h {
            dx[base + j] += *rs * (dxhat[j] - mean_d - xhat[base + j] * mean_dx);
        }
    }
}

/// Exact GeLU, `x * Phi(x)`.
pub fn gelu<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    x * half * (T::one() + (x * T::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

/// Derivative of [`gelu`]: `Phi(x) + x * phi(x)`.
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    let cdf = half * (T::one() + (x * T::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * half).exp() * T::from_f64(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    cdf + x * pdf
}

/// Cos/sin of every (position, pair) angle for the rotated dimensions.
#[derive(Debug, Clone)]
pub struct RopeTable<T> {
    pub(crate) dims: usize,
    cos: Vec<T>,
    sin: Vec<T>,
}

impl<T: Scalar> RopeTable<T> {
    pub fn new(config: &ModelConfig, positions: usize) -> Self {
        Self::with_dims(config.rotary_dims(), config.rope_base, positions)
    }

    pub fn with_dims(dims: usize, base: f64, positions: usize) -> Self {
        let pairs = dims / 2;
        let mut cos = Vec::with_capacity(positions * pairs);
        let mut sin = Vec::with_capacity(positions * pairs);
        for p in 0..positions {
            for i in 0..pairs {
                let theta = base.powf(-2.0 * i as f64 / dims as f64);
                let (s, c) = (p as f64 * theta).sin_cos();
                cos.push(T::from_f64(c));
                sin.push(T::from_f64(s));
            }
        }
        RopeTable { dims, cos, sin }
    }

    /// Rotates pairs `(2i, 2i+1)` of `v[..dims]` in place; `inverse` rotates
    /// by the negated angle, which is also the transpose used in backprop.
    pub(crate) fn rotate(&self, v: &mut [T], pos: usize, inverse: bool) {
        let pairs = self.dims / 2;
        let base = pos * pairs;
        for i in 0..pairs {
            let c = self.cos[base + i];
            let s = if inverse { -self.sin[base + i] } else { self.sin[base + i] };
            let (a, b) = (v[2 * i], v[2 * i + 1]);
            v[2 * i] = a * c - b * s;
            v[2 * i + 1] = a * s + b * c;
        }
    }
}

/// Rotary embedding of one head vector at `position`.
pub fn rope_apply<T: Scalar>(v: &[T], position: usize, config: &ModelConfig) -> Vec<T> {
    let table = RopeTable::with_dims(config.rotary_dims(), config.rope_base, position + 1);
    let mut out = v.to_vec();
    table.rotate(&mut out, position, false);
    out
}

/// Numerically stable softmax in place.
pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Per-head `softmax(Q Kᵀ / sqrt(d) + causal mask) V`. Inputs and output are
/// `[seq x heads*head_dim]`, row-major, head `h` in columns
/// `h*head_dim..(h+1)*head_dim`. Returns the output and the attention
/// weights `[heads x seq x seq]` (zero above the diagonal).
pub fn causal_attention<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    seq: usize,
    heads: usize,
    head_dim: usize,
) -> (Vec<T>, Vec<T>) {
    use super::scalar::{gemm, Layout};
    let hidden = heads * head_dim;
    assert_eq!(q.len(), seq * hidden);
    assert_eq!(k.len(), seq * hidden);
    assert_eq!(v.len(), seq * hidden);
    let scale = T::one() / T::from_f64(head_dim as f64).sqrt();
    let mut out = vec![T::zero(); seq * hidden];
    let mut probs = vec![T::zero(); heads * seq * seq];
    for h in 0..heads {
        let off = h * head_dim;
        let p = &mut probs[h * seq * seq..(h + 1) * seq * seq];
        gemm(
            seq,
            head_dim,
            seq,
            scale,
            q,
            Layout::block(off, hidden),
            k,
            Layout::block_trans(off, hidden),
            T::zero(),
            p,
            Layout::rows(0, seq),
        );
        for i in 0..seq {
            let row = &mut p[i * seq..(i + 1) * seq];
            softmax_in_place(&mut row[..=i]);
            row[i + 1..].iter_mut().for_each(|x| *x = T::zero());
        }
        gemm(
            seq,
            seq,
            head_dim,
            T::one(),
            p,
            Layout::rows(0, seq),
            v,
            Layout::block(off, hidden),
            T::zero(),
            &mut out,
            Layout::block(off, hidden),
        );
    }
    (out, probs)
}

/// Mean of `-log softmax(logits)[target]` over positions where `mask` is
/// true (all positions when `mask` is `None`).
pub fn cross_entropy_loss<T: Scalar>(
    logits: &[T],
    targets: &[u32],
    mask: Option<&[bool]>,
    vocab: usize,
) -> Result<T> {
    let (sum, count) = cross_entropy_sum(logits, targets, mask, vocab)?;
    if count == 0 {
        return Err(Error::Empty("unmasked target positions"));
    }
    Ok(sum / T::from_f64(count as f64))
}

pub(crate) fn cross_entropy_sum<T: Scalar>(
    logits: &[T],
    targets: &[u32],
    mask: Option<&[bool]>,
    vocab: usize,
) -> Result<(T, usize)> {
    if logits.len() != targets.len() * vocab {
        return Err(Error::Shape(format!(
            "{} logits for {} targets of vocab {vocab}",
            logits.len(),
            targets.len()
        )));
    }
    if let Some(m) = mask {
        if m.len() != targets.len() {
            return Err(Error::Shape(format!("mask length {} != {}", m.len(), targets.len())));
        }
    }
    let mut sum = T::zero();
    let mut count = 0;
    for (i, &t) in targets.iter().enumerate() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        if t as usize >= vocab {
            return Err(Error::TokenOutOfRange { id: t, vocab });
        }
        let row = &logits[i * vocab..(i + 1) * vocab];
        sum += log_sum_exp(row) - row[t as usize];
        count += 1;
    }
    Ok((sum, count))
}

pub(crate) fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randv(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
    }

    #[test]
    fn layer_norm_examples() {
        let z = vec![0.0; 4];
        let y = layer_norm_1p(&[3.0; 4], &z, &z, 1e-5);
        assert!(y.iter().all(|&v| v == 0.0));

        let beta = vec![0.5, -1.0, 2.0];
        let y = layer_norm_1p(&[1.0, 5.0, -2.0], &[-1.0; 3], &beta, 1e-5);
        assert_eq!(y, beta);

        // mean 0, var 1 -> 1/sqrt(1 + 1e-5)
        let y = layer_norm_1p(&[1.0, -1.0], &[0.0; 2], &[0.0; 2], 1e-5);
        let want = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((y[0] - want).abs() < 1e-15 && (y[1] + want).abs() < 1e-15);
        assert!((y[0] - 0.999995).abs() < 1e-9);
    }

    #[test]
    fn layer_norm_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for dim in [64, 128, 300] {
            let x: Vec<f64> = randv(&mut rng, dim).iter().map(|v| v * 7.0 + 3.0).collect();
            let y = layer_norm_1p(&x, &vec![0.0; dim], &vec![0.0; dim], 1e-5);
            let mean = y.iter().sum::<f64>() / dim as f64;
            let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / dim as f64;
            assert!(mean.abs() < 1e-7, "{mean}");
            assert!((var - 1.0).abs() < 1e-3, "{var}");
        }
    }

    #[test]
    fn gelu_values() {
        assert_eq!(gelu(0.0f64), 0.0);
        // Phi(1) = 0.5 * (1 + erf(1/sqrt 2)) = 0.841344746...
        assert!((gelu(1.0f64) - 0.841_344_746_068_543).abs() < 1e-12);
        assert!(gelu(-10.0f64).abs() < 1e-6);
        assert!((gelu(10.0f64) - 10.0).abs() < 1e-6);
        for x in [-3.0, -0.7, 0.0, 0.4, 2.5f64] {
            let num = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6;
            assert!((num - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn rope_examples() {
        let cfg = ModelConfig { rotary_fraction: 1.0, ..ModelConfig::tiny() };
        let v = vec![0.3, -1.2, 0.5, 2.0, 1.0, 0.0, -0.4, 0.9];
        assert_eq!(rope_apply(&v, 0, &cfg), v);

        let r = cfg.rotary_dims();
        let m = 5usize;
        for i in 0..r / 2 {
            let mut e = vec![0.0; 8];
            e[2 * i] = 1.0;
            let out = rope_apply(&e, m, &cfg);
            let theta = cfg.rope_base.powf(-2.0 * i as f64 / r as f64);
            assert!((out[2 * i] - (m as f64 * theta).cos()).abs() < 1e-15);
            assert!((out[2 * i + 1] - (m as f64 * theta).sin()).abs() < 1e-15);
        }

        let partial = ModelConfig::tiny(); // 4 of 8 dims rotated
        let out = rope_apply(&v, 3, &partial);
        assert_eq!(out[4..], v[4..]);
        let n0: f64 = v.iter().map(|x| x * x).sum();
        let n1: f64 = out.iter().map(|x| x * x).sum();
        assert!((n0.sqrt() - n1.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rope_relative_position() {
        let cfg = ModelConfig::desk();
        let d = cfg.head_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        for _ in 0..50 {
            let q = randv(&mut rng, d);
            let k = randv(&mut rng, d);
            let m = rng.random_range(0..200);
            let n = rng.random_range(0..200);
            let s = rng.random_range(0..500);
            let a = dot(&rope_apply(&q, m, &cfg), &rope_apply(&k, n, &cfg));
            let b = dot(&rope_apply(&q, m + s, &cfg), &rope_apply(&k, n + s, &cfg));
            assert!((a - b).abs() < 1e-9, "{a} {b}");
        }
    }

    #[test]
    fn attention_examples() {
        // seq 1: output is V row 0
        let (o, p) = causal_attention(&[0.3, 0.1], &[1.0, 2.0], &[5.0, -6.0], 1, 1, 2);
        assert_eq!(o, vec![5.0, -6.0]);
        assert_eq!(p, vec![1.0]);

        // identical keys: uniform weights over allowed positions
        let seq = 4;
        let q: Vec<f64> = (0..seq * 2).map(|i| i as f64 * 0.37).collect();
        let k = [0.5, -0.25].repeat(seq);
        let v: Vec<f64> = (0..seq * 2).map(|i| i as f64).collect();
        let (_, p) = causal_attention(&q, &k, &v, seq, 1, 2);
        for i in 0..seq {
            for j in 0..seq {
                let want = if j <= i { 1.0 / (i + 1) as f64 } else { 0.0 };
                assert!((p[i * seq + j] - want).abs() < 1e-15);
            }
            let s: f64 = p[i * seq..(i + 1) * seq].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }

        // two positions, one head of dim 1
        let (o, p) = causal_attention(&[1.0, 2.0], &[0.5, -1.0], &[3.0, 7.0], 2, 1, 1);
        let (s0, s1) = (2.0 * 0.5, -2.0);
        let w0 = f64::exp(s0) / (f64::exp(s0) + f64::exp(s1));
        assert!((p[2] - w0).abs() < 1e-15);
        assert!((o[1] - (w0 * 3.0 + (1.0 - w0) * 7.0)).abs() < 1e-14);
        assert_eq!(o[0], 3.0);
    }

    #[test]
    fn cross_entropy_examples() {
        let v = 7;
        let logits = vec![0.25; 3 * v];
        let l = cross_entropy_loss(&logits, &[1, 4, 6], None, v).unwrap();
        assert!((l - (v as f64).ln()).abs() < 1e-14);

        let mut big = vec![0.0; v];
        big[2] = 1e4;
        assert!(cross_entropy_loss(&big, &[2], None, v).unwrap() < 1e-12);

        let logits = [0.5, -1.0, 2.0, 1.5, 0.0, -0.5];
        let l = cross_entropy_loss(&logits, &[2, 0], None, 3).unwrap();
        let a = -(2.0f64.exp() / (0.5f64.exp() + (-1.0f64).exp() + 2.0f64.exp())).ln();
        let b = -(1.5f64.exp() / (1.5f64.exp() + 1.0 + (-0.5f64).exp())).ln();
        assert!((l - (a + b) / 2.0).abs() < 1e-14);

        let m = cross_entropy_loss(&logits, &[2, 0], Some(&[false, true]), 3).unwrap();
        assert!((m - b).abs() < 1e-14);
        assert!(cross_entropy_loss(&logits, &[2, 0], Some(&[false, false]), 3).is_err());
        assert!(cross_entropy_loss(&logits, &[2, 3], None, 3).is_err());
    }
}
