use rayon::prelude::*;

use super::ops::{gelu, gelu_grad, layer_norm_rows, layer_norm_rows_backward, log_sum_exp, RopeTable};
use super::scalar::{gemm, matmul, matmul_nt, matmul_tn_acc, Layout};
use super::{LayerParams, ModelConfig, ModelParams, NormPlacement, Scalar};
use crate::error::{Error, Result};

/// One training sequence: `targets[i]` is the token that should follow
/// `inputs[..=i]`. Positions with `mask[i] == false` do not contribute.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub inputs: Vec<u32>,
    pub targets: Vec<u32>,
    pub mask: Option<Vec<bool>>,
}

impl Example {
    /// Next-token example over a window: inputs `w[..n-1]`, targets `w[1..]`.
    pub fn from_window(window: &[u32]) -> Self {
        Example {
            inputs: window[..window.len().saturating_sub(1)].to_vec(),
            targets: window.get(1..).unwrap_or(&[]).to_vec(),
            mask: None,
        }
    }

    fn counted(&self) -> usize {
        match &self.mask {
            Some(m) => m.iter().filter(|&&b| b).count(),
            None => self.targets.len(),
        }
    }
}

struct LayerCache<T> {
    ln1_xhat: Vec<T>,
    ln1_rstd: Vec<T>,
    a: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    probs: Vec<T>,
    attn: Vec<T>,
    lna_xhat: Vec<T>,
    lna_rstd: Vec<T>,
    ln2_xhat: Vec<T>,
    ln2_rstd: Vec<T>,
    c: Vec<T>,
    u: Vec<T>,
    g: Vec<T>,
}

struct Cache<T> {
    layers: Vec<LayerCache<T>>,
    final_xhat: Vec<T>,
    final_rstd: Vec<T>,
    z: Vec<T>,
}

fn check_tokens(tokens: &[u32], config: &ModelConfig) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::Empty("input tokens"));
    }
    if tokens.len() > config.seq_len {
        return Err(Error::Shape(format!("{} tokens exceed seq_len {}", tokens.len(), config.seq_len)));
    }
    if let Some(&id) = tokens.iter().find(|&&t| t as usize >= config.vocab_size) {
        return Err(Error::TokenOutOfRange { id, vocab: config.vocab_size });
    }
    Ok(())
}

fn add_bias<T: Scalar>(y: &mut [T], b: &[T]) {
    if b.is_empty() {
        return;
    }
    for row in y.chunks_exact_mut(b.len()) {
        for (v, &bb) in row.iter_mut().zip(b) {
            *v += bb;
        }
    }
}

fn bias_grad<T: Scalar>(dy: &[T], db: &mut [T]) {
    if db.is_empty() {
        return;
    }
    let n = db.len();
    for row in dy.chunks_exact(n) {
        for (d, &g) in db.iter_mut().zip(row) {
            *d += g;
        }
    }
}

fn rotate_heads<T: Scalar>(x: &mut [T], rope: &RopeTable<T>, heads: usize, hd: usize, inverse: bool) {
    if rope.dims == 0 {
        return;
    }
    for (pos, row) in x.chunks_exact_mut(heads * hd).enumerate() {
        for h in 0..heads {
            rope.rotate(&mut row[h * hd..(h + 1) * hd], pos, inverse);
        }
    }
}

fn layer_forward<T: Scalar>(
    x: &mut [T],
    p: &LayerParams<T>,
    cfg: &ModelConfig,
    rope: &RopeTable<T>,
    seq: usize,
) -> LayerCache<T> {
    let h = cfg.hidden;
    let i = cfg.intermediate;
    let eps = cfg.ln_epsilon;
    let z = || vec![T::zero(); seq * h];

    let (mut a, mut ln1_xhat, mut ln1_rstd) = (z(), z(), vec![T::zero(); seq]);
    layer_norm_rows(x, &p.ln1_gamma, &p.ln1_beta, eps, h, &mut a, &mut ln1_xhat, &mut ln1_rstd);

    let (mut q, mut k, mut v) = (z(), z(), z());
    matmul(&a, &p.wq, &mut q, seq, h, h, false);
    matmul(&a, &p.wk, &mut k, seq, h, h, false);
    matmul(&a, &p.wv, &mut v, seq, h, h, false);
    add_bias(&mut q, &p.bq);
    add_bias(&mut k, &p.bk);
    add_bias(&mut v, &p.bv);
    rotate_heads(&mut q, rope, cfg.heads, cfg.head_dim(), false);
    rotate_heads(&mut k, rope, cfg.heads, cfg.head_dim(), false);

    let (attn, probs) = super::ops::causal_attention(&q, &k, &v, seq, cfg.heads, cfg.head_dim());
    let mut proj = z();
    matmul(&attn, &p.wo, &mut proj, seq, h, h, false);
    add_bias(&mut proj, &p.bo);

    let (mut lna_xhat, mut lna_rstd) = (Vec::new(), Vec::new());
    if cfg.norm_placement == NormPlacement::Sandwich {
        lna_xhat = z();
        lna_rstd = vec![T::zero(); seq];
        let src = proj.clone();
        layer_norm_rows(
            &src,
            &p.ln_attn_gamma,
            &p.ln_attn_beta,
            eps,
            h,
            &mut proj,
            &mut lna_xhat,
            &mut lna_rstd,
        );
    }
    for (xv, pv) in x.iter_mut().zip(&proj) {
        *xv += *pv;
    }

    let (mut c, mut ln2_xhat, mut ln2_rstd) = (z(), z(), vec![T::zero(); seq]);
    layer_norm_rows(x, &p.ln2_gamma, &p.ln2_beta, eps, h, &mut c, &mut ln2_xhat, &mut ln2_rstd);
    let mut u = vec![T::zero(); seq * i];
    matmul(&c, &p.w_up, &mut u, seq, h, i, false);
    add_bias(&mut u, &p.b_up);
    let g: Vec<T> = u.iter().map(|&v| gelu(v)).collect();
    let mut m = z();
    matmul(&g, &p.w_down, &mut m, seq, i, h, false);
    add_bias(&mut m, &p.b_down);
    for (xv, mv) in x.iter_mut().zip(&m) {
        *xv += *mv;
    }

    LayerCache {
        ln1_xhat,
        ln1_rstd,
        a,
        q,
        k,
        v,
        probs,
        attn,
        lna_xhat,
        lna_rstd,
        ln2_xhat,
        ln2_rstd,
        c,
        u,
        g,
    }
}

fn forward_cached<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    tokens: &[u32],
) -> (Vec<T>, Cache<T>) {
    let h = cfg.hidden;
    let seq = tokens.len();
    let rope = RopeTable::new(cfg, seq);
    let mut x = Vec::with_capacity(seq * h);
    for &t in tokens {
        x.extend_from_slice(&params.embedding[t as usize * h..(t as usize + 1) * h]);
    }
    let layers = params.layers.iter().map(|lp| layer_forward(&mut x, lp, cfg, &rope, seq)).collect();
    let (mut z, mut final_xhat, mut final_rstd) =
        (vec![T::zero(); seq * h], vec![T::zero(); seq * h], vec![T::zero(); seq]);
    layer_norm_rows(
        &x,
        &params.final_gamma,
        &params.final_beta,
        cfg.ln_epsilon,
        h,
        &mut z,
        &mut final_xhat,
        &mut final_rstd,
    );
    let mut logits = vec![T::zero(); seq * cfg.vocab_size];
    matmul(&z, &params.output, &mut logits, seq, h, cfg.vocab_size, false);
    (logits, Cache { layers, final_xhat, final_rstd, z })
}

/// Logits `[len(tokens) x vocab]` for a token sequence.
pub fn forward<T: Scalar>(params: &ModelParams<T>, config: &ModelConfig, tokens: &[u32]) -> Result<Vec<T>> {
    check_tokens(tokens, config)?;
    Ok(forward_cached(params, config, tokens).0)
}

fn layer_backward<T: Scalar>(
    dx: &mut [T],
    p: &LayerParams<T>,
    c: &LayerCache<T>,
    gp: &mut LayerParams<T>,
    cfg: &ModelConfig,
    rope: &RopeTable<T>,
    seq: usize,
) {
    let h = cfg.hidden;
    let i = cfg.intermediate;
    let heads = cfg.heads;
    let hd = cfg.head_dim();

    // MLP branch: dx is the gradient at the block output
    bias_grad(dx, &mut gp.b_down);
    matmul_tn_acc(&c.g, dx, &mut gp.w_down, i, seq, h);
    let mut du = vec![T::zero(); seq * i];
    matmul_nt(dx, &p.w_down, &mut du, seq, h, i, false);
    for (d, &u) in du.iter_mut().zip(&c.u) {
        *d *= gelu_grad(u);
    }
    bias_grad(&du, &mut gp.b_up);
    matmul_tn_acc(&c.c, &du, &mut gp.w_up, h, seq, i);
    let mut dc = vec![T::zero(); seq * h];
    matmul_nt(&du, &p.w_up, &mut dc, seq, i, h, false);
    layer_norm_rows_backward(
        &dc,
        &c.ln2_xhat,
        &c.ln2_rstd,
        &p.ln2_gamma,
        h,
        dx,
        &mut gp.ln2_gamma,
        &mut gp.ln2_beta,
    );

    // attention branch: dx now holds the gradient at the attention residual
    let dproj = if cfg.norm_placement == NormPlacement::Sandwich {
        let mut d = vec![T::zero(); seq * h];
        layer_norm_rows_backward(
            dx,
            &c.lna_xhat,
            &c.lna_rstd,
            &p.ln_attn_gamma,
            h,
            &mut d,
            &mut gp.ln_attn_gamma,
            &mut gp.ln_attn_beta,
        );
        d
    } else {
        dx.to_vec()
    };
    bias_grad(&dproj, &mut gp.bo);
    matmul_tn_acc(&c.attn, &dproj, &mut gp.wo, h, seq, h);
    let mut dattn = vec![T::zero(); seq * h];
    matmul_nt(&dproj, &p.wo, &mut dattn, seq, h, h, false);

    let scale = T::one() / T::from_f64(hd as f64).sqrt();
    let mut dq = vec![T::zero(); seq * h];
    let mut dk = vec![T::zero(); seq * h];
    let mut dv = vec![T::zero(); seq * h];
    let mut ds = vec![T::zero(); seq * seq];
    for head in 0..heads {
        let off = head * hd;
        let pr = &c.probs[head * seq * seq..(head + 1) * seq * seq];
        // dP = dO_h V_hᵀ
        gemm(
            seq,
            hd,
            seq,
            T::one(),
            &dattn,
            Layout::block(off, h),
            &c.v,
            Layout::block_trans(off, h),
            T::zero(),
            &mut ds,
            Layout::rows(0, seq),
        );
        // dV_h = Pᵀ dO_h
        gemm(
            seq,
            seq,
            hd,
            T::one(),
            pr,
            Layout::trans(0, seq),
            &dattn,
            Layout::block(off, h),
            T::zero(),
            &mut dv,
            Layout::block(off, h),
        );
        for r in 0..seq {
            let prow = &pr[r * seq..(r + 1) * seq];
            let drow = &mut ds[r * seq..(r + 1) * seq];
            let dot: T = (0..=r).map(|j| prow[j] * drow[j]).sum();
            for j in 0..seq {
                drow[j] = if j <= r { prow[j] * (drow[j] - dot) } else { T::zero() };
            }
        }
        // dQ_h = s dS K_h ; dK_h = s dSᵀ Q_h
        gemm(
            seq,
            seq,
            hd,
            scale,
            &ds,
            Layout::rows(0, seq),
            &c.k,
            Layout::block(off, h),
            T::zero(),
            &mut dq,
            Layout::block(off, h),
        );
        gemm(
            seq,
            seq,
            hd,
            scale,
            &ds,
            Layout::trans(0, seq),
            &c.q,
            Layout::block(off, h),
            T::zero(),
            &mut dk,
            Layout::block(off, h),
        );
    }
    rotate_heads(&mut dq, rope, heads, hd, true);
    rotate_heads(&mut dk, rope, heads, hd, true);

    bias_grad(&dq, &mut gp.bq);
    bias_grad(&dk, &mut gp.bk);
    bias_grad(&dv, &mut gp.bv);
    matmul_tn_acc(&c.a, &dq, &mut gp.wq, h, seq, h);
    matmul_tn_acc(&c.a, &dk, &mut gp.wk, h, seq, h);
    matmul_tn_acc(&c.a, &dv, &mut gp.wv, h, seq, h);
    let mut da = vec![T::zero(); seq * h];
    matmul_nt(&dq, &p.wq, &mut da, seq, h, h, false);
    matmul_nt(&dk, &p.wk, &mut da, seq, h, h, true);
    matmul_nt(&dv, &p.wv, &mut da, seq, h, h, true);
    layer_norm_rows_backward(
        &da,
        &c.ln1_xhat,
        &c.ln1_rstd,
        &p.ln1_gamma,
        h,
        dx,
        &mut gp.ln1_gamma,
        &mut gp.ln1_beta,
    );
}

/// Summed (not averaged) loss of one example and the gradient of that sum,
/// each position's term multiplied by `weight`.
fn example_grads<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    ex: &Example,
    weight: T,
) -> (T, ModelParams<T>) {
    let seq = ex.inputs.len();
    let h = cfg.hidden;
    let vsz = cfg.vocab_size;
    let (logits, cache) = forward_cached(params, cfg, &ex.inputs);

    let mut loss = T::zero();
    let mut dlogits = vec![T::zero(); seq * vsz];
    for (pos, &t) in ex.targets.iter().enumerate() {
        if ex.mask.as_ref().is_some_and(|m| !m[pos]) {
            continue;
        }
        let row = &logits[pos * vsz..(pos + 1) * vsz];
        let lse = log_sum_exp(row);
        loss += lse - row[t as usize];
        let drow = &mut dlogits[pos * vsz..(pos + 1) * vsz];
        for (d, &l) in drow.iter_mut().zip(row) {
            *d = (l - lse).exp() * weight;
        }
        drow[t as usize] -= weight;
    }

    let mut grads = ModelParams::zeros(cfg);
    matmul_tn_acc(&cache.z, &dlogits, &mut grads.output, h, seq, vsz);
    let mut dz = vec![T::zero(); seq * h];
    matmul_nt(&dlogits, &params.output, &mut dz, seq, vsz, h, false);
    let mut dx = vec![T::zero(); seq * h];
    layer_norm_rows_backward(
        &dz,
        &cache.final_xhat,
        &cache.final_rstd,
        &params.final_gamma,
        h,
        &mut dx,
        &mut grads.final_gamma,
        &mut grads.final_beta,
    );
    let rope = RopeTable::new(cfg, seq);
    for l in (0..cfg.num_layers).rev() {
        layer_backward(&mut dx, &params.layers[l], &cache.layers[l], &mut grads.layers[l], cfg, &rope, seq);
    }
    for (pos, &t) in ex.inputs.iter().enumerate() {
        let row = &mut grads.embedding[t as usize * h..(t as usize + 1) * h];
        for (g, &d) in row.iter_mut().zip(&dx[pos * h..(pos + 1) * h]) {
            *g += d;
        }
    }
    (loss, grads)
}

fn check_batch(batch: &[Example], config: &ModelConfig) -> Result<usize> {
    let mut count = 0;
    for ex in batch {
        check_tokens(&ex.inputs, config)?;
        if ex.targets.len() != ex.inputs.len() {
            return Err(Error::Shape(format!("{} inputs but {} targets", ex.inputs.len(), ex.targets.len())));
        }
        if let Some(m) = &ex.mask {
            if m.len() != ex.targets.len() {
                return Err(Error::Shape(format!("mask length {} != {}", m.len(), ex.targets.len())));
            }
        }
        if let Some(&id) = ex.targets.iter().find(|&&t| t as usize >= config.vocab_size) {
            return Err(Error::TokenOutOfRange { id, vocab: config.vocab_size });
        }
        count += ex.counted();
    }
    if count == 0 {
        return Err(Error::Empty("unmasked target positions"));
    }
    Ok(count)
}

/// Mean cross-entropy over every unmasked position of the batch.
pub fn loss<T: Scalar>(params: &ModelParams<T>, config: &ModelConfig, batch: &[Example]) -> Result<T> {
    let count = check_batch(batch, config)?;
    let sums: Vec<T> = batch
        .par_iter()
        .map(|ex| {
            let logits = forward_cached(params, config, &ex.inputs).0;
            super::ops::cross_entropy_sum(&logits, &ex.targets, ex.mask.as_deref(), config.vocab_size)
                .map(|(s, _)| s)
        })
        .collect::<Result<_>>()?;
    Ok(sums.into_iter().sum::<T>() / T::from_f64(count as f64))
}

/// Mean loss over unmasked positions and its gradient for every parameter.
/// Examples are processed in parallel; the per-example gradients are summed
/// in batch order so the result does not depend on the thread count.
pub fn loss_and_grads<T: Scalar>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    batch: &[Example],
) -> Result<(T, ModelParams<T>)> {
    let count = check_batch(batch, config)?;
    let weight = T::one() / T::from_f64(count as f64);
    let parts: Vec<(T, ModelParams<T>)> =
        batch.par_iter().map(|ex| example_grads(params, config, ex, weight)).collect();
    let mut iter = parts.into_iter();
    let (mut loss, mut grads) = iter.next().expect("batch checked non-empty");
    for (l, g) in iter {
        loss += l;
        grads.add_assign(&g)?;
    }
    Ok((loss * weight, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ops::layer_norm_1p;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(cfg: &ModelConfig, seed: u64, std: f64) -> ModelParams<f64> {
        let mut p = ModelParams::zeros(cfg);
        p.randomize(std, &mut ChaCha8Rng::seed_from_u64(seed));
        p
    }

    fn random_tokens(rng: &mut ChaCha8Rng, n: usize, vocab: usize) -> Vec<u32> {
        (0..n).map(|_| rng.random_range(0..vocab as u32)).collect()
    }

    // Plain loops, no gemm and no shared helpers beyond the scalar ops.
    fn dense_block(x: &[f64], p: &LayerParams<f64>, cfg: &ModelConfig, seq: usize) -> Vec<f64> {
        let h = cfg.hidden;
        let hd = cfg.head_dim();
        let r = cfg.rotary_dims();
        let lin = |x: &[f64], w: &[f64], b: &[f64], n_in: usize, n_out: usize| {
            let mut y = vec![0.0; seq * n_out];
            for s in 0..seq {
                for o in 0..n_out {
                    let mut acc = if b.is_empty() { 0.0 } else { b[o] };
                    for k in 0..n_in {
                        acc += x[s * n_in + k] * w[k * n_out + o];
                    }
                    y[s * n_out + o] = acc;
                }
            }
            y
        };
        let ln = |x: &[f64], g: &[f64], b: &[f64]| -> Vec<f64> {
            x.chunks(h).flat_map(|row| layer_norm_1p(row, g, b, cfg.ln_epsilon)).collect()
        };
        let rot = |v: &mut [f64]| {
            for s in 0..seq {
                for head in 0..cfg.heads {
                    for i in 0..r / 2 {
                        let th = s as f64 * cfg.rope_base.powf(-2.0 * i as f64 / r as f64);
                        let base = s * h + head * hd + 2 * i;
                        let (a, b) = (v[base], v[base + 1]);
                        v[base] = a * th.cos() - b * th.sin();
                        v[base + 1] = a * th.sin() + b * th.cos();
                    }
                }
            }
        };
        let a = ln(x, &p.ln1_gamma, &p.ln1_beta);
        let mut q = lin(&a, &p.wq, &p.bq, h, h);
        let mut k = lin(&a, &p.wk, &p.bk, h, h);
        let v = lin(&a, &p.wv, &p.bv, h, h);
        rot(&mut q);
        rot(&mut k);
        let mut o = vec![0.0; seq * h];
        for head in 0..cfg.heads {
            for i in 0..seq {
                let scores: Vec<f64> = (0..=i)
                    .map(|j| {
                        (0..hd).map(|d| q[i * h + head * hd + d] * k[j * h + head * hd + d]).sum::<f64>()
                            / (hd as f64).sqrt()
                    })
                    .collect();
                let mx = scores.iter().cloned().fold(f64::MIN, f64::max);
                let z: f64 = scores.iter().map(|s| (s - mx).exp()).sum();
                for (j, s) in scores.iter().enumerate() {
                    let w = (s - mx).exp() / z;
                    for d in 0..hd {
                        o[i * h + head * hd + d] += w * v[j * h + head * hd + d];
                    }
                }
            }
        }
        let proj = lin(&o, &p.wo, &p.bo, h, h);
        let hres: Vec<f64> = x.iter().zip(&proj).map(|(a, b)| a + b).collect();
        let c = ln(&hres, &p.ln2_gamma, &p.ln2_beta);
        let u = lin(&c, &p.w_up, &p.b_up, h, cfg.intermediate);
        let g: Vec<f64> = u.iter().map(|&v| gelu(v)).collect();
        let m = lin(&g, &p.w_down, &p.b_down, cfg.intermediate, h);
        hres.iter().zip(&m).map(|(a, b)| a + b).collect()
    }

    #[test]
    fn block_matches_dense_oracle() {
        let mut cfg = ModelConfig::tiny();
        cfg.num_layers = 1;
        let p = random_params(&cfg, 4, 0.4);
        let seq = 6;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..seq * cfg.hidden).map(|_| rng.random::<f64>() - 0.5).collect();
        let want = dense_block(&x, &p.layers[0], &cfg, seq);
        let mut got = x.clone();
        let rope = RopeTable::new(&cfg, seq);
        layer_forward(&mut got, &p.layers[0], &cfg, &rope, seq);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-10, "{a} {b}");
        }
    }

    #[test]
    fn zero_block_is_identity() {
        let cfg = ModelConfig::tiny();
        let p = ModelParams::<f64>::zeros(&cfg);
        let seq = 5;
        let x: Vec<f64> = (0..seq * cfg.hidden).map(|i| (i as f64).cos()).collect();
        let mut y = x.clone();
        let rope = RopeTable::new(&cfg, seq);
        layer_forward(&mut y, &p.layers[0], &cfg, &rope, seq);
        assert_eq!(x, y);
    }

    #[test]
    fn forward_shape_and_errors() {
        let cfg = ModelConfig::tiny();
        let p = ModelParams::<f32>::init(&cfg, 1).unwrap();
        assert_eq!(forward(&p, &cfg, &[1, 2, 3]).unwrap().len(), 3 * cfg.vocab_size);
        assert!(matches!(forward(&p, &cfg, &[1, 64]), Err(Error::TokenOutOfRange { id: 64, .. })));
        assert!(forward(&p, &cfg, &[0; 9]).is_err());
        assert!(forward(&p, &cfg, &[]).is_err());
        let a = forward(&p, &cfg, &[5, 6, 7]).unwrap();
        let b = forward(&ModelParams::<f32>::init(&cfg, 1).unwrap(), &cfg, &[5, 6, 7]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn causality_is_bit_exact() {
        for placement in [NormPlacement::PreLn, NormPlacement::Sandwich] {
            let cfg = ModelConfig { norm_placement: placement, ..ModelConfig::tiny() };
            let p = random_params(&cfg, 2, 0.3);
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let v = cfg.vocab_size;
            for _ in 0..20 {
                let toks = random_tokens(&mut rng, cfg.seq_len, v);
                let j = rng.random_range(1..cfg.seq_len);
                let mut other = toks.clone();
                for t in &mut other[j..] {
                    *t = rng.random_range(0..v as u32);
                }
                let a = forward(&p, &cfg, &toks).unwrap();
                let b = forward(&p, &cfg, &other).unwrap();
                assert_eq!(a[..j * v], b[..j * v]);
            }
        }
    }

    #[test]
    fn duplicated_batch_keeps_mean_gradient() {
        let cfg = ModelConfig::tiny();
        let p = random_params(&cfg, 3, 0.2);
        let ex = Example::from_window(&[1, 5, 9, 2, 7, 7]);
        let (l1, g1) = loss_and_grads(&p, &cfg, std::slice::from_ref(&ex)).unwrap();
        let (l2, g2) = loss_and_grads(&p, &cfg, &[ex.clone(), ex]).unwrap();
        assert!((l1 - l2).abs() < 1e-14);
        for ((_, a), (_, b)) in g1.tensors().iter().zip(g2.tensors().iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn loss_agrees_with_grad_path() {
        let cfg = ModelConfig::tiny();
        let p = random_params(&cfg, 8, 0.2);
        let batch = vec![
            Example::from_window(&[3, 1, 4, 1, 5, 9]),
            Example { inputs: vec![2, 6], targets: vec![5, 3], mask: Some(vec![false, true]) },
        ];
        let a = loss(&p, &cfg, &batch).unwrap();
        let (b, _) = loss_and_grads(&p, &cfg, &batch).unwrap();
        assert!((a - b).abs() < 1e-13);
    }

    #[test]
    fn stationary_when_targets_are_certain() {
        // output weights push the target logit far above the rest
        let cfg = ModelConfig::tiny();
        let mut p = ModelParams::<f64>::zeros(&cfg);
        p.final_beta[0] = 1.0;
        for v in 0..cfg.vocab_size {
            p.output[v] = if v == 3 { 60.0 } else { -60.0 };
        }
        let ex = Example::from_window(&[3, 3, 3, 3]);
        let (l, g) = loss_and_grads(&p, &cfg, &[ex]).unwrap();
        assert!(l < 1e-40);
        for (info, t) in g.tensors() {
            let n = t.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(n < 1e-6, "{} {n}", info.name);
        }
    }

    // Worst per-tensor ratio ||analytic - numeric|| / max(||analytic||, ||numeric||).
    fn gradcheck(cfg: &ModelConfig, seed: u64) -> f64 {
        // unit-scale embeddings keep the first LayerNorm well conditioned
        let mut p = random_params(cfg, seed, 0.3);
        let mut r = ChaCha8Rng::seed_from_u64(seed + 7);
        p.embedding.iter_mut().for_each(|v| *v = r.random::<f64>() * 3.46 - 1.73);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let batch: Vec<Example> = (0..2)
            .map(|_| Example::from_window(&random_tokens(&mut rng, cfg.seq_len + 1, cfg.vocab_size)))
            .collect();
        let (_, g) = loss_and_grads(&p, cfg, &batch).unwrap();
        let grads: Vec<(String, Vec<f64>)> =
            g.tensors().into_iter().map(|(i, t)| (i.name, t.to_vec())).collect();
        let eps = 1e-3;
        let mut worst = 0.0f64;
        let mut q = p.clone();
        for (ti, (name, analytic)) in grads.iter().enumerate() {
            let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
            for (j, &a) in analytic.iter().enumerate() {
                let orig = q.tensors()[ti].1[j];
                q.tensors_mut()[ti].1[j] = orig + eps;
                let lp = loss(&q, cfg, &batch).unwrap();
                q.tensors_mut()[ti].1[j] = orig - eps;
                let lm = loss(&q, cfg, &batch).unwrap();
                q.tensors_mut()[ti].1[j] = orig;
                let num = (lp - lm) / (2.0 * eps);
                diff += (a - num) * (a - num);
                na += a * a;
                nn += num * num;
            }
            let rel = diff.sqrt() / na.sqrt().max(nn.sqrt()).max(1e-300);
            assert!(na > 0.0, "{name} has an all-zero gradient");
            worst = worst.max(rel);
        }
        worst
    }

    #[test]
    fn gradcheck_default_layout() {
        let worst = gradcheck(&ModelConfig::tiny(), 5);
        assert!(worst < 1e-4, "{worst}");
    }

    #[test]
    fn gradcheck_sandwich_without_bias() {
        let cfg = ModelConfig {
            norm_placement: NormPlacement::Sandwich,
            bias: false,
            num_layers: 1,
            seq_len: 5,
            vocab_size: 20,
            ..ModelConfig::tiny()
        };
        let worst = gradcheck(&cfg, 21);
        assert!(worst < 1e-4, "{worst}");
    }
}
