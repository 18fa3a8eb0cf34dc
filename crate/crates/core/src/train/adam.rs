use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, Scalar};

use super::TrainConfig;

/// First and second moments for every parameter plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: ModelParams<T>,
    pub v: ModelParams<T>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: &ModelConfig) -> Self {
        AdamState { m: ModelParams::zeros(config), v: ModelParams::zeros(config), t: 0 }
    }
}

/// Global L2 norm of a gradient container.
pub fn grad_norm<T: Scalar>(grads: &ModelParams<T>) -> f64 {
    grads.tensors().iter().flat_map(|(_, t)| t.iter()).map(|g| g.as_f64() * g.as_f64()).sum::<f64>().sqrt()
}

/// One bias-corrected Adam update. Gradients are checked for non-finite
/// values before anything is modified.
pub fn adam_step<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &ModelParams<T>,
    state: &mut AdamState<T>,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    let gt = grads.tensors();
    for (info, g) in &gt {
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient(info.name.clone()));
        }
    }
    let clip = match cfg.grad_clip {
        Some(c) => {
            let n = grad_norm(grads);
            if n > c {
                c / n
            } else {
                1.0
            }
        }
        None => 1.0,
    };
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = T::from_f64(1.0 - b1.powi(t));
    let c2 = T::from_f64(1.0 - b2.powi(t));
    let (b1, b2) = (T::from_f64(b1), T::from_f64(b2));
    let (one, lr_t, eps) = (T::one(), T::from_f64(lr), T::from_f64(cfg.adam_eps));
    let decay = T::from_f64(lr * cfg.weight_decay);
    let clip = T::from_f64(clip);

    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    let ps = params.tensors_mut();
    if ms.len() != gt.len() || vs.len() != gt.len() || ps.len() != gt.len() {
        return Err(Error::Shape("optimizer state does not match parameters".into()));
    }
    for (((_, p), (_, m)), ((_, v), (info, g))) in ps.into_iter().zip(ms).zip(vs.into_iter().zip(&gt)) {
        if p.len() != g.len() || m.len() != g.len() || v.len() != g.len() {
            return Err(Error::Shape(format!("tensor {} differs from its gradient", info.name)));
        }
        for i in 0..g.len() {
            let gi = g[i] * clip;
            m[i] = b1 * m[i] + (one - b1) * gi;
            v[i] = b2 * v[i] + (one - b2) * gi * gi;
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            let shrink = decay * p[i];
            p[i] -= lr_t * mhat / (vhat.sqrt() + eps) + shrink;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> TrainConfig {
        TrainConfig { total_steps: 10, warmup_steps: 0, ..TrainConfig::large() }
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mc = ModelConfig::tiny();
        let mut p = ModelParams::<f64>::init(&mc, 1).unwrap();
        let before = p.clone();
        let mut st = AdamState::new(&mc);
        adam_step(&mut p, &ModelParams::zeros(&mc), &mut st, 0.1, &cfg()).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_step_by_hand() {
        // m = 0.1, v = 0.05; corrected both to 1, so the step is lr / (1 + eps)
        let mc = ModelConfig::tiny();
        let mut p = ModelParams::<f64>::zeros(&mc);
        let mut g = ModelParams::<f64>::zeros(&mc);
        g.output[0] = 1.0;
        let mut st = AdamState::new(&mc);
        adam_step(&mut p, &g, &mut st, 0.1, &cfg()).unwrap();
        assert!((p.output[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
        assert!((st.m.output[0] - 0.1).abs() < 1e-15);
        assert!((st.v.output[0] - 0.05).abs() < 1e-15);
        assert_eq!(p.output[1], 0.0);
    }

    #[test]
    fn explicit_state_resumes_exactly() {
        let mc = ModelConfig::tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut grads = Vec::new();
        for _ in 0..3 {
            let mut g = ModelParams::<f64>::zeros(&mc);
            g.randomize(1.0, &mut rng);
            grads.push(g);
        }
        let mut p1 = ModelParams::init(&mc, 4).unwrap();
        let mut s1 = AdamState::new(&mc);
        for g in &grads {
            adam_step(&mut p1, g, &mut s1, 0.01, &cfg()).unwrap();
        }
        let mut p2 = ModelParams::init(&mc, 4).unwrap();
        let mut s2 = AdamState::new(&mc);
        adam_step(&mut p2, &grads[0], &mut s2, 0.01, &cfg()).unwrap();
        let (mut p3, mut s3) = (p2.clone(), s2.clone());
        for g in &grads[1..] {
            adam_step(&mut p3, g, &mut s3, 0.01, &cfg()).unwrap();
        }
        assert_eq!(p1, p3);
        assert_eq!(s1, s3);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mc = ModelConfig::tiny();
        let mut p = ModelParams::<f32>::init(&mc, 1).unwrap();
        let before = p.clone();
        let mut g = ModelParams::<f32>::zeros(&mc);
        g.layers[1].w_up[3] = f32::NAN;
        let err = adam_step(&mut p, &g, &mut AdamState::new(&mc), 0.1, &cfg()).unwrap_err();
        assert!(matches!(&err, Error::NonFiniteGradient(n) if n == "layers.1.mlp.w_up"));
        assert_eq!(p, before);
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mc = ModelConfig::tiny();
        let mut g = ModelParams::<f64>::zeros(&mc);
        g.output[0] = 30.0;
        g.output[1] = 40.0;
        assert_eq!(grad_norm(&g), 50.0);
        let c = TrainConfig { grad_clip: Some(5.0), ..cfg() };
        let mut p = ModelParams::<f64>::zeros(&mc);
        let mut st = AdamState::new(&mc);
        adam_step(&mut p, &g, &mut st, 0.1, &c).unwrap();
        assert!((st.m.output[0] - 0.3).abs() < 1e-12);
    }
}
