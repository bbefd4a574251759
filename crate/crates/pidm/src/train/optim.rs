//! AdamW with decoupled weight decay, cosine learning-rate decay, and global
//! gradient-norm clipping. Update arithmetic runs in f64 regardless of the
//! parameter dtype.

use crate::model::decays;
use crate::tensor::{ParamStore, Scalar};

use super::TrainError;

/// peak * 0.5 * (1 + cos(pi * step / total)); no warmup. Steps past the end
/// clamp to 0.
pub fn cosine_lr(step: usize, total_steps: usize, peak: f64) -> f64 {
    if total_steps == 0 {
        return 0.0;
    }
    let s = (step as f64 / total_steps as f64).min(1.0);
    peak * 0.5 * (1.0 + (std::f64::consts::PI * s).cos())
}

/// First and second moment accumulators plus the shared step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<E> {
    pub m: ParamStore<E>,
    pub v: ParamStore<E>,
    pub step: u64,
}

impl<E: Scalar> AdamState<E> {
    pub fn zeros_like(params: &ParamStore<E>) -> Self {
        let mut m = ParamStore::new();
        let mut v = ParamStore::new();
        for (name, p) in params.iter() {
            let zeros = vec![E::zero(); p.data.len()];
            m.insert(name, p.shape.clone(), zeros.clone()).unwrap();
            v.insert(name, p.shape.clone(), zeros).unwrap();
        }
        AdamState { m, v, step: 0 }
    }
}

/// Scale all gradients so their joint l2 norm is at most `max_norm`; returns
/// the pre-clip norm.
pub fn clip_global_norm<E: Scalar>(grads: &mut ParamStore<E>, max_norm: f64) -> f64 {
    let mut sq = 0.0f64;
    for (_, g) in grads.iter() {
        for &v in &g.data {
            let x = v.as_f64();
            sq += x * x;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = E::from_f64(max_norm / norm);
        for (_, g) in grads.iter_mut() {
            for v in g.data.iter_mut() {
                *v = *v * scale;
            }
        }
    }
    norm
}

/// One bias-corrected AdamW update. Decay applies to weight matrices only.
/// Parameters matched by `frozen` are skipped entirely.
#[allow(clippy::too_many_arguments)]
pub fn adamw_step<E: Scalar>(
    params: &mut ParamStore<E>,
    grads: &ParamStore<E>,
    state: &mut AdamState<E>,
    lr: f64,
    betas: (f64, f64),
    eps: f64,
    weight_decay: f64,
    frozen: impl Fn(&str) -> bool,
) -> Result<(), TrainError> {
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = betas;
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    let names: Vec<String> = params.names().cloned().collect();
    for name in &names {
        if frozen(name) {
            continue;
        }
        let g = grads.get(name);
        if let Some(bad) = g.data.iter().find(|v| !v.is_finite()) {
            let _ = bad;
            return Err(TrainError::NonFiniteGrad(name.clone()));
        }
        let decay = if decays(name) { weight_decay } else { 0.0 };
        let m = state.m.get_mut(name);
        for (mv, &gv) in m.data.iter_mut().zip(&g.data) {
            *mv = E::from_f64(b1 * mv.as_f64() + (1.0 - b1) * gv.as_f64());
        }
        let v = state.v.get_mut(name);
        for (vv, &gv) in v.data.iter_mut().zip(&g.data) {
            let gf = gv.as_f64();
            *vv = E::from_f64(b2 * vv.as_f64() + (1.0 - b2) * gf * gf);
        }
        let m = state.m.get(name).data.clone();
        let v = state.v.get(name).data.clone();
        let p = params.get_mut(name);
        for ((pv, mv), vv) in p.data.iter_mut().zip(&m).zip(&v) {
            let mhat = mv.as_f64() / bc1;
            let vhat = vv.as_f64() / bc2;
            let mut x = pv.as_f64();
            x -= lr * mhat / (vhat.sqrt() + eps);
            if decay > 0.0 {
                x -= lr * decay * x;
            }
            *pv = E::from_f64(x);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("layer.w", vec![1], vec![v]).unwrap();
        s
    }

    #[test]
    fn cosine_endpoints_and_midpoint() {
        assert_eq!(cosine_lr(0, 100, 1e-3), 1e-3);
        assert!((cosine_lr(50, 100, 1e-3) - 5e-4).abs() < 1e-18);
        assert_eq!(cosine_lr(100, 100, 1e-3), 0.0);
        assert_eq!(cosine_lr(150, 100, 1e-3), 0.0, "past the end clamps");
    }

    #[test]
    fn first_step_closed_form() {
        // p = 1, g = 1, lr = 0.1, wd = 0: mhat = vhat = 1 so p ~ 0.9.
        let mut p = single(1.0);
        let mut st = AdamState::zeros_like(&p);
        let g = single(1.0);
        adamw_step(&mut p, &g, &mut st, 0.1, (0.9, 0.999), 1e-8, 0.0, |_| false).unwrap();
        let got = p.get("layer.w").data[0];
        assert!((got - 0.9).abs() < 1e-8, "{got}");
    }

    #[test]
    fn zero_grad_is_a_fixed_point_without_decay() {
        let mut p = single(0.7);
        let mut st = AdamState::zeros_like(&p);
        let g = single(0.0);
        adamw_step(&mut p, &g, &mut st, 0.1, (0.9, 0.999), 1e-8, 0.0, |_| false).unwrap();
        assert_eq!(p.get("layer.w").data[0], 0.7);
    }

    #[test]
    fn decoupled_decay_on_weight_matrices_only() {
        let mut p = single(1.0);
        let mut st = AdamState::zeros_like(&p);
        let g = single(0.0);
        adamw_step(&mut p, &g, &mut st, 0.1, (0.9, 0.999), 1e-8, 0.01, |_| false).unwrap();
        assert!((p.get("layer.w").data[0] - 0.999).abs() < 1e-12);
        // Biases, norms, and embeddings are exempt.
        for name in ["layer.b", "ln.g", "ln.beta", "posemb.timestep", "readout.frs"] {
            let mut p = ParamStore::new();
            p.insert(name, vec![1], vec![1.0f64]).unwrap();
            let mut st = AdamState::zeros_like(&p);
            let mut g = ParamStore::new();
            g.insert(name, vec![1], vec![0.0f64]).unwrap();
            adamw_step(&mut p, &g, &mut st, 0.1, (0.9, 0.999), 1e-8, 0.01, |_| false).unwrap();
            assert_eq!(p.get(name).data[0], 1.0, "{name} must not decay");
        }
    }

    #[test]
    fn non_finite_grad_names_the_parameter() {
        let mut p = single(1.0);
        let mut st = AdamState::zeros_like(&p);
        let g = single(f64::NAN);
        let err = adamw_step(&mut p, &g, &mut st, 0.1, (0.9, 0.999), 1e-8, 0.0, |_| false)
            .unwrap_err();
        assert!(err.to_string().contains("layer.w"), "{err}");
    }

    #[test]
    fn clip_rescales_to_max_norm() {
        let mut g = ParamStore::new();
        g.insert("a", vec![2], vec![3.0f64, 4.0]).unwrap();
        let norm = clip_global_norm(&mut g, 1.0);
        assert!((norm - 5.0).abs() < 1e-12);
        let d = &g.get("a").data;
        let clipped = (d[0] * d[0] + d[1] * d[1]).sqrt();
        assert!((clipped - 1.0).abs() < 1e-12);
        // Under the cap: untouched.
        let mut g = ParamStore::new();
        g.insert("a", vec![1], vec![0.5f64]).unwrap();
        clip_global_norm(&mut g, 1.0);
        assert_eq!(g.get("a").data[0], 0.5);
    }
}
