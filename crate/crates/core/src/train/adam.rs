//! Adam with bias correction and global-norm clipping.

use crate::autodiff::{Gradients, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient norm ceiling; `0` disables clipping.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            clip_norm: 1.0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok_beta = |b: f64| b > 0.0 && b < 1.0;
        if !ok_beta(self.beta1) || !ok_beta(self.beta2) {
            return Err(Error::Config(format!(
                "Adam betas must lie in (0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        let positive = |x: f64| x > 0.0;
        if !(positive(self.lr) && self.lr.is_finite())
            || !positive(self.eps)
            || self.clip_norm.is_nan()
            || self.clip_norm < 0.0
        {
            return Err(Error::Config(
                "lr and eps must be positive, clip_norm non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// First and second moments per parameter plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    /// Number of updates applied so far.
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .iter()
            .map(|(_, p)| vec![0.0; p.value.numel()])
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// Clips `grads` in place and applies one Adam update. Returns the global
/// gradient norm before clipping. A non-finite gradient aborts the step
/// before anything is modified.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &mut Gradients,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<f64> {
    for id in params.ids() {
        if grads.get(id).iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient(params.get(id).name.clone()));
        }
    }
    let norm = grads.global_norm();
    if cfg.clip_norm > 0.0 && norm > cfg.clip_norm {
        grads.scale(cfg.clip_norm / norm);
    }

    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let k = id.index();
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        let g = grads.get(id);
        let p = params.value_mut(id).data_mut();
        for j in 0..p.len() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store(values: &[(&str, Vec<f64>)]) -> ParamStore {
        let mut s = ParamStore::new();
        for (name, v) in values {
            s.add(*name, Tensor::vector(v.clone())).unwrap();
        }
        s
    }

    #[test]
    fn zero_gradient_is_a_null_step() {
        let mut p = store(&[("a", vec![1.0, -2.0]), ("b", vec![3.0])]);
        let before = p.clone();
        let mut g = Gradients::zeros_like(&p);
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &mut g, &mut st, &AdamConfig::default()).unwrap();
        for id in p.ids() {
            assert_eq!(p.value(id), before.value(id));
        }
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = store(&[("w", vec![0.5])]);
        let mut g = Gradients::zeros_like(&p);
        g.get_mut(p.id("w").unwrap())[0] = 1.0;
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig {
            lr: 0.001,
            clip_norm: 0.0,
            ..AdamConfig::default()
        };
        adam_step(&mut p, &mut g, &mut st, &cfg).unwrap();
        assert!((p.by_name("w").unwrap().item() - (0.5 - 0.001)).abs() < 1e-12);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn identical_inputs_update_identically() {
        let mut p = store(&[("a", vec![0.1, 0.2]), ("b", vec![0.1, 0.2])]);
        let mut g = Gradients::zeros_like(&p);
        for id in p.ids().collect::<Vec<_>>() {
            g.get_mut(id).copy_from_slice(&[0.3, -0.7]);
        }
        let mut st = AdamState::new(&p);
        for _ in 0..3 {
            let mut gg = g.clone();
            adam_step(&mut p, &mut gg, &mut st, &AdamConfig::default()).unwrap();
        }
        assert_eq!(p.by_name("a"), p.by_name("b"));
    }

    #[test]
    fn first_update_is_scale_invariant() {
        let run = |c: f64| {
            let mut p = store(&[("a", vec![0.0, 0.0, 0.0])]);
            let mut g = Gradients::zeros_like(&p);
            g.get_mut(p.id("a").unwrap())
                .copy_from_slice(&[0.2 * c, -0.05 * c, 0.4 * c]);
            let mut st = AdamState::new(&p);
            let cfg = AdamConfig {
                clip_norm: 0.0,
                ..AdamConfig::default()
            };
            adam_step(&mut p, &mut g, &mut st, &cfg).unwrap();
            p.by_name("a").unwrap().clone()
        };
        let base = run(1.0);
        for c in [0.1, 10.0] {
            assert!(run(c).max_abs_diff(&base) < 1e-6);
        }
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let mut p = store(&[("a", vec![0.0, 0.0])]);
        let mut g = Gradients::zeros_like(&p);
        g.get_mut(p.id("a").unwrap()).copy_from_slice(&[3.0, 4.0]);
        let mut st = AdamState::new(&p);
        let norm = adam_step(&mut p, &mut g, &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(norm, 5.0);
        assert!((g.global_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut p = store(&[("ok", vec![0.0]), ("bad", vec![0.0])]);
        let mut g = Gradients::zeros_like(&p);
        g.get_mut(p.id("bad").unwrap())[0] = f64::NAN;
        let mut st = AdamState::new(&p);
        let err = adam_step(&mut p, &mut g, &mut st, &AdamConfig::default()).unwrap_err();
        assert!(err.to_string().contains("bad"), "{err}");
        assert_eq!(st.t, 0);
        assert_eq!(p.by_name("ok").unwrap().item(), 0.0);
    }

    #[test]
    fn betas_validated() {
        let bad = AdamConfig {
            beta2: 1.0,
            ..AdamConfig::default()
        };
        assert!(bad.validate().is_err());
        AdamConfig::default().validate().unwrap();
    }
}
