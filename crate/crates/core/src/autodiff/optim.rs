use std::collections::BTreeMap;

use super::{Gradients, ParamId, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected adaptive-moment update of `param` in place.
///
/// `step` is the 1-based update count used for bias correction.
pub fn adam_step(
    param: &mut [f32],
    grad: &[f32],
    m: &mut [f32],
    v: &mut [f32],
    step: u32,
    cfg: &AdamConfig,
) {
    debug_assert!(param.len() == grad.len() && m.len() == grad.len() && v.len() == grad.len());
    let c1 = 1.0 - cfg.beta1.powi(step as i32);
    let c2 = 1.0 - cfg.beta2.powi(step as i32);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        param[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f32>,
    v: Vec<f32>,
}

/// Adam over the parameters of a [`ParamStore`].
///
/// Only parameters that appear in the gradients passed to [`Adam::step`]
/// are touched; the step counter advances once per call.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    step: u32,
    moments: BTreeMap<ParamId, Moments>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    pub fn steps_taken(&self) -> u32 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        for (id, g) in grads.params() {
            let p = params.get_mut(id);
            let st = self.moments.entry(id).or_insert_with(|| Moments {
                m: vec![0.0; g.len()],
                v: vec![0.0; g.len()],
            });
            adam_step(p.data_mut(), g.data(), &mut st.m, &mut st.v, self.step, &self.cfg);
        }
    }

    /// First and second moment estimates for `id`, if it has been updated.
    pub fn moments(&self, id: ParamId) -> Option<(Tensor, Tensor)> {
        self.moments
            .get(&id)
            .map(|st| (Tensor::from_vec(st.m.clone()), Tensor::from_vec(st.v.clone())))
    }
}
