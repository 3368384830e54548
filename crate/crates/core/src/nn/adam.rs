use std::collections::BTreeMap;

use super::{Parameterized, Real, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
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

/// Moment estimates for every parameter, keyed by parameter name.
#[derive(Clone, Debug)]
pub struct AdamState<T = f32> {
    pub config: AdamConfig,
    step: u64,
    moments: BTreeMap<String, (Vec<T>, Vec<T>)>,
}

/// One bias-corrected Adam update of `param` in place. `step` is the
/// 1-based count of updates including this one.
pub fn adam_update<T: Real>(
    param: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    step: u64,
    cfg: &AdamConfig,
) -> Result<()> {
    let n = param.len();
    if grad.len() != n || m.len() != n || v.len() != n {
        return Err(Error::shape(
            "adam_step",
            &[n],
            &[grad.len(), m.len(), v.len()],
        ));
    }
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let bc1 = T::one() - T::lit(cfg.beta1.powi(step as i32));
    let bc2 = T::one() - T::lit(cfg.beta2.powi(step as i32));
    let (lr, eps) = (T::lit(cfg.lr), T::lit(cfg.eps));
    for i in 0..n {
        let g = grad[i];
        m[i] = b1 * m[i] + (T::one() - b1) * g;
        v[i] = b2 * v[i] + (T::one() - b2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] = param[i] - lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Advances the step counter and updates every trainable parameter of
    /// `model` from its accumulated gradient. Parameters without a gradient
    /// are treated as having a zero gradient.
    pub fn step<M: Parameterized<T> + ?Sized>(&mut self, model: &mut M) -> Result<()> {
        self.step += 1;
        let mut result = Ok(());
        let (step, cfg) = (self.step, self.config);
        let moments = &mut self.moments;
        model.visit_mut(&mut |p| {
            if result.is_err() || !p.tensor.requires_grad() {
                return;
            }
            result = Self::update(moments, &p.name, &mut p.tensor, step, &cfg);
        });
        result
    }

    /// Single-tensor form of [`AdamState::step`] for callers managing their
    /// own parameter lists. Does not advance the step counter.
    pub fn step_tensor(&mut self, name: &str, tensor: &mut Tensor<T>) -> Result<()> {
        let step = self.step.max(1);
        let cfg = self.config;
        Self::update(&mut self.moments, name, tensor, step, &cfg)
    }

    fn update(
        moments: &mut BTreeMap<String, (Vec<T>, Vec<T>)>,
        name: &str,
        tensor: &mut Tensor<T>,
        step: u64,
        cfg: &AdamConfig,
    ) -> Result<()> {
        let n = tensor.numel();
        let (m, v) = moments
            .entry(name.to_string())
            .or_insert_with(|| (vec![T::zero(); n], vec![T::zero(); n]));
        let grad = match tensor.grad() {
            Some(g) => g.to_vec(),
            None => vec![T::zero(); n],
        };
        adam_update(tensor.data_mut(), &grad, m, v, step, cfg)
    }
}
