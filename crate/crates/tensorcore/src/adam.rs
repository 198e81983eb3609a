//! Adam with bias correction.

use crate::element::{el, Element};
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// First/second moment buffers for one parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamParamState<E: Element = f32> {
    pub m: Tensor<E>,
    pub v: Tensor<E>,
}

impl<E: Element> AdamParamState<E> {
    pub fn zeros_like(param: &Tensor<E>) -> Self {
        Self {
            m: Tensor::zeros(param.shape().to_vec()),
            v: Tensor::zeros(param.shape().to_vec()),
        }
    }
}

/// One bias-corrected Adam update for a single parameter. `t` is the step
/// counter already incremented for this update (first step has `t == 1`).
pub fn adam_update<E: Element>(
    param: &Tensor<E>,
    grad: &Tensor<E>,
    state: &mut AdamParamState<E>,
    config: &AdamConfig,
    t: u64,
) -> Result<Tensor<E>> {
    if param.shape() != grad.shape() {
        return shape_err(
            "adam_update",
            format!("param {:?} vs grad {:?}", param.shape(), grad.shape()),
        );
    }
    let b1 = el::<E>(config.beta1);
    let b2 = el::<E>(config.beta2);
    let one = E::ONE;
    let m = state.m.zip_map(grad, |m, g| m * b1 + g * (one - b1))?;
    let v = state.v.zip_map(grad, |v, g| v * b2 + g * g * (one - b2))?;
    let corr1 = 1.0 - config.beta1.powi(t as i32);
    let corr2 = 1.0 - config.beta2.powi(t as i32);
    let step = el::<E>(config.lr / corr1);
    let inv_corr2_sqrt = el::<E>(1.0 / corr2.sqrt());
    let eps = el::<E>(config.eps);
    let mut out = param.data().to_vec();
    let md = m.data();
    let vd = v.data();
    for (i, p) in out.iter_mut().enumerate() {
        let denom = (vd[i] * inv_corr2_sqrt * inv_corr2_sqrt).sqrt() + eps;
        *p = *p - step * md[i] / denom;
    }
    state.m = m;
    state.v = v;
    Tensor::from_vec(param.shape().to_vec(), out)
}

/// Optimizer over a list of parameters, updated in index order.
pub struct Adam<E: Element = f32> {
    pub config: AdamConfig,
    t: u64,
    states: Vec<AdamParamState<E>>,
}

impl<E: Element> Adam<E> {
    pub fn new(config: AdamConfig, params: &[Tensor<E>]) -> Self {
        Self {
            config,
            t: 0,
            states: params.iter().map(AdamParamState::zeros_like).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [Tensor<E>], grads: &[Tensor<E>]) -> Result<()> {
        assert_eq!(params.len(), self.states.len());
        assert_eq!(grads.len(), self.states.len());
        self.t += 1;
        for ((p, g), s) in params.iter_mut().zip(grads).zip(self.states.iter_mut()) {
            *p = adam_update(p, g, s, &self.config, self.t)?;
        }
        Ok(())
    }
}
