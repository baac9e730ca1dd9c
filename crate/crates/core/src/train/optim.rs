use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::Gradients;
use crate::error::{Error, Result};
use crate::nn::Module;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of `param` in place. `step` counts from 1.
pub fn adam_update(param: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], step: u64, lr: f64, cfg: &AdamConfig) {
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Adam state keyed by parameter name.
#[derive(Debug, Clone, Default)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// First and second moments of a parameter, once it has been stepped.
    pub fn moments(&self, name: &str) -> Option<(&Tensor, &Tensor)> {
        self.moments.get(name).map(|(m, v)| (m, v))
    }

    /// Updates every parameter of `model`. Parameters that did not reach
    /// the loss are stepped with a zero gradient.
    pub fn step(&mut self, model: &mut dyn Module, grads: &Gradients, lr: f64) -> Result<()> {
        self.step += 1;
        let (step, cfg) = (self.step, self.config);
        let mut problem = None;
        let moments = &mut self.moments;
        model.visit_params_mut(&mut |p| {
            if problem.is_some() {
                return;
            }
            let shape = p.shape().to_vec();
            let zero;
            let g = match grads.param(p.name()) {
                Some(g) if g.shape() != shape.as_slice() => {
                    problem = Some(Error::Contract(format!(
                        "gradient for {} has shape {:?}, parameter has {shape:?}",
                        p.name(),
                        g.shape()
                    )));
                    return;
                }
                Some(g) => g,
                None => {
                    zero = Tensor::zeros(shape.clone());
                    &zero
                }
            };
            let (m, v) = moments
                .entry(p.name().to_string())
                .or_insert_with(|| (Tensor::zeros(shape.clone()), Tensor::zeros(shape.clone())));
            adam_update(p.value_mut().data_mut(), g.data(), m.data_mut(), v.data_mut(), step, lr, &cfg);
        });
        problem.map_or(Ok(()), Err)
    }
}
