use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid Adam settings: {self:?}")));
        }
        Ok(())
    }
}

/// First and second moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Moment<T: Scalar = f32> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
}

/// One bias-corrected Adam update. `step` is the 1-based index of this update.
pub fn adam_step<T: Scalar>(
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    moment: &mut Moment<T>,
    step: u64,
    cfg: &AdamConfig,
) -> Result<()> {
    let s = param.shape();
    if grad.shape() != s || moment.m.shape() != s || moment.v.shape() != s {
        return Err(Error::Dimension(format!(
            "adam: parameter {s}, gradient {}, moments {} / {}",
            grad.shape(),
            moment.m.shape(),
            moment.v.shape()
        )));
    }
    if step == 0 {
        return Err(Error::Contract("adam step index is 1-based".into()));
    }
    let t = i32::try_from(step).unwrap_or(i32::MAX);
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let m = moment.m.data_mut();
    let v = moment.v.data_mut();
    for (i, (p, g)) in param.data_mut().iter_mut().zip(grad.data()).enumerate() {
        let g = g.as_f64();
        let mi = cfg.beta1 * m[i].as_f64() + (1.0 - cfg.beta1) * g;
        let vi = cfg.beta2 * v[i].as_f64() + (1.0 - cfg.beta2) * g * g;
        m[i] = T::from_f64(mi);
        v[i] = T::from_f64(vi);
        let update = cfg.lr * (mi / c1) / ((vi / c2).sqrt() + cfg.eps);
        *p = T::from_f64(p.as_f64() - update);
    }
    Ok(())
}

/// Adam state over a named parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T: Scalar = f32> {
    pub config: AdamConfig,
    pub step: u64,
    pub moments: IndexMap<String, Moment<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            moments: IndexMap::new(),
        }
    }

    /// Start a new update; call [`Adam::update`] once per parameter afterwards.
    pub fn begin_step(&mut self) -> u64 {
        self.step += 1;
        self.step
    }

    pub fn update(&mut self, name: &str, param: &mut Tensor<T>, grad: &Tensor<T>) -> Result<()> {
        let moment = self.moments.entry(name.to_string()).or_insert_with(|| Moment {
            m: Tensor::zeros(param.shape()),
            v: Tensor::zeros(param.shape()),
        });
        adam_step(param, grad, moment, self.step, &self.config)
    }
}
