//! Trainable parameters and the Adam update.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor2;

/// A trainable tensor with its gradient accumulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub value: Tensor2,
    #[serde(skip, default = "empty_grad")]
    pub grad: Tensor2,
}

fn empty_grad() -> Tensor2 {
    Tensor2::zeros(0, 0)
}

impl Param {
    pub fn new(value: Tensor2) -> Self {
        let grad = Tensor2::zeros(value.rows(), value.cols());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad = Tensor2::zeros(self.value.rows(), self.value.cols());
    }

    /// Adds a gradient into the accumulator, sizing it on first use.
    pub fn accumulate(&mut self, g: &Tensor2) {
        if self.grad.shape() != self.value.shape() {
            self.zero_grad();
        }
        self.grad.add_assign(g);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates for one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Tensor2,
    pub v: Tensor2,
}

impl AdamState {
    pub fn for_param(p: &Param) -> Self {
        let (r, c) = p.value.shape();
        Self { m: Tensor2::zeros(r, c), v: Tensor2::zeros(r, c) }
    }
}

/// One bias-corrected Adam update of `param` from `grad` at step `t` (1-based).
pub fn adam_step(
    param: &mut Tensor2,
    grad: &Tensor2,
    state: &mut AdamState,
    lr: f64,
    cfg: AdamConfig,
    t: u64,
) -> Result<()> {
    if t == 0 {
        return Err(Error::Argument("Adam step counter starts at 1".into()));
    }
    if grad.shape() != param.shape() || state.m.shape() != param.shape() {
        return Err(Error::Shape(format!("param {:?} vs grad {:?}", param.shape(), grad.shape())));
    }
    if let Some(k) = grad.data().iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {k} is {} (shape {:?})", grad.data()[k], grad.shape())));
    }
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    let (m, v) = (state.m.data_mut(), state.v.data_mut());
    for (((w, &g), m), v) in param.data_mut().iter_mut().zip(grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *w -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Adam over an ordered list of parameters, each with its own learning rate.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    states: Vec<AdamState>,
    t: u64,
}

impl Adam {
    pub fn new(params: &[&Param], config: AdamConfig) -> Self {
        Self { config, states: params.iter().map(|p| AdamState::for_param(p)).collect(), t: 0 }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Applies one update to every parameter whose learning rate is positive,
    /// using and then clearing its gradient. `names` are for diagnostics only.
    pub fn step(&mut self, params: &mut [&mut Param], lrs: &[f64], names: &[String]) -> Result<()> {
        if params.len() != self.states.len() || lrs.len() != params.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} parameters, got {} with {} learning rates",
                self.states.len(),
                params.len(),
                lrs.len()
            )));
        }
        self.t += 1;
        for (k, ((p, state), &lr)) in params.iter_mut().zip(&mut self.states).zip(lrs).enumerate() {
            if p.grad.shape() != p.value.shape() {
                p.zero_grad();
            }
            if lr > 0.0 {
                let grad = std::mem::replace(&mut p.grad, Tensor2::zeros(0, 0));
                let res = adam_step(&mut p.value, &grad, state, lr, self.config, self.t);
                p.grad = grad;
                res.map_err(|e| match e {
                    Error::NonFinite(msg) => {
                        Error::NonFinite(format!("{}: {msg}", names.get(k).map_or("?", String::as_str)))
                    }
                    other => other,
                })?;
            }
            p.zero_grad();
        }
        Ok(())
    }
}
