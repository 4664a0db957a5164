//! Adam updates on latent tensors.

use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::losses::scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

pub struct Adam {
    config: AdamConfig,
    first: Option<Tensor>,
    second: Option<Tensor>,
    t: i32,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            first: None,
            second: None,
            t: 0,
        }
    }

    /// Returns the updated parameter.
    pub fn step(&mut self, param: &Tensor, grad: &Tensor) -> Result<Tensor> {
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.t += 1;
        let m = match &self.first {
            Some(m) => (m.affine(beta1, 0.0)? + grad.affine(1.0 - beta1, 0.0)?)?,
            None => grad.affine(1.0 - beta1, 0.0)?,
        };
        let v = match &self.second {
            Some(v) => (v.affine(beta2, 0.0)? + grad.sqr()?.affine(1.0 - beta2, 0.0)?)?,
            None => grad.sqr()?.affine(1.0 - beta2, 0.0)?,
        };
        let m_hat = m.affine(1.0 / (1.0 - beta1.powi(self.t)), 0.0)?;
        let v_hat = v.affine(1.0 / (1.0 - beta2.powi(self.t)), 0.0)?;
        let update = m_hat.div(&v_hat.sqrt()?.affine(1.0, eps)?)?;
        self.first = Some(m);
        self.second = Some(v);
        Ok((param - update.affine(learning_rate, 0.0)?)?)
    }
}

#[derive(Debug)]
pub struct OptimizationOutcome {
    pub latent: Tensor,
    /// Loss at each evaluated iterate, before its update.
    pub losses: Vec<f64>,
    pub aborted: bool,
}

/// Runs `iterations` Adam steps on `latent` with fresh optimizer state.
///
/// A non-finite loss or gradient ends the loop and the last latent with a
/// finite loss is returned.
pub fn optimize_latent<F>(
    latent: &Tensor,
    iterations: usize,
    config: AdamConfig,
    mut objective: F,
) -> Result<OptimizationOutcome>
where
    F: FnMut(&Tensor) -> Result<Tensor>,
{
    let mut adam = Adam::new(config);
    let mut current = latent.detach();
    let mut losses = Vec::with_capacity(iterations);
    let mut aborted = false;
    let mut last_good = current.clone();
    for iteration in 0..iterations {
        let var = Var::from_tensor(&current)?;
        let loss = objective(var.as_tensor())?;
        let value = scalar(&loss)?;
        if !value.is_finite() {
            tracing::warn!(iteration, value, "non-finite guidance loss, stopping stage");
            aborted = true;
            current = last_good;
            break;
        }
        losses.push(value);
        last_good = current.clone();
        let grads = loss.backward()?;
        let Some(grad) = grads.get(var.as_tensor()) else {
            continue;
        };
        let gmax = scalar(&grad.abs()?.max_all()?)?;
        if !gmax.is_finite() {
            tracing::warn!(iteration, "non-finite latent gradient, stopping stage");
            aborted = true;
            break;
        }
        current = adam.step(&current, grad)?.detach();
    }
    Ok(OptimizationOutcome {
        latent: current,
        losses,
        aborted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut adam = Adam::new(AdamConfig::default());
        let p = Tensor::new(&[1.0f64, -1.0], &Device::Cpu).unwrap();
        let g = Tensor::new(&[0.5f64, -3.0], &Device::Cpu).unwrap();
        let out = adam.step(&p, &g).unwrap().to_vec1::<f64>().unwrap();
        assert!((out[0] - 0.99).abs() < 1e-7);
        assert!((out[1] + 0.99).abs() < 1e-7);
    }

    #[test]
    fn quadratic_descends() {
        let start = Tensor::new(&[3.0f64, -2.0, 0.5], &Device::Cpu).unwrap();
        let out = optimize_latent(&start, 50, AdamConfig { learning_rate: 0.05, ..Default::default() }, |z| {
            Ok(z.sqr()?.sum_all()?)
        })
        .unwrap();
        assert_eq!(out.losses.len(), 50);
        assert!(out.losses.windows(2).all(|w| w[1] <= w[0]));
        assert!(!out.aborted);
    }

    #[test]
    fn non_finite_loss_keeps_last_good_latent() {
        let start = Tensor::new(&[1.0f64], &Device::Cpu).unwrap();
        let mut calls = 0;
        let out = optimize_latent(&start, 10, AdamConfig::default(), |z| {
            calls += 1;
            if calls == 3 {
                Ok(z.affine(0.0, f64::NAN)?.sum_all()?)
            } else {
                Ok(z.sqr()?.sum_all()?)
            }
        })
        .unwrap();
        assert!(out.aborted);
        assert_eq!(out.losses.len(), 2);
        let v = out.latent.to_vec1::<f64>().unwrap()[0];
        assert!(v.is_finite() && v < 1.0);
    }
}
