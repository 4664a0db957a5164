//! Sampling schedules, the DDPM forward process and the DDIM update.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How many steps, and which ones, get each manipulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingSchedule {
    pub total_steps: usize,
    /// Leading fraction of steps with self-attention inversion.
    pub sai_fraction: f64,
    /// Leading fraction of steps with cross-attention reassignment.
    pub car_fraction: f64,
    /// Step fractions at which latent optimization runs.
    pub opt_stages: Vec<f64>,
    pub opt_iters: usize,
}

impl Default for SamplingSchedule {
    fn default() -> Self {
        Self {
            total_steps: 20,
            sai_fraction: 0.5,
            car_fraction: 1.0,
            opt_stages: vec![0.0, 0.2, 0.4],
            opt_iters: 20,
        }
    }
}

// Absorbs binary-fraction noise such as 0.15 * 20 = 3.0000000000000004.
const FRACTION_SLACK: f64 = 1e-9;

impl SamplingSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(Error::Invalid("total_steps must be >= 1".into()));
        }
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !in_unit(self.sai_fraction) || !in_unit(self.car_fraction) {
            return Err(Error::Invalid("step fractions must lie in [0,1]".into()));
        }
        if !self.opt_stages.iter().all(|&v| in_unit(v)) {
            return Err(Error::Invalid("optimization stages must lie in [0,1]".into()));
        }
        if self.opt_stages.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Invalid("optimization stages must be strictly increasing".into()));
        }
        Ok(())
    }

    fn leading_steps(&self, fraction: f64) -> usize {
        ((fraction * self.total_steps as f64 - FRACTION_SLACK).ceil().max(0.0) as usize)
            .min(self.total_steps)
    }

    /// Number of leading steps with self-attention inversion.
    pub fn sai_steps(&self) -> usize {
        self.leading_steps(self.sai_fraction)
    }

    /// Number of leading steps with cross-attention reassignment.
    pub fn car_steps(&self) -> usize {
        self.leading_steps(self.car_fraction)
    }

    /// Step indices at which latent optimization runs.
    pub fn optimization_steps(&self) -> Vec<usize> {
        let mut steps: Vec<usize> = self
            .opt_stages
            .iter()
            .map(|f| (f * self.total_steps as f64).round() as usize)
            .filter(|&s| s < self.total_steps)
            .collect();
        steps.dedup();
        steps
    }
}

/// Cumulative signal levels `alpha_bar_t` for every training timestep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    alphas_cumprod: Vec<f64>,
}

impl NoiseSchedule {
    pub fn from_alphas_cumprod(alphas_cumprod: Vec<f64>) -> Result<Self> {
        if alphas_cumprod.is_empty() {
            return Err(Error::Config("noise table is empty".into()));
        }
        if let Some(a) = alphas_cumprod.iter().find(|&&a| !(a > 0.0 && a <= 1.0)) {
            return Err(Error::Config(format!("alpha_bar {a} outside (0,1]")));
        }
        Ok(Self { alphas_cumprod })
    }

    fn from_betas(betas: impl Iterator<Item = f64>) -> Result<Self> {
        let mut acc = 1.0;
        Self::from_alphas_cumprod(
            betas
                .map(|b| {
                    acc *= 1.0 - b;
                    acc
                })
                .collect(),
        )
    }

    /// Betas linear in `sqrt(beta)` (the latent-diffusion default).
    pub fn scaled_linear(beta_start: f64, beta_end: f64, train_steps: usize) -> Result<Self> {
        let (s, e) = (beta_start.sqrt(), beta_end.sqrt());
        Self::from_betas((0..train_steps).map(|i| {
            let f = if train_steps > 1 { i as f64 / (train_steps - 1) as f64 } else { 0.0 };
            let b = s + (e - s) * f;
            b * b
        }))
    }

    pub fn linear(beta_start: f64, beta_end: f64, train_steps: usize) -> Result<Self> {
        Self::from_betas((0..train_steps).map(|i| {
            let f = if train_steps > 1 { i as f64 / (train_steps - 1) as f64 } else { 0.0 };
            beta_start + (beta_end - beta_start) * f
        }))
    }

    pub fn train_steps(&self) -> usize {
        self.alphas_cumprod.len()
    }

    pub fn alpha_bar(&self, timestep: usize) -> Result<f64> {
        self.alphas_cumprod
            .get(timestep)
            .copied()
            .ok_or(Error::OutOfRange {
                what: "timestep",
                index: timestep,
                len: self.alphas_cumprod.len(),
            })
    }

    /// Evenly spaced descending timesteps with the usual offset of one,
    /// e.g. `951, 901, ..., 1` for 20 of 1000.
    pub fn sampling_timesteps(&self, total_steps: usize) -> Result<Vec<usize>> {
        let train = self.train_steps();
        if total_steps == 0 || total_steps > train {
            return Err(Error::Invalid(format!(
                "cannot sample {total_steps} steps from {train} training steps"
            )));
        }
        let ratio = train / total_steps;
        Ok((0..total_steps)
            .rev()
            .map(|i| (i * ratio + 1).min(train - 1))
            .collect())
    }
}

/// DDPM forward process `sqrt(a) z0 + sqrt(1 - a) eps` at `timestep`.
pub fn init_latent(
    clean: &Tensor,
    timestep: usize,
    noise: &Tensor,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    let a = schedule.alpha_bar(timestep)?;
    if clean.dims() != noise.dims() {
        return Err(Error::Shape(format!(
            "latent {:?} and noise {:?} differ",
            clean.dims(),
            noise.dims()
        )));
    }
    Ok((clean.affine(a.sqrt(), 0.0)? + noise.affine((1.0 - a).sqrt(), 0.0)?)?)
}

/// Deterministic DDIM update from `timestep` to `prev_timestep` (`None`
/// means the final step, which returns the predicted clean latent).
pub fn ddim_step(
    latent: &Tensor,
    noise_pred: &Tensor,
    timestep: usize,
    prev_timestep: Option<usize>,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    let a = schedule.alpha_bar(timestep)?;
    let a_prev = match prev_timestep {
        Some(t) => schedule.alpha_bar(t)?,
        None => 1.0,
    };
    let clean = (latent - noise_pred.affine((1.0 - a).sqrt(), 0.0)?)?.affine(1.0 / a.sqrt(), 0.0)?;
    Ok((clean.affine(a_prev.sqrt(), 0.0)? + noise_pred.affine((1.0 - a_prev).sqrt(), 0.0)?)?)
}
