//! Backbone profiles: which backbone to build, its noise table and hook
//! sites.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::backbone::BackboneSession;
use super::schedule::NoiseSchedule;
use super::site::SiteConfig;
use super::stub::{StubBackbone, StubConfig};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseProfile {
    ScaledLinear {
        beta_start: f64,
        beta_end: f64,
        train_steps: usize,
    },
    Linear {
        beta_start: f64,
        beta_end: f64,
        train_steps: usize,
    },
    Table {
        alphas_cumprod: Vec<f64>,
    },
}

impl Default for NoiseProfile {
    fn default() -> Self {
        NoiseProfile::ScaledLinear {
            beta_start: 0.00085,
            beta_end: 0.012,
            train_steps: 1000,
        }
    }
}

impl NoiseProfile {
    pub fn build(&self) -> Result<NoiseSchedule> {
        match self {
            NoiseProfile::ScaledLinear {
                beta_start,
                beta_end,
                train_steps,
            } => NoiseSchedule::scaled_linear(*beta_start, *beta_end, *train_steps),
            NoiseProfile::Linear {
                beta_start,
                beta_end,
                train_steps,
            } => NoiseSchedule::linear(*beta_start, *beta_end, *train_steps),
            NoiseProfile::Table { alphas_cumprod } => NoiseSchedule::from_alphas_cumprod(alphas_cumprod.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneProfile {
    pub name: String,
    /// Backbone implementation; only `"stub"` ships with this crate.
    pub backbone: String,
    pub seed: u64,
    pub latent_channels: usize,
    pub downsample: usize,
    pub max_tokens: usize,
    pub noise: NoiseProfile,
    pub sites: SiteConfig,
}

impl Default for BackboneProfile {
    fn default() -> Self {
        let stub = StubConfig::default();
        Self {
            name: "stub".into(),
            backbone: "stub".into(),
            seed: stub.seed,
            latent_channels: stub.latent_channels,
            downsample: stub.downsample,
            max_tokens: stub.max_tokens,
            noise: NoiseProfile::default(),
            sites: SiteConfig::default(),
        }
    }
}

impl BackboneProfile {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(format!("backbone profile: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn open_session(&self) -> Result<BackboneSession> {
        let noise = self.noise.build()?;
        match self.backbone.as_str() {
            "stub" => {
                let config = StubConfig {
                    seed: self.seed,
                    latent_channels: self.latent_channels,
                    downsample: self.downsample,
                    max_tokens: self.max_tokens,
                    ..StubConfig::default()
                };
                let stub = StubBackbone::new(config, noise.clone())?;
                BackboneSession::new(Box::new(stub), noise, self.sites.clone())
            }
            other => Err(Error::Config(format!(
                "backbone '{other}' is not available in this build"
            ))),
        }
    }
}
