//! Service configuration: a TOML file plus the workspace environment
//! variable.

use std::path::{Path, PathBuf};

use omnitext_core::losses::GuidanceWeights;
use omnitext_core::pipeline::{BackboneProfile, SamplingSchedule};
use serde::{Deserialize, Serialize};

use crate::error::{ServiceError, ServiceResult};

/// Overrides `workspace` from the config file.
pub const WORKSPACE_ENV: &str = "OMNITEXT_WORKSPACE";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    /// Root for job directories; relative image paths in requests resolve
    /// against it.
    pub workspace: PathBuf,
    pub bind: String,
    /// Jobs executing at once.
    pub device_slots: usize,
    /// Finished jobs kept on disk.
    pub retention: usize,
    /// Attention snapshots are written every `attention_stride` sampling
    /// steps; 0 disables them.
    pub attention_stride: usize,
    pub profile: BackboneProfile,
    /// Backbone profile file; replaces `profile` when set.
    pub profile_path: Option<PathBuf>,
    pub weights: GuidanceWeights,
    pub schedule: SamplingSchedule,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            workspace: PathBuf::from("omnitext-workspace"),
            bind: "127.0.0.1:8787".into(),
            device_slots: 1,
            retention: 50,
            attention_stride: 1,
            profile: BackboneProfile::default(),
            profile_path: None,
            weights: GuidanceWeights::default(),
            schedule: SamplingSchedule::default(),
        }
    }
}

impl ServiceConfig {
    pub fn from_toml_str(s: &str) -> ServiceResult<Self> {
        toml::from_str(s).map_err(|e| ServiceError::validation(format!("config: {e}")))
    }

    /// Reads `path` (defaults when absent), applies the workspace variable
    /// and resolves the profile file.
    pub fn load(path: Option<&Path>) -> ServiceResult<Self> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ServiceError::validation(format!("config {}: {e}", p.display())))?;
                Self::from_toml_str(&text)?
            }
            None => Self::default(),
        };
        if let Some(ws) = std::env::var_os(WORKSPACE_ENV) {
            config.workspace = PathBuf::from(ws);
        }
        config.resolve_profile()?;
        Ok(config)
    }

    pub fn resolve_profile(&mut self) -> ServiceResult<()> {
        if let Some(p) = &self.profile_path {
            self.profile = BackboneProfile::load(p)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> ServiceResult<()> {
        if self.device_slots == 0 {
            return Err(ServiceError::validation("device_slots must be >= 1"));
        }
        if self.retention == 0 {
            return Err(ServiceError::validation("retention must be >= 1"));
        }
        self.weights.validate()?;
        self.schedule.validate()?;
        Ok(())
    }

    pub fn jobs_dir(&self) -> PathBuf {
        self.workspace.join("jobs")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let c = ServiceConfig::from_toml_str("retention = 3\n[profile]\nseed = 9\n").unwrap();
        assert_eq!(c.retention, 3);
        assert_eq!(c.profile.seed, 9);
        assert_eq!(c.device_slots, 1);
        assert_eq!(c.schedule, SamplingSchedule::default());
    }

    #[test]
    fn full_file_parses() {
        let text = r#"
workspace = "/tmp/omnitext"
bind = "127.0.0.1:8787"
device_slots = 2
retention = 50
attention_stride = 0
profile_path = "stub.toml"

[weights]
lambda_c = 5.0
lambda_s = 10.0
gamma = 2.0

[schedule]
total_steps = 20
sai_fraction = 0.5
car_fraction = 1.0
opt_stages = [0.0, 0.2, 0.4]
opt_iters = 20
"#;
        let c = ServiceConfig::from_toml_str(text).unwrap();
        assert_eq!(c.device_slots, 2);
        assert_eq!(c.profile_path.as_deref(), Some(Path::new("stub.toml")));
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ServiceConfig::from_toml_str("retenion = 3").is_err());
    }
}
