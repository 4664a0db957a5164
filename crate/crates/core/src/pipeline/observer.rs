//! Progress and introspection callbacks for a running pipeline.

use serde::{Deserialize, Serialize};

use super::site::HookSite;
use crate::attention::{AttentionMap, LatentMask, TokenLayout};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Removal,
    Inpainting,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::Removal => "removal",
            Phase::Inpainting => "inpainting",
        })
    }
}

/// One latent-optimization iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub content: f64,
    pub style: f64,
    pub total: f64,
}

/// Loss trace of one optimization stage.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub step: usize,
    pub timestep: usize,
    pub records: Vec<LossRecord>,
    /// Set when a non-finite loss stopped the stage early.
    pub aborted: bool,
}

/// Attention maps passed to [`Observer::on_attention`].
pub struct AttentionView<'a> {
    pub phase: Phase,
    pub step: usize,
    pub site: &'a HookSite,
    pub map: &'a AttentionMap,
    pub layout: &'a TokenLayout,
    /// Region of interest at the map's resolution.
    pub mask: &'a LatentMask,
}

pub trait Observer {
    fn on_step(&mut self, _phase: Phase, _step: usize, _total: usize) {}

    /// Whether attention maps of this sampling step should be reported.
    fn wants_attention(&self, _phase: Phase, _step: usize) -> bool {
        false
    }

    fn on_attention(&mut self, _view: &AttentionView<'_>) {}

    fn on_stage(&mut self, _phase: Phase, _trace: &StageTrace) {}
}

pub struct NullObserver;

impl Observer for NullObserver {}
