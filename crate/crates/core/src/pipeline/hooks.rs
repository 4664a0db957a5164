//! Hook controllers that apply the attention manipulations on schedule.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::backbone::AttentionHook;
use super::observer::{AttentionView, Observer, Phase};
use super::site::{HookSite, SiteConfig};
use crate::attention::{
    enforce_identity_self_attention, invert_self_attention_with, reassign_cross_attention,
    AttentionMap, InversionOptions, LatentMask, TokenLayout,
};
use crate::error::{Error, Result};
use crate::masks::split_character_masks;

/// Bookkeeping of every manipulation and collection a run performed.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HookCounters {
    /// Step index of every self-attention inversion (one entry per site).
    pub inversion_steps: Vec<usize>,
    /// Step index of every cross-attention reassignment (one entry per site).
    pub reassignment_steps: Vec<usize>,
    pub identity_calls: usize,
    pub collected_maps: usize,
    pub forward_passes: usize,
    pub optimization_steps: Vec<usize>,
    pub optimization_iterations: usize,
}

/// A latent mask resampled on demand to each attention resolution.
pub(crate) struct MaskCache {
    base: LatentMask,
    text: Option<String>,
    resized: HashMap<(usize, usize), LatentMask>,
    strips: HashMap<(usize, usize), Vec<LatentMask>>,
}

impl MaskCache {
    pub fn new(base: LatentMask, text: Option<&str>) -> Self {
        Self {
            base,
            text: text.map(str::to_owned),
            resized: HashMap::new(),
            strips: HashMap::new(),
        }
    }

    pub fn at(&mut self, dims: (usize, usize)) -> Result<&LatentMask> {
        if dims == self.base.dims() {
            return Ok(&self.base);
        }
        if !self.resized.contains_key(&dims) {
            let m = self.base.resized(dims.0, dims.1)?;
            self.resized.insert(dims, m);
        }
        Ok(&self.resized[&dims])
    }

    /// Per-character strips at `dims`. A mask that vanishes at this
    /// resolution yields empty strips.
    pub fn strips_at(&mut self, dims: (usize, usize)) -> Result<&[LatentMask]> {
        if !self.strips.contains_key(&dims) {
            let text = self
                .text
                .clone()
                .ok_or_else(|| Error::Contract("character strips need a target text".into()))?;
            let mask = self.at(dims)?.clone();
            let strips = match split_character_masks(&mask, &text) {
                Ok(s) => s,
                Err(Error::EmptyMask(_)) => {
                    vec![LatentMask::zeros(dims.0, dims.1); text.chars().count()]
                }
                Err(e) => return Err(e),
            };
            self.strips.insert(dims, strips);
        }
        Ok(&self.strips[&dims])
    }
}

/// Self-attention inversion and cross-attention reassignment for removal.
pub(crate) struct RemovalHooks<'a> {
    pub sites: &'a SiteConfig,
    pub mask: MaskCache,
    pub layout: &'a TokenLayout,
    pub step: usize,
    pub inversion_steps: usize,
    pub reassignment_steps: usize,
    pub options: InversionOptions,
    pub counters: &'a mut HookCounters,
    pub observer: &'a mut dyn Observer,
}

impl AttentionHook for RemovalHooks<'_> {
    fn intercept(&mut self, site: &HookSite, mut map: AttentionMap) -> Result<AttentionMap> {
        let dims = map.spatial_dims();
        if self.step < self.inversion_steps && self.sites.inversion.contains(site) {
            map = invert_self_attention_with(&map, self.mask.at(dims)?, self.options)?;
            self.counters.inversion_steps.push(self.step);
        }
        if self.step < self.reassignment_steps && self.sites.reassignment.contains(site) {
            map = reassign_cross_attention(&map, self.mask.at(dims)?, self.layout)?;
            self.counters.reassignment_steps.push(self.step);
        }
        if self.observer.wants_attention(Phase::Removal, self.step) {
            let mask = self.mask.at(dims)?.clone();
            self.observer.on_attention(&AttentionView {
                phase: Phase::Removal,
                step: self.step,
                site,
                map: &map,
                layout: self.layout,
                mask: &mask,
            });
        }
        Ok(map)
    }
}

/// Reports maps of plain sampling steps to the observer.
pub(crate) struct ObservingHooks<'a> {
    pub phase: Phase,
    pub step: usize,
    pub mask: &'a mut MaskCache,
    pub layout: &'a TokenLayout,
    pub observer: &'a mut dyn Observer,
}

impl AttentionHook for ObservingHooks<'_> {
    fn intercept(&mut self, site: &HookSite, map: AttentionMap) -> Result<AttentionMap> {
        if self.observer.wants_attention(self.phase, self.step) {
            let mask = self.mask.at(map.spatial_dims())?.clone();
            self.observer.on_attention(&AttentionView {
                phase: self.phase,
                step: self.step,
                site,
                map: &map,
                layout: self.layout,
                mask: &mask,
            });
        }
        Ok(map)
    }
}

/// Identity enforcement plus collection of the loss maps during an
/// optimization forward pass.
pub(crate) struct GuidanceHooks<'a> {
    pub sites: &'a SiteConfig,
    pub target: &'a mut MaskCache,
    pub cross: Vec<AttentionMap>,
    pub selfs: Vec<AttentionMap>,
    pub counters: &'a mut HookCounters,
}

impl AttentionHook for GuidanceHooks<'_> {
    fn intercept(&mut self, site: &HookSite, mut map: AttentionMap) -> Result<AttentionMap> {
        if self.sites.identity.contains(site) {
            let strips = self.target.strips_at(map.spatial_dims())?;
            map = enforce_identity_self_attention(&map, strips)?;
            self.counters.identity_calls += 1;
        }
        if self.sites.content.contains(site) {
            self.cross.push(map.clone());
            self.counters.collected_maps += 1;
        }
        if self.sites.style.contains(site) {
            self.selfs.push(map.clone());
            self.counters.collected_maps += 1;
        }
        Ok(map)
    }
}
