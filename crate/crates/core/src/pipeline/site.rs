//! Addresses of attention layers inside a backbone.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::attention::AttentionKind;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Encoder,
    Decoder,
}

/// One attention layer: `stage.block.layer.kind`, e.g. `decoder.2.1.self`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct HookSite {
    pub stage: Stage,
    pub block: usize,
    pub layer: usize,
    pub kind: AttentionKind,
}

impl HookSite {
    pub const fn decoder(block: usize, layer: usize, kind: AttentionKind) -> Self {
        Self {
            stage: Stage::Decoder,
            block,
            layer,
            kind,
        }
    }
}

impl fmt::Display for HookSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let stage = match self.stage {
            Stage::Encoder => "encoder",
            Stage::Decoder => "decoder",
        };
        write!(f, "{stage}.{}.{}.{}", self.block, self.layer, self.kind)
    }
}

impl FromStr for HookSite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad hook site {s:?}, expected stage.block.layer.kind"));
        let parts: Vec<&str> = s.split('.').collect();
        let [stage, block, layer, kind] = parts.as_slice() else {
            return Err(bad());
        };
        let stage = match *stage {
            "encoder" => Stage::Encoder,
            "decoder" => Stage::Decoder,
            _ => return Err(bad()),
        };
        let kind = match *kind {
            "self" => AttentionKind::SelfAttention,
            "cross" => AttentionKind::CrossAttention,
            _ => return Err(bad()),
        };
        Ok(Self {
            stage,
            block: block.parse().map_err(|_| bad())?,
            layer: layer.parse().map_err(|_| bad())?,
            kind,
        })
    }
}

impl Serialize for HookSite {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for HookSite {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Which layers each manipulation and loss reads from or writes to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteConfig {
    /// Self-attention inversion during removal.
    pub inversion: Vec<HookSite>,
    /// Cross-attention reassignment during removal.
    pub reassignment: Vec<HookSite>,
    /// Cross-attention maps for the content loss.
    pub content: Vec<HookSite>,
    /// Self-attention maps for the style loss.
    pub style: Vec<HookSite>,
    /// Self-attention identity enforcement during latent optimization.
    pub identity: Vec<HookSite>,
}

impl Default for SiteConfig {
    fn default() -> Self {
        use AttentionKind::{CrossAttention as Cross, SelfAttention as Slf};
        Self {
            inversion: vec![HookSite::decoder(2, 1, Slf)],
            reassignment: vec![HookSite::decoder(1, 2, Cross), HookSite::decoder(2, 0, Cross)],
            content: vec![HookSite::decoder(1, 2, Cross), HookSite::decoder(2, 0, Cross)],
            style: vec![HookSite::decoder(1, 0, Slf), HookSite::decoder(1, 1, Slf)],
            identity: vec![HookSite::decoder(1, 2, Slf)],
        }
    }
}

impl SiteConfig {
    /// Every configured site must name exactly one available layer of the
    /// expected kind.
    pub fn validate(&self, available: &[HookSite]) -> Result<()> {
        let groups = [
            ("inversion", &self.inversion, AttentionKind::SelfAttention),
            ("reassignment", &self.reassignment, AttentionKind::CrossAttention),
            ("content", &self.content, AttentionKind::CrossAttention),
            ("style", &self.style, AttentionKind::SelfAttention),
            ("identity", &self.identity, AttentionKind::SelfAttention),
        ];
        for (name, sites, kind) in groups {
            for site in sites {
                if site.kind != kind {
                    return Err(Error::Config(format!("{name} site {site} must be {kind}-attention")));
                }
                let hits = available.iter().filter(|a| *a == site).count();
                if hits != 1 {
                    return Err(Error::Config(format!(
                        "{name} site {site} resolves to {hits} layers in this backbone"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn site_string_round_trip() {
        let s: HookSite = "decoder.2.1.self".parse().unwrap();
        assert_eq!(s, HookSite::decoder(2, 1, AttentionKind::SelfAttention));
        assert_eq!(s.to_string(), "decoder.2.1.self");
        assert!("decoder.2.self".parse::<HookSite>().is_err());
        assert!("middle.0.0.self".parse::<HookSite>().is_err());
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, "\"decoder.2.1.self\"");
    }

    #[test]
    fn validation_catches_missing_and_wrong_kind() {
        let cfg = SiteConfig::default();
        assert!(cfg.validate(&[]).is_err());
        let mut bad = cfg.clone();
        bad.inversion = vec![HookSite::decoder(1, 2, AttentionKind::CrossAttention)];
        let all: Vec<_> = (1..=2)
            .flat_map(|b| (0..3).flat_map(move |l| {
                [AttentionKind::SelfAttention, AttentionKind::CrossAttention]
                    .map(|k| HookSite::decoder(b, l, k))
            }))
            .collect();
        assert!(cfg.validate(&all).is_ok());
        assert!(bad.validate(&all).is_err());
    }
}
