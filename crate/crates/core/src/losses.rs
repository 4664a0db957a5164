//! Guidance losses over attention maps.
//!
//! The content loss treats every character token's cross-attention column as
//! a per-pixel binary classifier for that character's strip and scores it
//! with a focal loss. The style loss asks every target-region row of a
//! self-attention map to match a distribution concentrated on the reference
//! text. Both are built from tensor ops so gradients reach the latent.

use candle_core::{DType, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionKind, AttentionMap, LatentMask, TokenLayout};
use crate::error::{Error, Result};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuidanceWeights {
    #[serde(rename = "lambda_c")]
    pub lambda_content: f64,
    #[serde(rename = "lambda_s")]
    pub lambda_style: f64,
    pub gamma: f64,
}

impl Default for GuidanceWeights {
    fn default() -> Self {
        Self {
            lambda_content: 5.0,
            lambda_style: 10.0,
            gamma: 2.0,
        }
    }
}

impl GuidanceWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_c", self.lambda_content),
            ("lambda_s", self.lambda_style),
            ("gamma", self.gamma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// `lambda_c * content + lambda_s * style` on plain values.
    pub fn combine(&self, content: f64, style: f64) -> f64 {
        self.lambda_content * content + self.lambda_style * style
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Focal term `(1 - p*l)^gamma * -(l ln p + (1 - l) ln(1 - p))` on a clamped
/// probability. The modulating factor is exactly 1 for negatives.
pub fn focal_term(p: f64, label: bool, gamma: f64) -> f64 {
    let p = clamp_prob(p);
    let l = if label { 1.0 } else { 0.0 };
    (1.0 - p * l).powf(gamma) * -(l * p.ln() + (1.0 - l) * (1.0 - p).ln())
}

/// Element-wise focal term on tensors of probabilities and 0/1 labels.
pub fn focal_map(probs: &Tensor, labels: &Tensor, gamma: f64) -> Result<Tensor> {
    let p = probs.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)?;
    let modulation = (&p * labels)?.affine(-1.0, 1.0)?.powf(gamma)?;
    let inv_labels = labels.affine(-1.0, 1.0)?;
    let ce = ((labels * p.log()?)? + (inv_labels * p.affine(-1.0, 1.0)?.log()?)?)?.neg()?;
    Ok((modulation * ce)?)
}

/// Content loss summed over characters and positions, averaged over maps.
///
/// Character masks may be given at any resolution; they are resampled to
/// each map's spatial size and binarized.
pub fn content_loss(
    cross_maps: &[AttentionMap],
    layout: &TokenLayout,
    char_masks: &[LatentMask],
    gamma: f64,
) -> Result<Tensor> {
    let n = layout.n_chars();
    if char_masks.len() != n {
        return Err(Error::Contract(format!(
            "{} character masks for {n} character tokens",
            char_masks.len()
        )));
    }
    if cross_maps.is_empty() || n == 0 {
        return Err(Error::Contract("content loss needs maps and characters".into()));
    }
    let first = layout.char_indices[0];
    let mut per_layer = Vec::with_capacity(cross_maps.len());
    for map in cross_maps {
        if map.kind() != AttentionKind::CrossAttention || map.n_keys() != layout.n_tokens {
            return Err(Error::Contract(format!(
                "content loss expects cross maps with {} tokens",
                layout.n_tokens
            )));
        }
        let (h, w) = map.spatial_dims();
        let mut labels = vec![0.0f64; h * w * n];
        for (k, mask) in char_masks.iter().enumerate() {
            let mask = if mask.dims() == (h, w) {
                mask.clone()
            } else {
                mask.resized(h, w)?
            };
            for i in 0..h * w {
                if mask.is_on(i) {
                    labels[i * n + k] = 1.0;
                }
            }
        }
        let probs = map.probs();
        let labels = Tensor::from_vec(labels, (h * w, n), probs.device())?.to_dtype(probs.dtype())?;
        let columns = probs.narrow(1, first, n)?;
        per_layer.push(focal_map(&columns, &labels, gamma)?.sum_all()?);
    }
    Ok(Tensor::stack(&per_layer, 0)?.mean_all()?)
}

/// Target key distribution for the style loss: the reference mask
/// normalized to unit mass.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleTarget {
    pub gt_distribution: Vec<f64>,
    pub source_mask: LatentMask,
}

pub fn style_target(reference_mask: &LatentMask) -> Result<StyleTarget> {
    let values = reference_mask.values().as_slice();
    let total: f64 = values.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateTarget);
    }
    Ok(StyleTarget {
        gt_distribution: values.iter().map(|v| v / total).collect(),
        source_mask: reference_mask.clone(),
    })
}

impl StyleTarget {
    pub fn dims(&self) -> (usize, usize) {
        self.source_mask.dims()
    }

    /// The distribution at another self-attention resolution (the reference
    /// mask is bilinearly resampled, then normalized).
    pub fn distribution_at(&self, height: usize, width: usize) -> Result<Vec<f64>> {
        if self.dims() == (height, width) {
            return Ok(self.gt_distribution.clone());
        }
        Ok(style_target(&self.source_mask.resized(height, width)?)?.gt_distribution)
    }
}

/// Mean over target rows and maps of `KL(GT || S_row)`.
pub fn style_loss(
    self_maps: &[AttentionMap],
    target_mask: &LatentMask,
    target: &StyleTarget,
) -> Result<Tensor> {
    if self_maps.is_empty() {
        return Err(Error::Contract("style loss needs at least one map".into()));
    }
    let mut per_layer = Vec::with_capacity(self_maps.len());
    for map in self_maps {
        if map.kind() != AttentionKind::SelfAttention {
            return Err(Error::Contract("style loss expects self-attention maps".into()));
        }
        let (h, w) = map.spatial_dims();
        let rows_mask = if target_mask.dims() == (h, w) {
            target_mask.clone()
        } else {
            target_mask.resized(h, w)?
        };
        let rows: Vec<u32> = (0..h * w)
            .filter(|&i| rows_mask.is_on(i))
            .map(|i| i as u32)
            .collect();
        if rows.is_empty() {
            return Err(Error::EmptyMask(format!(
                "target mask is empty at self-attention resolution {h}x{w}"
            )));
        }
        let gt = target.distribution_at(h, w)?;
        let neg_entropy: f64 = gt.iter().filter(|&&g| g > 0.0).map(|g| g * g.ln()).sum();
        let probs = map.probs();
        let device = probs.device();
        let n_rows = rows.len();
        let index = Tensor::from_vec(rows, n_rows, device)?;
        let selected = probs.index_select(&index, 0)?;
        let gt = Tensor::from_vec(gt, (1, h * w), device)?.to_dtype(probs.dtype())?;
        let cross = selected
            .clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)?
            .log()?
            .broadcast_mul(&gt)?
            .sum(D::Minus1)?;
        let kl = cross.affine(-1.0, neg_entropy)?;
        per_layer.push(kl.mean_all()?);
    }
    Ok(Tensor::stack(&per_layer, 0)?.mean_all()?)
}

/// `lambda_c * content + lambda_s * style`, differentiable.
pub fn total_guidance(content: &Tensor, style: &Tensor, weights: &GuidanceWeights) -> Result<Tensor> {
    Ok((content.affine(weights.lambda_content, 0.0)? + style.affine(weights.lambda_style, 0.0)?)?)
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}
