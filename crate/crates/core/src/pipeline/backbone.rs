//! The contract a diffusion inpainting backbone must meet.

use candle_core::{DType, Device, Tensor};
use image::RgbImage;

use super::schedule::{ddim_step, NoiseSchedule};
use super::site::{HookSite, SiteConfig};
use crate::attention::{AttentionMap, LatentMask, TokenLayout};
use crate::error::{Error, Result};

/// Token embeddings `[n_tokens, dim]` with their layout.
#[derive(Clone, Debug)]
pub struct TextEmbedding {
    pub text: String,
    pub tokens: Tensor,
    pub layout: TokenLayout,
}

/// Inputs of one denoiser evaluation.
pub struct DenoiseInput<'a> {
    /// Noisy latent `[c, h, w]`.
    pub latent: &'a Tensor,
    /// Latent of the image with the editable region blanked.
    pub masked_latent: &'a Tensor,
    pub mask: &'a LatentMask,
    pub embedding: &'a TextEmbedding,
    pub timestep: usize,
}

/// Interception point called synchronously for every attention layer of a
/// forward pass, after the softmax and before the value product.
pub trait AttentionHook {
    fn intercept(&mut self, site: &HookSite, map: AttentionMap) -> Result<AttentionMap>;
}

/// Passes every map through unchanged.
pub struct NoHooks;

impl AttentionHook for NoHooks {
    fn intercept(&mut self, _site: &HookSite, map: AttentionMap) -> Result<AttentionMap> {
        Ok(map)
    }
}

pub trait Backbone: Send {
    fn name(&self) -> &str;

    fn device(&self) -> &Device;

    fn dtype(&self) -> DType;

    fn latent_channels(&self) -> usize;

    /// Pixels per latent cell along each axis.
    fn downsample_factor(&self) -> usize;

    /// Latent `(h, w)` for an image, or a validation error when the image
    /// size is not supported.
    fn latent_dims(&self, image_width: u32, image_height: u32) -> Result<(usize, usize)> {
        let f = self.downsample_factor() as u32;
        if image_width == 0 || image_height == 0 || image_width % f != 0 || image_height % f != 0 {
            return Err(Error::Invalid(format!(
                "image {image_width}x{image_height} must be a nonzero multiple of {f}"
            )));
        }
        Ok(((image_height / f) as usize, (image_width / f) as usize))
    }

    /// Every attention layer the backbone exposes to hooks.
    fn attention_sites(&self) -> Vec<HookSite>;

    fn encode_text(&self, text: &str) -> Result<TextEmbedding>;

    /// Image to latent `[c, h, w]`.
    fn encode_image(&self, image: &RgbImage) -> Result<Tensor>;

    fn decode_latent(&self, latent: &Tensor) -> Result<RgbImage>;

    /// Latent of the image with the masked region blanked. The default
    /// zeroes masked latent cells.
    fn masked_image_latent(&self, image_latent: &Tensor, mask: &LatentMask) -> Result<Tensor> {
        let (_, h, w) = image_latent.dims3()?;
        if mask.dims() != (h, w) {
            return Err(Error::Shape(format!("mask {:?} vs latent {h}x{w}", mask.dims())));
        }
        let keep: Vec<f64> = mask.binarized().iter().map(|&b| if b { 0.0 } else { 1.0 }).collect();
        let keep = Tensor::from_vec(keep, (1, h, w), image_latent.device())?.to_dtype(image_latent.dtype())?;
        Ok(image_latent.broadcast_mul(&keep)?)
    }

    /// Predicted noise for `input.latent`, invoking `hooks` once per
    /// attention layer.
    fn predict_noise(&self, input: &DenoiseInput<'_>, hooks: &mut dyn AttentionHook) -> Result<Tensor>;
}

/// A backbone bound to its noise schedule and hook-site configuration.
pub struct BackboneSession {
    backbone: Box<dyn Backbone>,
    noise: NoiseSchedule,
    sites: SiteConfig,
}

impl BackboneSession {
    pub fn new(backbone: Box<dyn Backbone>, noise: NoiseSchedule, sites: SiteConfig) -> Result<Self> {
        sites.validate(&backbone.attention_sites())?;
        Ok(Self {
            backbone,
            noise,
            sites,
        })
    }

    pub fn backbone(&self) -> &dyn Backbone {
        self.backbone.as_ref()
    }

    pub fn noise_schedule(&self) -> &NoiseSchedule {
        &self.noise
    }

    pub fn sites(&self) -> &SiteConfig {
        &self.sites
    }

    /// One denoiser evaluation followed by the DDIM update towards
    /// `prev_timestep`.
    pub fn denoise_step(
        &self,
        input: &DenoiseInput<'_>,
        prev_timestep: Option<usize>,
        hooks: &mut dyn AttentionHook,
    ) -> Result<Tensor> {
        let eps = self.backbone.predict_noise(input, hooks)?;
        ddim_step(input.latent, &eps, input.timestep, prev_timestep, &self.noise)
    }
}
