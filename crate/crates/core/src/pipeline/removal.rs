//! Text removal: blank-prompt inpainting with self-attention inversion and
//! cross-attention reassignment inside the mask.

use candle_core::Tensor;
use image::{GrayImage, RgbImage};

use super::backbone::{BackboneSession, DenoiseInput};
use super::hooks::{HookCounters, MaskCache, RemovalHooks};
use super::noise::gaussian;
use super::observer::{Observer, Phase};
use super::schedule::{init_latent, SamplingSchedule};
use crate::attention::{InversionOptions, LatentMask};
use crate::error::{Error, Result};
use crate::masks::{pixel_count, to_latent_mask};

#[derive(Debug)]
pub struct RemovalOutput {
    /// Raw decode of the final latent.
    pub image: RgbImage,
    pub latent: Tensor,
    pub latent_mask: LatentMask,
    pub counters: HookCounters,
}

pub fn run_text_removal(
    image: &RgbImage,
    pixel_mask: &GrayImage,
    session: &BackboneSession,
    schedule: &SamplingSchedule,
    seed: u64,
    observer: &mut dyn Observer,
) -> Result<RemovalOutput> {
    run_text_removal_with(image, pixel_mask, session, schedule, seed, InversionOptions::default(), observer)
}

pub fn run_text_removal_with(
    image: &RgbImage,
    pixel_mask: &GrayImage,
    session: &BackboneSession,
    schedule: &SamplingSchedule,
    seed: u64,
    options: InversionOptions,
    observer: &mut dyn Observer,
) -> Result<RemovalOutput> {
    schedule.validate()?;
    if image.dimensions() != pixel_mask.dimensions() {
        return Err(Error::Shape(format!(
            "image {:?} and mask {:?} differ",
            image.dimensions(),
            pixel_mask.dimensions()
        )));
    }
    if pixel_count(pixel_mask) == 0 {
        return Err(Error::EmptyMask("removal mask has no set pixels".into()));
    }
    let backbone = session.backbone();
    let dims = backbone.latent_dims(image.width(), image.height())?;
    let latent_mask = to_latent_mask(pixel_mask, dims)?.to_binary();
    if latent_mask.count() == 0 {
        return Err(Error::EmptyMask("removal mask vanishes at latent resolution".into()));
    }

    let clean = backbone.encode_image(image)?;
    let masked = backbone.masked_image_latent(&clean, &latent_mask)?;
    let embedding = backbone.encode_text("")?;
    let timesteps = session.noise_schedule().sampling_timesteps(schedule.total_steps)?;
    let noise = gaussian(seed, clean.shape(), backbone.device(), backbone.dtype())?;
    let mut latent = init_latent(&clean, timesteps[0], &noise, session.noise_schedule())?;

    let mut counters = HookCounters::default();
    let mut cache = Some(MaskCache::new(latent_mask.clone(), None));
    let (sai, car) = (schedule.sai_steps(), schedule.car_steps());
    for (step, &t) in timesteps.iter().enumerate() {
        let mut hooks = RemovalHooks {
            sites: session.sites(),
            mask: cache.take().expect("mask cache present"),
            layout: &embedding.layout,
            step,
            inversion_steps: sai,
            reassignment_steps: car,
            options,
            counters: &mut counters,
            observer: &mut *observer,
        };
        let input = DenoiseInput {
            latent: &latent,
            masked_latent: &masked,
            mask: &latent_mask,
            embedding: &embedding,
            timestep: t,
        };
        let next = session.denoise_step(&input, timesteps.get(step + 1).copied(), &mut hooks)?;
        cache = Some(hooks.mask);
        counters.forward_passes += 1;
        latent = next;
        observer.on_step(Phase::Removal, step + 1, timesteps.len());
    }
    let image = backbone.decode_latent(&latent)?;
    Ok(RemovalOutput {
        image,
        latent,
        latent_mask,
        counters,
    })
}
