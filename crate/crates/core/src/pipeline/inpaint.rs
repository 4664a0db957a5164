//! Controllable inpainting on the grid canvas with attention-guided latent
//! optimization.

use std::collections::BTreeSet;

use candle_core::Tensor;
use image::{GrayImage, RgbImage};

use super::adam::{optimize_latent, AdamConfig};
use super::backbone::{BackboneSession, DenoiseInput, TextEmbedding};
use super::hooks::{GuidanceHooks, HookCounters, MaskCache, ObservingHooks};
use super::noise::gaussian;
use super::observer::{LossRecord, Observer, Phase, StageTrace};
use super::schedule::{init_latent, SamplingSchedule};
use crate::error::{Error, Result};
use crate::grid::{assemble_grid, crop_grid_result, GridCanvas};
use crate::losses::{content_loss, scalar, style_loss, style_target, total_guidance, GuidanceWeights, StyleTarget};
use crate::masks::{pixel_count, to_latent_mask, MaskSet};

pub struct InpaintRequest<'a> {
    /// Image whose target region has already been cleared.
    pub removed: &'a RgbImage,
    /// Style reference, same height as `removed`.
    pub reference: &'a RgbImage,
    pub masks: &'a MaskSet,
    /// Text region of the reference.
    pub reference_mask: &'a GrayImage,
    pub target_text: &'a str,
    pub weights: GuidanceWeights,
    pub schedule: &'a SamplingSchedule,
    pub adam: AdamConfig,
    pub seed: u64,
}

#[derive(Debug)]
pub struct InpaintOutput {
    /// The target slot of the decoded grid.
    pub image: RgbImage,
    pub grid_image: RgbImage,
    pub canvas: GridCanvas,
    pub traces: Vec<StageTrace>,
    pub counters: HookCounters,
}

struct Guidance<'a> {
    session: &'a BackboneSession,
    canvas: &'a GridCanvas,
    embedding: &'a TextEmbedding,
    style: &'a StyleTarget,
    weights: GuidanceWeights,
}

impl Guidance<'_> {
    /// One denoiser evaluation at `timestep` returning `(content, style, total)`.
    fn evaluate(
        &self,
        latent: &Tensor,
        timestep: usize,
        target: &mut MaskCache,
        counters: &mut HookCounters,
    ) -> Result<(Tensor, Tensor, Tensor)> {
        let sites = self.session.sites();
        let mut hooks = GuidanceHooks {
            sites,
            target: &mut *target,
            cross: Vec::new(),
            selfs: Vec::new(),
            counters: &mut *counters,
        };
        let input = DenoiseInput {
            latent,
            masked_latent: &self.canvas.grid_masked_latent,
            mask: &self.canvas.grid_latent_mask,
            embedding: self.embedding,
            timestep,
        };
        self.session.backbone().predict_noise(&input, &mut hooks)?;
        let (cross, selfs) = (hooks.cross, hooks.selfs);
        counters.forward_passes += 1;

        let layout = &self.embedding.layout;
        let mut per_map = Vec::with_capacity(cross.len());
        for map in &cross {
            let strips = target.strips_at(map.spatial_dims())?;
            per_map.push(content_loss(std::slice::from_ref(map), layout, strips, self.weights.gamma)?);
        }
        let content = Tensor::stack(&per_map, 0)?.mean_all()?;
        let style = style_loss(&selfs, &self.canvas.grid_latent_mask, self.style)?;
        let total = total_guidance(&content, &style, &self.weights)?;
        Ok((content, style, total))
    }
}

pub fn run_controllable_inpainting(
    request: &InpaintRequest<'_>,
    session: &BackboneSession,
    observer: &mut dyn Observer,
) -> Result<InpaintOutput> {
    let InpaintRequest {
        removed,
        reference,
        masks,
        reference_mask,
        target_text,
        weights,
        schedule,
        adam,
        seed,
    } = *request;
    schedule.validate()?;
    weights.validate()?;
    if target_text.is_empty() {
        return Err(Error::Invalid("target text is empty".into()));
    }
    if reference.dimensions() != reference_mask.dimensions() {
        return Err(Error::Shape("reference image and reference mask differ in size".into()));
    }
    if removed.height() != reference.height() {
        return Err(Error::Shape(format!(
            "reference height {} differs from image height {}",
            reference.height(),
            removed.height()
        )));
    }
    if pixel_count(reference_mask) == 0 {
        return Err(Error::EmptyMask("reference mask has no set pixels".into()));
    }
    let backbone = session.backbone();
    let dims = backbone.latent_dims(removed.width(), removed.height())?;
    let ref_dims = backbone.latent_dims(reference.width(), reference.height())?;
    if masks.shrunk_latent.dims() != dims {
        return Err(Error::Shape(format!(
            "mask set is at {:?}, image latent is {dims:?}",
            masks.shrunk_latent.dims()
        )));
    }
    if masks.shrunk_latent.count() == 0 {
        return Err(Error::EmptyMask("target mask vanishes at latent resolution".into()));
    }
    let ref_latent_mask = to_latent_mask(reference_mask, ref_dims)?;

    let removed_latent = backbone.encode_image(removed)?;
    let reference_latent = backbone.encode_image(reference)?;
    let (c, h, w) = removed_latent.dims3()?;
    let noise = gaussian(seed, (c, h, w + ref_dims.1), backbone.device(), backbone.dtype())?;
    let canvas = assemble_grid(&removed_latent, &reference_latent, &masks.shrunk_latent, &noise)?;
    let style = style_target(&canvas.reference_mask(&ref_latent_mask)?)?;

    let embedding = backbone.encode_text(target_text)?;
    if embedding.layout.n_chars() != target_text.chars().count() {
        return Err(Error::Invalid(format!(
            "target text of {} characters does not fit the token budget",
            target_text.chars().count()
        )));
    }
    let timesteps = session.noise_schedule().sampling_timesteps(schedule.total_steps)?;
    let mut latent = init_latent(&canvas.grid_clean_latent, timesteps[0], &canvas.grid_latent, session.noise_schedule())?;

    let guidance = Guidance {
        session,
        canvas: &canvas,
        embedding: &embedding,
        style: &style,
        weights,
    };
    let mut target = MaskCache::new(canvas.grid_latent_mask.clone(), Some(target_text));
    let mut counters = HookCounters::default();
    let mut traces = Vec::new();
    let stages: BTreeSet<usize> = schedule.optimization_steps().into_iter().collect();

    for (step, &t) in timesteps.iter().enumerate() {
        if stages.contains(&step) && schedule.opt_iters > 0 {
            let mut records = Vec::with_capacity(schedule.opt_iters);
            let outcome = optimize_latent(&latent, schedule.opt_iters, adam, |z| {
                let (content, style, total) = guidance.evaluate(z, t, &mut target, &mut counters)?;
                records.push(LossRecord {
                    iteration: records.len(),
                    content: scalar(&content)?,
                    style: scalar(&style)?,
                    total: scalar(&total)?,
                });
                Ok(total)
            })?;
            if outcome.aborted {
                tracing::warn!(step, timestep = t, "latent optimization stopped on a non-finite value");
            }
            counters.optimization_steps.push(step);
            counters.optimization_iterations += outcome.losses.len();
            let trace = StageTrace {
                step,
                timestep: t,
                records,
                aborted: outcome.aborted,
            };
            observer.on_stage(Phase::Inpainting, &trace);
            traces.push(trace);
            latent = outcome.latent;
        }
        let mut hooks = ObservingHooks {
            phase: Phase::Inpainting,
            step,
            mask: &mut target,
            layout: &embedding.layout,
            observer: &mut *observer,
        };
        let input = DenoiseInput {
            latent: &latent,
            masked_latent: &canvas.grid_masked_latent,
            mask: &canvas.grid_latent_mask,
            embedding: &embedding,
            timestep: t,
        };
        latent = session.denoise_step(&input, timesteps.get(step + 1).copied(), &mut hooks)?;
        counters.forward_passes += 1;
        observer.on_step(Phase::Inpainting, step + 1, timesteps.len());
    }

    let grid_image = backbone.decode_latent(&latent)?;
    let slot = canvas.target_slot.scaled(backbone.downsample_factor());
    let image = crop_grid_result(&grid_image, &slot)?;
    Ok(InpaintOutput {
        image,
        grid_image,
        canvas,
        traces,
        counters,
    })
}

