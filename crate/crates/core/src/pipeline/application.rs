//! Per-task wiring of removal and controllable inpainting.

use std::fmt;
use std::str::FromStr;

use image::imageops::{self, FilterType};
use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use super::adam::AdamConfig;
use super::backbone::BackboneSession;
use super::hooks::HookCounters;
use super::inpaint::{run_controllable_inpainting, InpaintRequest};
use super::observer::{Observer, Phase, StageTrace};
use super::removal::run_text_removal;
use super::schedule::SamplingSchedule;
use crate::error::{Error, Result};
use crate::eval::composite_with_input;
use crate::losses::GuidanceWeights;
use crate::masks::{pixel_bbox, CharWidthPriors, MaskSet, ShrinkAnchor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Removal,
    Editing,
    Insertion,
    Repositioning,
    Rescaling,
    StyleInsertion,
    StyleEditing,
}

impl TaskKind {
    pub const ALL: [TaskKind; 7] = [
        TaskKind::Removal,
        TaskKind::Editing,
        TaskKind::Insertion,
        TaskKind::Repositioning,
        TaskKind::Rescaling,
        TaskKind::StyleInsertion,
        TaskKind::StyleEditing,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TaskKind::Removal => "removal",
            TaskKind::Editing => "editing",
            TaskKind::Insertion => "insertion",
            TaskKind::Repositioning => "repositioning",
            TaskKind::Rescaling => "rescaling",
            TaskKind::StyleInsertion => "style_insertion",
            TaskKind::StyleEditing => "style_editing",
        }
    }

    /// Phases the task runs, in order.
    pub fn phases(&self) -> &'static [Phase] {
        match self {
            TaskKind::Removal => &[Phase::Removal],
            TaskKind::Insertion | TaskKind::StyleInsertion => &[Phase::Inpainting],
            _ => &[Phase::Removal, Phase::Inpainting],
        }
    }

    pub fn needs_reference_image(&self) -> bool {
        matches!(self, TaskKind::StyleInsertion | TaskKind::StyleEditing)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        TaskKind::ALL
            .into_iter()
            .find(|k| k.as_str() == norm)
            .ok_or_else(|| Error::Invalid(format!("unknown task '{s}'")))
    }
}

/// Everything a task may need. Which fields are required depends on the
/// task kind.
#[derive(Clone, Debug)]
pub struct EditInputs {
    pub image: RgbImage,
    /// Region the new text goes into (or the text to remove).
    pub mask: GrayImage,
    /// Region cleared before inpainting, when it differs from `mask`
    /// (repositioning and rescaling). It is also the reference-text region
    /// for tasks that borrow style from the input.
    pub removal_mask: Option<GrayImage>,
    pub target_text: Option<String>,
    /// Text currently in the mask; enables width-prior shrinking.
    pub source_text: Option<String>,
    pub reference: Option<RgbImage>,
    pub reference_mask: Option<GrayImage>,
    pub seed: u64,
    pub weights: GuidanceWeights,
    pub schedule: SamplingSchedule,
    pub adam: AdamConfig,
    pub priors: CharWidthPriors,
    pub anchor: ShrinkAnchor,
}

impl EditInputs {
    pub fn new(image: RgbImage, mask: GrayImage) -> Self {
        Self {
            image,
            mask,
            removal_mask: None,
            target_text: None,
            source_text: None,
            reference: None,
            reference_mask: None,
            seed: 0,
            weights: GuidanceWeights::default(),
            schedule: SamplingSchedule::default(),
            adam: AdamConfig::default(),
            priors: CharWidthPriors::default(),
            anchor: ShrinkAnchor::default(),
        }
    }

    /// Checks that the inputs are complete for `task`.
    pub fn validate(&self, task: TaskKind) -> Result<()> {
        let dims = self.image.dimensions();
        let same = |m: &GrayImage, what: &str| {
            if m.dimensions() == dims {
                Ok(())
            } else {
                Err(Error::Shape(format!("{what} {:?} differs from image {dims:?}", m.dimensions())))
            }
        };
        same(&self.mask, "mask")?;
        if pixel_bbox(&self.mask).is_none() {
            return Err(Error::EmptyMask("mask has no set pixels".into()));
        }
        if let Some(m) = &self.removal_mask {
            same(m, "removal mask")?;
            if pixel_bbox(m).is_none() {
                return Err(Error::EmptyMask("removal mask has no set pixels".into()));
            }
        }
        if let Some(m) = &self.reference_mask {
            if pixel_bbox(m).is_none() {
                return Err(Error::EmptyMask("reference mask has no set pixels".into()));
            }
        }
        if task != TaskKind::Removal && self.target_text.as_deref().is_none_or(str::is_empty) {
            return Err(Error::Invalid(format!("{task} needs a target text")));
        }
        if task.needs_reference_image() {
            if self.reference.is_none() {
                return Err(Error::Invalid(format!("{task} needs a reference image")));
            }
            if self.reference_mask.is_none() {
                return Err(Error::Invalid(format!("{task} needs a reference mask")));
            }
        }
        if task == TaskKind::Insertion && self.reference_mask.is_none() && self.removal_mask.is_none() {
            return Err(Error::Invalid("insertion needs a reference mask over existing text".into()));
        }
        if let (Some(r), Some(m)) = (&self.reference, &self.reference_mask) {
            if r.dimensions() != m.dimensions() {
                return Err(Error::Shape("reference image and reference mask differ in size".into()));
            }
        }
        Ok(())
    }
}

/// Number of removal and inpainting invocations of one application run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallLog {
    pub removal: usize,
    pub inpainting: usize,
}

#[derive(Debug)]
pub struct ApplicationOutput {
    pub task: TaskKind,
    pub image: RgbImage,
    /// Removal result composited with the input.
    pub removal: Option<RgbImage>,
    pub grid_image: Option<RgbImage>,
    pub masks: Option<MaskSet>,
    pub traces: Vec<StageTrace>,
    pub removal_counters: Option<HookCounters>,
    pub inpainting_counters: Option<HookCounters>,
    pub calls: CallLog,
}

fn fit_reference(image: &RgbImage, mask: &GrayImage, width: u32, height: u32) -> (RgbImage, GrayImage) {
    if image.dimensions() == (width, height) {
        return (image.clone(), mask.clone());
    }
    (
        imageops::resize(image, width, height, FilterType::Triangle),
        imageops::resize(mask, width, height, FilterType::Nearest),
    )
}

pub fn run_application(
    task: TaskKind,
    inputs: &EditInputs,
    session: &BackboneSession,
    observer: &mut dyn Observer,
) -> Result<ApplicationOutput> {
    inputs.validate(task)?;
    let mut out = ApplicationOutput {
        task,
        image: inputs.image.clone(),
        removal: None,
        grid_image: None,
        masks: None,
        traces: Vec::new(),
        removal_counters: None,
        inpainting_counters: None,
        calls: CallLog::default(),
    };
    let clear_mask = inputs.removal_mask.as_ref().unwrap_or(&inputs.mask);

    let removed = if task.phases().contains(&Phase::Removal) {
        let r = run_text_removal(&inputs.image, clear_mask, session, &inputs.schedule, inputs.seed, observer)?;
        out.calls.removal += 1;
        out.removal_counters = Some(r.counters);
        let composited = composite_with_input(&r.image, &inputs.image, clear_mask)?;
        out.removal = Some(composited.clone());
        composited
    } else {
        inputs.image.clone()
    };
    if task == TaskKind::Removal {
        out.image = removed;
        return Ok(out);
    }

    let (reference, reference_mask) = match task {
        TaskKind::StyleInsertion | TaskKind::StyleEditing => (
            inputs.reference.clone().expect("validated"),
            inputs.reference_mask.clone().expect("validated"),
        ),
        TaskKind::Insertion => (
            inputs.image.clone(),
            inputs.reference_mask.clone().or_else(|| inputs.removal_mask.clone()).expect("validated"),
        ),
        _ => (inputs.image.clone(), clear_mask.clone()),
    };
    let (w, h) = inputs.image.dimensions();
    let (reference, reference_mask) = fit_reference(&reference, &reference_mask, w, h);

    let target_text = inputs.target_text.as_deref().expect("validated");
    let dims = session.backbone().latent_dims(w, h)?;
    let masks = MaskSet::build(
        &inputs.mask,
        dims,
        target_text,
        inputs.source_text.as_deref(),
        &inputs.priors,
        inputs.anchor,
    )?;
    let request = InpaintRequest {
        removed: &removed,
        reference: &reference,
        masks: &masks,
        reference_mask: &reference_mask,
        target_text,
        weights: inputs.weights,
        schedule: &inputs.schedule,
        adam: inputs.adam,
        seed: inputs.seed,
    };
    let ci = run_controllable_inpainting(&request, session, observer)?;
    out.calls.inpainting += 1;
    out.image = ci.image;
    out.grid_image = Some(ci.grid_image);
    out.traces = ci.traces;
    out.inpainting_counters = Some(ci.counters);
    out.masks = Some(masks);
    Ok(out)
}
