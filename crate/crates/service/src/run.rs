//! Synchronous task execution shared by the CLI and the job workers.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use image::{DynamicImage, GrayImage, RgbImage};
use omnitext_core::attention::{extract_token_field, masked_row_field};
use omnitext_core::pipeline::{
    run_application, AttentionView, BackboneSession, EditInputs, Observer, Phase, StageTrace, TaskKind,
};
use omnitext_core::viz::heatmap;
use omnitext_core::AttentionKind;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::config::ServiceConfig;
use crate::error::{ServiceError, ServiceResult};
use crate::imaging::{open_gray, open_rgb, save_png};

pub const OUTPUT_FILE: &str = "output.png";
pub const REMOVAL_FILE: &str = "removal.png";
pub const ATTENTION_DIR: &str = "attention";

/// Per-run overrides of the configured defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunParams {
    pub seed: Option<u64>,
    pub lambda_c: Option<f64>,
    pub lambda_s: Option<f64>,
    pub gamma: Option<f64>,
    pub steps: Option<usize>,
    pub opt_iters: Option<usize>,
}

impl RunParams {
    pub fn apply(&self, inputs: &mut EditInputs) {
        if let Some(v) = self.seed {
            inputs.seed = v;
        }
        if let Some(v) = self.lambda_c {
            inputs.weights.lambda_content = v;
        }
        if let Some(v) = self.lambda_s {
            inputs.weights.lambda_style = v;
        }
        if let Some(v) = self.gamma {
            inputs.weights.gamma = v;
        }
        if let Some(v) = self.steps {
            inputs.schedule.total_steps = v;
        }
        if let Some(v) = self.opt_iters {
            inputs.schedule.opt_iters = v;
        }
    }
}

/// Everything about a run except the images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobSpec {
    pub task: TaskKind,
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub source_text: Option<String>,
    #[serde(default)]
    pub params: RunParams,
}

#[derive(Clone, Debug)]
pub struct InputImages {
    pub image: RgbImage,
    pub mask: GrayImage,
    pub removal_mask: Option<GrayImage>,
    pub reference: Option<RgbImage>,
    pub reference_mask: Option<GrayImage>,
}

const IMAGE_FILE: &str = "image.png";
const MASK_FILE: &str = "mask.png";
const REMOVAL_MASK_FILE: &str = "removal_mask.png";
const REFERENCE_FILE: &str = "reference.png";
const REFERENCE_MASK_FILE: &str = "reference_mask.png";

impl InputImages {
    pub fn save(&self, dir: &Path) -> ServiceResult<()> {
        std::fs::create_dir_all(dir)?;
        save_png(&DynamicImage::ImageRgb8(self.image.clone()), &dir.join(IMAGE_FILE))?;
        save_png(&DynamicImage::ImageLuma8(self.mask.clone()), &dir.join(MASK_FILE))?;
        if let Some(m) = &self.removal_mask {
            save_png(&DynamicImage::ImageLuma8(m.clone()), &dir.join(REMOVAL_MASK_FILE))?;
        }
        if let Some(r) = &self.reference {
            save_png(&DynamicImage::ImageRgb8(r.clone()), &dir.join(REFERENCE_FILE))?;
        }
        if let Some(m) = &self.reference_mask {
            save_png(&DynamicImage::ImageLuma8(m.clone()), &dir.join(REFERENCE_MASK_FILE))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> ServiceResult<Self> {
        let optional_gray = |name: &str| {
            let p = dir.join(name);
            p.exists().then(|| open_gray(&p)).transpose()
        };
        let reference = dir.join(REFERENCE_FILE);
        Ok(Self {
            image: open_rgb(&dir.join(IMAGE_FILE))?,
            mask: open_gray(&dir.join(MASK_FILE))?,
            removal_mask: optional_gray(REMOVAL_MASK_FILE)?,
            reference: reference.exists().then(|| open_rgb(&reference)).transpose()?,
            reference_mask: optional_gray(REFERENCE_MASK_FILE)?,
        })
    }
}

/// Combines images, the spec and the configured defaults, and validates
/// the result for the task.
pub fn build_inputs(spec: &JobSpec, images: InputImages, config: &ServiceConfig) -> ServiceResult<EditInputs> {
    let mut inputs = EditInputs::new(images.image, images.mask);
    inputs.removal_mask = images.removal_mask;
    inputs.reference = images.reference;
    inputs.reference_mask = images.reference_mask;
    inputs.target_text = spec.text.clone();
    inputs.source_text = spec.source_text.clone();
    inputs.weights = config.weights;
    inputs.schedule = config.schedule.clone();
    spec.params.apply(&mut inputs);
    inputs.weights.validate()?;
    inputs.schedule.validate()?;
    inputs.validate(spec.task)?;
    Ok(inputs)
}

/// Reports progress and writes attention heatmaps while a task runs.
pub struct RunObserver<'a> {
    steps_per_phase: usize,
    phases: Vec<Phase>,
    attention_dir: Option<PathBuf>,
    attention_stride: usize,
    progress: Box<dyn FnMut(f64) + 'a>,
    started: Instant,
    phase_marks: Vec<(Phase, f64)>,
}

impl<'a> RunObserver<'a> {
    pub fn new(task: TaskKind, steps_per_phase: usize) -> Self {
        Self {
            steps_per_phase,
            phases: task.phases().to_vec(),
            attention_dir: None,
            attention_stride: 0,
            progress: Box::new(|_| {}),
            started: Instant::now(),
            phase_marks: Vec::new(),
        }
    }

    pub fn with_attention(mut self, dir: PathBuf, stride: usize) -> Self {
        self.attention_dir = Some(dir);
        self.attention_stride = stride;
        self
    }

    pub fn with_progress(mut self, f: impl FnMut(f64) + 'a) -> Self {
        self.progress = Box::new(f);
        self
    }

    /// Sampling step counted across all phases of the task.
    pub fn global_step(&self, phase: Phase, step: usize) -> usize {
        let offset = self.phases.iter().position(|&p| p == phase).unwrap_or(0);
        offset * self.steps_per_phase + step
    }

    /// Seconds spent in each phase.
    pub fn timings(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        let mut last = 0.0;
        for (phase, end) in &self.phase_marks {
            out.insert(phase.to_string(), end - last);
            last = *end;
        }
        out.insert("total".into(), self.started.elapsed().as_secs_f64());
        out
    }

    fn write_snapshot(&self, view: &AttentionView<'_>) -> ServiceResult<()> {
        let Some(root) = &self.attention_dir else { return Ok(()) };
        let dir = root.join(self.global_step(view.phase, view.step).to_string());
        std::fs::create_dir_all(&dir)?;
        let prefix = format!("{}_{}", view.phase, view.site);
        let fields = match view.map.kind() {
            AttentionKind::CrossAttention => {
                let layout = view.layout;
                let mut tokens = vec![
                    ("start_description".to_owned(), layout.start_description),
                    ("end_description".to_owned(), layout.end_description),
                ];
                tokens.extend(layout.char_indices.iter().enumerate().map(|(k, &t)| (format!("char{k}"), t)));
                tokens
                    .into_iter()
                    .map(|(name, t)| Ok((name, extract_token_field(view.map, layout, t)?)))
                    .collect::<omnitext_core::Result<Vec<_>>>()?
            }
            AttentionKind::SelfAttention => {
                if view.mask.count() == 0 {
                    return Ok(());
                }
                vec![("masked_rows".to_owned(), masked_row_field(view.map, view.mask)?)]
            }
        };
        for (name, field) in fields {
            let img = heatmap(&field, 4);
            save_png(&DynamicImage::ImageRgb8(img), &dir.join(format!("{prefix}_{name}.png")))?;
        }
        Ok(())
    }
}

impl Observer for RunObserver<'_> {
    fn on_step(&mut self, phase: Phase, step: usize, total: usize) {
        let done = self.global_step(phase, step);
        let all = (self.phases.len() * self.steps_per_phase).max(1);
        (self.progress)((done as f64 / all as f64).min(1.0));
        if step == total {
            self.phase_marks.push((phase, self.started.elapsed().as_secs_f64()));
        }
    }

    fn wants_attention(&self, phase: Phase, step: usize) -> bool {
        self.attention_dir.is_some() && self.attention_stride > 0 && self.global_step(phase, step) % self.attention_stride == 0
    }

    fn on_attention(&mut self, view: &AttentionView<'_>) {
        if let Err(e) = self.write_snapshot(view) {
            warn!("attention snapshot failed: {e}");
        }
    }
}

#[derive(Serialize)]
struct TraceFile<'a> {
    task: TaskKind,
    seed: u64,
    traces: &'a [StageTrace],
    removal_counters: &'a Option<omnitext_core::pipeline::HookCounters>,
    inpainting_counters: &'a Option<omnitext_core::pipeline::HookCounters>,
    calls: omnitext_core::pipeline::CallLog,
}

/// Runs `task` and writes its artifacts into `out_dir`. Returns the
/// artifact file names in the order they were written.
pub fn execute(
    task: TaskKind,
    inputs: &EditInputs,
    session: &BackboneSession,
    out_dir: &Path,
    observer: &mut RunObserver<'_>,
) -> ServiceResult<Vec<String>> {
    std::fs::create_dir_all(out_dir)?;
    let output = run_application(task, inputs, session, observer)?;
    let mut written = Vec::new();
    let mut save = |name: &str, img: DynamicImage| -> ServiceResult<()> {
        save_png(&img, &out_dir.join(name))?;
        written.push(name.to_owned());
        Ok(())
    };
    save("input.png", DynamicImage::ImageRgb8(inputs.image.clone()))?;
    if let Some(r) = &output.removal {
        save(REMOVAL_FILE, DynamicImage::ImageRgb8(r.clone()))?;
    }
    if let Some(g) = &output.grid_image {
        save("grid.png", DynamicImage::ImageRgb8(g.clone()))?;
    }
    if let Some(m) = &output.masks {
        save("shrunk_mask.png", DynamicImage::ImageLuma8(m.shrunk_pixel.clone()))?;
    }
    save(OUTPUT_FILE, DynamicImage::ImageRgb8(output.image.clone()))?;
    let trace = TraceFile {
        task,
        seed: inputs.seed,
        traces: &output.traces,
        removal_counters: &output.removal_counters,
        inpainting_counters: &output.inpainting_counters,
        calls: output.calls,
    };
    std::fs::write(out_dir.join("traces.json"), serde_json::to_vec_pretty(&trace)?)?;
    written.push("traces.json".into());
    Ok(written)
}

/// Opens a backbone session for the configured profile.
pub fn open_session(config: &ServiceConfig) -> ServiceResult<BackboneSession> {
    config.profile.open_session().map_err(|e| match e {
        omnitext_core::Error::Config(m) => ServiceError::validation(m),
        other => other.into(),
    })
}
