//! Sampling orchestration over a pluggable diffusion inpainting backbone.

mod adam;
pub mod application;
mod backbone;
mod hooks;
mod inpaint;
mod noise;
mod observer;
pub mod profile;
mod removal;
mod schedule;
mod site;
pub mod stub;

pub use adam::{optimize_latent, Adam, AdamConfig, OptimizationOutcome};
pub use application::{run_application, ApplicationOutput, CallLog, EditInputs, TaskKind};
pub use backbone::{AttentionHook, Backbone, BackboneSession, DenoiseInput, NoHooks, TextEmbedding};
pub use hooks::HookCounters;
pub use inpaint::{run_controllable_inpainting, InpaintOutput, InpaintRequest};
pub use noise::{gaussian, gaussian_from};
pub use observer::{AttentionView, LossRecord, NullObserver, Observer, Phase, StageTrace};
pub use profile::{BackboneProfile, NoiseProfile};
pub use removal::{run_text_removal, run_text_removal_with, RemovalOutput};
pub use schedule::{ddim_step, init_latent, NoiseSchedule, SamplingSchedule};
pub use site::{HookSite, SiteConfig, Stage};
pub use stub::{make_stub_backbone, StubBackbone, StubConfig};
