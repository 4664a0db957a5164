//! Training-free text image manipulation.
//!
//! The engine removes, edits, inserts, moves, rescales and restyles text in
//! images by rewriting attention maps inside a diffusion inpainting backbone
//! and by optimizing the sampling latent against content and style losses.
//!
//! Layout of the crate:
//!
//! - [`attention`]: pure operations on attention probability maps
//!   (inversion, reassignment, identity enforcement).
//! - [`masks`] and [`grid`]: mask arithmetic and the side-by-side grid canvas
//!   used for style transfer.
//! - [`losses`]: the focal content loss and KL style loss.
//! - [`pipeline`]: backbone abstraction, schedules, hooks and the per-task
//!   wiring of text removal and controllable inpainting.
//! - [`eval`]: compositing, zoom crops and the metrics used for reporting.

pub mod attention;
pub mod error;
pub mod eval;
pub mod grid;
pub mod losses;
pub mod masks;
pub mod pipeline;
pub mod plane;
pub mod viz;

pub use attention::{AttentionKind, AttentionMap, LatentMask, TokenLayout};
pub use error::{Error, Result};
pub use grid::{GridCanvas, SlotRect};
pub use losses::{GuidanceWeights, StyleTarget};
pub use masks::{CharWidthPriors, MaskSet};
pub use plane::Plane;
