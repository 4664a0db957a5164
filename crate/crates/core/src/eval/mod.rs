//! Evaluation protocol: compositing, zoom crops, metrics and reports.

mod accuracy;
mod composite;
mod dataset;
mod fid;
mod metrics;
mod recognizer;
mod report;
mod zoom;

pub use accuracy::{normalized_edit_distance, rendering_accuracy};
pub use composite::composite_with_input;
pub use dataset::{load_cases, load_outputs, EvalCase};
pub use fid::{frechet_distance, FeatureExtractor};
pub use metrics::{ms_ssim, mse, psnr, FloatImage, PSNR_CAP};
pub use recognizer::{CommandRecognizer, TextRecognizer};
pub use report::{evaluate_task, MetricsReport};
pub use zoom::{zoom_crop, zoom_crop_all_text, ZoomCrop, EDITING_MIN_SIDE, REMOVAL_MIN_SIDE};
