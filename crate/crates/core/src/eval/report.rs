use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::accuracy::rendering_accuracy;
use super::composite::composite_with_input;
use super::dataset::EvalCase;
use super::fid::{frechet_distance, FeatureExtractor};
use super::metrics::{ms_ssim, mse, psnr, FloatImage};
use super::recognizer::TextRecognizer;
use crate::error::{Error, Result};
use crate::masks::pixel_bbox;
use crate::pipeline::TaskKind;

/// Aggregate metrics of one task. `mse` and `ms_ssim` are stored unscaled;
/// the table applies the reporting scales.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: TaskKind,
    pub n_samples: usize,
    pub mse: f64,
    pub psnr: f64,
    pub ms_ssim: f64,
    pub acc: Option<f64>,
    pub ned: Option<f64>,
    pub fid: Option<f64>,
}

impl MetricsReport {
    /// Reporting multiplier for MSE: 10^3 for removal, 10^2 otherwise.
    pub fn mse_scale(&self) -> f64 {
        if self.task == TaskKind::Removal { 1e3 } else { 1e2 }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Header and one row. Removal uses MS-SSIM, PSNR, MSE, FID; the other
    /// tasks use ACC, NED, MSE, MS-SSIM, PSNR, FID.
    pub fn markdown_table(&self) -> String {
        let opt = |v: Option<f64>, digits: usize| v.map_or("-".to_owned(), |v| format!("{v:.digits$}"));
        let mse = format!("{:.2}", self.mse * self.mse_scale());
        let msssim = format!("{:.2}", self.ms_ssim * 100.0);
        let psnr = format!("{:.2}", self.psnr);
        let fid = opt(self.fid, 2);
        let mse_head = if self.task == TaskKind::Removal { "MSE (x10^-3)" } else { "MSE (x10^-2)" };
        let (head, row): (Vec<&str>, Vec<String>) = if self.task == TaskKind::Removal {
            (
                vec!["Task", "N", "MS-SSIM (x10^-2)", "PSNR", mse_head, "FID"],
                vec![self.task.to_string(), self.n_samples.to_string(), msssim, psnr, mse, fid],
            )
        } else {
            (
                vec!["Task", "N", "ACC (%)", "NED", mse_head, "MS-SSIM (x10^-2)", "PSNR", "FID"],
                vec![
                    self.task.to_string(),
                    self.n_samples.to_string(),
                    opt(self.acc, 2),
                    opt(self.ned, 4),
                    mse,
                    msssim,
                    psnr,
                    fid,
                ],
            )
        };
        let sep: Vec<&str> = head.iter().map(|_| "---").collect();
        format!("| {} |\n| {} |\n| {} |\n", head.join(" | "), sep.join(" | "), row.join(" | "))
    }
}

fn sorted_mean(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

fn crop(image: &RgbImage, b: &crate::masks::BBox) -> RgbImage {
    image::imageops::crop_imm(image, b.x, b.y, b.width, b.height).to_image()
}

/// Scores outputs against ground truth. Removal compares whole images
/// after compositing the output into the input; the other tasks compare the
/// mask's bounding-box crop and read it with the recognizer.
pub fn evaluate_task(
    cases: &[EvalCase],
    outputs: &[RgbImage],
    task: TaskKind,
    recognizer: Option<&mut dyn TextRecognizer>,
    fid_extractor: Option<&mut dyn FeatureExtractor>,
) -> Result<MetricsReport> {
    if cases.len() != outputs.len() {
        return Err(Error::Invalid(format!("{} outputs for {} cases", outputs.len(), cases.len())));
    }
    if cases.is_empty() {
        return Err(Error::Invalid("no cases to evaluate".into()));
    }
    let mut pairs = Vec::with_capacity(cases.len());
    for (case, output) in cases.iter().zip(outputs) {
        if output.dimensions() != case.ground_truth.dimensions() {
            return Err(Error::Shape(format!(
                "case {}: output {:?} vs ground truth {:?}",
                case.name,
                output.dimensions(),
                case.ground_truth.dimensions()
            )));
        }
        if task == TaskKind::Removal {
            pairs.push((composite_with_input(output, &case.input, &case.mask)?, case.ground_truth.clone()));
        } else {
            let b = pixel_bbox(&case.mask)
                .ok_or_else(|| Error::EmptyMask(format!("case {} has an empty mask", case.name)))?;
            pairs.push((crop(output, &b), crop(&case.ground_truth, &b)));
        }
    }

    let (mut mses, mut psnrs, mut ssims) = (Vec::new(), Vec::new(), Vec::new());
    for (out, gt) in &pairs {
        let (a, b) = (FloatImage::from(out), FloatImage::from(gt));
        mses.push(mse(&a, &b)?);
        psnrs.push(psnr(&a, &b)?);
        ssims.push(ms_ssim(&a, &b)?);
    }

    let (mut acc, mut ned) = (None, None);
    if let (Some(rec), true) = (recognizer, task != TaskKind::Removal) {
        let targets: Vec<&str> = cases
            .iter()
            .map(|c| {
                c.target_text
                    .as_deref()
                    .ok_or_else(|| Error::Invalid(format!("case {} has no target text", c.name)))
            })
            .collect::<Result<_>>()?;
        let predicted: Result<Vec<String>> = pairs.iter().map(|(out, _)| rec.recognize(out)).collect();
        match predicted {
            Ok(p) => {
                let (a, n) = rendering_accuracy(&p, &targets)?;
                acc = Some(a);
                ned = Some(n);
            }
            Err(e) => tracing::warn!(error = %e, "recognizer unavailable, accuracy omitted"),
        }
    }

    let mut fid = None;
    if let (Some(ext), true) = (fid_extractor, pairs.len() >= 2) {
        let mut fake = Vec::with_capacity(pairs.len());
        let mut real = Vec::with_capacity(pairs.len());
        for (out, gt) in &pairs {
            fake.push(ext.features(out)?);
            real.push(ext.features(gt)?);
        }
        fid = Some(frechet_distance(&fake, &real)?);
    }

    Ok(MetricsReport {
        task,
        n_samples: cases.len(),
        mse: sorted_mean(mses),
        psnr: sorted_mean(psnrs),
        ms_ssim: sorted_mean(ssims),
        acc,
        ned,
        fid,
    })
}
