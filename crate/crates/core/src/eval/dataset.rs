//! On-disk evaluation sets: one directory per case.
//!
//! ```text
//! <dataset>/<case>/input.png
//! <dataset>/<case>/mask.png
//! <dataset>/<case>/gt.png
//! <dataset>/<case>/ref.png        (optional)
//! <dataset>/<case>/ref_mask.png   (optional)
//! <dataset>/<case>/meta.json      {"source_text", "target_text", "task"}
//! <outputs>/<case>.png
//! ```

use std::path::Path;

use image::{GrayImage, RgbImage};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::pipeline::TaskKind;

#[derive(Clone, Debug)]
pub struct EvalCase {
    pub name: String,
    pub input: RgbImage,
    pub mask: GrayImage,
    pub ground_truth: RgbImage,
    pub source_text: Option<String>,
    pub target_text: Option<String>,
    pub task: Option<TaskKind>,
    pub reference: Option<RgbImage>,
    pub reference_mask: Option<GrayImage>,
}

#[derive(Debug, Default, Deserialize)]
struct Meta {
    source_text: Option<String>,
    target_text: Option<String>,
    task: Option<String>,
}

fn open_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path)?.to_rgb8())
}

fn open_gray(path: &Path) -> Result<GrayImage> {
    Ok(image::open(path)?.to_luma8())
}

fn optional<T>(path: &Path, open: fn(&Path) -> Result<T>) -> Result<Option<T>> {
    if path.exists() {
        open(path).map(Some)
    } else {
        Ok(None)
    }
}

fn load_case(dir: &Path, name: String) -> Result<EvalCase> {
    let required = |file: &str| {
        let p = dir.join(file);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::Invalid(format!("case {name} is missing {file}")))
        }
    };
    let input = open_rgb(&required("input.png")?)?;
    let mask = open_gray(&required("mask.png")?)?;
    let ground_truth = open_rgb(&required("gt.png")?)?;
    let meta: Meta = match std::fs::read_to_string(dir.join("meta.json")) {
        Ok(s) => serde_json::from_str(&s)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Meta::default(),
        Err(e) => return Err(e.into()),
    };
    let task = meta.task.as_deref().map(str::parse).transpose()?;
    if input.dimensions() != mask.dimensions() || input.dimensions() != ground_truth.dimensions() {
        return Err(Error::Shape(format!("case {name}: input, mask and gt sizes differ")));
    }
    Ok(EvalCase {
        reference: optional(&dir.join("ref.png"), open_rgb)?,
        reference_mask: optional(&dir.join("ref_mask.png"), open_gray)?,
        name,
        input,
        mask,
        ground_truth,
        source_text: meta.source_text,
        target_text: meta.target_text,
        task,
    })
}

/// All case directories of `root`, sorted by name.
pub fn load_cases(root: &Path) -> Result<Vec<EvalCase>> {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(root)? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    if names.is_empty() {
        return Err(Error::Invalid(format!("no cases under {}", root.display())));
    }
    names.into_iter().map(|n| load_case(&root.join(&n), n)).collect()
}

/// `<outputs>/<case>.png` for every case. Missing or extra outputs are
/// errors.
pub fn load_outputs(root: &Path, cases: &[EvalCase]) -> Result<Vec<RgbImage>> {
    let mut pngs = 0;
    for entry in std::fs::read_dir(root)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "png") {
            pngs += 1;
        }
    }
    if pngs != cases.len() {
        return Err(Error::Invalid(format!(
            "{pngs} output images for {} cases",
            cases.len()
        )));
    }
    cases
        .iter()
        .map(|c| {
            let p = root.join(format!("{}.png", c.name));
            if !p.exists() {
                return Err(Error::Invalid(format!("no output for case {}", c.name)));
            }
            open_rgb(&p)
        })
        .collect()
}
