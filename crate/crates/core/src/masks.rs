//! Mask arithmetic: pixel-to-latent interpolation, per-character strips and
//! width-prior shrinking.

use std::collections::BTreeMap;
use std::path::Path;

use image::{GrayImage, Luma};
use serde::{Deserialize, Serialize};

use crate::attention::LatentMask;
use crate::error::{Error, Result};
use crate::plane::Plane;

/// Pixel masks store 255 for the editable region; anything at or above this
/// value counts as set.
pub const PIXEL_ON: u8 = 128;

/// Inclusive-exclusive rectangle in pixel or cell units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl BBox {
    pub fn right(&self) -> u32 {
        self.x + self.width
    }

    pub fn bottom(&self) -> u32 {
        self.y + self.height
    }

    pub fn short_side(&self) -> u32 {
        self.width.min(self.height)
    }
}

/// Bounding box of all set pixels, or `None` for an empty mask.
pub fn pixel_bbox(mask: &GrayImage) -> Option<BBox> {
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0u32, 0u32);
    let mut any = false;
    for (x, y, p) in mask.enumerate_pixels() {
        if p[0] >= PIXEL_ON {
            any = true;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
    }
    any.then(|| BBox {
        x: x0,
        y: y0,
        width: x1 - x0 + 1,
        height: y1 - y0 + 1,
    })
}

pub fn pixel_count(mask: &GrayImage) -> usize {
    mask.pixels().filter(|p| p[0] >= PIXEL_ON).count()
}

/// Bilinear downsample of a 0/255 pixel mask to latent resolution.
pub fn to_latent_mask(pixel_mask: &GrayImage, latent_dims: (usize, usize)) -> Result<LatentMask> {
    let (w, h) = pixel_mask.dimensions();
    if w == 0 || h == 0 || latent_dims.0 == 0 || latent_dims.1 == 0 {
        return Err(Error::Shape(format!(
            "cannot interpolate {w}x{h} mask to {latent_dims:?}"
        )));
    }
    let plane = Plane::new(
        h as usize,
        w as usize,
        pixel_mask.as_raw().iter().map(|&v| v as f64 / 255.0).collect(),
    )?;
    let resized = plane.resize_bilinear(latent_dims.0, latent_dims.1)?;
    LatentMask::new(resized.map(|v| v.clamp(0.0, 1.0)))
}

/// Splits the binarized mask into one strip per character.
///
/// The mask's bounding box is cut into `N` vertical strips of equal width
/// (remainder cells go to the leftmost strips), each intersected with the
/// mask. Strips are ordered left to right.
pub fn split_character_masks(latent_mask: &LatentMask, text: &str) -> Result<Vec<LatentMask>> {
    let n = text.chars().count();
    if n == 0 {
        return Err(Error::Invalid("cannot split a mask for empty text".into()));
    }
    let (h, w) = latent_mask.dims();
    let on = latent_mask.binarized();
    let (mut x0, mut x1) = (usize::MAX, 0usize);
    for (i, &b) in on.iter().enumerate() {
        if b {
            x0 = x0.min(i % w);
            x1 = x1.max(i % w);
        }
    }
    if x0 == usize::MAX {
        return Err(Error::EmptyMask("target mask is empty after binarization".into()));
    }
    let bounds = strip_bounds(x0, x1 + 1 - x0, n);
    Ok(bounds
        .into_iter()
        .map(|(lo, hi)| {
            let cells: Vec<bool> = on
                .iter()
                .enumerate()
                .map(|(i, &b)| b && (lo..hi).contains(&(i % w)))
                .collect();
            LatentMask::from_binary(h, w, &cells).expect("dims match")
        })
        .collect())
}

/// Column ranges of `n` strips covering `[start, start + width)`.
pub fn strip_bounds(start: usize, width: usize, n: usize) -> Vec<(usize, usize)> {
    let base = width / n;
    let rem = width % n;
    let mut lo = start;
    (0..n)
        .map(|k| {
            let hi = lo + base + usize::from(k < rem);
            let r = (lo, hi);
            lo = hi;
            r
        })
        .collect()
}

/// Relative glyph widths used when a shorter text replaces a longer one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CharWidthPriors {
    pub default_width: f64,
    #[serde(default)]
    pub widths: BTreeMap<char, f64>,
}

impl Default for CharWidthPriors {
    /// Four width classes bucketed from sans-serif advance widths.
    fn default() -> Self {
        const NARROW: f64 = 0.4;
        const MEDIUM: f64 = 0.8;
        const WIDE: f64 = 1.0;
        const EXTRA_WIDE: f64 = 1.3;
        let mut widths = BTreeMap::new();
        for c in '!'..='~' {
            let w = match c {
                'I' | 'i' | 'l' | 'j' | '1' | '.' => NARROW,
                'W' | 'M' | 'w' | 'm' => EXTRA_WIDE,
                'A'..='Z' => WIDE,
                _ => MEDIUM,
            };
            widths.insert(c, w);
        }
        Self {
            default_width: MEDIUM,
            widths,
        }
    }
}

impl CharWidthPriors {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let priors: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        priors.validate()?;
        Ok(priors)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |c: String, w: f64| Err(Error::Config(format!("width of {c} must be > 0, got {w}")));
        if !(self.default_width > 0.0) {
            return bad("default".into(), self.default_width);
        }
        for (c, &w) in &self.widths {
            if !(w > 0.0) {
                return bad(format!("{c:?}"), w);
            }
        }
        Ok(())
    }

    pub fn width_of(&self, c: char) -> f64 {
        self.widths.get(&c).copied().unwrap_or(self.default_width)
    }

    pub fn text_width(&self, text: &str) -> f64 {
        text.chars().map(|c| self.width_of(c)).sum()
    }

    /// Width ratio `target / source`, never above 1.
    pub fn shrink_ratio(&self, source_text: &str, target_text: &str) -> Result<f64> {
        let source = self.text_width(source_text);
        if !(source > 0.0) {
            return Err(Error::Invalid("source text has zero total width".into()));
        }
        Ok((self.text_width(target_text) / source).min(1.0))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShrinkAnchor {
    #[default]
    Left,
    Center,
}

#[derive(Clone, Debug)]
pub struct ShrinkOutcome {
    pub mask: GrayImage,
    pub ratio: f64,
    pub original: BBox,
    pub shrunk: BBox,
}

/// Narrows a pixel mask to fit a shorter text. The mask keeps its height and
/// vertical position and its width is scaled by the prior width ratio; the
/// result is always a subset of the input.
pub fn shrink_pixel_mask(
    pixel_mask: &GrayImage,
    source_text: &str,
    target_text: &str,
    priors: &CharWidthPriors,
    anchor: ShrinkAnchor,
) -> Result<ShrinkOutcome> {
    if source_text.is_empty() || target_text.is_empty() {
        return Err(Error::Invalid("shrinking needs source and target text".into()));
    }
    let original = pixel_bbox(pixel_mask)
        .ok_or_else(|| Error::EmptyMask("cannot shrink an empty mask".into()))?;
    let ratio = priors.shrink_ratio(source_text, target_text)?;
    let new_width = ((original.width as f64 * ratio).round() as u32).clamp(1, original.width);
    let x = match anchor {
        ShrinkAnchor::Left => original.x,
        ShrinkAnchor::Center => original.x + (original.width - new_width) / 2,
    };
    let keep = x..x + new_width;
    let mut mask = pixel_mask.clone();
    for (px, _, p) in mask.enumerate_pixels_mut() {
        if !keep.contains(&px) {
            *p = Luma([0]);
        }
    }
    let shrunk = BBox {
        x,
        width: new_width,
        ..original
    };
    Ok(ShrinkOutcome {
        mask,
        ratio,
        original,
        shrunk,
    })
}

/// Shrinks in pixel space, then interpolates the result to latent size.
pub fn shrink_mask(
    pixel_mask: &GrayImage,
    source_text: &str,
    target_text: &str,
    priors: &CharWidthPriors,
    latent_dims: (usize, usize),
) -> Result<(GrayImage, LatentMask)> {
    let outcome = shrink_pixel_mask(
        pixel_mask,
        source_text,
        target_text,
        priors,
        ShrinkAnchor::Left,
    )?;
    let latent = to_latent_mask(&outcome.mask, latent_dims)?;
    Ok((outcome.mask, latent))
}

/// Target-region masks at pixel and latent resolution.
#[derive(Clone, Debug)]
pub struct MaskSet {
    pub pixel_mask: GrayImage,
    pub latent_mask: LatentMask,
    /// Equal-width strips of the (shrunk) target mask, one per character.
    pub char_masks: Vec<LatentMask>,
    pub shrunk_pixel: GrayImage,
    pub shrunk_latent: LatentMask,
}

impl MaskSet {
    /// Builds the target masks. When `source_text` is given the mask is
    /// shrunk with the width priors, otherwise the shrunk masks equal the
    /// originals.
    pub fn build(
        pixel_mask: &GrayImage,
        latent_dims: (usize, usize),
        target_text: &str,
        source_text: Option<&str>,
        priors: &CharWidthPriors,
        anchor: ShrinkAnchor,
    ) -> Result<Self> {
        if pixel_bbox(pixel_mask).is_none() {
            return Err(Error::EmptyMask("target mask has no set pixels".into()));
        }
        let latent_mask = to_latent_mask(pixel_mask, latent_dims)?;
        let (shrunk_pixel, shrunk_latent) = match source_text {
            Some(src) if !src.is_empty() => {
                let out = shrink_pixel_mask(pixel_mask, src, target_text, priors, anchor)?;
                let latent = to_latent_mask(&out.mask, latent_dims)?;
                (out.mask, latent)
            }
            _ => (pixel_mask.clone(), latent_mask.clone()),
        };
        let char_masks = split_character_masks(&shrunk_latent, target_text)?;
        Ok(Self {
            pixel_mask: pixel_mask.clone(),
            latent_mask,
            char_masks,
            shrunk_pixel,
            shrunk_latent,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect_mask(w: u32, h: u32, r: BBox) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| {
            let on = x >= r.x && x < r.right() && y >= r.y && y < r.bottom();
            Luma([if on { 255 } else { 0 }])
        })
    }

    fn strip_widths(masks: &[LatentMask]) -> Vec<usize> {
        masks
            .iter()
            .map(|m| {
                let (_, w) = m.dims();
                let cols: std::collections::BTreeSet<_> = m
                    .binarized()
                    .iter()
                    .enumerate()
                    .filter(|(_, &b)| b)
                    .map(|(i, _)| i % w)
                    .collect();
                cols.len()
            })
            .collect()
    }

    #[test]
    fn constant_masks_interpolate_to_constants() {
        let ones = GrayImage::from_pixel(16, 16, Luma([255]));
        let m = to_latent_mask(&ones, (4, 4)).unwrap();
        assert!(m.values().as_slice().iter().all(|&v| v == 1.0));
        let zeros = GrayImage::new(16, 16);
        let m = to_latent_mask(&zeros, (4, 4)).unwrap();
        assert!(m.values().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn checkerboard_interpolates_to_half() {
        let cb = GrayImage::from_fn(2, 2, |x, y| Luma([if (x + y) % 2 == 0 { 255 } else { 0 }]));
        let m = to_latent_mask(&cb, (1, 1)).unwrap();
        assert_eq!(m.values().as_slice(), &[0.5]);
        assert!(to_latent_mask(&cb, (0, 1)).is_err());
    }

    #[test]
    fn three_characters_over_thirty_cells() {
        let on = vec![true; 30];
        let m = LatentMask::from_binary(1, 30, &on).unwrap();
        let strips = split_character_masks(&m, "ABC").unwrap();
        assert_eq!(strip_widths(&strips), vec![10, 10, 10]);
    }

    #[test]
    fn remainder_goes_left() {
        let on = vec![true; 5];
        let m = LatentMask::from_binary(1, 5, &on).unwrap();
        let strips = split_character_masks(&m, "AB").unwrap();
        assert_eq!(strip_widths(&strips), vec![3, 2]);
        assert!(strips[0].is_on(2) && strips[1].is_on(3));
    }

    #[test]
    fn single_character_takes_whole_mask() {
        let on = [false, true, true, false, true, true];
        let m = LatentMask::from_binary(2, 3, &on).unwrap();
        let strips = split_character_masks(&m, "A").unwrap();
        assert_eq!(strips[0].binarized(), on.to_vec());
    }

    #[test]
    fn split_errors() {
        let m = LatentMask::from_binary(1, 2, &[true, true]).unwrap();
        assert!(matches!(split_character_masks(&m, ""), Err(Error::Invalid(_))));
        let empty = LatentMask::zeros(2, 2);
        assert!(matches!(
            split_character_masks(&empty, "A"),
            Err(Error::EmptyMask(_))
        ));
    }

    #[test]
    fn same_text_shrink_is_identity() {
        let r = BBox { x: 4, y: 3, width: 20, height: 6 };
        let mask = rect_mask(32, 16, r);
        let (px, _) = shrink_mask(&mask, "POCKET", "POCKET", &CharWidthPriors::default(), (4, 8)).unwrap();
        assert_eq!(px, mask);
    }

    #[test]
    fn pocket_to_flash_is_narrower() {
        let r = BBox { x: 4, y: 3, width: 60, height: 10 };
        let mask = rect_mask(80, 16, r);
        let priors = CharWidthPriors::default();
        let out = shrink_pixel_mask(&mask, "POCKET", "FLASH", &priors, ShrinkAnchor::Left).unwrap();
        let ratio = priors.text_width("FLASH") / priors.text_width("POCKET");
        assert_eq!(out.ratio, ratio);
        assert_eq!(out.shrunk.width, (60.0 * ratio).round() as u32);
        assert!(out.shrunk.width < 60);
        assert_eq!((out.shrunk.x, out.shrunk.y, out.shrunk.height), (4, 3, 10));
    }

    #[test]
    fn www_to_iii_with_custom_priors() {
        let priors = CharWidthPriors::from_toml_str(
            "default_width = 0.8\n[widths]\nW = 1.0\nI = 0.4\n",
        )
        .unwrap();
        let r = BBox { x: 0, y: 0, width: 50, height: 4 };
        let mask = rect_mask(50, 4, r);
        let out = shrink_pixel_mask(&mask, "WWW", "III", &priors, ShrinkAnchor::Left).unwrap();
        assert!((out.ratio - 0.4).abs() < 1e-15);
        assert_eq!(out.shrunk.width, 20);
    }

    #[test]
    fn longer_target_never_grows() {
        let r = BBox { x: 2, y: 2, width: 10, height: 4 };
        let mask = rect_mask(20, 8, r);
        let out = shrink_pixel_mask(&mask, "I", "WWWW", &CharWidthPriors::default(), ShrinkAnchor::Left)
            .unwrap();
        assert_eq!(out.ratio, 1.0);
        assert_eq!(out.mask, mask);
    }

    #[test]
    fn center_anchor_keeps_middle() {
        let r = BBox { x: 0, y: 0, width: 10, height: 1 };
        let mask = rect_mask(10, 1, r);
        let priors = CharWidthPriors::from_toml_str("default_width = 1.0\n").unwrap();
        let out = shrink_pixel_mask(&mask, "AB", "A", &priors, ShrinkAnchor::Center).unwrap();
        assert_eq!((out.shrunk.x, out.shrunk.width), (2, 5));
    }

    #[test]
    fn priors_validation() {
        assert!(CharWidthPriors::from_toml_str("default_width = 0.0\n").is_err());
        assert!(CharWidthPriors::from_toml_str("default_width = 1.0\n[widths]\nA = -1.0\n").is_err());
        let p = CharWidthPriors::default();
        assert_eq!(p.width_of('W'), 1.3);
        assert_eq!(p.width_of('i'), 0.4);
        assert_eq!(p.width_of('A'), 1.0);
        assert_eq!(p.width_of('a'), 0.8);
        assert_eq!(p.width_of('é'), 0.8);
        assert!(p.shrink_ratio("", "A").is_err());
    }

    #[test]
    fn mask_set_without_source_text_keeps_mask() {
        let r = BBox { x: 8, y: 8, width: 32, height: 16 };
        let mask = rect_mask(64, 32, r);
        let set = MaskSet::build(&mask, (8, 16), "AB", None, &CharWidthPriors::default(), ShrinkAnchor::Left)
            .unwrap();
        assert_eq!(set.shrunk_latent, set.latent_mask);
        assert_eq!(set.char_masks.len(), 2);
        let union: usize = set.char_masks.iter().map(LatentMask::count).sum();
        assert_eq!(union, set.latent_mask.count());
    }
}
