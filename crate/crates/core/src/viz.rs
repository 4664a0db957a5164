//! Heatmap rendering for attention fields.

use image::{Rgb, RgbImage};

use crate::plane::Plane;

/// Renders a field as a blue-to-red heatmap, normalized to its own range
/// and upscaled by `scale` with nearest sampling.
pub fn heatmap(field: &Plane, scale: u32) -> RgbImage {
    let (h, w) = field.dims();
    let data = field.as_slice();
    let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let scale = scale.max(1);
    RgbImage::from_fn(w as u32 * scale, h as u32 * scale, |x, y| {
        let v = (field.get((y / scale) as usize, (x / scale) as usize) - lo) / span;
        colormap(if v.is_finite() { v } else { 0.0 })
    })
}

fn colormap(v: f64) -> Rgb<u8> {
    let v = v.clamp(0.0, 1.0);
    let r = (255.0 * (1.5 * v - 0.25).clamp(0.0, 1.0)).round() as u8;
    let g = (255.0 * (1.0 - (2.0 * v - 1.0).abs())).round() as u8;
    let b = (255.0 * (1.25 - 1.5 * v).clamp(0.0, 1.0)).round() as u8;
    Rgb([r, g, b])
}
