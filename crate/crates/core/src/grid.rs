//! Side-by-side grid canvas pairing the edit target with a style reference.
//!
//! The left slot holds the (text-removed) image being edited, the right slot
//! holds the reference. Only the left slot is inpainted, so self-attention
//! inside the target region can look across at the reference text.

use candle_core::Tensor;
use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::attention::LatentMask;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotRect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl SlotRect {
    pub fn scaled(&self, factor: usize) -> Self {
        Self {
            x: self.x * factor,
            y: self.y * factor,
            width: self.width * factor,
            height: self.height * factor,
        }
    }

    pub fn overlaps(&self, other: &SlotRect) -> bool {
        self.x < other.x + other.width
            && other.x < self.x + self.width
            && self.y < other.y + other.height
            && other.y < self.y + self.height
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }
}

/// Latent-space inputs of the inpainting model arranged as a 1x2 grid.
#[derive(Clone, Debug)]
pub struct GridCanvas {
    /// Gaussian noise at grid size.
    pub grid_latent: Tensor,
    /// `[z_removed | z_reference]`, the clean latent used for the forward
    /// noising of the initial state.
    pub grid_clean_latent: Tensor,
    /// `[z_removed * (1 - m_shr) | z_reference]`.
    pub grid_masked_latent: Tensor,
    /// `[m_shr | 0]`.
    pub grid_latent_mask: LatentMask,
    pub target_slot: SlotRect,
    pub reference_slot: SlotRect,
}

impl GridCanvas {
    pub fn grid_dims(&self) -> (usize, usize) {
        self.grid_latent_mask.dims()
    }

    /// Places a reference-side mask into the right slot, zeros elsewhere.
    pub fn reference_mask(&self, reference_mask: &LatentMask) -> Result<LatentMask> {
        let (h, w) = reference_mask.dims();
        if (h, w) != (self.reference_slot.height, self.reference_slot.width) {
            return Err(Error::Shape(format!(
                "reference mask {h}x{w} does not match slot {}x{}",
                self.reference_slot.height, self.reference_slot.width
            )));
        }
        LatentMask::zeros(h, self.target_slot.width).hconcat(reference_mask)
    }
}

/// Builds the grid from `[c, h, w]` latents and a latent mask for the target
/// slot. `noise` must already have grid size `[c, h, 2w]`.
pub fn assemble_grid(
    removed_latent: &Tensor,
    reference_latent: &Tensor,
    shrunk_latent_mask: &LatentMask,
    noise: &Tensor,
) -> Result<GridCanvas> {
    let (c, h, w) = removed_latent.dims3()?;
    let (rc, rh, rw) = reference_latent.dims3()?;
    if (c, h) != (rc, rh) {
        return Err(Error::Shape(format!(
            "target latent [{c},{h},{w}] and reference latent [{rc},{rh},{rw}] differ in channels or height"
        )));
    }
    if shrunk_latent_mask.dims() != (h, w) {
        return Err(Error::Shape(format!(
            "target mask {:?} does not match latent {h}x{w}",
            shrunk_latent_mask.dims()
        )));
    }
    if noise.dims3()? != (c, h, w + rw) {
        return Err(Error::Shape(format!(
            "grid noise {:?} must be [{c},{h},{}]",
            noise.dims(),
            w + rw
        )));
    }
    let keep: Vec<f64> = shrunk_latent_mask
        .binarized()
        .iter()
        .map(|&on| if on { 0.0 } else { 1.0 })
        .collect();
    let keep = Tensor::from_vec(keep, (1, h, w), removed_latent.device())?
        .to_dtype(removed_latent.dtype())?;
    let masked = removed_latent.broadcast_mul(&keep)?;
    let grid_masked_latent = Tensor::cat(&[&masked, reference_latent], 2)?;
    let grid_clean_latent = Tensor::cat(&[removed_latent, reference_latent], 2)?;
    let grid_latent_mask = shrunk_latent_mask
        .to_binary()
        .hconcat(&LatentMask::zeros(h, rw))?;
    Ok(GridCanvas {
        grid_latent: noise.clone(),
        grid_clean_latent,
        grid_masked_latent,
        grid_latent_mask,
        target_slot: SlotRect {
            x: 0,
            y: 0,
            width: w,
            height: h,
        },
        reference_slot: SlotRect {
            x: w,
            y: 0,
            width: rw,
            height: h,
        },
    })
}

/// Copies `slot` (pixel units) out of a decoded grid image without
/// resampling.
pub fn crop_grid_result(grid_image: &RgbImage, slot: &SlotRect) -> Result<RgbImage> {
    let (gw, gh) = grid_image.dimensions();
    if slot.width == 0
        || slot.height == 0
        || slot.x + slot.width > gw as usize
        || slot.y + slot.height > gh as usize
    {
        return Err(Error::OutOfRange {
            what: "grid slot",
            index: slot.x + slot.width,
            len: gw as usize,
        });
    }
    Ok(image::imageops::crop_imm(
        grid_image,
        slot.x as u32,
        slot.y as u32,
        slot.width as u32,
        slot.height as u32,
    )
    .to_image())
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    fn latent(c: usize, h: usize, w: usize, offset: f64) -> Tensor {
        let data: Vec<f64> = (0..c * h * w).map(|i| i as f64 + offset).collect();
        Tensor::from_vec(data, (c, h, w), &Device::Cpu).unwrap()
    }

    #[test]
    fn grid_shapes_and_masks() {
        let removed = latent(2, 3, 4, 0.0);
        let reference = latent(2, 3, 4, 100.0);
        let mut on = vec![false; 12];
        on[5] = true;
        let mask = LatentMask::from_binary(3, 4, &on).unwrap();
        let noise = Tensor::zeros((2, 3, 8), DType::F64, &Device::Cpu).unwrap();
        let g = assemble_grid(&removed, &reference, &mask, &noise).unwrap();
        assert_eq!(g.grid_masked_latent.dims(), &[2, 3, 8]);
        assert_eq!(g.grid_dims(), (3, 8));
        let right = g.grid_masked_latent.narrow(2, 4, 4).unwrap();
        assert_eq!(
            right.flatten_all().unwrap().to_vec1::<f64>().unwrap(),
            reference.flatten_all().unwrap().to_vec1::<f64>().unwrap()
        );
        // masked cell (1,1) zeroed in both channels
        let left = g.grid_masked_latent.to_vec3::<f64>().unwrap();
        assert_eq!(left[0][1][1], 0.0);
        assert_eq!(left[1][1][1], 0.0);
        assert_eq!(left[0][1][2], 6.0);
        assert!(!g.target_slot.overlaps(&g.reference_slot));
        assert_eq!(g.target_slot.area() + g.reference_slot.area(), 24);
    }

    #[test]
    fn grid_rejects_mismatched_inputs() {
        let a = latent(2, 3, 4, 0.0);
        let b = latent(2, 2, 4, 0.0);
        let mask = LatentMask::zeros(3, 4);
        let noise = Tensor::zeros((2, 3, 8), DType::F64, &Device::Cpu).unwrap();
        assert!(assemble_grid(&a, &b, &mask, &noise).is_err());
        let small_noise = Tensor::zeros((2, 3, 4), DType::F64, &Device::Cpu).unwrap();
        assert!(assemble_grid(&a, &a, &mask, &small_noise).is_err());
    }

    #[test]
    fn crop_checks_bounds() {
        let img = RgbImage::from_fn(8, 4, |x, y| image::Rgb([x as u8, y as u8, 0]));
        let left = crop_grid_result(&img, &SlotRect { x: 0, y: 0, width: 4, height: 4 }).unwrap();
        assert_eq!(left.get_pixel(3, 2).0, [3, 2, 0]);
        let bad = SlotRect { x: 5, y: 0, width: 4, height: 4 };
        assert!(crop_grid_result(&img, &bad).is_err());
    }
}
