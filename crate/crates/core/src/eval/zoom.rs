//! Zoom crops that enlarge small text before inpainting or scoring.

use image::imageops::{self, FilterType};
use image::{GrayImage, RgbImage};

use crate::error::{Error, Result};
use crate::masks::{pixel_bbox, BBox};

/// Shortest text-mask side for removal inputs.
pub const REMOVAL_MIN_SIDE: u32 = 64;
/// Shortest text-mask side for editing inputs.
pub const EDITING_MIN_SIDE: u32 = 96;

/// A crop window in source pixels and the scale applied to it.
#[derive(Clone, Debug, PartialEq)]
pub struct ZoomCrop {
    pub window: BBox,
    pub scale: f64,
    pub output_width: u32,
    pub output_height: u32,
    pub image: RgbImage,
    pub mask: GrayImage,
}

impl ZoomCrop {
    /// Applies the same window and scale to another image of the source size.
    pub fn apply(&self, image: &RgbImage) -> RgbImage {
        let crop = imageops::crop_imm(image, self.window.x, self.window.y, self.window.width, self.window.height).to_image();
        if (crop.width(), crop.height()) == (self.output_width, self.output_height) {
            return crop;
        }
        imageops::resize(&crop, self.output_width, self.output_height, FilterType::Triangle)
    }

    fn build(image: &RgbImage, mask: &GrayImage, window: BBox, scale: f64) -> Self {
        let ow = ((window.width as f64 * scale).round() as u32).max(1);
        let oh = ((window.height as f64 * scale).round() as u32).max(1);
        let m = imageops::crop_imm(mask, window.x, window.y, window.width, window.height).to_image();
        let m = if (ow, oh) == (window.width, window.height) {
            m
        } else {
            imageops::resize(&m, ow, oh, FilterType::Nearest)
        };
        let mut out = Self {
            window,
            scale,
            output_width: ow,
            output_height: oh,
            image: RgbImage::new(0, 0),
            mask: m,
        };
        out.image = out.apply(image);
        out
    }
}

fn check(image: &RgbImage, mask: &GrayImage) -> Result<BBox> {
    if mask.width() > image.width() || mask.height() > image.height() || mask.dimensions() != image.dimensions() {
        return Err(Error::Shape(format!(
            "mask {:?} does not match image {:?}",
            mask.dimensions(),
            image.dimensions()
        )));
    }
    pixel_bbox(mask).ok_or_else(|| Error::EmptyMask("zoom crop needs a nonempty mask".into()))
}

/// Places a `(w, h)` window centred on `bbox`, shifted to stay inside the
/// image.
fn centred_window(bbox: &BBox, w: u32, h: u32, img_w: u32, img_h: u32) -> BBox {
    let w = w.clamp(bbox.width, img_w);
    let h = h.clamp(bbox.height, img_h);
    let place = |start: u32, len: u32, win: u32, limit: u32| -> u32 {
        let centre = 2 * start as i64 + len as i64;
        let x = (centre - win as i64).div_euclid(2);
        x.clamp(0, (limit - win) as i64) as u32
    };
    BBox {
        x: place(bbox.x, bbox.width, w, img_w),
        y: place(bbox.y, bbox.height, h, img_h),
        width: w,
        height: h,
    }
}

/// Crops around the mask and upscales so the mask's shorter bounding-box
/// side is at least `min_side`. The window keeps the image's context up to
/// `1 / scale` of its size and always contains the whole mask. Masks that
/// are already large enough are returned unchanged.
pub fn zoom_crop(image: &RgbImage, mask: &GrayImage, min_side: u32) -> Result<ZoomCrop> {
    let bbox = check(image, mask)?;
    let (iw, ih) = image.dimensions();
    if bbox.short_side() >= min_side {
        let full = BBox { x: 0, y: 0, width: iw, height: ih };
        return Ok(ZoomCrop::build(image, mask, full, 1.0));
    }
    let mut scale = min_side as f64 / bbox.short_side() as f64;
    loop {
        let w = (iw as f64 / scale).floor() as u32;
        let h = (ih as f64 / scale).floor() as u32;
        let window = centred_window(&bbox, w, h, iw, ih);
        let crop = ZoomCrop::build(image, mask, window, scale);
        match pixel_bbox(&crop.mask) {
            Some(b) if b.short_side() >= min_side => return Ok(crop),
            _ => scale *= 1.0 + 0.5 / min_side as f64,
        }
    }
}

/// Largest zoom with the image's aspect ratio that keeps every masked
/// pixel inside the crop; the crop is resized back to the image size.
pub fn zoom_crop_all_text(image: &RgbImage, mask: &GrayImage) -> Result<ZoomCrop> {
    let bbox = check(image, mask)?;
    let (iw, ih) = image.dimensions();
    let scale = (iw as f64 / bbox.width as f64).min(ih as f64 / bbox.height as f64).max(1.0);
    let w = ((iw as f64 / scale).ceil() as u32).max(bbox.width);
    let h = ((ih as f64 / scale).ceil() as u32).max(bbox.height);
    let window = centred_window(&bbox, w, h, iw, ih);
    let mut crop = ZoomCrop::build(image, mask, window, 1.0);
    crop.output_width = iw;
    crop.output_height = ih;
    crop.scale = iw as f64 / window.width as f64;
    crop.image = crop.apply(image);
    crop.mask = imageops::resize(
        &imageops::crop_imm(mask, window.x, window.y, window.width, window.height).to_image(),
        iw,
        ih,
        FilterType::Nearest,
    );
    Ok(crop)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Luma;

    fn boxed(w: u32, h: u32, b: BBox) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| {
            Luma([if x >= b.x && x < b.right() && y >= b.y && y < b.bottom() { 255 } else { 0 }])
        })
    }

    #[test]
    fn large_mask_is_identity() {
        let img = RgbImage::from_fn(200, 160, |x, y| image::Rgb([x as u8, y as u8, 0]));
        let mask = boxed(200, 160, BBox { x: 10, y: 10, width: 100, height: 70 });
        let z = zoom_crop(&img, &mask, 64).unwrap();
        assert_eq!(z.scale, 1.0);
        assert_eq!(z.image, img);
        assert_eq!(z.mask, mask);
    }

    #[test]
    fn doubles_a_32_pixel_side() {
        let img = RgbImage::new(256, 256);
        let mask = boxed(256, 256, BBox { x: 100, y: 100, width: 80, height: 32 });
        let z = zoom_crop(&img, &mask, 64).unwrap();
        assert_eq!(z.scale, 2.0);
        assert_eq!(z.window.width, 128);
        assert_eq!(pixel_bbox(&z.mask).unwrap().short_side(), 64);
    }

    #[test]
    fn all_text_keeps_every_region() {
        let img = RgbImage::new(200, 100);
        let mut mask = boxed(200, 100, BBox { x: 40, y: 30, width: 20, height: 10 });
        mask.put_pixel(120, 60, Luma([255]));
        let z = zoom_crop_all_text(&img, &mask).unwrap();
        assert!(z.window.x <= 40 && z.window.right() > 120);
        assert!(z.window.y <= 30 && z.window.bottom() > 60);
        assert_eq!(z.image.dimensions(), (200, 100));
        assert!(z.scale > 1.0);
    }
}
