use image::{GrayImage, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::masks::PIXEL_ON;

/// Output pixels inside the mask, input pixels everywhere else.
pub fn composite_with_input(output: &RgbImage, input: &RgbImage, pixel_mask: &GrayImage) -> Result<RgbImage> {
    if output.dimensions() != input.dimensions() || input.dimensions() != pixel_mask.dimensions() {
        return Err(Error::Shape(format!(
            "composite needs equal sizes, got output {:?}, input {:?}, mask {:?}",
            output.dimensions(),
            input.dimensions(),
            pixel_mask.dimensions()
        )));
    }
    Ok(RgbImage::from_fn(input.width(), input.height(), |x, y| {
        let src = if pixel_mask.get_pixel(x, y)[0] >= PIXEL_ON { output } else { input };
        Rgb(src.get_pixel(x, y).0)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Luma;

    #[test]
    fn extremes() {
        let a = RgbImage::from_pixel(4, 3, Rgb([1, 2, 3]));
        let b = RgbImage::from_pixel(4, 3, Rgb([9, 8, 7]));
        let none = GrayImage::new(4, 3);
        let all = GrayImage::from_pixel(4, 3, Luma([255]));
        assert_eq!(composite_with_input(&a, &b, &none).unwrap(), b);
        assert_eq!(composite_with_input(&a, &b, &all).unwrap(), a);
        assert!(composite_with_input(&a, &RgbImage::new(3, 3), &none).is_err());
    }
}
