//! Dense row-major 2-D field of `f64` values.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "plane {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Bilinear resampling with half-pixel centers (no corner alignment, no
    /// antialiasing). Source coordinates left of the first center clamp to 0.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Shape(format!(
                "cannot resize {}x{} to {height}x{width}",
                self.height, self.width
            )));
        }
        if (height, width) == self.dims() {
            return Ok(self.clone());
        }
        let ys: Vec<_> = (0..height)
            .map(|y| source_coord(y, self.height, height))
            .collect();
        let xs: Vec<_> = (0..width)
            .map(|x| source_coord(x, self.width, width))
            .collect();
        let mut data = Vec::with_capacity(height * width);
        for &(y0, y1, ly) in &ys {
            for &(x0, x1, lx) in &xs {
                let top = self.get(y0, x0) * (1.0 - lx) + self.get(y0, x1) * lx;
                let bottom = self.get(y1, x0) * (1.0 - lx) + self.get(y1, x1) * lx;
                data.push(top * (1.0 - ly) + bottom * ly);
            }
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Horizontal concatenation `[self | right]`.
    pub fn hconcat(&self, right: &Plane) -> Result<Self> {
        if self.height != right.height {
            return Err(Error::Shape(format!(
                "hconcat height {} vs {}",
                self.height, right.height
            )));
        }
        let width = self.width + right.width;
        let mut data = Vec::with_capacity(self.height * width);
        for y in 0..self.height {
            data.extend_from_slice(&self.data[y * self.width..(y + 1) * self.width]);
            data.extend_from_slice(&right.data[y * right.width..(y + 1) * right.width]);
        }
        Ok(Self {
            height: self.height,
            width,
            data,
        })
    }
}

fn source_coord(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    let scale = src_len as f64 / dst_len as f64;
    let src = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
    let lo = (src.floor() as usize).min(src_len - 1);
    let hi = (lo + 1).min(src_len - 1);
    (lo, hi, src - lo as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_field_survives_resize() {
        let p = Plane::filled(7, 5, 0.25);
        let r = p.resize_bilinear(3, 11).unwrap();
        assert!(r.as_slice().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn checkerboard_to_single_cell_is_half() {
        let p = Plane::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let r = p.resize_bilinear(1, 1).unwrap();
        assert_eq!(r.as_slice(), &[0.5]);
    }

    #[test]
    fn hconcat_places_right_half() {
        let a = Plane::filled(2, 1, 1.0);
        let b = Plane::filled(2, 2, 2.0);
        let c = a.hconcat(&b).unwrap();
        assert_eq!(c.as_slice(), &[1.0, 2.0, 2.0, 1.0, 2.0, 2.0]);
        assert!(a.hconcat(&Plane::zeros(3, 1)).is_err());
    }
}
