//! Pixel metrics on `[0, 1]` images.

use image::RgbImage;

use crate::error::{Error, Result};

pub const PSNR_CAP: f64 = 100.0;

const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// Channel-planar float image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// `channels` planes of `height * width` values.
    pub data: Vec<f64>,
}

impl FloatImage {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "{} values for a {width}x{height}x{channels} image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }
}

impl From<&RgbImage> for FloatImage {
    fn from(img: &RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut data = vec![0.0; 3 * w * h];
        for (x, y, p) in img.enumerate_pixels() {
            for c in 0..3 {
                data[c * w * h + y as usize * w + x as usize] = p[c] as f64 / 255.0;
            }
        }
        Self {
            width: w,
            height: h,
            channels: 3,
            data,
        }
    }
}

fn same_shape(a: &FloatImage, b: &FloatImage) -> Result<()> {
    if (a.width, a.height, a.channels) != (b.width, b.height, b.channels) {
        return Err(Error::Shape(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width, a.height, a.channels, b.width, b.height, b.channels
        )));
    }
    if a.data.is_empty() {
        return Err(Error::Shape("empty images".into()));
    }
    Ok(())
}

pub fn mse(a: &FloatImage, b: &FloatImage) -> Result<f64> {
    same_shape(a, b)?;
    let sum: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.data.len() as f64)
}

/// `10 log10(1 / mse)`, capped at [`PSNR_CAP`].
pub fn psnr(a: &FloatImage, b: &FloatImage) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP))
}

fn gaussian_window(size: usize) -> Vec<f64> {
    let c = (size / 2) as f64;
    let w: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SIGMA * SIGMA)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering of a `h x w` plane.
fn filter(plane: &[f64], h: usize, w: usize, win: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = win.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|i| win[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| win[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean SSIM and mean contrast-structure term of one plane pair.
fn ssim_terms(a: &[f64], b: &[f64], h: usize, w: usize, win: &[f64]) -> (f64, f64) {
    let c1 = K1 * K1;
    let c2 = K2 * K2;
    let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect() };
    let (mu_a, _, _) = filter(a, h, w, win);
    let (mu_b, _, _) = filter(b, h, w, win);
    let (e_aa, _, _) = filter(&prod(|x, _| x * x), h, w, win);
    let (e_bb, _, _) = filter(&prod(|_, y| y * y), h, w, win);
    let (e_ab, _, _) = filter(&prod(|x, y| x * y), h, w, win);
    let n = mu_a.len() as f64;
    let (mut ssim, mut cs) = (0.0, 0.0);
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let cs_i = (2.0 * cov + c2) / (va + vb + c2);
        let l_i = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        cs += cs_i;
        ssim += l_i * cs_i;
    }
    (ssim / n, cs / n)
}

fn downsample(plane: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let i = 2 * y * w + 2 * x;
            out[y * ow + x] = 0.25 * (plane[i] + plane[i + 1] + plane[i + w] + plane[i + w + 1]);
        }
    }
    (out, oh, ow)
}

/// Multi-scale SSIM with the standard five scales and weights, averaged
/// over channels. Images too small for five scales use as many as fit with
/// renormalized weights; images smaller than the 11-pixel window use a
/// single scale with a shrunken window.
pub fn ms_ssim(a: &FloatImage, b: &FloatImage) -> Result<f64> {
    same_shape(a, b)?;
    let min_side = a.width.min(a.height);
    let mut levels = 0;
    while levels < MS_SSIM_WEIGHTS.len() && min_side >> levels >= WINDOW {
        levels += 1;
    }
    let window = if levels == 0 {
        levels = 1;
        if min_side % 2 == 0 { min_side - 1 } else { min_side }
    } else {
        WINDOW
    };
    let win = gaussian_window(window);
    let weights = &MS_SSIM_WEIGHTS[..levels];
    let wsum: f64 = weights.iter().sum();

    let mut total = 0.0;
    for c in 0..a.channels {
        let (mut pa, mut pb) = (a.plane(c).to_vec(), b.plane(c).to_vec());
        let (mut h, mut w) = (a.height, a.width);
        let mut value = 1.0;
        for (j, &weight) in weights.iter().enumerate() {
            let (ssim, cs) = ssim_terms(&pa, &pb, h, w, &win);
            let term = if j + 1 == levels { ssim } else { cs };
            value *= term.max(0.0).powf(weight / wsum);
            if j + 1 < levels {
                let (na, nh, nw) = downsample(&pa, h, w);
                pb = downsample(&pb, h, w).0;
                pa = na;
                (h, w) = (nh, nw);
            }
        }
        total += value;
    }
    Ok((total / a.channels as f64).clamp(0.0, 1.0))
}
