//! Seeded Gaussian tensors.

use candle_core::{DType, Device, Shape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;

/// Standard normal tensor drawn from a ChaCha8 stream seeded with `seed`.
pub fn gaussian(seed: u64, shape: impl Into<Shape>, device: &Device, dtype: DType) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gaussian_from(&mut rng, shape, device, dtype)
}

pub fn gaussian_from(
    rng: &mut ChaCha8Rng,
    shape: impl Into<Shape>,
    device: &Device,
    dtype: DType,
) -> Result<Tensor> {
    let shape = shape.into();
    let data: Vec<f64> = (0..shape.elem_count())
        .map(|_| StandardNormal.sample(rng))
        .collect();
    Ok(Tensor::from_vec(data, shape, device)?.to_dtype(dtype)?)
}
