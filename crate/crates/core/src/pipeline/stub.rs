//! A small deterministic denoiser with real hook sites and token layout.
//!
//! It has no pretrained weights. Its purpose is to exercise the whole
//! pipeline (hooks, losses, gradients, schedules) on a CPU in seconds.
//! Architecture: per-cell input projection, a half-resolution decoder
//! block and a full-resolution decoder block of three transformer layers
//! each (self-attention then cross-attention), and an output projection
//! that predicts the clean latent inside the mask.

use candle_core::{DType, Device, Tensor, D};
use image::{Rgb, RgbImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::backbone::{AttentionHook, Backbone, BackboneSession, DenoiseInput, TextEmbedding};
use super::noise::gaussian_from;
use super::schedule::NoiseSchedule;
use super::site::{HookSite, SiteConfig};
use crate::attention::{attention_probabilities, AttentionKind, TokenLayout};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct StubConfig {
    pub seed: u64,
    pub latent_channels: usize,
    pub downsample: usize,
    pub model_dim: usize,
    pub embed_dim: usize,
    pub max_tokens: usize,
    /// Multiplier on query projections; larger values give peakier maps.
    pub sharpness: f64,
}

impl Default for StubConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            latent_channels: 4,
            downsample: 4,
            model_dim: 32,
            embed_dim: 16,
            max_tokens: 32,
            sharpness: 2.0,
        }
    }
}

struct Projection {
    query: Tensor,
    key: Tensor,
    value: Tensor,
    out: Tensor,
}

struct Layer {
    self_site: HookSite,
    self_attn: Projection,
    cross_site: HookSite,
    cross_attn: Projection,
}

pub struct StubBackbone {
    config: StubConfig,
    device: Device,
    noise: NoiseSchedule,
    input: Tensor,
    output: Tensor,
    low_res: Vec<Layer>,
    full_res: Vec<Layer>,
    special_tokens: Tensor,
}

const LAYERS_PER_BLOCK: usize = 3;
const SPECIAL_START_DESC: usize = 0;
const SPECIAL_END_DESC: usize = 1;
const SPECIAL_START_TEXT: usize = 2;
const SPECIAL_END_TEXT: usize = 3;
const SPECIAL_PAD: usize = 4;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64, device: &Device) -> Result<Tensor> {
    Ok(gaussian_from(rng, (rows, cols), device, DType::F64)?.affine(scale / (rows as f64).sqrt(), 0.0)?)
}

impl StubBackbone {
    pub fn new(config: StubConfig, noise: NoiseSchedule) -> Result<Self> {
        if config.latent_channels < 3 {
            return Err(Error::Config("stub backbone needs at least 3 latent channels".into()));
        }
        if config.downsample == 0 || config.model_dim == 0 || config.embed_dim == 0 {
            return Err(Error::Config("stub dimensions must be positive".into()));
        }
        let device = Device::Cpu;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.model_dim;
        let e = config.embed_dim;
        let input = random(&mut rng, 2 * config.latent_channels + 1, d, 1.0, &device)?;
        let output = random(&mut rng, d, config.latent_channels, 1.0, &device)?;
        let block = |index: usize, rng: &mut ChaCha8Rng| -> Result<Vec<Layer>> {
            (0..LAYERS_PER_BLOCK)
                .map(|layer| {
                    Ok(Layer {
                        self_site: HookSite::decoder(index, layer, AttentionKind::SelfAttention),
                        self_attn: Projection {
                            query: random(rng, d, d, config.sharpness, &device)?,
                            key: random(rng, d, d, 1.0, &device)?,
                            value: random(rng, d, d, 1.0, &device)?,
                            out: random(rng, d, d, 0.5, &device)?,
                        },
                        cross_site: HookSite::decoder(index, layer, AttentionKind::CrossAttention),
                        cross_attn: Projection {
                            query: random(rng, d, d, config.sharpness, &device)?,
                            key: random(rng, e, d, 1.0, &device)?,
                            value: random(rng, e, d, 1.0, &device)?,
                            out: random(rng, d, d, 0.5, &device)?,
                        },
                    })
                })
                .collect()
        };
        let low_res = block(1, &mut rng)?;
        let full_res = block(2, &mut rng)?;
        let special_tokens = gaussian_from(&mut rng, (5, e), &device, DType::F64)?;
        Ok(Self {
            config,
            device,
            noise,
            input,
            output,
            low_res,
            full_res,
            special_tokens,
        })
    }

    pub fn config(&self) -> &StubConfig {
        &self.config
    }

    fn char_embedding(&self, c: char, position: usize) -> Result<Tensor> {
        let e = self.config.embed_dim;
        let key = self.config.seed ^ (c as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        let base = gaussian_from(&mut rng, e, &self.device, DType::F64)?;
        let pos: Vec<f64> = (0..e)
            .map(|i| {
                let freq = 1.0 / 100f64.powf((i / 2) as f64 * 2.0 / e as f64);
                let a = position as f64 * freq;
                0.5 * if i % 2 == 0 { a.sin() } else { a.cos() }
            })
            .collect();
        Ok((base + Tensor::from_vec(pos, e, &self.device)?)?)
    }

    fn timestep_embedding(&self, timestep: usize) -> Result<Tensor> {
        let d = self.config.model_dim;
        let t = timestep as f64 / self.noise.train_steps() as f64;
        let v: Vec<f64> = (0..d)
            .map(|i| {
                let a = t * 10f64.powf((i / 2) as f64 * 2.0 / d as f64);
                0.5 * if i % 2 == 0 { a.sin() } else { a.cos() }
            })
            .collect();
        Ok(Tensor::from_vec(v, (1, d), &self.device)?)
    }

    fn run_block(
        &self,
        layers: &[Layer],
        mut x: Tensor,
        dims: (usize, usize),
        tokens: &Tensor,
        hooks: &mut dyn AttentionHook,
    ) -> Result<Tensor> {
        for layer in layers {
            let n = rms_norm(&x)?;
            let q = n.matmul(&layer.self_attn.query)?;
            let k = n.matmul(&layer.self_attn.key)?;
            let map = attention_probabilities(&q, &k, AttentionKind::SelfAttention, dims)?;
            let map = hooks.intercept(&layer.self_site, map)?;
            let v = n.matmul(&layer.self_attn.value)?;
            x = (x + map.probs().matmul(&v)?.matmul(&layer.self_attn.out)?)?;

            let n = rms_norm(&x)?;
            let q = n.matmul(&layer.cross_attn.query)?;
            let k = tokens.matmul(&layer.cross_attn.key)?;
            let map = attention_probabilities(&q, &k, AttentionKind::CrossAttention, dims)?;
            let map = hooks.intercept(&layer.cross_site, map)?;
            let v = tokens.matmul(&layer.cross_attn.value)?;
            x = (x + map.probs().matmul(&v)?.matmul(&layer.cross_attn.out)?)?;
        }
        Ok(x)
    }
}

fn rms_norm(x: &Tensor) -> Result<Tensor> {
    let rms = x.sqr()?.mean_keepdim(D::Minus1)?.affine(1.0, 1e-6)?.sqrt()?;
    Ok(x.broadcast_div(&rms)?)
}

/// `[hw, d]` rows to a `[1, d, h, w]` feature map and back.
fn to_map(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let d = x.dims()[1];
    Ok(x.t()?.contiguous()?.reshape((1, d, h, w))?)
}

fn from_map(x: &Tensor) -> Result<Tensor> {
    let (_, d, h, w) = x.dims4()?;
    Ok(x.reshape((d, h * w))?.t()?.contiguous()?)
}

impl Backbone for StubBackbone {
    fn name(&self) -> &str {
        "stub"
    }

    fn device(&self) -> &Device {
        &self.device
    }

    fn dtype(&self) -> DType {
        DType::F64
    }

    fn latent_channels(&self) -> usize {
        self.config.latent_channels
    }

    fn downsample_factor(&self) -> usize {
        self.config.downsample
    }

    fn latent_dims(&self, image_width: u32, image_height: u32) -> Result<(usize, usize)> {
        let f = 2 * self.config.downsample as u32;
        if image_width == 0 || image_height == 0 || image_width % f != 0 || image_height % f != 0 {
            return Err(Error::Invalid(format!(
                "image {image_width}x{image_height} must be a nonzero multiple of {f}"
            )));
        }
        let f = self.config.downsample as u32;
        Ok(((image_height / f) as usize, (image_width / f) as usize))
    }

    fn attention_sites(&self) -> Vec<HookSite> {
        self.low_res
            .iter()
            .chain(&self.full_res)
            .flat_map(|l| [l.self_site, l.cross_site])
            .collect()
    }

    fn encode_text(&self, text: &str) -> Result<TextEmbedding> {
        let chars: Vec<char> = text.chars().collect();
        let layout = TokenLayout::for_text(chars.len(), self.config.max_tokens)?;
        let special = |i: usize| self.special_tokens.get(i);
        let mut rows = vec![
            special(SPECIAL_START_DESC)?,
            special(SPECIAL_END_DESC)?,
            special(SPECIAL_START_TEXT)?,
        ];
        for (k, &c) in chars.iter().enumerate() {
            rows.push(self.char_embedding(c, k)?);
        }
        rows.push(special(SPECIAL_END_TEXT)?);
        while rows.len() < layout.n_tokens {
            rows.push(special(SPECIAL_PAD)?);
        }
        Ok(TextEmbedding {
            text: text.to_owned(),
            tokens: Tensor::stack(&rows, 0)?,
            layout,
        })
    }

    fn encode_image(&self, image: &RgbImage) -> Result<Tensor> {
        let (w, h) = image.dimensions();
        let (lh, lw) = self.latent_dims(w, h)?;
        let f = self.config.downsample;
        let c = self.config.latent_channels;
        let mut data = vec![0.0f64; c * lh * lw];
        let norm = 1.0 / (f * f) as f64;
        for y in 0..lh {
            for x in 0..lw {
                let mut acc = [0.0f64; 3];
                for dy in 0..f {
                    for dx in 0..f {
                        let p = image.get_pixel((x * f + dx) as u32, (y * f + dy) as u32);
                        for ch in 0..3 {
                            acc[ch] += p[ch] as f64 / 127.5 - 1.0;
                        }
                    }
                }
                let rgb = acc.map(|v| v * norm);
                for ch in 0..c {
                    data[ch * lh * lw + y * lw + x] = if ch < 3 {
                        rgb[ch]
                    } else {
                        (rgb[0] + rgb[1] + rgb[2]) / 3.0
                    };
                }
            }
        }
        Ok(Tensor::from_vec(data, (c, lh, lw), &self.device)?)
    }

    fn decode_latent(&self, latent: &Tensor) -> Result<RgbImage> {
        let (_, h, w) = latent.dims3()?;
        let f = self.config.downsample;
        let rgb = latent.narrow(0, 0, 3)?.to_dtype(DType::F64)?.to_vec3::<f64>()?;
        Ok(RgbImage::from_fn((w * f) as u32, (h * f) as u32, |x, y| {
            let (lx, ly) = (x as usize / f, y as usize / f);
            let px = |ch: usize| ((rgb[ch][ly][lx] + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8;
            Rgb([px(0), px(1), px(2)])
        }))
    }

    fn predict_noise(&self, input: &DenoiseInput<'_>, hooks: &mut dyn AttentionHook) -> Result<Tensor> {
        let (c, h, w) = input.latent.dims3()?;
        if c != self.config.latent_channels || h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Shape(format!(
                "stub needs [{}, even, even] latents, got [{c},{h},{w}]",
                self.config.latent_channels
            )));
        }
        if input.masked_latent.dims3()? != (c, h, w) || input.mask.dims() != (h, w) {
            return Err(Error::Shape("masked latent or mask does not match latent".into()));
        }
        let alpha_bar = self.noise.alpha_bar(input.timestep)?;
        let mask: Vec<f64> = input.mask.binarized().iter().map(|&b| b as u8 as f64).collect();
        let mask = Tensor::from_vec(mask, (1, h, w), &self.device)?;

        let stacked = Tensor::cat(&[input.latent, input.masked_latent, &mask], 0)?;
        let cells = stacked.reshape((2 * c + 1, h * w))?.t()?.contiguous()?;
        let base = cells
            .matmul(&self.input)?
            .broadcast_add(&self.timestep_embedding(input.timestep)?)?;

        let tokens = &input.embedding.tokens;
        let low = from_map(&to_map(&base, h, w)?.avg_pool2d(2)?)?;
        let low = self.run_block(&self.low_res, low, (h / 2, w / 2), tokens, hooks)?;
        let up = from_map(&to_map(&low, h / 2, w / 2)?.upsample_nearest2d(h, w)?)?;
        let full = self.run_block(&self.full_res, (base + up)?, (h, w), tokens, hooks)?;

        let generated = full
            .matmul(&self.output)?
            .tanh()?
            .t()?
            .contiguous()?
            .reshape((c, h, w))?;
        let keep = mask.affine(-1.0, 1.0)?;
        let clean = (input.masked_latent.broadcast_mul(&keep)? + generated.broadcast_mul(&mask)?)?;
        let eps = (input.latent - clean.affine(alpha_bar.sqrt(), 0.0)?)?
            .affine(1.0 / (1.0 - alpha_bar).sqrt(), 0.0)?;
        Ok(eps)
    }
}

/// Latent-diffusion noise table used by the stub profile.
pub fn default_noise_schedule() -> Result<NoiseSchedule> {
    NoiseSchedule::scaled_linear(0.00085, 0.012, 1000)
}

/// Session over a stub backbone with default sites and noise schedule.
pub fn make_stub_backbone(seed: u64, latent_channels: usize) -> Result<BackboneSession> {
    let noise = default_noise_schedule()?;
    let config = StubConfig {
        seed,
        latent_channels,
        ..StubConfig::default()
    };
    let stub = StubBackbone::new(config, noise.clone())?;
    BackboneSession::new(Box::new(stub), noise, SiteConfig::default())
}
