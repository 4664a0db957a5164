//! Backbone-independent operations on attention probability maps.
//!
//! Every map is a row-stochastic matrix with one row per spatial query of an
//! `h x w` feature map. Self-attention keys are the same spatial positions;
//! cross-attention keys are text tokens laid out as described by
//! [`TokenLayout`]. All operations act on probabilities (post-softmax) and
//! are pure: they return a new map and leave the input untouched.

use candle_core::{DType, Device, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plane::Plane;

/// Threshold used to turn interpolated masks into row selections.
pub const DEFAULT_MASK_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    #[serde(rename = "self")]
    SelfAttention,
    #[serde(rename = "cross")]
    CrossAttention,
}

impl std::fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AttentionKind::SelfAttention => f.write_str("self"),
            AttentionKind::CrossAttention => f.write_str("cross"),
        }
    }
}

/// Attention probabilities `[h*w, n]` plus the feature-map geometry they
/// came from.
#[derive(Clone, Debug)]
pub struct AttentionMap {
    probs: Tensor,
    kind: AttentionKind,
    spatial_dims: (usize, usize),
}

impl AttentionMap {
    pub fn new(probs: Tensor, kind: AttentionKind, spatial_dims: (usize, usize)) -> Result<Self> {
        let (rows, cols) = probs.dims2()?;
        let (h, w) = spatial_dims;
        if rows != h * w {
            return Err(Error::Shape(format!(
                "attention map has {rows} rows, spatial dims {h}x{w} need {}",
                h * w
            )));
        }
        if kind == AttentionKind::SelfAttention && cols != rows {
            return Err(Error::Shape(format!(
                "self-attention map must be square, got {rows}x{cols}"
            )));
        }
        Ok(Self {
            probs,
            kind,
            spatial_dims,
        })
    }

    pub fn from_rows(
        rows: &[Vec<f64>],
        kind: AttentionKind,
        spatial_dims: (usize, usize),
        device: &Device,
    ) -> Result<Self> {
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Shape("ragged attention rows".into()));
        }
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        let probs = Tensor::from_vec(data, (rows.len(), n), device)?;
        Self::new(probs, kind, spatial_dims)
    }

    pub fn probs(&self) -> &Tensor {
        &self.probs
    }

    pub fn into_probs(self) -> Tensor {
        self.probs
    }

    pub fn kind(&self) -> AttentionKind {
        self.kind
    }

    pub fn spatial_dims(&self) -> (usize, usize) {
        self.spatial_dims
    }

    pub fn n_queries(&self) -> usize {
        self.spatial_dims.0 * self.spatial_dims.1
    }

    pub fn n_keys(&self) -> usize {
        self.probs.dims()[1]
    }

    pub fn to_rows(&self) -> Result<Vec<Vec<f64>>> {
        Ok(self.probs.to_dtype(DType::F64)?.to_vec2::<f64>()?)
    }

    /// Checks the row-stochastic invariant: entries in `[0, 1]`, rows summing
    /// to one within `tol`.
    pub fn check_stochastic(&self, tol: f64) -> Result<()> {
        for (i, row) in self.to_rows()?.iter().enumerate() {
            if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Contract(format!("row {i} has entry {v} outside [0,1]")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > tol {
                return Err(Error::Contract(format!("row {i} sums to {s}")));
            }
        }
        Ok(())
    }

    fn with_probs(&self, probs: Tensor) -> Self {
        Self {
            probs,
            kind: self.kind,
            spatial_dims: self.spatial_dims,
        }
    }

    fn expect_kind(&self, kind: AttentionKind, op: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Contract(format!(
                "{op} needs a {kind}-attention map, got {}",
                self.kind
            )));
        }
        Ok(())
    }
}

/// Positions of the special and character tokens inside a text embedding.
///
/// The encoder emits `[S_d, E_d, S_T, c_1 .. c_N, E_T, P ...]`: an empty
/// description, the text description and padding.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLayout {
    pub start_description: usize,
    pub end_description: usize,
    pub start_text: usize,
    pub end_text: usize,
    pub char_indices: Vec<usize>,
    pub padding_start: usize,
    pub n_tokens: usize,
}

impl TokenLayout {
    pub const START_DESCRIPTION: usize = 0;
    pub const END_DESCRIPTION: usize = 1;

    pub fn for_text(n_chars: usize, n_tokens: usize) -> Result<Self> {
        let start_text = 2;
        let end_text = start_text + n_chars + 1;
        if end_text >= n_tokens {
            return Err(Error::Invalid(format!(
                "text of {n_chars} characters does not fit in {n_tokens} tokens"
            )));
        }
        let layout = Self {
            start_description: Self::START_DESCRIPTION,
            end_description: Self::END_DESCRIPTION,
            start_text,
            end_text,
            char_indices: (start_text + 1..end_text).collect(),
            padding_start: end_text + 1,
            n_tokens,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn n_chars(&self) -> usize {
        self.char_indices.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Contract(format!("token layout: {m}")));
        if self.start_description != 0 || self.end_description != 1 {
            return bad("description delimiters must occupy columns 0 and 1");
        }
        if self
            .char_indices
            .windows(2)
            .any(|w| w[1] != w[0] + 1)
        {
            return bad("character tokens must be contiguous");
        }
        if let (Some(&first), Some(&last)) = (self.char_indices.first(), self.char_indices.last()) {
            if first <= self.start_text || last >= self.end_text {
                return bad("character tokens must sit between S_T and E_T");
            }
        }
        let max = [
            self.start_text,
            self.end_text,
            self.padding_start.saturating_sub(1),
        ]
        .into_iter()
        .chain(self.char_indices.iter().copied())
        .max()
        .unwrap_or(0);
        if max >= self.n_tokens {
            return bad("index beyond embedding length");
        }
        Ok(())
    }
}

/// Latent-resolution mask with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentMask {
    values: Plane,
    threshold: f64,
}

impl LatentMask {
    pub fn new(values: Plane) -> Result<Self> {
        Self::with_threshold(values, DEFAULT_MASK_THRESHOLD)
    }

    pub fn with_threshold(values: Plane, threshold: f64) -> Result<Self> {
        if let Some(v) = values.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Invalid(format!("mask value {v} outside [0,1]")));
        }
        Ok(Self { values, threshold })
    }

    pub fn from_binary(height: usize, width: usize, on: &[bool]) -> Result<Self> {
        let data = on.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Self::new(Plane::new(height, width, data)?)
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            values: Plane::zeros(height, width),
            threshold: DEFAULT_MASK_THRESHOLD,
        }
    }

    pub fn values(&self) -> &Plane {
        &self.values
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn dims(&self) -> (usize, usize) {
        self.values.dims()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    #[inline]
    pub fn is_on(&self, index: usize) -> bool {
        self.values.as_slice()[index] >= self.threshold
    }

    pub fn binarized(&self) -> Vec<bool> {
        (0..self.len()).map(|i| self.is_on(i)).collect()
    }

    pub fn count(&self) -> usize {
        (0..self.len()).filter(|&i| self.is_on(i)).count()
    }

    /// Binarized copy (values exactly 0 or 1).
    pub fn to_binary(&self) -> Self {
        let (h, w) = self.dims();
        Self {
            values: Plane::new(h, w, self.binarized().iter().map(|&b| b as u8 as f64).collect())
                .expect("same dims"),
            threshold: self.threshold,
        }
    }

    /// Bilinear resample to another feature-map resolution.
    pub fn resized(&self, height: usize, width: usize) -> Result<Self> {
        Ok(Self {
            values: self.values.resize_bilinear(height, width)?,
            threshold: self.threshold,
        })
    }

    pub fn hconcat(&self, right: &LatentMask) -> Result<Self> {
        Ok(Self {
            values: self.values.hconcat(&right.values)?,
            threshold: self.threshold,
        })
    }

    /// Column vector `[h*w, 1]` of 0/1 selecting the mask's rows.
    pub fn row_selector(&self, device: &Device) -> Result<Tensor> {
        let data: Vec<u8> = self.binarized().into_iter().map(u8::from).collect();
        Ok(Tensor::from_vec(data, (self.len(), 1), device)?)
    }

    fn expect_dims(&self, dims: (usize, usize), op: &str) -> Result<()> {
        if self.dims() != dims {
            return Err(Error::Contract(format!(
                "{op}: mask is {:?}, attention map is {dims:?}",
                self.dims()
            )));
        }
        Ok(())
    }
}

/// Row-wise softmax with the maximum subtracted for stability. The shift is
/// detached, which leaves the gradient unchanged.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    let max = logits.max_keepdim(D::Minus1)?.detach();
    let exp = logits.broadcast_sub(&max)?.exp()?;
    let sum = exp.sum_keepdim(D::Minus1)?;
    Ok(exp.broadcast_div(&sum)?)
}

/// `softmax(Q K^T / sqrt(d))` for a `[h*w, d]` query and `[n, d]` key.
pub fn attention_probabilities(
    query: &Tensor,
    key: &Tensor,
    kind: AttentionKind,
    spatial_dims: (usize, usize),
) -> Result<AttentionMap> {
    let (_, dq) = query.dims2()?;
    let (_, dk) = key.dims2()?;
    if dq != dk || dq == 0 {
        return Err(Error::Contract(format!(
            "query dim {dq} and key dim {dk} must match and be positive"
        )));
    }
    let logits = query
        .matmul(&key.t()?)?
        .affine(1.0 / (dq as f64).sqrt(), 0.0)?;
    AttentionMap::new(softmax_rows(&logits)?, kind, spatial_dims)
}

/// Options for [`invert_self_attention_with`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InversionOptions {
    /// Apply a softmax to the flipped rows. Without it the flipped rows are
    /// left unnormalized.
    pub renormalize: bool,
}

impl Default for InversionOptions {
    fn default() -> Self {
        Self { renormalize: true }
    }
}

/// Flips each masked self-attention row around its range
/// (`max + min - x`) and renormalizes it with a softmax. Unmasked rows are
/// returned bit-identical.
pub fn invert_self_attention(map: &AttentionMap, mask: &LatentMask) -> Result<AttentionMap> {
    invert_self_attention_with(map, mask, InversionOptions::default())
}

pub fn invert_self_attention_with(
    map: &AttentionMap,
    mask: &LatentMask,
    options: InversionOptions,
) -> Result<AttentionMap> {
    map.expect_kind(AttentionKind::SelfAttention, "self-attention inversion")?;
    mask.expect_dims(map.spatial_dims, "self-attention inversion")?;
    let probs = map.probs();
    let max = probs.max_keepdim(D::Minus1)?;
    let min = probs.min_keepdim(D::Minus1)?;
    let flipped = max.broadcast_add(&min)?.broadcast_sub(probs)?;
    let replaced = if options.renormalize {
        softmax_rows(&flipped)?
    } else {
        flipped
    };
    let select = mask
        .row_selector(probs.device())?
        .broadcast_as(probs.shape())?;
    Ok(map.with_probs(select.where_cond(&replaced, probs)?))
}

/// Rewrites a cross-attention map so rows inside the mask attend only to the
/// end-of-description token and rows outside only to the
/// start-of-description token. Every other column becomes zero.
pub fn reassign_cross_attention(
    map: &AttentionMap,
    mask: &LatentMask,
    layout: &TokenLayout,
) -> Result<AttentionMap> {
    map.expect_kind(AttentionKind::CrossAttention, "cross-attention reassignment")?;
    mask.expect_dims(map.spatial_dims, "cross-attention reassignment")?;
    let n = map.n_keys();
    if layout.n_tokens != n {
        return Err(Error::Contract(format!(
            "token layout has {} tokens, map has {n} columns",
            layout.n_tokens
        )));
    }
    let rows = map.n_queries();
    let mut data = vec![0.0f64; rows * n];
    for i in 0..rows {
        let col = if mask.is_on(i) {
            layout.end_description
        } else {
            layout.start_description
        };
        data[i * n + col] = 1.0;
    }
    let probs = Tensor::from_vec(data, (rows, n), map.probs().device())?
        .to_dtype(map.probs().dtype())?;
    Ok(map.with_probs(probs))
}

/// Makes the self-attention block of every character region diagonal.
///
/// For a row `i` in region `k`, the attention mass it placed on region `k`
/// moves onto `(i, i)`; in-region off-diagonal entries become zero and
/// entries outside the region are kept. Modified rows are renormalized, rows
/// outside every region are returned bit-identical. The operation is
/// differentiable in the input probabilities.
pub fn enforce_identity_self_attention(
    map: &AttentionMap,
    char_masks: &[LatentMask],
) -> Result<AttentionMap> {
    map.expect_kind(AttentionKind::SelfAttention, "identity enforcement")?;
    let hw = map.n_queries();
    let mut region: Vec<Option<usize>> = vec![None; hw];
    for (k, m) in char_masks.iter().enumerate() {
        m.expect_dims(map.spatial_dims, "identity enforcement")?;
        for (i, slot) in region.iter_mut().enumerate() {
            if m.is_on(i) {
                if let Some(other) = slot {
                    return Err(Error::Contract(format!(
                        "character masks {other} and {k} overlap at cell {i}"
                    )));
                }
                *slot = Some(k);
            }
        }
    }
    if region.iter().all(Option::is_none) {
        return Ok(map.clone());
    }
    let mut block = vec![0.0f64; hw * hw];
    let mut diag = vec![0.0f64; hw * hw];
    let mut in_region = vec![0u8; hw];
    for i in 0..hw {
        if let Some(k) = region[i] {
            in_region[i] = 1;
            diag[i * hw + i] = 1.0;
            for j in 0..hw {
                if region[j] == Some(k) {
                    block[i * hw + j] = 1.0;
                }
            }
        }
    }
    let probs = map.probs();
    let (device, dtype) = (probs.device(), probs.dtype());
    let block = Tensor::from_vec(block, (hw, hw), device)?.to_dtype(dtype)?;
    let diag = Tensor::from_vec(diag, (hw, hw), device)?.to_dtype(dtype)?;
    let keep = block.affine(-1.0, 1.0)?;

    let region_mass = (probs * &block)?.sum_keepdim(D::Minus1)?;
    let rewritten = ((probs * &keep)? + diag.broadcast_mul(&region_mass)?)?;
    let row_sum = rewritten.sum_keepdim(D::Minus1)?;
    let normalized = rewritten.broadcast_div(&row_sum)?;
    let select = Tensor::from_vec(in_region, (hw, 1), device)?.broadcast_as((hw, hw))?;
    Ok(map.with_probs(select.where_cond(&normalized, probs)?))
}

/// One cross-attention column reshaped to the feature-map grid.
pub fn extract_token_field(
    map: &AttentionMap,
    layout: &TokenLayout,
    token_index: usize,
) -> Result<Plane> {
    map.expect_kind(AttentionKind::CrossAttention, "token field extraction")?;
    if token_index >= layout.n_tokens || token_index >= map.n_keys() {
        return Err(Error::OutOfRange {
            what: "token",
            index: token_index,
            len: layout.n_tokens.min(map.n_keys()),
        });
    }
    let column = map
        .probs()
        .narrow(1, token_index, 1)?
        .flatten_all()?
        .to_dtype(DType::F64)?
        .to_vec1::<f64>()?;
    let (h, w) = map.spatial_dims;
    Plane::new(h, w, column)
}

/// Mean of the masked rows of a self-attention map, as a spatial field.
pub fn masked_row_field(map: &AttentionMap, mask: &LatentMask) -> Result<Plane> {
    map.expect_kind(AttentionKind::SelfAttention, "masked row field")?;
    mask.expect_dims(map.spatial_dims, "masked row field")?;
    let rows = map.to_rows()?;
    let (h, w) = map.spatial_dims;
    let mut acc = vec![0.0; h * w];
    let mut n = 0usize;
    for (i, row) in rows.iter().enumerate() {
        if mask.is_on(i) {
            n += 1;
            acc.iter_mut().zip(row).for_each(|(a, v)| *a += v);
        }
    }
    if n > 0 {
        acc.iter_mut().for_each(|a| *a /= n as f64);
    }
    Plane::new(h, w, acc)
}
