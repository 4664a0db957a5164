//! Image references in requests and PNG encoding helpers.

use std::io::Cursor;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{ServiceError, ServiceResult};

/// An image given either as a path (relative paths resolve against the
/// workspace) or inline as base64 PNG.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ImageRef {
    Path { path: PathBuf },
    Inline { png_base64: String },
}

impl ImageRef {
    pub fn load(&self, workspace: &Path) -> ServiceResult<DynamicImage> {
        match self {
            ImageRef::Path { path } => {
                let full = if path.is_absolute() { path.clone() } else { workspace.join(path) };
                open(&full)
            }
            ImageRef::Inline { png_base64 } => decode_base64(png_base64),
        }
    }
}

pub fn open(path: &Path) -> ServiceResult<DynamicImage> {
    image::open(path).map_err(|e| ServiceError::validation(format!("{}: {e}", path.display())))
}

pub fn open_rgb(path: &Path) -> ServiceResult<RgbImage> {
    Ok(open(path)?.to_rgb8())
}

pub fn open_gray(path: &Path) -> ServiceResult<GrayImage> {
    Ok(open(path)?.to_luma8())
}

pub fn decode_base64(data: &str) -> ServiceResult<DynamicImage> {
    let bytes = STANDARD
        .decode(data.trim())
        .map_err(|e| ServiceError::validation(format!("invalid base64 image: {e}")))?;
    image::load_from_memory(&bytes).map_err(|e| ServiceError::validation(format!("invalid image data: {e}")))
}

pub fn png_bytes(image: &DynamicImage) -> ServiceResult<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    image
        .write_to(&mut out, ImageFormat::Png)
        .map_err(|e| ServiceError::Pipeline(format!("png encoding: {e}")))?;
    Ok(out.into_inner())
}

pub fn png_base64(image: &DynamicImage) -> ServiceResult<String> {
    Ok(STANDARD.encode(png_bytes(image)?))
}

pub fn save_png(image: &DynamicImage, path: &Path) -> ServiceResult<()> {
    image
        .save_with_format(path, ImageFormat::Png)
        .map_err(|e| ServiceError::Pipeline(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inline_round_trip() {
        let img = DynamicImage::ImageLuma8(GrayImage::from_fn(3, 2, |x, y| image::Luma([(x * 80 + y) as u8])));
        let r = ImageRef::Inline { png_base64: png_base64(&img).unwrap() };
        assert_eq!(r.load(Path::new(".")).unwrap().to_luma8(), img.to_luma8());
    }

    #[test]
    fn refs_parse_from_json() {
        let p: ImageRef = serde_json::from_str(r#"{"path":"a.png"}"#).unwrap();
        assert_eq!(p, ImageRef::Path { path: "a.png".into() });
        let i: ImageRef = serde_json::from_str(r#"{"png_base64":"AAAA"}"#).unwrap();
        assert!(matches!(i, ImageRef::Inline { .. }));
        assert!(serde_json::from_str::<ImageRef>(r#"{"url":"x"}"#).is_err());
    }
}
