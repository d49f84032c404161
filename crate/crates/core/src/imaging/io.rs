use std::fs;
use std::path::Path;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ExtendedColorType, ImageEncoder};

use super::{ImagingError, RasterImage, Result};

/// Decode PNG or JPEG bytes; `label` only feeds error messages.
pub fn decode_image(bytes: &[u8], label: &str) -> Result<RasterImage> {
    let decoded = image::load_from_memory(bytes).map_err(|source| ImagingError::Codec {
        path: label.to_string(),
        source,
    })?;
    let rgb = decoded.to_rgb8();
    let (w, h) = rgb.dimensions();
    RasterImage::from_raw(w, h, rgb.into_raw())
}

pub fn load_image(path: impl AsRef<Path>) -> Result<RasterImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| ImagingError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_image(&bytes, &path.display().to_string())
}

/// PNG bytes with a fixed filter and compression level, so identical images
/// always encode to identical files.
pub fn encode_png(img: &RasterImage) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    PngEncoder::new_with_quality(&mut buf, CompressionType::Default, FilterType::Sub)
        .write_image(img.as_raw(), img.width(), img.height(), ExtendedColorType::Rgb8)
        .map_err(|source| ImagingError::Codec {
            path: "<png encoder>".to_string(),
            source,
        })?;
    Ok(buf)
}

pub fn save_png(img: &RasterImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_png(img)?;
    fs::write(path, bytes).map_err(|source| ImagingError::Io {
        path: path.display().to_string(),
        source,
    })
}
