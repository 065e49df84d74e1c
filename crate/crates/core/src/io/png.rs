//! 8-bit RGB PNG images, mapped to and from [−1, 1] tensors of shape [H, W, 3].

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, RgbImage};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Quantizes `(v + 1) / 2` to 0..=255 with rounding; values outside
/// [−1, 1] are clamped.
pub fn to_rgb8(image: &Tensor) -> Result<RgbImage> {
    let [h, w, 3] = image.shape()[..] else {
        return Err(Error::shape(image.shape(), &[0, 0, 3], "rgb image"));
    };
    if let Some(i) = image.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("image value {}", i)));
    }
    let bytes = image
        .data()
        .iter()
        .map(|v| ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8)
        .collect();
    RgbImage::from_raw(w as u32, h as u32, bytes).ok_or_else(|| Error::config("image buffer size"))
}

pub fn from_rgb8(image: &RgbImage) -> Tensor {
    let (w, h) = image.dimensions();
    let data = image
        .as_raw()
        .iter()
        .map(|&b| b as f64 / 127.5 - 1.0)
        .collect();
    Tensor::from_parts(vec![h as usize, w as usize, 3], data)
}

pub fn encode_png(image: &Tensor) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    to_rgb8(image)?.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn decode_png(bytes: &[u8]) -> Result<Tensor> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
    Ok(from_rgb8(&img.to_rgb8()))
}

pub fn write_png(path: impl AsRef<Path>, image: &Tensor) -> Result<()> {
    std::fs::write(path, encode_png(image)?)?;
    Ok(())
}

pub fn read_png(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_png(&std::fs::read(path)?)
}
