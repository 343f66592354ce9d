use std::io::Cursor;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ExtendedColorType, ImageEncoder, ImageFormat};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Frame;

pub const DEFAULT_JPEG_QUALITY: u8 = 80;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageCodec {
    Png,
    #[default]
    Jpeg,
}

impl ImageCodec {
    pub fn content_type(self) -> &'static str {
        match self {
            ImageCodec::Png => "image/png",
            ImageCodec::Jpeg => "image/jpeg",
        }
    }
}

impl std::str::FromStr for ImageCodec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "png" => Ok(ImageCodec::Png),
            "jpeg" | "jpg" => Ok(ImageCodec::Jpeg),
            _ => Err(format!("unknown codec {s:?}")),
        }
    }
}

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("image codec failed: {0}")]
    Image(#[from] image::ImageError),
    #[error("jpeg encoding failed: {0}")]
    Jpeg(#[from] jpeg_encoder::EncodingError),
}

pub fn encode_image(frame: &Frame, codec: ImageCodec) -> Result<Vec<u8>, CodecError> {
    encode_image_with_quality(frame, codec, DEFAULT_JPEG_QUALITY)
}

/// `quality` only affects JPEG.
pub fn encode_image_with_quality(
    frame: &Frame,
    codec: ImageCodec,
    quality: u8,
) -> Result<Vec<u8>, CodecError> {
    let (w, h) = (frame.width() as u32, frame.height() as u32);
    let mut out = Vec::new();
    match codec {
        ImageCodec::Png => {
            PngEncoder::new_with_quality(&mut out, CompressionType::Fast, FilterType::Sub)
                .write_image(frame.payload(), w, h, ExtendedColorType::Rgb8)?;
        }
        ImageCodec::Jpeg => {
            // Baseline 4:2:0; several times faster than image's encoder,
            // which dominated the compositor's frame budget.
            jpeg_encoder::Encoder::new(&mut out, quality.clamp(1, 100)).encode(
                frame.payload(),
                frame.width(),
                frame.height(),
                jpeg_encoder::ColorType::Rgb,
            )?;
        }
    }
    Ok(out)
}

/// Decodes PNG or JPEG bytes to `(width, height, rgb8 pixels)`.
pub fn decode_rgb(bytes: &[u8]) -> Result<(u32, u32, Vec<u8>), CodecError> {
    let format = image::guess_format(bytes)?;
    let img = image::load(Cursor::new(bytes), format)?.to_rgb8();
    debug_assert!(matches!(format, ImageFormat::Png | ImageFormat::Jpeg));
    Ok((img.width(), img.height(), img.into_raw()))
}
