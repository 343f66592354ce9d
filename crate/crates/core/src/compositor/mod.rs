//! Overlay drawing and image encoding for the augmented streams.
//!
//! Each detection gets a `border_px`-wide rectangle outline in `box_color`
//! at its [`bbox_to_pixels`] position, and optionally a label tag such as
//! `P 100%` (class 0 is rendered as `P`, other classes as `C<id>`). The tag
//! is a filled `box_color` strip 9 px tall with black 5×7 glyphs, 1 px
//! spacing and 1 px padding, placed directly above the box, or just inside
//! its top edge when there is no room above. Nothing else is touched.

mod codec;
pub mod font;

pub use codec::{
    decode_rgb, encode_image, encode_image_with_quality, CodecError, ImageCodec,
    DEFAULT_JPEG_QUALITY,
};

use serde::{Deserialize, Serialize};

use crate::model::{bbox_to_pixels, Detection, DetectionResult, Frame, PixelRect};
use font::{glyph_bit, GLYPH_H, GLYPH_W};

pub const LABEL_PAD: u32 = 1;
pub const LABEL_H: u32 = GLYPH_H + 2 * LABEL_PAD;
const LABEL_INK: [u8; 3] = [0, 0, 0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OverlayStyle {
    pub box_color: [u8; 3],
    pub border_px: u32,
    pub label_enabled: bool,
}

impl Default for OverlayStyle {
    fn default() -> Self {
        Self {
            box_color: [0, 255, 0],
            border_px: 2,
            label_enabled: true,
        }
    }
}

impl OverlayStyle {
    pub fn validate(&self) -> Result<(), String> {
        if self.border_px < 1 {
            return Err("border_px must be >= 1".into());
        }
        Ok(())
    }
}

pub fn label_text(d: &Detection) -> String {
    let pct = (d.confidence.clamp(0.0, 1.0) * 100.0).round() as u32;
    if d.class_id == 0 {
        format!("P {pct}%")
    } else {
        format!("C{} {pct}%", d.class_id)
    }
}

/// Where the label of a box `rect` lands in a `width`×`height` frame.
pub fn label_rect(rect: PixelRect, text: &str, width: u16, height: u16) -> PixelRect {
    let n = text.chars().count() as u32;
    let want_w = n * GLYPH_W + n.saturating_sub(1) + 2 * LABEL_PAD;
    let y = if rect.y >= LABEL_H { rect.y - LABEL_H } else { rect.y };
    let w = want_w.min(width as u32 - rect.x);
    let h = LABEL_H.min(height as u32 - y);
    PixelRect { x: rect.x, y, w, h }
}

pub fn draw_overlay(frame: &Frame, result: Option<&DetectionResult>, style: &OverlayStyle) -> Frame {
    let Some(result) = result.filter(|r| !r.detections.is_empty()) else {
        return frame.clone();
    };
    let (fw, fh) = (frame.width(), frame.height());
    let mut px = frame.payload().to_vec();
    let stride = fw as usize * 3;
    let mut put = |x: u32, y: u32, rgb: [u8; 3]| {
        let i = y as usize * stride + x as usize * 3;
        px[i..i + 3].copy_from_slice(&rgb);
    };
    let b = style.border_px.max(1);
    for d in &result.detections {
        let r = bbox_to_pixels(&d.bbox, fw, fh);
        for y in r.y..r.y + r.h {
            let edge_row = y < r.y + b || y + b >= r.y + r.h;
            if edge_row {
                for x in r.x..r.x + r.w {
                    put(x, y, style.box_color);
                }
            } else {
                for x in (r.x..r.x + b.min(r.w)).chain(r.x + r.w.saturating_sub(b)..r.x + r.w) {
                    put(x, y, style.box_color);
                }
            }
        }
        if style.label_enabled {
            let text = label_text(d);
            let lr = label_rect(r, &text, fw, fh);
            let chars: Vec<char> = text.chars().collect();
            for y in lr.y..lr.y + lr.h {
                for x in lr.x..lr.x + lr.w {
                    let (lx, ly) = (x - lr.x, y - lr.y);
                    let ink = lx >= LABEL_PAD && ly >= LABEL_PAD && {
                        let (gx, gy) = (lx - LABEL_PAD, ly - LABEL_PAD);
                        let cell = gx / (GLYPH_W + 1);
                        let col = gx % (GLYPH_W + 1);
                        chars
                            .get(cell as usize)
                            .is_some_and(|&c| glyph_bit(c, col, gy))
                    };
                    put(x, y, if ink { LABEL_INK } else { style.box_color });
                }
            }
        }
    }
    frame.with_payload(px).expect("same dimensions")
}
