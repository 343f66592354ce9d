//! Shared value types: frames, normalized boxes, detections.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slack used when mapping normalized coordinates back onto the pixel grid,
/// so that `k / width * width` lands on `k` even after rounding.
const GRID_EPS: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("frame dimensions must be at least 1x1, got {width}x{height}")]
    EmptyFrame { width: u16, height: u16 },
    #[error("payload length {actual} does not match {width}x{height}x3 = {expected}")]
    PayloadLength {
        width: u16,
        height: u16,
        expected: usize,
        actual: usize,
    },
    #[error("invalid bounding box ({x}, {y}, {w}, {h})")]
    InvalidBox { x: f64, y: f64, w: f64, h: f64 },
    #[error("confidence {0} outside [0, 1]")]
    InvalidConfidence(f32),
    #[error("unknown stream id {0:?}")]
    UnknownStream(String),
}

/// Which UAV camera a frame came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StreamId {
    /// Forward-facing first-person-view camera.
    #[serde(rename = "FPV")]
    Fpv,
    /// Downward-facing camera.
    #[serde(rename = "BOTTOM")]
    Bottom,
}

impl StreamId {
    pub const ALL: [StreamId; 2] = [StreamId::Fpv, StreamId::Bottom];

    pub fn as_str(self) -> &'static str {
        match self {
            StreamId::Fpv => "FPV",
            StreamId::Bottom => "BOTTOM",
        }
    }

    pub fn wire_byte(self) -> u8 {
        match self {
            StreamId::Fpv => 0,
            StreamId::Bottom => 1,
        }
    }

    pub fn from_wire_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(StreamId::Fpv),
            1 => Some(StreamId::Bottom),
            _ => None,
        }
    }
}

impl fmt::Display for StreamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StreamId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "FPV" => Ok(StreamId::Fpv),
            "BOTTOM" => Ok(StreamId::Bottom),
            _ => Err(ModelError::UnknownStream(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PixelFormat {
    /// 3 bytes per pixel, row-major, no padding.
    #[serde(rename = "RGB8")]
    Rgb8,
}

impl PixelFormat {
    pub fn wire_byte(self) -> u8 {
        0
    }

    pub fn from_wire_byte(b: u8) -> Option<Self> {
        (b == 0).then_some(PixelFormat::Rgb8)
    }
}

/// One immutable camera image.
#[derive(Clone, PartialEq, Eq)]
pub struct Frame {
    stream_id: StreamId,
    seq: u64,
    capture_ts_ns: u64,
    width: u16,
    height: u16,
    pixel_format: PixelFormat,
    payload: Vec<u8>,
}

impl fmt::Debug for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Frame")
            .field("stream_id", &self.stream_id)
            .field("seq", &self.seq)
            .field("capture_ts_ns", &self.capture_ts_ns)
            .field("width", &self.width)
            .field("height", &self.height)
            .field("payload_len", &self.payload.len())
            .finish()
    }
}

impl Frame {
    pub fn new(
        stream_id: StreamId,
        seq: u64,
        capture_ts_ns: u64,
        width: u16,
        height: u16,
        payload: Vec<u8>,
    ) -> Result<Self, ModelError> {
        if width == 0 || height == 0 {
            return Err(ModelError::EmptyFrame { width, height });
        }
        let expected = rgb_len(width, height);
        if payload.len() != expected {
            return Err(ModelError::PayloadLength {
                width,
                height,
                expected,
                actual: payload.len(),
            });
        }
        Ok(Self {
            stream_id,
            seq,
            capture_ts_ns,
            width,
            height,
            pixel_format: PixelFormat::Rgb8,
            payload,
        })
    }

    /// A frame filled with one color.
    pub fn solid(
        stream_id: StreamId,
        seq: u64,
        capture_ts_ns: u64,
        width: u16,
        height: u16,
        rgb: [u8; 3],
    ) -> Result<Self, ModelError> {
        let n = width as usize * height as usize;
        let payload = rgb.iter().copied().cycle().take(n * 3).collect();
        Self::new(stream_id, seq, capture_ts_ns, width, height, payload)
    }

    pub fn stream_id(&self) -> StreamId {
        self.stream_id
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }

    pub fn capture_ts_ns(&self) -> u64 {
        self.capture_ts_ns
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
    }

    pub fn pixel_format(&self) -> PixelFormat {
        self.pixel_format
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width as usize + x) * 3;
        [self.payload[i], self.payload[i + 1], self.payload[i + 2]]
    }

    /// Same image and identity, new capture timestamp.
    pub fn restamped(self, capture_ts_ns: u64) -> Frame {
        Frame {
            capture_ts_ns,
            ..self
        }
    }

    /// Same metadata, different pixels of identical size.
    pub fn with_payload(&self, payload: Vec<u8>) -> Result<Frame, ModelError> {
        Frame::new(
            self.stream_id,
            self.seq,
            self.capture_ts_ns,
            self.width,
            self.height,
            payload,
        )
    }

    pub fn into_payload(self) -> Vec<u8> {
        self.payload
    }
}

pub(crate) fn rgb_len(width: u16, height: u16) -> usize {
    width as usize * height as usize * 3
}

/// Axis-aligned box in coordinates normalized to the frame size, origin
/// top-left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, ModelError> {
        let b = BBox { x, y, w, h };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(ModelError::InvalidBox { x, y, w, h })
        }
    }

    pub fn is_valid(&self) -> bool {
        let finite = [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite());
        finite
            && self.x >= 0.0
            && self.y >= 0.0
            && self.w > 0.0
            && self.h > 0.0
            && self.x + self.w <= 1.0 + GRID_EPS
            && self.y + self.h <= 1.0 + GRID_EPS
    }

    /// Normalizes a pixel rectangle of a `width`×`height` frame.
    pub fn from_pixels(rect: PixelRect, width: u16, height: u16) -> BBox {
        let (fw, fh) = (width as f64, height as f64);
        BBox {
            x: rect.x as f64 / fw,
            y: rect.y as f64 / fh,
            w: rect.w as f64 / fw,
            h: rect.h as f64 / fh,
        }
    }

    fn right(&self) -> f64 {
        self.x + self.w
    }

    fn bottom(&self) -> f64 {
        self.y + self.h
    }

    // Computed from the edges so that an identical box yields an
    // intersection bit-identical to its own area.
    fn area(&self) -> f64 {
        (self.right() - self.x) * (self.bottom() - self.y)
    }
}

/// Integer rectangle in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelRect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl PixelRect {
    pub fn contains(&self, px: u32, py: u32) -> bool {
        px >= self.x && px < self.x + self.w && py >= self.y && py < self.y + self.h
    }
}

/// Maps a normalized box onto the pixel grid, clamped inside the frame.
///
/// `x0 = floor(x*W)`, `w = max(1, round(w*W))`, same for the vertical axis.
pub fn bbox_to_pixels(b: &BBox, width: u16, height: u16) -> PixelRect {
    let (x, w) = axis_to_pixels(b.x, b.w, width);
    let (y, h) = axis_to_pixels(b.y, b.h, height);
    PixelRect { x, y, w, h }
}

fn axis_to_pixels(origin: f64, extent: f64, size: u16) -> (u32, u32) {
    let size = size.max(1) as u32;
    let s = size as f64;
    let start = (origin * s + GRID_EPS).floor().max(0.0) as u32;
    let start = start.min(size - 1);
    let len = ((extent * s).round() as u32).max(1);
    (start, len.min(size - start))
}

/// Intersection over union; 0 for disjoint boxes.
pub fn bbox_iou(a: &BBox, b: &BBox) -> f64 {
    let iw = a.right().min(b.right()) - a.x.max(b.x);
    let ih = a.bottom().min(b.bottom()) - a.y.max(b.y);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// 0 = person.
    pub class_id: u16,
    pub confidence: f32,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

impl Detection {
    pub fn new(class_id: u16, confidence: f32, bbox: BBox) -> Result<Self, ModelError> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(ModelError::InvalidConfidence(confidence));
        }
        Ok(Self {
            class_id,
            confidence,
            bbox,
        })
    }
}

/// Detections for one analyzed frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub stream_id: StreamId,
    pub source_seq: u64,
    pub produced_ts_ns: u64,
    pub inference_latency_ns: u64,
    pub detections: Vec<Detection>,
}
