//! Object detection stage.
//!
//! The builtin detector thresholds pixels against a target color, labels
//! 4-connected components and reports one box per component that reaches
//! `min_area_px`, in raster order of each component's first pixel. On
//! noiseless synthetic frames it is exact, so its confidence is always 1.0.
//!
//! External detectors (a YOLO-family model, for instance) sit behind the
//! `FDET`/`FRES` protocol in [`protocol`]; [`mock`] ships a reference
//! server. [`scheduler`] holds the latest-wins policy that lets a slow
//! detector run beside a faster camera.

pub mod external;
pub mod mock;
pub mod protocol;
pub mod scheduler;

use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::mono_now_ns;
use crate::exec::ExecMode;
use crate::model::{BBox, Detection, DetectionResult, Frame, PixelRect};

pub use external::ExternalDetector;
pub use scheduler::{OfferDecision, SchedulerState, SharedScheduler};

pub const PERSON_CLASS: u16 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DetectorKind {
    #[default]
    #[serde(rename = "builtin", alias = "BUILTIN_CC")]
    BuiltinCc,
    #[serde(rename = "external", alias = "EXTERNAL")]
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub kind: DetectorKind,
    pub target_color: [u8; 3],
    /// Per-channel maximum deviation from `target_color`.
    pub color_tolerance: u8,
    pub min_area_px: u32,
    /// `host:port` of an external detector.
    pub endpoint: Option<String>,
    pub max_staleness_ms: u64,
    pub timeout_ms: u64,
    /// Fault injection: extra latency added to every inference.
    pub artificial_delay_ms: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            kind: DetectorKind::BuiltinCc,
            target_color: [255, 0, 0],
            color_tolerance: 0,
            min_area_px: 16,
            endpoint: None,
            max_staleness_ms: 200,
            timeout_ms: 1000,
            artificial_delay_ms: 0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.min_area_px < 1 {
            return Err("min_area_px must be >= 1".into());
        }
        if self.max_staleness_ms == 0 {
            return Err("max_staleness_ms must be > 0".into());
        }
        if self.kind == DetectorKind::External && self.endpoint.is_none() {
            return Err("external detector needs an endpoint".into());
        }
        Ok(())
    }

    pub fn max_staleness_ns(&self) -> u64 {
        self.max_staleness_ms * 1_000_000
    }
}

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("detector unreachable: {0}")]
    Unreachable(#[source] std::io::Error),
    #[error("detector timed out after {0:?}")]
    Timeout(Duration),
    #[error("malformed detector response: {0}")]
    MalformedResponse(String),
    #[error("detection cancelled")]
    Cancelled,
}

pub trait Detector: Send {
    fn detect(&mut self, frame: &Frame) -> Result<DetectionResult, DetectError>;
}

/// A 4-connected blob of matching pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Component {
    pub rect: PixelRect,
    pub area: u32,
}

/// 1 where a pixel is within `tolerance` of `color` on every channel.
pub fn color_mask(frame: &Frame, color: [u8; 3], tolerance: u8, mode: ExecMode) -> Vec<u8> {
    let w = frame.width() as usize;
    let h = frame.height() as usize;
    let mut mask = vec![0u8; w * h];
    let payload = frame.payload();
    mode.for_each_row(&mut mask, w, |y, row| {
        let src = &payload[y * w * 3..(y + 1) * w * 3];
        for (m, px) in row.iter_mut().zip(src.chunks_exact(3)) {
            *m = (px[0].abs_diff(color[0]) <= tolerance
                && px[1].abs_diff(color[1]) <= tolerance
                && px[2].abs_diff(color[2]) <= tolerance) as u8;
        }
    });
    mask
}

/// Labels 4-connected components of nonzero `mask` cells by flood fill,
/// returned in raster order of their first pixel. Consumes the mask as
/// visited-state.
pub fn label_components(mut mask: Vec<u8>, width: usize, height: usize) -> Vec<Component> {
    const SEEN: u8 = 2;
    let mut out = Vec::new();
    let mut stack: Vec<usize> = Vec::new();
    for start in 0..mask.len() {
        if mask[start] != 1 {
            continue;
        }
        mask[start] = SEEN;
        stack.push(start);
        let (mut x0, mut x1) = (start % width, start % width);
        let (mut y0, mut y1) = (start / width, start / width);
        let mut area = 0u32;
        while let Some(i) = stack.pop() {
            area += 1;
            let (x, y) = (i % width, i / width);
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
            let mut visit = |j: usize| {
                if mask[j] == 1 {
                    mask[j] = SEEN;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < width {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - width);
            }
            if y + 1 < height {
                visit(i + width);
            }
        }
        out.push(Component {
            rect: PixelRect {
                x: x0 as u32,
                y: y0 as u32,
                w: (x1 - x0 + 1) as u32,
                h: (y1 - y0 + 1) as u32,
            },
            area,
        });
    }
    out
}

/// Detections for one frame, without timing metadata.
pub fn builtin_detections(frame: &Frame, cfg: &DetectorConfig, mode: ExecMode) -> Vec<Detection> {
    let (w, h) = (frame.width(), frame.height());
    let mask = color_mask(frame, cfg.target_color, cfg.color_tolerance, mode);
    label_components(mask, w as usize, h as usize)
        .into_iter()
        .filter(|c| c.area >= cfg.min_area_px)
        .map(|c| Detection {
            class_id: PERSON_CLASS,
            confidence: 1.0,
            bbox: BBox::from_pixels(c.rect, w, h),
        })
        .collect()
}

pub fn detect_builtin(frame: &Frame, cfg: &DetectorConfig) -> DetectionResult {
    detect_builtin_with(frame, cfg, ExecMode::default())
}

pub fn detect_builtin_with(frame: &Frame, cfg: &DetectorConfig, mode: ExecMode) -> DetectionResult {
    let t0 = Instant::now();
    let detections = builtin_detections(frame, cfg, mode);
    let latency = t0.elapsed().as_nanos() as u64;
    DetectionResult {
        stream_id: frame.stream_id(),
        source_seq: frame.seq(),
        produced_ts_ns: mono_now_ns().max(frame.capture_ts_ns()),
        inference_latency_ns: latency,
        detections,
    }
}

/// Runs the builtin detector over many frames; frames are processed
/// concurrently in `Parallel` mode.
pub fn detect_batch(frames: &[Frame], cfg: &DetectorConfig, mode: ExecMode) -> Vec<DetectionResult> {
    // Parallelism across frames, sequential within each.
    mode.map(frames, |f| detect_builtin_with(f, cfg, ExecMode::Sequential))
}

#[derive(Debug, Clone)]
pub struct BuiltinDetector {
    cfg: DetectorConfig,
    mode: ExecMode,
}

impl BuiltinDetector {
    pub fn new(cfg: DetectorConfig) -> Self {
        Self {
            cfg,
            mode: ExecMode::default(),
        }
    }

    pub fn with_mode(mut self, mode: ExecMode) -> Self {
        self.mode = mode;
        self
    }
}

impl Detector for BuiltinDetector {
    fn detect(&mut self, frame: &Frame) -> Result<DetectionResult, DetectError> {
        Ok(detect_builtin_with(frame, &self.cfg, self.mode))
    }
}

/// Wraps a detector and stretches every call to take at least `delay`.
pub struct Delayed<D> {
    inner: D,
    delay: Duration,
}

impl<D> Delayed<D> {
    pub fn new(inner: D, delay: Duration) -> Self {
        Self { inner, delay }
    }
}

impl<D: Detector> Detector for Delayed<D> {
    fn detect(&mut self, frame: &Frame) -> Result<DetectionResult, DetectError> {
        let t0 = Instant::now();
        let mut res = self.inner.detect(frame)?;
        if let Some(rest) = self.delay.checked_sub(t0.elapsed()) {
            std::thread::sleep(rest);
        }
        res.inference_latency_ns = t0.elapsed().as_nanos() as u64;
        res.produced_ts_ns = mono_now_ns();
        Ok(res)
    }
}

/// Builds the detector described by `cfg`. `cancel` aborts in-flight
/// external requests.
pub fn build_detector(
    cfg: &DetectorConfig,
    cancel: Arc<AtomicBool>,
) -> Result<Box<dyn Detector>, DetectError> {
    let base: Box<dyn Detector> = match cfg.kind {
        DetectorKind::BuiltinCc => Box::new(BuiltinDetector::new(cfg.clone())),
        DetectorKind::External => {
            let endpoint = cfg.endpoint.clone().ok_or_else(|| {
                DetectError::Unreachable(std::io::Error::new(
                    std::io::ErrorKind::InvalidInput,
                    "no external endpoint configured",
                ))
            })?;
            Box::new(
                ExternalDetector::new(endpoint, Duration::from_millis(cfg.timeout_ms))
                    .with_cancel(cancel),
            )
        }
    };
    Ok(if cfg.artificial_delay_ms > 0 {
        Box::new(Delayed::new(base, Duration::from_millis(cfg.artificial_delay_ms)))
    } else {
        base
    })
}

impl<D: Detector + ?Sized> Detector for Box<D> {
    fn detect(&mut self, frame: &Frame) -> Result<DetectionResult, DetectError> {
        (**self).detect(frame)
    }
}
