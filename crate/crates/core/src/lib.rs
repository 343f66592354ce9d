//! Core of the ground-station video pipeline.
//!
//! Two simulated UAV camera feeds (forward FPV and downward BOTTOM) are
//! rendered or ingested, tapped by a latest-wins detection stage, composited
//! with bounding-box overlays and encoded into parts ready for streaming.
//!
//! Module map:
//!
//! - [`model`]: frames, boxes, detections and their geometry helpers.
//! - [`wire`]: the bit-exact `FAR1` frame format and a resynchronizing
//!   stream decoder.
//! - [`scene`]: deterministic world simulator, camera rendering, sequence
//!   files and network ingest.
//! - [`detection`]: builtin connected-component detector, external detector
//!   protocol, and the frame scheduler.
//! - [`compositor`]: overlay drawing and PNG/JPEG encoding.
//! - [`pipeline`]: stage orchestration, bounded queues and metrics.
//!
//! Data-parallel pixel work goes through [`exec::ExecMode`]; with the
//! `parallel` feature disabled every mode runs sequentially.

pub mod clock;
pub mod compositor;
pub mod detection;
pub mod exec;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod scene;
pub mod wire;

pub use exec::ExecMode;
pub use model::{BBox, Detection, DetectionResult, Frame, PixelFormat, PixelRect, StreamId};
