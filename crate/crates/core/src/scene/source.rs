use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Duration;

use thiserror::Error;

use super::{ConfigError, Renderer, SourceConfig, WorldModel};
use crate::clock::mono_now_ns;
use crate::model::{Frame, StreamId};
use crate::scene::SequenceError;

const STOP_POLL: Duration = Duration::from_millis(20);

#[derive(Debug, Error)]
pub enum SourceError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sequence(#[from] SequenceError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// A paced producer of frames for one stream.
pub trait FrameSource: Send {
    fn stream_id(&self) -> StreamId;

    /// Blocks until the next frame is due. `Ok(None)` means the source is
    /// exhausted or `stop` was raised.
    fn next_frame(&mut self, stop: &AtomicBool) -> Result<Option<Frame>, SourceError>;
}

/// Sleeps until `deadline_ns`, waking periodically to honor `stop`.
/// Returns false if stopped.
pub(crate) fn pace_until(deadline_ns: u64, stop: &AtomicBool) -> bool {
    loop {
        if stop.load(Ordering::Relaxed) {
            return false;
        }
        let now = mono_now_ns();
        if now >= deadline_ns {
            return true;
        }
        std::thread::sleep(Duration::from_nanos(deadline_ns - now).min(STOP_POLL));
    }
}

/// Renders frames `0, 1, 2, ...` of the seeded world at the configured rate.
/// Frame `n` is due at `start + n * period`, so pacing does not drift.
pub struct SyntheticSource {
    stream: StreamId,
    model: WorldModel,
    renderer: Renderer,
    period_ns: u64,
    max_frames: Option<u64>,
    next: u64,
    start_ns: Option<u64>,
}

impl SyntheticSource {
    pub fn new(stream: StreamId, config: &SourceConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        Ok(Self {
            stream,
            model: WorldModel::new(config),
            renderer: Renderer::for_config(config),
            period_ns: config.frame_period_ns(),
            max_frames: config.max_frames,
            next: 0,
            start_ns: None,
        })
    }

    pub fn renderer(&self) -> &Renderer {
        &self.renderer
    }
}

impl FrameSource for SyntheticSource {
    fn stream_id(&self) -> StreamId {
        self.stream
    }

    fn next_frame(&mut self, stop: &AtomicBool) -> Result<Option<Frame>, SourceError> {
        if self.max_frames.is_some_and(|m| self.next >= m) {
            return Ok(None);
        }
        let start = *self.start_ns.get_or_insert_with(mono_now_ns);
        if !pace_until(start + self.next * self.period_ns, stop) {
            return Ok(None);
        }
        let world = self.model.state_at(self.next);
        let pixels = self.renderer.render_pixels(&world, self.stream);
        let res = self.renderer.resolution;
        let frame = Frame::new(self.stream, self.next, mono_now_ns(), res.width, res.height, pixels)
            .expect("renderer produces full frames");
        self.next += 1;
        Ok(Some(frame))
    }
}
