//! Latest-wins detection scheduling and staleness gating.
//!
//! At most one inference runs per stream. While it runs, one newer frame may
//! wait; a newer arrival replaces the waiting one, which is counted as
//! skipped. Accounting identity at every instant:
//!
//! `offered = detected + failed + skipped + in_flight + pending`

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::Duration;

use serde::Serialize;

use crate::model::{DetectionResult, Frame};

#[derive(Debug, Clone, PartialEq)]
pub enum OfferDecision {
    /// The detector was idle; run this frame now.
    Start(Arc<Frame>),
    /// Waiting behind the running inference.
    Queued,
    /// Waiting, and displaced an older waiting frame.
    Replaced,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SchedulerCounts {
    pub offered: u64,
    pub detected: u64,
    pub failed: u64,
    pub skipped: u64,
}

#[derive(Debug, Default)]
pub struct SchedulerState {
    busy: bool,
    pending: Option<Arc<Frame>>,
    last_result: Option<Arc<DetectionResult>>,
    counts: SchedulerCounts,
}

impl SchedulerState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_busy(&self) -> bool {
        self.busy
    }

    pub fn pending(&self) -> Option<&Arc<Frame>> {
        self.pending.as_ref()
    }

    pub fn last_result(&self) -> Option<&Arc<DetectionResult>> {
        self.last_result.as_ref()
    }

    pub fn counts(&self) -> SchedulerCounts {
        self.counts
    }

    pub fn offer_frame(&mut self, frame: Arc<Frame>) -> OfferDecision {
        self.counts.offered += 1;
        if !self.busy {
            self.busy = true;
            return OfferDecision::Start(frame);
        }
        match self.pending.replace(frame) {
            None => OfferDecision::Queued,
            Some(_) => {
                self.counts.skipped += 1;
                OfferDecision::Replaced
            }
        }
    }

    /// Records the end of the running inference. Returns the pending frame,
    /// which is now running, if there was one.
    pub fn complete(&mut self, result: Option<DetectionResult>) -> Option<Arc<Frame>> {
        debug_assert!(self.busy, "complete() without a running inference");
        match result {
            Some(r) => {
                self.counts.detected += 1;
                self.last_result = Some(Arc::new(r));
            }
            None => self.counts.failed += 1,
        }
        let next = self.pending.take();
        self.busy = next.is_some();
        next
    }

    /// Discards the waiting frame, counting it as skipped.
    pub fn drop_pending(&mut self) {
        if self.pending.take().is_some() {
            self.counts.skipped += 1;
        }
    }

    /// The latest result if it is no older than `max_staleness_ns` relative
    /// to `frame`'s capture time (inclusive).
    pub fn current_overlay(&self, frame: &Frame, max_staleness_ns: u64) -> Option<Arc<DetectionResult>> {
        let r = self.last_result.as_ref()?;
        let age = frame.capture_ts_ns().saturating_sub(r.produced_ts_ns);
        (age <= max_staleness_ns).then(|| r.clone())
    }

    fn outstanding(&self) -> u64 {
        self.busy as u64 + self.pending.is_some() as u64
    }
}

/// [`SchedulerState`] behind a lock, with a hand-off slot so a worker thread
/// can pick up frames started by the producer.
#[derive(Debug, Default)]
pub struct SharedScheduler {
    state: Mutex<Inner>,
    wake: Condvar,
}

#[derive(Debug, Default)]
struct Inner {
    sched: SchedulerState,
    start_slot: Option<Arc<Frame>>,
}

impl SharedScheduler {
    pub fn new() -> Self {
        Self::default()
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn offer(&self, frame: Arc<Frame>) -> OfferDecision {
        let mut g = self.lock();
        let decision = g.sched.offer_frame(frame);
        if let OfferDecision::Start(f) = &decision {
            g.start_slot = Some(f.clone());
            self.wake.notify_all();
        }
        decision
    }

    /// Worker side: blocks until a frame is ready to run or `stop` is set.
    pub fn wait_for_start(&self, stop: &AtomicBool) -> Option<Arc<Frame>> {
        let mut g = self.lock();
        loop {
            if let Some(f) = g.start_slot.take() {
                return Some(f);
            }
            if stop.load(Ordering::Relaxed) {
                return None;
            }
            g = self
                .wake
                .wait_timeout(g, Duration::from_millis(20))
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
    }

    /// Worker side: finishes the running inference and returns the next
    /// frame to run immediately, if any.
    pub fn complete(&self, result: Option<DetectionResult>) -> Option<Arc<Frame>> {
        self.lock().sched.complete(result)
    }

    pub fn current_overlay(&self, frame: &Frame, max_staleness_ns: u64) -> Option<Arc<DetectionResult>> {
        self.lock().sched.current_overlay(frame, max_staleness_ns)
    }

    /// Shutdown: drop a waiting frame (counted as skipped) and any frame
    /// started but never picked up by a worker (counted as failed).
    pub fn abandon(&self) {
        let mut g = self.lock();
        g.sched.drop_pending();
        if g.start_slot.take().is_some() {
            g.sched.complete(None);
        }
    }

    pub fn counts(&self) -> SchedulerCounts {
        self.lock().sched.counts()
    }

    pub fn outstanding(&self) -> u64 {
        self.lock().sched.outstanding()
    }
}
