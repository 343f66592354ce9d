//! Sliding-window rates and latency percentiles, plus the snapshot types
//! served as JSON.
//!
//! A window rate over events at times `t_1 <= ... <= t_n` (all within the
//! last `window` of the reference time) is `(n - 1) / (t_n - t_1)`, and 0
//! with fewer than two events. Percentiles use the nearest-rank method.

use std::collections::{BTreeMap, VecDeque};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::model::StreamId;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    #[serde(rename = "in")]
    pub in_count: u64,
    #[serde(rename = "out")]
    pub out_count: u64,
    #[serde(rename = "dropped")]
    pub dropped_count: u64,
}

impl StageCounts {
    pub fn is_conserved(&self) -> bool {
        self.in_count == self.out_count + self.dropped_count
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stages {
    pub capture: StageCounts,
    pub detection: StageCounts,
    pub composite: StageCounts,
}

impl Stages {
    pub fn all(&self) -> [(&'static str, StageCounts); 3] {
        [
            ("capture", self.capture),
            ("detection", self.detection),
            ("composite", self.composite),
        ]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub p50: f64,
    pub p95: f64,
    pub max: f64,
    pub samples: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StreamMetrics {
    pub capture_fps: f64,
    pub composite_fps: f64,
    pub detection_fps: f64,
    pub e2e_latency_ms: LatencySummary,
    pub stages: Stages,
    pub detector_skipped: u64,
    pub detector_failed: u64,
    /// Composited frames that carried at least one box.
    pub frames_with_overlay: u64,
    /// Largest `capture_ts - produced_ts` of any overlay drawn so far.
    pub max_overlay_age_ms: f64,
    /// Parts dropped for slow clients of this stream, all variants.
    pub client_dropped: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientMetrics {
    pub id: u64,
    pub stream: StreamId,
    pub variant: String,
    pub sent: u64,
    pub dropped: u64,
    pub connected: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineMetrics {
    pub uptime_s: f64,
    pub window_s: f64,
    pub running: bool,
    pub streams: BTreeMap<StreamId, StreamMetrics>,
    pub clients: Vec<ClientMetrics>,
    pub ingest_resyncs: u64,
}

/// Event timestamps within a trailing window.
#[derive(Debug, Clone)]
pub struct RateWindow {
    window_ns: u64,
    events: VecDeque<u64>,
}

impl RateWindow {
    pub fn new(window_ns: u64) -> Self {
        Self {
            window_ns,
            events: VecDeque::new(),
        }
    }

    pub fn record(&mut self, ts_ns: u64) {
        self.events.push_back(ts_ns);
        self.prune(ts_ns);
    }

    fn prune(&mut self, now_ns: u64) {
        let floor = now_ns.saturating_sub(self.window_ns);
        while self.events.front().is_some_and(|&t| t < floor) {
            self.events.pop_front();
        }
    }

    pub fn rate(&mut self, now_ns: u64) -> f64 {
        self.prune(now_ns);
        rate_of(self.events.iter().copied())
    }
}

/// `(n - 1) / (last - first)` in events per second.
pub fn rate_of(ts: impl IntoIterator<Item = u64>) -> f64 {
    let mut it = ts.into_iter();
    let Some(first) = it.next() else { return 0.0 };
    let (n, last) = it.fold((1u64, first), |(n, _), t| (n + 1, t));
    if n < 2 || last <= first {
        return 0.0;
    }
    (n - 1) as f64 * 1e9 / (last - first) as f64
}

/// Nearest-rank percentile of unsorted samples; 0 when empty.
pub fn percentile(samples: &[u64], p: f64) -> u64 {
    if samples.is_empty() {
        return 0;
    }
    let mut v = samples.to_vec();
    v.sort_unstable();
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1]
}

/// `(event time, latency)` pairs within a trailing window.
#[derive(Debug, Clone)]
pub struct LatencyWindow {
    window_ns: u64,
    samples: VecDeque<(u64, u64)>,
}

impl LatencyWindow {
    pub fn new(window_ns: u64) -> Self {
        Self {
            window_ns,
            samples: VecDeque::new(),
        }
    }

    pub fn record(&mut self, ts_ns: u64, latency_ns: u64) {
        self.samples.push_back((ts_ns, latency_ns));
        let floor = ts_ns.saturating_sub(self.window_ns);
        while self.samples.front().is_some_and(|&(t, _)| t < floor) {
            self.samples.pop_front();
        }
    }

    pub fn summary(&mut self, now_ns: u64) -> LatencySummary {
        let floor = now_ns.saturating_sub(self.window_ns);
        while self.samples.front().is_some_and(|&(t, _)| t < floor) {
            self.samples.pop_front();
        }
        let v: Vec<u64> = self.samples.iter().map(|&(_, l)| l).collect();
        let ms = |ns: u64| ns as f64 / 1e6;
        LatencySummary {
            p50: ms(percentile(&v, 50.0)),
            p95: ms(percentile(&v, 95.0)),
            max: ms(v.iter().copied().max().unwrap_or(0)),
            samples: v.len() as u64,
        }
    }
}

/// Windowed measurements for one stream, written by stage threads and read
/// by snapshots.
#[derive(Debug)]
pub struct StreamRecorder {
    inner: Mutex<Windows>,
    pub frames_with_overlay: AtomicU64,
    max_overlay_age_ns: AtomicU64,
}

#[derive(Debug)]
struct Windows {
    capture: RateWindow,
    composite: RateWindow,
    detection: RateWindow,
    latency: LatencyWindow,
}

impl StreamRecorder {
    pub fn new(window_ns: u64) -> Self {
        Self {
            inner: Mutex::new(Windows {
                capture: RateWindow::new(window_ns),
                composite: RateWindow::new(window_ns),
                detection: RateWindow::new(window_ns),
                latency: LatencyWindow::new(window_ns),
            }),
            frames_with_overlay: AtomicU64::new(0),
            max_overlay_age_ns: AtomicU64::new(0),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Windows> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn captured(&self, ts_ns: u64) {
        self.lock().capture.record(ts_ns);
    }

    pub fn detected(&self, ts_ns: u64) {
        self.lock().detection.record(ts_ns);
    }

    pub fn composited(&self, ts_ns: u64, e2e_ns: u64) {
        let mut g = self.lock();
        g.composite.record(ts_ns);
        g.latency.record(ts_ns, e2e_ns);
    }

    pub fn overlay_drawn(&self, age_ns: u64) {
        self.frames_with_overlay.fetch_add(1, Ordering::Relaxed);
        self.max_overlay_age_ns.fetch_max(age_ns, Ordering::Relaxed);
    }

    /// Fills the windowed fields of `m` as seen at `now_ns`.
    pub fn fill(&self, now_ns: u64, m: &mut StreamMetrics) {
        let mut g = self.lock();
        m.capture_fps = g.capture.rate(now_ns);
        m.composite_fps = g.composite.rate(now_ns);
        m.detection_fps = g.detection.rate(now_ns);
        m.e2e_latency_ms = g.latency.summary(now_ns);
        m.frames_with_overlay = self.frames_with_overlay.load(Ordering::Relaxed);
        m.max_overlay_age_ms = self.max_overlay_age_ns.load(Ordering::Relaxed) as f64 / 1e6;
    }
}

/// Per-connection delivery counters for one streaming client.
#[derive(Debug)]
pub struct ClientStats {
    pub id: u64,
    pub stream: StreamId,
    pub variant: String,
    sent: AtomicU64,
    dropped: AtomicU64,
    connected: AtomicBool,
}

impl ClientStats {
    pub fn sent(&self, n: u64) {
        self.sent.fetch_add(n, Ordering::Relaxed);
    }

    pub fn dropped(&self, n: u64) {
        self.dropped.fetch_add(n, Ordering::Relaxed);
    }

    fn snapshot(&self) -> ClientMetrics {
        ClientMetrics {
            id: self.id,
            stream: self.stream,
            variant: self.variant.clone(),
            sent: self.sent.load(Ordering::Relaxed),
            dropped: self.dropped.load(Ordering::Relaxed),
            connected: self.connected.load(Ordering::Relaxed),
        }
    }
}

/// Registration handle; marks the client disconnected when dropped.
#[derive(Debug)]
pub struct ClientTicket(Arc<ClientStats>);

impl std::ops::Deref for ClientTicket {
    type Target = ClientStats;
    fn deref(&self) -> &ClientStats {
        &self.0
    }
}

impl Drop for ClientTicket {
    fn drop(&mut self) {
        self.0.connected.store(false, Ordering::Relaxed);
    }
}

#[derive(Debug, Default)]
pub struct ClientRegistry {
    next_id: AtomicU64,
    clients: Mutex<Vec<Arc<ClientStats>>>,
}

impl ClientRegistry {
    pub fn register(&self, stream: StreamId, variant: impl Into<String>) -> ClientTicket {
        let stats = Arc::new(ClientStats {
            id: self.next_id.fetch_add(1, Ordering::Relaxed),
            stream,
            variant: variant.into(),
            sent: AtomicU64::new(0),
            dropped: AtomicU64::new(0),
            connected: AtomicBool::new(true),
        });
        self.clients
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(stats.clone());
        ClientTicket(stats)
    }

    pub fn snapshot(&self) -> Vec<ClientMetrics> {
        self.clients
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .iter()
            .map(|c| c.snapshot())
            .collect()
    }
}
