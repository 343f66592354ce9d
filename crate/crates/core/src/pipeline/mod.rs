//! Sources → detection → compositing → encoded parts, one set of threads
//! per stream.
//!
//! ```text
//! source ──► capture queue (drop-oldest) ──► compositor ──► 4 part channels
//!    │                                          ▲
//!    └──► scheduler (latest-wins) ──► detector ─┘ latest result, stale-gated
//! ```
//!
//! Detection is a tap off the source; the compositor only reads the newest
//! finished result, so a slow detector never holds back video. Part
//! channels are bounded broadcasts ([`PART_CHANNEL_CAPACITY`]); consumers
//! are expected to drain them promptly into their own per-client queue of
//! `client_queue_capacity` parts.

mod metrics;
mod queue;

pub use metrics::{
    percentile, rate_of, ClientMetrics, ClientRegistry, ClientStats, ClientTicket, LatencySummary,
    LatencyWindow, PipelineMetrics, RateWindow, StageCounts, Stages, StreamMetrics, StreamRecorder,
};
pub use queue::{DropOldestQueue, PopTimeout};

use std::collections::BTreeMap;
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use bytes::Bytes;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::broadcast;

use crate::clock::mono_now_ns;
use crate::compositor::{draw_overlay, encode_image_with_quality, ImageCodec, OverlayStyle};
use crate::detection::{build_detector, DetectError, Detector, DetectorConfig, DetectorKind};
use crate::detection::SharedScheduler;
use crate::exec::ExecMode;
use crate::model::{DetectionResult, Frame, StreamId};
use crate::scene::{
    FrameSource, IngestListener, SequencePlayer, SourceConfig, SourceError, SourceMode,
    SyntheticSource,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StreamConfig {
    pub stream: StreamId,
    pub source: SourceConfig,
    /// Run detection on this stream and draw its boxes.
    pub detect: bool,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            stream: StreamId::Fpv,
            source: SourceConfig::default(),
            detect: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub streams: Vec<StreamConfig>,
    pub detector: DetectorConfig,
    pub overlay_style: OverlayStyle,
    /// Capacity of every capture queue.
    pub queue_capacity: usize,
    /// Per-client send queue length; a client further behind loses the
    /// oldest parts.
    pub client_queue_capacity: usize,
    pub metrics_window_s: f64,
    pub jpeg_quality: u8,
    pub exec_mode: ExecMode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::synthetic(0)
    }
}

impl PipelineConfig {
    /// FPV with detection and BOTTOM without, both rendering the same
    /// seeded world.
    pub fn synthetic(seed: u64) -> Self {
        let source = SourceConfig {
            seed,
            ..SourceConfig::default()
        };
        Self {
            streams: vec![
                StreamConfig {
                    stream: StreamId::Fpv,
                    source: source.clone(),
                    detect: true,
                },
                StreamConfig {
                    stream: StreamId::Bottom,
                    source,
                    detect: false,
                },
            ],
            detector: DetectorConfig::default(),
            overlay_style: OverlayStyle::default(),
            queue_capacity: 4,
            client_queue_capacity: 4,
            metrics_window_s: 10.0,
            jpeg_quality: crate::compositor::DEFAULT_JPEG_QUALITY,
            exec_mode: ExecMode::default(),
        }
    }

    pub fn stream(&self, id: StreamId) -> Option<&StreamConfig> {
        self.streams.iter().find(|s| s.stream == id)
    }

    pub fn sources_mut(&mut self) -> impl Iterator<Item = &mut SourceConfig> {
        self.streams.iter_mut().map(|s| &mut s.source)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.streams.is_empty() {
            return bad("at least one stream is required".into());
        }
        for (i, s) in self.streams.iter().enumerate() {
            if self.streams[..i].iter().any(|o| o.stream == s.stream) {
                return bad(format!("stream {} configured twice", s.stream));
            }
            if let Err(e) = s.source.validate() {
                return bad(format!("{}: {e}", s.stream));
            }
        }
        if self.queue_capacity < 1 {
            return bad("queue_capacity must be >= 1".into());
        }
        if self.client_queue_capacity < 1 {
            return bad("client_queue_capacity must be >= 1".into());
        }
        if !(self.metrics_window_s.is_finite() && self.metrics_window_s > 0.0) {
            return bad(format!("metrics_window_s must be > 0, got {}", self.metrics_window_s));
        }
        if !(1..=100).contains(&self.jpeg_quality) {
            return bad(format!("jpeg_quality must be in 1..=100, got {}", self.jpeg_quality));
        }
        if self.streams.iter().any(|s| s.detect) {
            self.detector.validate().map_err(PipelineError::Config)?;
        }
        self.overlay_style.validate().map_err(PipelineError::Config)
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{stream} source failed to start: {source}")]
    Source {
        stream: StreamId,
        #[source]
        source: SourceError,
    },
    #[error("detector failed to start: {0}")]
    Detector(#[from] DetectError),
    #[error("cannot listen on {endpoint}: {source}")]
    Listen {
        endpoint: String,
        #[source]
        source: std::io::Error,
    },
}

/// One of the four encodings published per stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Variant {
    pub codec: ImageCodec,
    pub overlay: bool,
}

impl Variant {
    /// Always encoded, whether or not anyone watches.
    pub const DEFAULT: Variant = Variant {
        codec: ImageCodec::Jpeg,
        overlay: true,
    };
    pub const ALL: [Variant; 4] = [
        Variant::DEFAULT,
        Variant {
            codec: ImageCodec::Jpeg,
            overlay: false,
        },
        Variant {
            codec: ImageCodec::Png,
            overlay: true,
        },
        Variant {
            codec: ImageCodec::Png,
            overlay: false,
        },
    ];

    fn index(self) -> usize {
        match (self.codec, self.overlay) {
            (ImageCodec::Jpeg, true) => 0,
            (ImageCodec::Jpeg, false) => 1,
            (ImageCodec::Png, true) => 2,
            (ImageCodec::Png, false) => 3,
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let codec = match self.codec {
            ImageCodec::Jpeg => "jpeg",
            ImageCodec::Png => "png",
        };
        write!(f, "{codec}/overlay={}", if self.overlay { "on" } else { "off" })
    }
}

/// One encoded image ready to be written as a multipart part.
#[derive(Debug, Clone)]
pub struct EncodedPart {
    pub stream: StreamId,
    pub seq: u64,
    pub capture_ts_ns: u64,
    pub variant: Variant,
    pub data: Bytes,
}

impl EncodedPart {
    pub fn content_type(&self) -> &'static str {
        self.variant.codec.content_type()
    }
}

/// The detection result drawn on a composited frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OverlayInfo {
    pub source_seq: u64,
    pub produced_ts_ns: u64,
    pub boxes: usize,
}

/// Audit record for each composited frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompositedInfo {
    pub stream: StreamId,
    pub seq: u64,
    pub capture_ts_ns: u64,
    pub ready_ts_ns: u64,
    pub overlay: Option<OverlayInfo>,
}

const EVENT_CAPACITY: usize = 256;
pub const PART_CHANNEL_CAPACITY: usize = 16;

struct StreamRuntime {
    config: StreamConfig,
    queue: DropOldestQueue<Arc<Frame>>,
    scheduler: Option<SharedScheduler>,
    parts: [broadcast::Sender<Arc<EncodedPart>>; 4],
    recorder: StreamRecorder,
    last_seq: Mutex<Option<u64>>,
    /// Finished results not yet announced, in `source_seq` order.
    unannounced: Mutex<std::collections::VecDeque<Arc<DetectionResult>>>,
    composite_in: AtomicU64,
    composite_out: AtomicU64,
    composite_dropped: AtomicU64,
}

impl StreamRuntime {
    /// Entry point for every captured frame. Frames whose seq does not
    /// increase are discarded before they enter any stage.
    fn capture(&self, frame: Frame) {
        {
            let mut last = self.last_seq.lock().unwrap_or_else(|e| e.into_inner());
            if last.is_some_and(|l| frame.seq() <= l) {
                tracing::warn!(
                    "{}: discarding out-of-order frame {} after {}",
                    self.config.stream,
                    frame.seq(),
                    last.unwrap()
                );
                return;
            }
            *last = Some(frame.seq());
        }
        let frame = Arc::new(frame);
        self.recorder.captured(frame.capture_ts_ns());
        if let Some(s) = &self.scheduler {
            s.offer(frame.clone());
        }
        self.queue.push(frame);
    }

    fn metrics(&self, now_ns: u64) -> StreamMetrics {
        let mut m = StreamMetrics::default();
        self.recorder.fill(now_ns, &mut m);
        m.stages.capture = self.queue.counts();
        if let Some(s) = &self.scheduler {
            let c = s.counts();
            m.stages.detection = StageCounts {
                in_count: c.offered,
                out_count: c.detected,
                dropped_count: c.skipped + c.failed,
            };
            m.detector_skipped = c.skipped;
            m.detector_failed = c.failed;
        }
        // Read `in` last so a concurrent frame can't make out exceed it.
        let out = self.composite_out.load(Ordering::SeqCst);
        let dropped = self.composite_dropped.load(Ordering::SeqCst);
        m.stages.composite = StageCounts {
            in_count: self.composite_in.load(Ordering::SeqCst).max(out + dropped),
            out_count: out,
            dropped_count: dropped,
        };
        m
    }
}

struct Shared {
    config: PipelineConfig,
    streams: Vec<Arc<StreamRuntime>>,
    detections: broadcast::Sender<Arc<DetectionResult>>,
    composited: broadcast::Sender<CompositedInfo>,
    clients: ClientRegistry,
    resync_counters: Vec<Arc<AtomicU64>>,
    ingest_addrs: BTreeMap<StreamId, SocketAddr>,
    start_ns: u64,
    stopped_at_ns: AtomicU64,
    source_stop: Arc<AtomicBool>,
    detect_stop: Arc<AtomicBool>,
    sources_live: AtomicUsize,
    threads: Mutex<Option<Threads>>,
    stop_lock: Mutex<()>,
}

#[derive(Default)]
struct Threads {
    sources: Vec<JoinHandle<()>>,
    compositors: Vec<JoinHandle<()>>,
    detectors: Vec<JoinHandle<()>>,
}

impl Shared {
    fn runtime(&self, id: StreamId) -> Option<&Arc<StreamRuntime>> {
        self.streams.iter().find(|s| s.config.stream == id)
    }
}

/// Cheaply clonable control handle of a running pipeline.
#[derive(Clone)]
pub struct PipelineHandle {
    shared: Arc<Shared>,
}

impl std::fmt::Debug for PipelineHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PipelineHandle")
            .field("streams", &self.streams())
            .field("running", &self.is_running())
            .finish()
    }
}

enum SourceKind {
    Local(Box<dyn FrameSource>),
    Ingest,
}

/// Validates `config`, opens every source and detector, and starts all
/// stage threads.
pub fn run(config: PipelineConfig) -> Result<PipelineHandle, PipelineError> {
    config.validate()?;
    let source_stop = Arc::new(AtomicBool::new(false));
    let detect_stop = Arc::new(AtomicBool::new(false));

    let mut kinds = Vec::new();
    for s in &config.streams {
        let src = &s.source;
        let startup = |e: SourceError| PipelineError::Source {
            stream: s.stream,
            source: e,
        };
        kinds.push(match src.mode {
            SourceMode::Synthetic => SourceKind::Local(Box::new(
                SyntheticSource::new(s.stream, src).map_err(|e| startup(e.into()))?,
            )),
            SourceMode::File => {
                let path = src.path.as_deref().expect("validated");
                let player = SequencePlayer::open(path, src.frame_rate_hz)
                    .map_err(|e| startup(e.into()))?;
                if player.frame_count() > 0 && player.stream_id() != s.stream {
                    return Err(PipelineError::Config(format!(
                        "{path} holds {} frames but is configured as {}",
                        player.stream_id(),
                        s.stream
                    )));
                }
                SourceKind::Local(Box::new(player))
            }
            SourceMode::Network => SourceKind::Ingest,
        });
    }

    // One listener per distinct endpoint; a connection may carry any of the
    // streams routed to it.
    let mut listeners: Vec<(IngestListener, Vec<StreamId>)> = Vec::new();
    let mut endpoints: Vec<String> = Vec::new();
    let mut ingest_addrs = BTreeMap::new();
    for s in config.streams.iter().filter(|s| s.source.mode == SourceMode::Network) {
        let ep = s.source.endpoint.clone().expect("validated");
        match endpoints.iter().position(|e| *e == ep) {
            Some(i) => listeners[i].1.push(s.stream),
            None => {
                let l = IngestListener::bind(ep.as_str()).map_err(|e| PipelineError::Listen {
                    endpoint: ep.clone(),
                    source: e,
                })?;
                endpoints.push(ep);
                listeners.push((l, vec![s.stream]));
            }
        }
    }
    for (l, ids) in &listeners {
        let addr = l.local_addr().map_err(|e| PipelineError::Listen {
            endpoint: format!("{ids:?}"),
            source: e,
        })?;
        for id in ids {
            ingest_addrs.insert(*id, addr);
        }
    }

    let mut detectors: Vec<Option<Box<dyn Detector>>> = Vec::new();
    for s in &config.streams {
        detectors.push(if s.detect {
            if config.detector.kind == DetectorKind::External {
                probe_endpoint(&config.detector)?;
            }
            Some(build_detector(&config.detector, detect_stop.clone())?)
        } else {
            None
        });
    }

    let window_ns = (config.metrics_window_s * 1e9) as u64;
    let streams: Vec<Arc<StreamRuntime>> = config
        .streams
        .iter()
        .map(|s| {
            Arc::new(StreamRuntime {
                config: s.clone(),
                queue: DropOldestQueue::new(config.queue_capacity),
                scheduler: s.detect.then(SharedScheduler::new),
                parts: std::array::from_fn(|_| broadcast::channel(PART_CHANNEL_CAPACITY).0),
                recorder: StreamRecorder::new(window_ns),
                last_seq: Mutex::new(None),
                unannounced: Mutex::new(Default::default()),
                composite_in: AtomicU64::new(0),
                composite_out: AtomicU64::new(0),
                composite_dropped: AtomicU64::new(0),
            })
        })
        .collect();

    let shared = Arc::new(Shared {
        streams,
        detections: broadcast::channel(EVENT_CAPACITY).0,
        composited: broadcast::channel(EVENT_CAPACITY * 4).0,
        clients: ClientRegistry::default(),
        resync_counters: listeners.iter().map(|(l, _)| l.resync_counter()).collect(),
        ingest_addrs,
        start_ns: mono_now_ns(),
        stopped_at_ns: AtomicU64::new(0),
        source_stop,
        detect_stop,
        sources_live: AtomicUsize::new(kinds.iter().filter(|k| matches!(k, SourceKind::Local(_))).count()
            + listeners.len()),
        threads: Mutex::new(None),
        stop_lock: Mutex::new(()),
        config,
    });

    let mut threads = Threads::default();
    let spawn = |name: String, f: Box<dyn FnOnce() + Send>| {
        std::thread::Builder::new()
            .name(name)
            .spawn(f)
            .expect("failed to spawn pipeline thread")
    };
    for ((rt, kind), det) in shared.streams.iter().zip(kinds).zip(detectors) {
        let id = rt.config.stream;
        if let SourceKind::Local(src) = kind {
            let (sh, rt) = (shared.clone(), rt.clone());
            threads.sources.push(spawn(format!("source-{id}"), Box::new(move || source_loop(&sh, &rt, src))));
        }
        {
            let (sh, rt) = (shared.clone(), rt.clone());
            threads.compositors.push(spawn(format!("composite-{id}"), Box::new(move || composite_loop(&sh, &rt))));
        }
        if let Some(det) = det {
            let (sh, rt) = (shared.clone(), rt.clone());
            threads.detectors.push(spawn(format!("detect-{id}"), Box::new(move || detection_loop(&sh, &rt, det))));
        }
    }
    for (listener, ids) in listeners {
        let sh = shared.clone();
        threads.sources.push(spawn("ingest".into(), Box::new(move || ingest_loop(&sh, listener, &ids))));
    }
    *shared.threads.lock().unwrap_or_else(|e| e.into_inner()) = Some(threads);
    tracing::info!("pipeline started with {} stream(s)", shared.streams.len());
    Ok(PipelineHandle { shared })
}

/// Fails fast when the external detector is not listening.
fn probe_endpoint(cfg: &DetectorConfig) -> Result<(), DetectError> {
    let ep = cfg.endpoint.as_deref().unwrap_or_default();
    let timeout = Duration::from_millis(cfg.timeout_ms.max(1));
    let addrs: Vec<SocketAddr> = ep.to_socket_addrs().map_err(DetectError::Unreachable)?.collect();
    let mut last = None;
    for a in addrs {
        match TcpStream::connect_timeout(&a, timeout) {
            Ok(_) => return Ok(()),
            Err(e) => last = Some(e),
        }
    }
    Err(DetectError::Unreachable(last.unwrap_or_else(|| {
        std::io::Error::new(std::io::ErrorKind::NotFound, format!("cannot resolve {ep}"))
    })))
}

fn source_loop(shared: &Shared, rt: &StreamRuntime, mut source: Box<dyn FrameSource>) {
    let stop = &shared.source_stop;
    loop {
        match source.next_frame(stop) {
            Ok(Some(frame)) => rt.capture(frame),
            Ok(None) => break,
            Err(e) => {
                tracing::error!("{} source failed: {e}", rt.config.stream);
                break;
            }
        }
    }
    rt.queue.close();
    shared.sources_live.fetch_sub(1, Ordering::SeqCst);
    tracing::debug!("{} source finished", rt.config.stream);
}

/// Serves the first sender that connects. Frames are stamped with their
/// arrival time, so latency figures cover the ground station only.
fn ingest_loop(shared: &Shared, listener: IngestListener, ids: &[StreamId]) {
    let stop = &shared.source_stop;
    let routes: Vec<&Arc<StreamRuntime>> = ids.iter().filter_map(|id| shared.runtime(*id)).collect();
    match listener.accept_until(stop) {
        Ok(Some(mut conn)) => {
            while let Some(frame) = conn.next_frame_until(stop) {
                match routes.iter().find(|rt| rt.config.stream == frame.stream_id()) {
                    Some(rt) => rt.capture(frame.restamped(mono_now_ns())),
                    None => tracing::warn!("ingest: no route for {} frame", frame.stream_id()),
                }
            }
        }
        Ok(None) => {}
        Err(e) => tracing::error!("ingest accept failed: {e}"),
    }
    for rt in routes {
        rt.queue.close();
    }
    shared.sources_live.fetch_sub(1, Ordering::SeqCst);
}

fn detection_loop(shared: &Shared, rt: &StreamRuntime, mut detector: Box<dyn Detector>) {
    let sched = rt.scheduler.as_ref().expect("detecting stream has a scheduler");
    let stop = &shared.detect_stop;
    let mut failures = 0u64;
    while let Some(mut frame) = sched.wait_for_start(stop) {
        loop {
            let outcome = match detector.detect(&frame) {
                Ok(r) => {
                    rt.recorder.detected(mono_now_ns());
                    let mut q = rt.unannounced.lock().unwrap_or_else(|e| e.into_inner());
                    if q.len() >= EVENT_CAPACITY {
                        q.pop_front();
                    }
                    q.push_back(Arc::new(r.clone()));
                    Some(r)
                }
                Err(e) => {
                    failures += 1;
                    if failures.is_power_of_two() {
                        tracing::warn!("{} detection failed ({failures} so far): {e}", rt.config.stream);
                    }
                    None
                }
            };
            if stop.load(Ordering::SeqCst) {
                sched.abandon();
            }
            match sched.complete(outcome) {
                Some(next) => frame = next,
                None => break,
            }
        }
    }
}

fn composite_loop(shared: &Shared, rt: &StreamRuntime) {
    let cfg = &shared.config;
    let max_stale = cfg.detector.max_staleness_ns();
    while let Some(frame) = rt.queue.pop() {
        rt.composite_in.fetch_add(1, Ordering::SeqCst);
        let result = rt
            .scheduler
            .as_ref()
            .and_then(|s| s.current_overlay(&frame, max_stale))
            .filter(|r| !r.detections.is_empty());
        let drawn = result
            .as_deref()
            .map(|r| draw_overlay(&frame, Some(r), &cfg.overlay_style));
        let wanted: Vec<Variant> = Variant::ALL
            .into_iter()
            .filter(|v| *v == Variant::DEFAULT || rt.parts[v.index()].receiver_count() > 0)
            .collect();
        // Without boxes, overlay on/off encode identical images.
        let mut jobs: Vec<(ImageCodec, bool)> = Vec::new();
        let job_of: Vec<usize> = wanted
            .iter()
            .map(|v| {
                let job = (v.codec, v.overlay && drawn.is_some());
                jobs.iter().position(|j| *j == job).unwrap_or_else(|| {
                    jobs.push(job);
                    jobs.len() - 1
                })
            })
            .collect();
        let encoded: Result<Vec<Bytes>, _> = cfg
            .exec_mode
            .map(&jobs, |&(codec, with_boxes)| {
                let img = if with_boxes { drawn.as_ref().expect("drawn") } else { &*frame };
                encode_image_with_quality(img, codec, cfg.jpeg_quality).map(Bytes::from)
            })
            .into_iter()
            .collect();
        let encoded = match encoded {
            Ok(e) => e,
            Err(e) => {
                tracing::warn!("{} frame {} dropped: {e}", rt.config.stream, frame.seq());
                rt.composite_dropped.fetch_add(1, Ordering::SeqCst);
                continue;
            }
        };
        let ready = mono_now_ns();
        let age = result
            .as_ref()
            .map(|r| frame.capture_ts_ns().saturating_sub(r.produced_ts_ns));
        if let Some(age) = age {
            debug_assert!(age <= max_stale, "overlay older than the staleness bound");
            rt.recorder.overlay_drawn(age);
        }
        rt.recorder
            .composited(ready, ready.saturating_sub(frame.capture_ts_ns()));
        for (v, j) in wanted.iter().zip(job_of) {
            let _ = rt.parts[v.index()].send(Arc::new(EncodedPart {
                stream: rt.config.stream,
                seq: frame.seq(),
                capture_ts_ns: frame.capture_ts_ns(),
                variant: *v,
                data: encoded[j].clone(),
            }));
        }
        rt.composite_out.fetch_add(1, Ordering::SeqCst);
        let _ = shared.composited.send(CompositedInfo {
            stream: rt.config.stream,
            seq: frame.seq(),
            capture_ts_ns: frame.capture_ts_ns(),
            ready_ts_ns: ready,
            overlay: result.map(|r| OverlayInfo {
                source_seq: r.source_seq,
                produced_ts_ns: r.produced_ts_ns,
                boxes: r.detections.len(),
            }),
        });
        // Announce results only once the video has caught up to within one
        // frame of them.
        let mut q = rt.unannounced.lock().unwrap_or_else(|e| e.into_inner());
        while q.front().is_some_and(|r| r.source_seq <= frame.seq() + 1) {
            let _ = shared.detections.send(q.pop_front().expect("non-empty"));
        }
    }
}

impl PipelineHandle {
    pub fn config(&self) -> &PipelineConfig {
        &self.shared.config
    }

    pub fn streams(&self) -> Vec<StreamId> {
        self.shared.streams.iter().map(|s| s.config.stream).collect()
    }

    pub fn has_stream(&self, id: StreamId) -> bool {
        self.shared.runtime(id).is_some()
    }

    /// Receives every part of `variant` published from now on; `None` for
    /// an unconfigured stream.
    pub fn subscribe(&self, stream: StreamId, variant: Variant) -> Option<broadcast::Receiver<Arc<EncodedPart>>> {
        self.shared
            .runtime(stream)
            .map(|rt| rt.parts[variant.index()].subscribe())
    }

    /// Delivery counters for one streaming client, reported in metrics.
    pub fn register_client(&self, stream: StreamId, variant: Variant) -> ClientTicket {
        self.shared.clients.register(stream, variant.to_string())
    }

    /// Detection results, each announced once the stream has published a
    /// frame with `seq >= source_seq - 1`.
    pub fn subscribe_detections(&self) -> broadcast::Receiver<Arc<DetectionResult>> {
        self.shared.detections.subscribe()
    }

    pub fn subscribe_composited(&self) -> broadcast::Receiver<CompositedInfo> {
        self.shared.composited.subscribe()
    }

    /// Bound address of the ingest listener serving `stream`.
    pub fn ingest_addr(&self, stream: StreamId) -> Option<SocketAddr> {
        self.shared.ingest_addrs.get(&stream).copied()
    }

    pub fn is_running(&self) -> bool {
        self.shared.stopped_at_ns.load(Ordering::SeqCst) == 0
    }

    /// Waits until every source is exhausted; false on timeout.
    pub fn wait_sources_done(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        while self.shared.sources_live.load(Ordering::SeqCst) > 0 {
            if Instant::now() >= deadline {
                return false;
            }
            std::thread::sleep(Duration::from_millis(5));
        }
        true
    }

    pub fn metrics_snapshot(&self) -> PipelineMetrics {
        let sh = &self.shared;
        let stopped = sh.stopped_at_ns.load(Ordering::SeqCst);
        let now = if stopped == 0 { mono_now_ns() } else { stopped };
        let clients = sh.clients.snapshot();
        let streams = sh
            .streams
            .iter()
            .map(|rt| {
                let mut m = rt.metrics(now);
                m.client_dropped = clients
                    .iter()
                    .filter(|c| c.stream == rt.config.stream)
                    .map(|c| c.dropped)
                    .sum();
                (rt.config.stream, m)
            })
            .collect();
        PipelineMetrics {
            uptime_s: now.saturating_sub(sh.start_ns) as f64 / 1e9,
            window_s: sh.config.metrics_window_s,
            running: stopped == 0,
            streams,
            clients,
            ingest_resyncs: sh.resync_counters.iter().map(|c| c.load(Ordering::Relaxed)).sum(),
        }
    }

    /// Stops sources, drains the capture queues through the compositor,
    /// cancels detection, and joins every thread. Idempotent; concurrent
    /// callers all return after shutdown completed.
    pub fn stop(&self) {
        let sh = &self.shared;
        let _serial = sh.stop_lock.lock().unwrap_or_else(|e| e.into_inner());
        let Some(threads) = sh.threads.lock().unwrap_or_else(|e| e.into_inner()).take() else {
            return;
        };
        let t0 = Instant::now();
        sh.source_stop.store(true, Ordering::SeqCst);
        for h in threads.sources {
            let _ = h.join();
        }
        for h in threads.compositors {
            let _ = h.join();
        }
        sh.detect_stop.store(true, Ordering::SeqCst);
        for h in threads.detectors {
            let _ = h.join();
        }
        for rt in &sh.streams {
            if let Some(s) = &rt.scheduler {
                s.abandon();
            }
        }
        sh.stopped_at_ns.store(mono_now_ns().max(1), Ordering::SeqCst);
        tracing::info!("pipeline stopped in {:?}", t0.elapsed());
    }
}
