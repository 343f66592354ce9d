//! HTTP front of the ground station.
//!
//! | route | response |
//! |---|---|
//! | `GET /streams` | JSON array of configured stream ids, e.g. `["FPV","BOTTOM"]` |
//! | `GET /stream/{id}?codec=jpeg\|png&overlay=on\|off` | `multipart/x-mixed-replace; boundary=frame`, see [`multipart`] |
//! | `GET /meta` | NDJSON [`MetaMessage`] lines; the same messages as text frames after a WebSocket upgrade |
//! | `GET /layout`, `PUT /layout` | [`PaneLayout`] JSON; invalid documents get 400 `{"error": ...}` |
//! | `GET /metrics` | [`PipelineMetrics`](aerolink_core::pipeline::PipelineMetrics) JSON |
//! | `GET /` | the operator console |
//!
//! Unknown stream ids are 404; unparseable `codec`/`overlay` values are 400.

pub mod layout;
pub mod meta;
pub mod multipart;

pub use layout::{layout_load, layout_store, LayoutError, Pane, PaneLayout};
pub use meta::{MetaMessage, MetaPayload};

use std::collections::{HashMap, VecDeque};
use std::net::SocketAddr;
use std::path::{Component, Path as FsPath, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use aerolink_core::clock::mono_now_ns;
use aerolink_core::compositor::ImageCodec;
use aerolink_core::pipeline::{ClientTicket, EncodedPart, PipelineHandle, Variant};
use aerolink_core::{DetectionResult, StreamId};
use axum::body::{Body, Bytes};
use axum::extract::ws::rejection::WebSocketUpgradeRejection;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode, Uri};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use futures::Stream;
use thiserror::Error;
use tokio::sync::{broadcast, watch, Mutex, Notify};

const EMBEDDED_CONSOLE: &str = include_str!("console.html");

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub bind: SocketAddr,
    /// Where `PUT /layout` persists; `None` keeps the layout in memory.
    pub layout_path: Option<PathBuf>,
    /// Built console assets to serve instead of the embedded page.
    pub console_dir: Option<PathBuf>,
    /// `SO_SNDBUF` for accepted connections. Small values make slow
    /// clients hit their drop-oldest queue sooner instead of buffering in
    /// the kernel.
    pub send_buffer_bytes: Option<usize>,
    pub metrics_interval: Duration,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([0, 0, 0, 0], 8080)),
            layout_path: None,
            console_dir: None,
            send_buffer_bytes: Some(256 * 1024),
            metrics_interval: Duration::from_secs(1),
        }
    }
}

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Layout(#[from] LayoutError),
}

struct LayoutState {
    path: Option<PathBuf>,
    current: Mutex<PaneLayout>,
    /// Why the stored layout was not used at startup, until the next PUT.
    fallback: std::sync::Mutex<Option<String>>,
}

#[derive(Clone)]
struct AppState {
    pipeline: PipelineHandle,
    layout: Arc<LayoutState>,
    shutdown: watch::Receiver<bool>,
    console_dir: Option<PathBuf>,
    metrics_interval: Duration,
}

pub struct ServerHandle {
    local_addr: SocketAddr,
    shutdown: watch::Sender<bool>,
    task: tokio::task::JoinHandle<std::io::Result<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// Ends every open stream, stops accepting, and waits for the server
    /// task.
    pub async fn shutdown(self) -> std::io::Result<()> {
        let _ = self.shutdown.send(true);
        match self.task.await {
            Ok(r) => r,
            Err(e) => Err(std::io::Error::other(e)),
        }
    }
}

/// Binds `config.bind` and serves `pipeline` on the current tokio runtime.
pub async fn serve(config: ServerConfig, pipeline: PipelineHandle) -> Result<ServerHandle, ServerError> {
    let (initial, fallback) = match &config.layout_path {
        None => (PaneLayout::default(), None),
        Some(p) => match layout_load(p) {
            Ok(l) => (l, None),
            Err(e) => {
                tracing::warn!("using the default layout: {e}");
                (PaneLayout::default(), Some(e.to_string()))
            }
        },
    };
    let (tx, rx) = watch::channel(false);
    let state = AppState {
        pipeline,
        layout: Arc::new(LayoutState {
            path: config.layout_path.clone(),
            current: Mutex::new(initial),
            fallback: std::sync::Mutex::new(fallback),
        }),
        shutdown: rx.clone(),
        console_dir: config.console_dir.clone(),
        metrics_interval: config.metrics_interval,
    };
    let listener = tokio::net::TcpListener::bind(config.bind)
        .await
        .map_err(|e| ServerError::Bind {
            addr: config.bind,
            source: e,
        })?;
    let local_addr = listener.local_addr().map_err(|e| ServerError::Bind {
        addr: config.bind,
        source: e,
    })?;
    let sndbuf = config.send_buffer_bytes;
    use axum::serve::ListenerExt;
    let listener = listener.tap_io(move |tcp| {
        let _ = tcp.set_nodelay(true);
        if let Some(n) = sndbuf {
            if let Err(e) = socket2::SockRef::from(&*tcp).set_send_buffer_size(n) {
                tracing::debug!("SO_SNDBUF not applied: {e}");
            }
        }
    });
    let app = router(state);
    let mut stop = rx;
    let task = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async move {
                let _ = stop.wait_for(|v| *v).await;
            })
            .await
    });
    tracing::info!("serving on http://{local_addr}");
    Ok(ServerHandle {
        local_addr,
        shutdown: tx,
        task,
    })
}

fn router(state: AppState) -> Router {
    Router::new()
        .route("/", get(index))
        .route("/streams", get(streams))
        .route("/stream/{id}", get(stream))
        .route("/meta", get(meta))
        .route("/layout", get(get_layout).put(put_layout))
        .route("/metrics", get(metrics))
        .fallback(static_asset)
        .with_state(state)
}

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(serde_json::json!({ "error": msg.into() }))).into_response()
}

async fn streams(State(st): State<AppState>) -> Json<Vec<StreamId>> {
    Json(st.pipeline.streams())
}

async fn metrics(State(st): State<AppState>) -> Response {
    Json(st.pipeline.metrics_snapshot()).into_response()
}

fn parse_overlay(v: &str) -> Option<bool> {
    match v.to_ascii_lowercase().as_str() {
        "on" | "true" | "1" => Some(true),
        "off" | "false" | "0" => Some(false),
        _ => None,
    }
}

async fn stream(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> Response {
    let Some(id) = id.parse::<StreamId>().ok().filter(|s| st.pipeline.has_stream(*s)) else {
        return error(StatusCode::NOT_FOUND, format!("no stream {id:?}"));
    };
    let codec = match q.get("codec").map(|c| c.parse::<ImageCodec>()) {
        None => ImageCodec::Jpeg,
        Some(Ok(c)) => c,
        Some(Err(e)) => return error(StatusCode::BAD_REQUEST, e),
    };
    let overlay = match q.get("overlay").map(|v| parse_overlay(v)) {
        None => true,
        Some(Some(v)) => v,
        Some(None) => return error(StatusCode::BAD_REQUEST, "overlay must be on or off"),
    };
    let variant = Variant { codec, overlay };
    let rx = st.pipeline.subscribe(id, variant).expect("stream exists");
    let ticket = st.pipeline.register_client(id, variant);
    Response::builder()
        .header(header::CONTENT_TYPE, multipart::content_type())
        .header(header::CACHE_CONTROL, "no-cache, no-store")
        .body(Body::from_stream(part_stream(
            rx,
            ticket,
            st.pipeline.config().client_queue_capacity,
            st.shutdown.clone(),
        )))
        .expect("valid response")
}

/// Per-client send queue: bounded, drop-oldest, drops counted the moment
/// they happen even while the connection is stalled.
struct ClientQueue {
    parts: std::sync::Mutex<VecDeque<Arc<EncodedPart>>>,
    capacity: usize,
    ready: Notify,
    closed: AtomicBool,
    ticket: ClientTicket,
}

impl ClientQueue {
    fn push(&self, part: Arc<EncodedPart>) {
        let mut q = self.parts.lock().unwrap_or_else(|e| e.into_inner());
        if q.len() >= self.capacity {
            q.pop_front();
            self.ticket.dropped(1);
        }
        q.push_back(part);
        drop(q);
        self.ready.notify_one();
    }

    fn pop(&self) -> Option<Arc<EncodedPart>> {
        self.parts.lock().unwrap_or_else(|e| e.into_inner()).pop_front()
    }

    fn close(&self) {
        self.closed.store(true, Ordering::SeqCst);
        self.ready.notify_one();
    }
}

/// Aborts the forwarding task when the response body goes away.
struct Forwarder(tokio::task::JoinHandle<()>);

impl Drop for Forwarder {
    fn drop(&mut self) {
        self.0.abort();
    }
}

fn part_stream(
    mut rx: broadcast::Receiver<Arc<EncodedPart>>,
    ticket: ClientTicket,
    capacity: usize,
    mut shutdown: watch::Receiver<bool>,
) -> impl Stream<Item = Result<Bytes, std::convert::Infallible>> {
    let queue = Arc::new(ClientQueue {
        parts: std::sync::Mutex::new(VecDeque::with_capacity(capacity)),
        capacity,
        ready: Notify::new(),
        closed: AtomicBool::new(false),
        ticket,
    });
    let forward = {
        let queue = queue.clone();
        tokio::spawn(async move {
            loop {
                if *shutdown.borrow() {
                    break;
                }
                tokio::select! {
                    r = rx.recv() => match r {
                        Ok(part) => queue.push(part),
                        Err(broadcast::error::RecvError::Lagged(n)) => queue.ticket.dropped(n),
                        Err(broadcast::error::RecvError::Closed) => break,
                    },
                    _ = shutdown.changed() => break,
                }
            }
            queue.close();
        })
    };
    let init = (queue, Forwarder(forward), None::<u64>);
    futures::stream::unfold(init, |(queue, fwd, mut last_seq)| async move {
        loop {
            if let Some(part) = queue.pop() {
                if last_seq.is_some_and(|l| part.seq <= l) {
                    continue;
                }
                last_seq = Some(part.seq);
                queue.ticket.sent(1);
                return Some((Ok(multipart::encode_part(&part)), (queue, fwd, last_seq)));
            }
            if queue.closed.load(Ordering::SeqCst) {
                return None;
            }
            queue.ready.notified().await;
        }
    })
}

struct MetaState {
    pipeline: PipelineHandle,
    detections: broadcast::Receiver<Arc<DetectionResult>>,
    detections_open: bool,
    tick: tokio::time::Interval,
    shutdown: watch::Receiver<bool>,
    last_ts: u64,
}

impl MetaState {
    fn new(st: &AppState) -> Self {
        let mut tick = tokio::time::interval(st.metrics_interval);
        tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        Self {
            pipeline: st.pipeline.clone(),
            detections: st.pipeline.subscribe_detections(),
            detections_open: true,
            tick,
            shutdown: st.shutdown.clone(),
            last_ts: 0,
        }
    }

    /// Next message; `None` on shutdown. The first one is always METRICS.
    async fn next(&mut self) -> Option<MetaMessage> {
        loop {
            if *self.shutdown.borrow() {
                return None;
            }
            let body = tokio::select! {
                biased;
                _ = self.shutdown.changed() => return None,
                _ = self.tick.tick() => MetaPayload::Metrics(self.pipeline.metrics_snapshot()),
                r = self.detections.recv(), if self.detections_open => match r {
                    Ok(d) => MetaPayload::Detections((*d).clone()),
                    Err(broadcast::error::RecvError::Lagged(n)) => {
                        tracing::debug!("meta client skipped {n} detection messages");
                        continue;
                    }
                    Err(broadcast::error::RecvError::Closed) => {
                        self.detections_open = false;
                        continue;
                    }
                },
            };
            self.last_ts = mono_now_ns().max(self.last_ts);
            return Some(MetaMessage {
                ts_ns: self.last_ts,
                body,
            });
        }
    }
}

async fn meta(
    State(st): State<AppState>,
    ws: Result<WebSocketUpgrade, WebSocketUpgradeRejection>,
) -> Response {
    let state = MetaState::new(&st);
    if let Ok(ws) = ws {
        return ws.on_upgrade(move |socket| meta_socket(socket, state));
    }
    let lines = futures::stream::unfold(state, |mut s| async move {
        let m = s.next().await?;
        Some((Ok::<_, std::convert::Infallible>(Bytes::from(m.to_line())), s))
    });
    Response::builder()
        .header(header::CONTENT_TYPE, "application/x-ndjson")
        .header(header::CACHE_CONTROL, "no-cache")
        .body(Body::from_stream(lines))
        .expect("valid response")
}

async fn meta_socket(mut socket: WebSocket, mut state: MetaState) {
    while let Some(m) = state.next().await {
        let text = serde_json::to_string(&m).expect("meta message serializes");
        if socket.send(Message::Text(text.into())).await.is_err() {
            return;
        }
    }
    let _ = socket.send(Message::Close(None)).await;
}

async fn get_layout(State(st): State<AppState>) -> Response {
    let layout = st.layout.current.lock().await.clone();
    let mut resp = Json(layout).into_response();
    let fallback = st.layout.fallback.lock().unwrap_or_else(|e| e.into_inner()).clone();
    if let Some(reason) = fallback {
        if let Ok(v) = HeaderValue::from_str(&reason.replace(['\r', '\n'], " ")) {
            resp.headers_mut().insert("x-layout-fallback", v);
        }
    }
    resp
}

async fn put_layout(State(st): State<AppState>, body: Bytes) -> Response {
    let layout = match PaneLayout::from_json(&body) {
        Ok(l) => l,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string()),
    };
    // The lock serializes writers, and a reader never sees a layout that
    // failed to persist.
    let mut current = st.layout.current.lock().await;
    if let Some(path) = &st.layout.path {
        if let Err(e) = layout_store(&layout, path) {
            tracing::error!("cannot persist layout: {e}");
            return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string());
        }
    }
    *current = layout.clone();
    *st.layout.fallback.lock().unwrap_or_else(|e| e.into_inner()) = None;
    Json(layout).into_response()
}

async fn index(State(st): State<AppState>) -> Response {
    if let Some(dir) = &st.console_dir {
        if let Ok(bytes) = tokio::fs::read(dir.join("index.html")).await {
            return ([(header::CONTENT_TYPE, "text/html; charset=utf-8")], bytes).into_response();
        }
    }
    Html(EMBEDDED_CONSOLE).into_response()
}

async fn static_asset(State(st): State<AppState>, uri: Uri) -> Response {
    let not_found = || error(StatusCode::NOT_FOUND, format!("no route for {}", uri.path()));
    let Some(dir) = &st.console_dir else {
        return not_found();
    };
    let rel = FsPath::new(uri.path().trim_start_matches('/'));
    if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return not_found();
    }
    match tokio::fs::read(dir.join(rel)).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, mime_for(rel))], bytes).into_response(),
        Err(_) => not_found(),
    }
}

fn mime_for(p: &FsPath) -> &'static str {
    match p.extension().and_then(|e| e.to_str()).unwrap_or_default() {
        "html" => "text/html; charset=utf-8",
        "js" | "mjs" => "text/javascript",
        "css" => "text/css",
        "json" | "map" => "application/json",
        "svg" => "image/svg+xml",
        "png" => "image/png",
        "ico" => "image/x-icon",
        "woff2" => "font/woff2",
        _ => "application/octet-stream",
    }
}
