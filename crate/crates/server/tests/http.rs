//! End-to-end HTTP contract tests against a live pipeline on loopback.

use std::io::{Read, Write};
use std::time::{Duration, Instant};

use aerolink_core::compositor::decode_rgb;
use aerolink_core::pipeline::{run, PipelineConfig, PipelineHandle};
use aerolink_core::StreamId;
use aerolink_server::multipart::PartReader;
use aerolink_server::{serve, PaneLayout, ServerConfig, ServerHandle};
use futures::StreamExt;

struct Station {
    pipeline: PipelineHandle,
    server: ServerHandle,
    base: String,
}

impl Station {
    async fn start(config: PipelineConfig, server: ServerConfig) -> Self {
        let pipeline = run(config).unwrap();
        let server = serve(server, pipeline.clone()).await.unwrap();
        let base = format!("http://{}", server.local_addr());
        Self {
            pipeline,
            server,
            base,
        }
    }

    async fn default() -> Self {
        Self::start(PipelineConfig::synthetic(11), local()).await
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn stop(self) {
        self.server.shutdown().await.unwrap();
        let p = self.pipeline.clone();
        tokio::task::spawn_blocking(move || p.stop()).await.unwrap();
    }
}

fn local() -> ServerConfig {
    ServerConfig {
        bind: "127.0.0.1:0".parse().unwrap(),
        ..ServerConfig::default()
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn streams_lists_both_cameras() {
    let st = Station::default().await;
    let body = reqwest::get(st.url("/streams")).await.unwrap().text().await.unwrap();
    assert_eq!(body, r#"["FPV","BOTTOM"]"#);
    st.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn metrics_schema() {
    let st = Station::default().await;
    tokio::time::sleep(Duration::from_millis(300)).await;
    let v: serde_json::Value = reqwest::get(st.url("/metrics")).await.unwrap().json().await.unwrap();
    for key in ["uptime_s", "window_s", "running", "streams", "clients", "ingest_resyncs"] {
        assert!(v.get(key).is_some(), "missing {key}: {v}");
    }
    let fpv = &v["streams"]["FPV"];
    for key in [
        "capture_fps",
        "composite_fps",
        "detection_fps",
        "e2e_latency_ms",
        "stages",
        "detector_skipped",
        "detector_failed",
        "frames_with_overlay",
        "max_overlay_age_ms",
        "client_dropped",
    ] {
        assert!(fpv.get(key).is_some(), "missing FPV.{key}: {fpv}");
    }
    for stage in ["capture", "detection", "composite"] {
        for k in ["in", "out", "dropped"] {
            assert!(fpv["stages"][stage][k].is_u64(), "{stage}.{k}");
        }
    }
    for k in ["p50", "p95", "max", "samples"] {
        assert!(fpv["e2e_latency_ms"].get(k).is_some());
    }
    assert_eq!(v["window_s"], 10.0);
    st.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn multipart_framing_and_pacing() {
    let st = Station::default().await;
    let resp = reqwest::get(st.url("/stream/FPV")).await.unwrap();
    assert_eq!(resp.status(), 200);
    assert_eq!(
        resp.headers()["content-type"],
        "multipart/x-mixed-replace; boundary=frame"
    );
    let mut body = resp.bytes_stream();
    let mut reader = PartReader::new();
    let mut parts = Vec::new();
    let deadline = Instant::now() + Duration::from_secs(2);
    while Instant::now() < deadline {
        match tokio::time::timeout(deadline - Instant::now(), body.next()).await {
            Ok(Some(chunk)) => {
                reader.push(&chunk.unwrap());
                while let Some(p) = reader.next_part().unwrap() {
                    parts.push(p);
                }
            }
            _ => break,
        }
    }
    assert!(parts.len() >= 55, "only {} parts in 2 s", parts.len());
    for w in parts.windows(2) {
        assert!(w[1].seq > w[0].seq);
    }
    for p in parts.iter().take(3) {
        assert_eq!(p.content_type, "image/jpeg");
        let (w, h, _) = decode_rgb(&p.data).unwrap();
        assert_eq!((w, h), (640, 480));
    }
    drop(body);
    st.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn png_codec_query() {
    let st = Station::default().await;
    let resp = reqwest::get(st.url("/stream/bottom?codec=png&overlay=off")).await.unwrap();
    assert_eq!(resp.status(), 200);
    let mut body = resp.bytes_stream();
    let mut reader = PartReader::new();
    let part = loop {
        reader.push(&body.next().await.unwrap().unwrap());
        if let Some(p) = reader.next_part().unwrap() {
            break p;
        }
    };
    assert_eq!(part.content_type, "image/png");
    assert_eq!(&part.data[1..4], b"PNG");
    drop(body);
    st.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn stream_errors() {
    let mut cfg = PipelineConfig::synthetic(1);
    cfg.streams.retain(|s| s.stream == StreamId::Fpv);
    let st = Station::start(cfg, local()).await;
    let status = |p: &'static str| {
        let url = st.url(p);
        async move { reqwest::get(url).await.unwrap().status().as_u16() }
    };
    assert_eq!(status("/stream/SIDE").await, 404);
    assert_eq!(status("/stream/BOTTOM").await, 404);
    assert_eq!(status("/stream/FPV?codec=gif").await, 400);
    assert_eq!(status("/stream/FPV?overlay=maybe").await, 400);
    assert_eq!(status("/nope").await, 404);
    let streams = reqwest::get(st.url("/streams")).await.unwrap().text().await.unwrap();
    assert_eq!(streams, r#"["FPV"]"#);
    st.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn layout_round_trip_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("layout.json");
    let st = Station::start(
        PipelineConfig::synthetic(2),
        ServerConfig {
            layout_path: Some(path.clone()),
            ..local()
        },
    )
    .await;
    let client = reqwest::Client::new();
    let got: PaneLayout = client.get(st.url("/layout")).send().await.unwrap().json().await.unwrap();
    assert_eq!(got, PaneLayout::default());

    let mut l = PaneLayout::default();
    l.panes[0].x = 0.0;
    l.panes[0].w = 0.5;
    l.panes[1].visible = false;
    let resp = client.put(st.url("/layout")).json(&l).send().await.unwrap();
    assert_eq!(resp.status(), 200);
    let got: PaneLayout = client.get(st.url("/layout")).send().await.unwrap().json().await.unwrap();
    assert_eq!(got, l);
    assert_eq!(aerolink_server::layout_load(&path).unwrap(), l);

    let mut dup = PaneLayout::default();
    dup.panes[1].pane_id = dup.panes[0].pane_id.clone();
    let mut wide = PaneLayout::default();
    wide.panes[0].w = 0.99;
    for bad in [serde_json::to_string(&dup).unwrap(), serde_json::to_string(&wide).unwrap(), "{not json".into()] {
        let resp = client.put(st.url("/layout")).body(bad).send().await.unwrap();
        assert_eq!(resp.status(), 400);
        let err: serde_json::Value = resp.json().await.unwrap();
        assert!(err["error"].as_str().is_some_and(|m| !m.is_empty()));
    }
    // Rejected writes leave the stored layout alone.
    let got: PaneLayout = client.get(st.url("/layout")).send().await.unwrap().json().await.unwrap();
    assert_eq!(got, l);
    st.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn corrupt_layout_file_falls_back() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("layout.json");
    std::fs::write(&path, "[[[").unwrap();
    let st = Station::start(
        PipelineConfig::synthetic(2),
        ServerConfig {
            layout_path: Some(path),
            ..local()
        },
    )
    .await;
    let resp = reqwest::get(st.url("/layout")).await.unwrap();
    assert!(resp.headers().contains_key("x-layout-fallback"));
    let got: PaneLayout = resp.json().await.unwrap();
    assert_eq!(got, PaneLayout::default());
    st.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn meta_ndjson_messages() {
    let st = Station::start(
        PipelineConfig::synthetic(3),
        ServerConfig {
            metrics_interval: Duration::from_millis(200),
            ..local()
        },
    )
    .await;
    let resp = reqwest::get(st.url("/meta")).await.unwrap();
    assert_eq!(resp.headers()["content-type"], "application/x-ndjson");
    let mut body = resp.bytes_stream();
    let mut buf = Vec::new();
    let mut msgs: Vec<serde_json::Value> = Vec::new();
    let deadline = Instant::now() + Duration::from_secs(3);
    while Instant::now() < deadline && msgs.iter().filter(|m| m["kind"] == "METRICS").count() < 3 {
        let chunk = tokio::time::timeout(Duration::from_secs(2), body.next()).await.unwrap().unwrap().unwrap();
        buf.extend_from_slice(&chunk);
        while let Some(i) = buf.iter().position(|&b| b == b'\n') {
            let line: Vec<u8> = buf.drain(..=i).collect();
            msgs.push(serde_json::from_slice(&line).unwrap());
        }
    }
    assert_eq!(msgs[0]["kind"], "METRICS");
    assert!(msgs[0]["payload"]["streams"].is_object());
    let dets: Vec<_> = msgs.iter().filter(|m| m["kind"] == "DETECTIONS").collect();
    assert!(!dets.is_empty());
    for d in &dets {
        assert_eq!(d["payload"]["stream_id"], "FPV");
        assert!(d["payload"]["detections"].is_array());
    }
    for kind in ["METRICS", "DETECTIONS"] {
        let ts: Vec<u64> = msgs.iter().filter(|m| m["kind"] == kind).map(|m| m["ts_ns"].as_u64().unwrap()).collect();
        assert!(ts.windows(2).all(|w| w[0] <= w[1]), "{kind} timestamps not monotone");
    }
    drop(body);
    st.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn meta_websocket_upgrade() {
    let st = Station::default().await;
    let url = format!("ws://{}/meta", st.server.local_addr());
    let (mut ws, _) = tokio_tungstenite::connect_async(url).await.unwrap();
    let first = tokio::time::timeout(Duration::from_secs(2), ws.next()).await.unwrap().unwrap().unwrap();
    let v: serde_json::Value = serde_json::from_str(first.to_text().unwrap()).unwrap();
    assert_eq!(v["kind"], "METRICS");
    drop(ws);
    st.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn console_index_served() {
    let st = Station::default().await;
    let resp = reqwest::get(st.url("/")).await.unwrap();
    assert_eq!(resp.status(), 200);
    assert!(resp.headers()["content-type"].to_str().unwrap().starts_with("text/html"));
    assert!(resp.text().await.unwrap().contains("/layout"));
    st.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn console_dir_assets_and_traversal() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<p>built console</p>").unwrap();
    std::fs::write(dir.path().join("app.js"), "console.log(1)").unwrap();
    let st = Station::start(
        PipelineConfig::synthetic(1),
        ServerConfig {
            console_dir: Some(dir.path().to_path_buf()),
            ..local()
        },
    )
    .await;
    assert_eq!(reqwest::get(st.url("/")).await.unwrap().text().await.unwrap(), "<p>built console</p>");
    let js = reqwest::get(st.url("/app.js")).await.unwrap();
    assert_eq!(js.headers()["content-type"], "text/javascript");
    assert_eq!(reqwest::get(st.url("/../etc/passwd")).await.unwrap().status(), 404);
    st.stop().await;
}

/// A client that stops reading loses parts on its own connection only.
#[tokio::test(flavor = "multi_thread")]
async fn slow_client_drops_are_isolated() {
    let st = Station::start(
        PipelineConfig::synthetic(5),
        ServerConfig {
            send_buffer_bytes: Some(16 * 1024),
            ..local()
        },
    )
    .await;
    let addr = st.server.local_addr();
    let slow = std::thread::spawn(move || {
        let sock = socket2::Socket::new(socket2::Domain::IPV4, socket2::Type::STREAM, None).unwrap();
        sock.set_recv_buffer_size(4096).unwrap();
        sock.connect(&addr.into()).unwrap();
        let mut s: std::net::TcpStream = sock.into();
        s.write_all(b"GET /stream/FPV?codec=png HTTP/1.1\r\nHost: x\r\n\r\n").unwrap();
        let mut b = [0u8; 512];
        let _ = s.read(&mut b);
        // Stall long enough to overflow both kernel buffers and the queue.
        std::thread::sleep(Duration::from_secs(4));
        s
    });
    tokio::time::sleep(Duration::from_millis(4500)).await;
    let m = st.pipeline.metrics_snapshot();
    let fpv = &m.streams[&StreamId::Fpv];
    let client = m.clients.iter().find(|c| c.stream == StreamId::Fpv).expect("client registered");
    assert!(client.dropped > 0, "{client:?}");
    assert_eq!(fpv.client_dropped, client.dropped);
    assert!(fpv.composite_fps > 28.0, "{}", fpv.composite_fps);
    assert_eq!(fpv.stages.composite.dropped_count, 0);
    drop(slow.join().unwrap());
    st.stop().await;
}
