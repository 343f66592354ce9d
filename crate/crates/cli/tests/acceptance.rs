//! Acceptance suite: one PASS/FAIL line per primary criterion.
//!
//! Runs without the libtest harness so the report is always printed.
//! Criteria run one after another because several of them measure
//! throughput and latency, which concurrent runs would distort.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use aerolink_core::detection::mock::{MockAnswer, MockBehavior, MockDetectorServer};
use aerolink_core::detection::{builtin_detections, DetectorConfig, DetectorKind};
use aerolink_core::model::bbox_iou;
use aerolink_core::pipeline::{run, PipelineConfig, PipelineHandle};
use aerolink_core::rng::SplitMix64;
use aerolink_core::scene::{world_at, CameraView, Renderer, SourceConfig};
use aerolink_core::wire::{encode_frame, FrameDecoder};
use aerolink_core::{BBox, ExecMode, Frame, PixelRect, StreamId};
use aerolink_server::multipart::PartReader;
use aerolink_server::{serve, PaneLayout, ServerConfig, ServerHandle};
use futures::StreamExt;
use serde_json::Value;

const DETECTION_FPS_FLOOR: f64 = 23.46;
const LATENCY_P95_MS: f64 = 50.0;
const FPS_TOLERANCE: f64 = 0.05;

type Outcome = Result<String, String>;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_aerolink"))
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn run_bench(seed: u64, duration_s: f64) -> Result<Value, String> {
    let out = bin()
        .args(["bench", "--seed", &seed.to_string(), "--duration-s", &duration_s.to_string()])
        .args(["--resolution", "640x480", "--fps", "30", "--detector", "builtin"])
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("bench exited {:?}: {}", out.status, String::from_utf8_lossy(&out.stderr))
    })?;
    serde_json::from_slice(&out.stdout).map_err(|e| format!("bench output: {e}"))
}

fn stages_conserved(metrics: &Value) -> Result<usize, String> {
    let mut n = 0;
    for (stream, m) in metrics["streams"].as_object().ok_or("no streams")? {
        for (stage, c) in m["stages"].as_object().ok_or("no stages")? {
            let (i, o, d) = (c["in"].as_u64(), c["out"].as_u64(), c["dropped"].as_u64());
            ensure(i.is_some() && i == o.zip(d).map(|(o, d)| o + d), || {
                format!("{stream}.{stage}: {c}")
            })?;
            n += 1;
        }
    }
    Ok(n)
}

// ---- 1. detection-rate floor ----

fn detection_rate(bench: &Value) -> Outcome {
    let fps = bench["streams"]["FPV"]["detection_fps"].as_f64().ok_or("no FPV.detection_fps")?;
    ensure(fps >= DETECTION_FPS_FLOOR, || format!("detection_fps {fps:.2} < {DETECTION_FPS_FLOOR}"))?;
    Ok(format!("FPV detection_fps {fps:.2} >= {DETECTION_FPS_FLOOR}"))
}

// ---- 2. oracle equivalence ----

/// Independent component scan: union-find over the exact-color mask, each
/// component reported with its first raster pixel, bounding box and area.
fn union_find_components(frame: &Frame, color: [u8; 3]) -> Vec<(usize, PixelRect, u32)> {
    let (w, h) = (frame.width() as usize, frame.height() as usize);
    let on: Vec<bool> = (0..w * h).map(|i| frame.pixel(i % w, i / w) == color).collect();
    let mut parent: Vec<usize> = (0..w * h).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..w * h {
        if !on[i] {
            continue;
        }
        for j in [(i % w > 0).then(|| i - 1), (i >= w).then(|| i - w)].into_iter().flatten() {
            if on[j] {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut comps: BTreeMap<usize, (usize, usize, usize, usize, usize, u32)> = BTreeMap::new();
    for i in (0..w * h).filter(|&i| on[i]) {
        let r = find(&mut parent, i);
        let (x, y) = (i % w, i / w);
        let e = comps.entry(r).or_insert((i, x, x, y, y, 0));
        e.0 = e.0.min(i);
        e.1 = e.1.min(x);
        e.2 = e.2.max(x);
        e.3 = e.3.min(y);
        e.4 = e.4.max(y);
        e.5 += 1;
    }
    let mut out: Vec<_> = comps
        .into_values()
        .map(|(first, x0, x1, y0, y1, area)| {
            let rect = PixelRect {
                x: x0 as u32,
                y: y0 as u32,
                w: (x1 - x0 + 1) as u32,
                h: (y1 - y0 + 1) as u32,
            };
            (first, rect, area)
        })
        .collect();
    out.sort_by_key(|c| c.0);
    out
}

/// Pixels painted by one target, from the camera model alone.
fn painted(view: &CameraView, t: &aerolink_core::scene::Target, rect: PixelRect) -> Vec<(u32, u32)> {
    let mut px = Vec::new();
    for j in rect.y..rect.y + rect.h {
        for i in rect.x..rect.x + rect.w {
            if t.covers(view.world_of_pixel(i, j)) {
                px.push((i, j));
            }
        }
    }
    px
}

fn is_4_connected(px: &[(u32, u32)]) -> bool {
    let set: std::collections::HashSet<_> = px.iter().copied().collect();
    let mut seen = std::collections::HashSet::new();
    let mut stack = vec![px[0]];
    seen.insert(px[0]);
    while let Some((x, y)) = stack.pop() {
        let n = [(x.wrapping_sub(1), y), (x + 1, y), (x, y.wrapping_sub(1)), (x, y + 1)];
        for q in n {
            if set.contains(&q) && seen.insert(q) {
                stack.push(q);
            }
        }
    }
    seen.len() == set.len()
}

fn oracle_equivalence() -> Outcome {
    let det = DetectorConfig::default();
    let (mut separated, mut merged_frames, mut boxes) = (0usize, 0usize, 0usize);
    for k in 0..100u64 {
        let stream = if k % 2 == 0 { StreamId::Fpv } else { StreamId::Bottom };
        // Dense scenes so most frames hold several targets, some touching.
        let cfg = SourceConfig {
            seed: 1000 + k,
            n_targets: 150,
            ..SourceConfig::default()
        };
        let world = world_at(&cfg, k * 17);
        let renderer = Renderer::for_config(&cfg);
        let frame = renderer.render(&world, stream, k, 0);
        let (w, h) = (frame.width(), frame.height());
        let got = builtin_detections(&frame, &det, ExecMode::default());
        let want: Vec<BBox> = union_find_components(&frame, det.target_color)
            .into_iter()
            .filter(|c| c.2 >= det.min_area_px)
            .map(|c| BBox::from_pixels(c.1, w, h))
            .collect();
        let got_boxes: Vec<BBox> = got.iter().map(|d| d.bbox).collect();
        ensure(got_boxes == want, || {
            format!("frame {k}: detector {got_boxes:?} != component scan {want:?}")
        })?;
        boxes += want.len();

        let view = CameraView::new(&world, stream, cfg.resolution, &cfg.scene);
        let truth = renderer.ground_truth(&world, stream);
        let sets: Vec<Vec<(u32, u32)>> = truth
            .iter()
            .map(|v| painted(&view, &world.targets[v.target_index], v.rect))
            .collect();
        let mut owners: BTreeMap<(u32, u32), Vec<usize>> = BTreeMap::new();
        for (idx, s) in sets.iter().enumerate() {
            for p in s {
                owners.entry(*p).or_default().push(idx);
            }
        }
        let mut any_merged = false;
        for (idx, (v, s)) in truth.iter().zip(&sets).enumerate() {
            let touches_other = s.iter().any(|&(x, y)| {
                [(x, y), (x.wrapping_sub(1), y), (x + 1, y), (x, y.wrapping_sub(1)), (x, y + 1)]
                    .iter()
                    .any(|q| owners.get(q).is_some_and(|o| o.iter().any(|&o| o != idx)))
            });
            if touches_other {
                any_merged = true;
                continue;
            }
            if (s.len() as u32) < det.min_area_px || !is_4_connected(s) {
                continue;
            }
            separated += 1;
            let best = got.iter().map(|d| bbox_iou(&d.bbox, &v.bbox)).fold(0.0, f64::max);
            ensure(best == 1.0, || {
                format!("frame {k} target {}: best IoU {best} for {:?}", v.target_index, v.rect)
            })?;
        }
        merged_frames += any_merged as usize;
    }
    ensure(separated > 0 && merged_frames > 0, || {
        format!("degenerate corpus: {separated} separated targets, {merged_frames} merged frames")
    })?;
    Ok(format!(
        "100 frames, {boxes} boxes match the component scan; {separated} separated targets at IoU 1.0; \
         {merged_frames} frames with touching targets"
    ))
}

// ---- 3. determinism ----

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let record = |name: &str| -> Result<Vec<u8>, String> {
        let path = dir.path().join(name);
        let out = bin()
            .args(["record", "--seed", "7", "-n", "100", "-o"])
            .arg(&path)
            .output()
            .map_err(|e| e.to_string())?;
        ensure(out.status.success(), || String::from_utf8_lossy(&out.stderr).into_owned())?;
        std::fs::read(&path).map_err(|e| e.to_string())
    };
    let (a, b) = (record("a.farseq")?, record("b.farseq")?);
    ensure(a == b, || "record outputs differ".into())?;

    let counters = |m: &Value| -> Value {
        let streams: serde_json::Map<String, Value> = m["streams"]
            .as_object()
            .into_iter()
            .flatten()
            .map(|(k, s)| {
                let picked = ["stages", "detector_skipped", "detector_failed", "client_dropped"]
                    .iter()
                    .map(|f| (f.to_string(), s[*f].clone()))
                    .collect();
                (k.clone(), Value::Object(picked))
            })
            .collect();
        serde_json::json!({ "streams": streams, "ingest_resyncs": m["ingest_resyncs"] })
    };
    let (x, y) = (run_bench(7, 2.0)?, run_bench(7, 2.0)?);
    let (cx, cy) = (counters(&x), counters(&y));
    ensure(cx == cy, || format!("bench counters differ:\n{cx}\n{cy}"))?;
    Ok(format!("record files identical ({} bytes); bench counters equal", a.len()))
}

// ---- 4. wire conformance ----

fn wire_conformance() -> Outcome {
    let mut rng = SplitMix64::new(0xFA21);
    let mut frames = Vec::with_capacity(1000);
    for seq in 0..1000u64 {
        let w = 1 + (rng.next_u64() % 48) as u16;
        let h = 1 + (rng.next_u64() % 32) as u16;
        let stream = if rng.next_u64() & 1 == 0 { StreamId::Fpv } else { StreamId::Bottom };
        let payload: Vec<u8> = (0..w as usize * h as usize * 3).map(|_| rng.next_u64() as u8).collect();
        frames.push(Frame::new(stream, seq, rng.next_u64() >> 1, w, h, payload).map_err(|e| e.to_string())?);
    }
    let stream: Vec<u8> = frames.iter().flat_map(encode_frame).collect();

    let mut dec = FrameDecoder::new();
    let mut got = Vec::new();
    let mut at = 0;
    while at < stream.len() {
        let n = 1 + (rng.next_u64() % 4096) as usize;
        let end = (at + n).min(stream.len());
        dec.push(&stream[at..end]);
        at = end;
        while let Some(f) = dec.next_frame() {
            got.push(f);
        }
    }
    ensure(got == frames, || format!("decoded {} of {} frames, or out of order", got.len(), frames.len()))?;
    ensure(dec.resyncs() == 0, || format!("{} resyncs on a clean stream", dec.resyncs()))?;

    let cut = encode_frame(&frames[0]).len() + encode_frame(&frames[1]).len();
    let mut dirty = stream[..cut].to_vec();
    // No 'F', so the garbage can never start a header.
    dirty.extend([0x00, 0xA7, 0x5C]);
    dirty.extend(&stream[cut..]);
    let mut dec = FrameDecoder::new();
    let mut got = Vec::new();
    for chunk in dirty.chunks(997) {
        dec.push(chunk);
        while let Some(f) = dec.next_frame() {
            got.push(f);
        }
    }
    ensure(dec.resyncs() == 1, || format!("{} resyncs for 3 garbage bytes", dec.resyncs()))?;
    ensure(got == frames, || format!("{} of {} frames intact after garbage", got.len(), frames.len()))?;
    Ok("1000 frames at random splits intact and ordered; 3 garbage bytes gave 1 resync".into())
}

// ---- 5. staleness safety ----

fn fps_close(a: f64, b: f64) -> bool {
    b > 0.0 && (a - b).abs() <= FPS_TOLERANCE * b
}

fn staleness_safety() -> Outcome {
    let max_staleness_ms = 200;
    let mut mock = MockDetectorServer::spawn(
        "127.0.0.1:0",
        MockBehavior::answering(MockAnswer::Builtin(DetectorConfig::default()))
            .delayed(Duration::from_millis(500)),
    )
    .map_err(|e| e.to_string())?;
    let mut cfg = PipelineConfig::synthetic(3);
    cfg.detector.kind = DetectorKind::External;
    cfg.detector.endpoint = Some(mock.local_addr().to_string());
    cfg.detector.max_staleness_ms = max_staleness_ms;
    // Enough targets that the detector almost always has boxes to report.
    for s in cfg.sources_mut() {
        s.n_targets = 80;
    }
    cfg.metrics_window_s = 4.0;
    let pipeline = run(cfg).map_err(|e| e.to_string())?;
    let mut rx = pipeline.subscribe_composited();
    let limit = max_staleness_ms * 1_000_000;
    let (mut frames, mut with_boxes, mut worst) = (0u64, 0u64, 0u64);
    let mut violation = None;
    let deadline = Instant::now() + Duration::from_secs(5);
    while Instant::now() < deadline {
        match rx.try_recv() {
            Ok(info) => {
                frames += 1;
                if let Some(o) = info.overlay {
                    with_boxes += 1;
                    let age = info.capture_ts_ns.saturating_sub(o.produced_ts_ns);
                    worst = worst.max(age);
                    if age > limit && violation.is_none() {
                        violation = Some(format!("{} seq {} drawn {age} ns after its result", info.stream, info.seq));
                    }
                }
            }
            Err(tokio::sync::broadcast::error::TryRecvError::Empty) => std::thread::sleep(Duration::from_millis(2)),
            Err(tokio::sync::broadcast::error::TryRecvError::Lagged(n)) => {
                violation.get_or_insert(format!("audit channel lagged by {n}"));
            }
            Err(e) => return Err(e.to_string()),
        }
    }
    let m = pipeline.metrics_snapshot();
    pipeline.stop();
    mock.shutdown();
    if let Some(v) = violation {
        return Err(v);
    }
    ensure(with_boxes > 0, || format!("no overlays drawn in {frames} frames"))?;
    let fpv = &m.streams[&StreamId::Fpv];
    ensure(fps_close(fpv.composite_fps, fpv.capture_fps), || {
        format!("composite_fps {:.2} vs capture_fps {:.2}", fpv.composite_fps, fpv.capture_fps)
    })?;
    Ok(format!(
        "{frames} frames audited, {with_boxes} with boxes, oldest {:.1} ms <= {max_staleness_ms} ms; \
         composite {:.2} fps vs capture {:.2} fps",
        worst as f64 / 1e6,
        fpv.composite_fps,
        fpv.capture_fps
    ))
}

// ---- 6. conservation ----

struct Station {
    pipeline: PipelineHandle,
    server: ServerHandle,
}

impl Station {
    async fn start(config: PipelineConfig, server: ServerConfig) -> Result<Self, String> {
        let pipeline = run(config).map_err(|e| e.to_string())?;
        let server = serve(server, pipeline.clone()).await.map_err(|e| e.to_string())?;
        Ok(Self { pipeline, server })
    }

    fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.server.local_addr())
    }

    async fn stop(self) -> PipelineHandle {
        let _ = self.server.shutdown().await;
        let p = self.pipeline.clone();
        let _ = tokio::task::spawn_blocking(move || p.stop()).await;
        self.pipeline
    }
}

fn loopback(send_buffer: Option<usize>) -> ServerConfig {
    ServerConfig {
        bind: "127.0.0.1:0".parse().unwrap(),
        send_buffer_bytes: send_buffer.or(ServerConfig::default().send_buffer_bytes),
        ..ServerConfig::default()
    }
}

fn conservation(rt: &tokio::runtime::Runtime, bench: &Value) -> Outcome {
    let bench_stages = stages_conserved(bench)?;
    rt.block_on(async {
        let st = Station::start(PipelineConfig::synthetic(5), loopback(Some(16 * 1024))).await?;
        let addr = st.server.local_addr();
        let slow = std::thread::spawn(move || -> std::io::Result<std::net::TcpStream> {
            let sock = socket2::Socket::new(socket2::Domain::IPV4, socket2::Type::STREAM, None)?;
            sock.set_recv_buffer_size(4096)?;
            sock.connect(&addr.into())?;
            let mut s: std::net::TcpStream = sock.into();
            s.write_all(b"GET /stream/FPV?codec=png HTTP/1.1\r\nHost: x\r\n\r\n")?;
            let mut b = [0u8; 512];
            let _ = s.read(&mut b)?;
            // Stalled reader: kernel buffers fill, then the client queue.
            std::thread::sleep(Duration::from_secs(4));
            Ok(s)
        });
        tokio::time::sleep(Duration::from_millis(4500)).await;
        let live = st.pipeline.metrics_snapshot();
        drop(slow.join().map_err(|_| "slow client panicked")?);
        let pipeline = st.stop().await;
        let after = pipeline.metrics_snapshot();
        for (stream, m) in &after.streams {
            for (stage, c) in m.stages.all() {
                ensure(c.is_conserved(), || format!("{stream}.{stage} after stop: {c:?}"))?;
            }
        }
        let client = live
            .clients
            .iter()
            .find(|c| c.stream == StreamId::Fpv)
            .ok_or("slow client not registered")?;
        let fpv = &live.streams[&StreamId::Fpv];
        ensure(client.dropped > 0, || format!("slow client saw no drops: {client:?}"))?;
        ensure(fpv.stages.composite.dropped_count == 0 && fpv.stages.capture.dropped_count == 0, || {
            format!("server-side drops with a slow client: {:?}", fpv.stages)
        })?;
        ensure(fps_close(fpv.composite_fps, fpv.capture_fps), || {
            format!("composite_fps {:.2} vs capture_fps {:.2}", fpv.composite_fps, fpv.capture_fps)
        })?;
        Ok(format!(
            "in = out + dropped for {bench_stages} bench stages and all stages after stop; slow client dropped {} \
             while composite ran {:.2} fps with 0 server drops",
            client.dropped, fpv.composite_fps
        ))
    })
}

// ---- 7. latency ----

fn latency(rt: &tokio::runtime::Runtime) -> Outcome {
    rt.block_on(async {
        let mut cfg = PipelineConfig::synthetic(9);
        cfg.metrics_window_s = 5.0;
        let st = Station::start(cfg, loopback(None)).await?;
        let resp = reqwest::get(st.url("/stream/FPV")).await.map_err(|e| e.to_string())?;
        let mut body = resp.bytes_stream();
        let mut reader = PartReader::new();
        let mut parts = 0;
        let deadline = Instant::now() + Duration::from_secs(6);
        while let Ok(Some(Ok(chunk))) = tokio::time::timeout_at(deadline.into(), body.next()).await {
            reader.push(&chunk);
            while let Ok(Some(_)) = reader.next_part() {
                parts += 1;
            }
        }
        let m = st.pipeline.metrics_snapshot();
        drop(body);
        st.stop().await;
        let mut worst = 0.0f64;
        for (stream, s) in &m.streams {
            let l = &s.e2e_latency_ms;
            ensure(l.samples > 0, || format!("{stream}: no latency samples"))?;
            ensure(l.p95 < LATENCY_P95_MS, || format!("{stream}: e2e p95 {:.2} ms >= {LATENCY_P95_MS}", l.p95))?;
            worst = worst.max(l.p95);
        }
        Ok(format!("e2e p95 {worst:.2} ms < {LATENCY_P95_MS} ms at 640x480; {parts} parts received over loopback"))
    })
}

// ---- 8. HTTP contract ----

fn http_contract(rt: &tokio::runtime::Runtime) -> Outcome {
    rt.block_on(async {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let server = ServerConfig {
            layout_path: Some(dir.path().join("layout.json")),
            ..loopback(None)
        };
        let st = Station::start(PipelineConfig::synthetic(4), server).await?;
        let result = http_checks(&st, &dir.path().join("layout.json")).await;
        st.stop().await;
        result
    })
}

async fn http_checks(st: &Station, layout_path: &Path) -> Outcome {
    let client = reqwest::Client::new();
    let get = |p: &str| client.get(st.url(p)).send();
    let text = |r: reqwest::Response| async move { r.text().await.map_err(|e| e.to_string()) };

    let streams = text(get("/streams").await.map_err(|e| e.to_string())?).await?;
    ensure(streams == r#"["FPV","BOTTOM"]"#, || format!("/streams = {streams}"))?;

    let mut layout = PaneLayout::default();
    layout.panes[0].x = 0.0;
    layout.panes[0].w = 0.6;
    layout.panes[1].overlay_enabled = true;
    let body = serde_json::to_vec(&layout).map_err(|e| e.to_string())?;
    let put = client
        .put(st.url("/layout"))
        .header("content-type", "application/json")
        .body(body)
        .send()
        .await
        .map_err(|e| e.to_string())?;
    ensure(put.status() == 200, || format!("PUT /layout -> {}", put.status()))?;
    let back: PaneLayout = serde_json::from_str(&text(get("/layout").await.map_err(|e| e.to_string())?).await?)
        .map_err(|e| e.to_string())?;
    ensure(back == layout, || format!("/layout round trip: {back:?}"))?;
    let stored = aerolink_server::layout_load(layout_path).map_err(|e| e.to_string())?;
    ensure(stored == layout, || "layout file differs from PUT body".into())?;

    tokio::time::sleep(Duration::from_millis(300)).await;
    let metrics: Value = serde_json::from_str(&text(get("/metrics").await.map_err(|e| e.to_string())?).await?)
        .map_err(|e| e.to_string())?;
    for key in ["uptime_s", "window_s", "running", "streams", "clients", "ingest_resyncs"] {
        ensure(metrics.get(key).is_some(), || format!("/metrics lacks {key}"))?;
    }
    for s in ["FPV", "BOTTOM"] {
        let m = &metrics["streams"][s];
        for key in ["capture_fps", "composite_fps", "detection_fps", "detector_skipped", "client_dropped"] {
            ensure(m[key].is_number(), || format!("/metrics {s}.{key} = {}", m[key]))?;
        }
        for k in ["p50", "p95", "max", "samples"] {
            ensure(m["e2e_latency_ms"][k].is_number(), || format!("{s}.e2e_latency_ms.{k}"))?;
        }
        for stage in ["capture", "detection", "composite"] {
            for k in ["in", "out", "dropped"] {
                ensure(m["stages"][stage][k].is_u64(), || format!("{s}.stages.{stage}.{k}"))?;
            }
        }
    }

    let resp = get("/stream/FPV").await.map_err(|e| e.to_string())?;
    let ct = resp.headers().get("content-type").and_then(|v| v.to_str().ok()).unwrap_or("").to_owned();
    ensure(ct == "multipart/x-mixed-replace; boundary=frame", || format!("content-type {ct}"))?;
    let mut body = resp.bytes_stream();
    let mut raw = Vec::new();
    let mut reader = PartReader::new();
    let mut parts = Vec::new();
    while parts.len() < 3 {
        let chunk = tokio::time::timeout(Duration::from_secs(2), body.next())
            .await
            .map_err(|_| "stream stalled")?
            .ok_or("stream ended")?
            .map_err(|e| e.to_string())?;
        raw.extend_from_slice(&chunk);
        reader.push(&chunk);
        while let Some(p) = reader.next_part().map_err(|e| e.to_string())? {
            parts.push(p);
        }
    }
    let head = format!(
        "--frame\r\nContent-Type: image/jpeg\r\nContent-Length: {}\r\nX-Frame-Seq: {}\r\nX-Capture-Ts-Ns: {}\r\n\r\n",
        parts[0].data.len(),
        parts[0].seq,
        parts[0].capture_ts_ns
    );
    ensure(raw.starts_with(head.as_bytes()), || {
        format!("first part head: {:?}", String::from_utf8_lossy(&raw[..head.len().min(raw.len())]))
    })?;
    let next = head.len() + parts[0].data.len();
    ensure(raw[next..].starts_with(b"\r\n--frame\r\n"), || "part not followed by CRLF boundary".into())?;
    ensure(parts.windows(2).all(|w| w[1].seq > w[0].seq), || "part seqs not increasing".into())?;
    Ok("/streams, /layout round trip, /metrics schema and multipart framing match".into())
}

fn main() -> std::process::ExitCode {
    if std::env::args().any(|a| a == "--list") {
        return std::process::ExitCode::SUCCESS;
    }
    let rt = tokio::runtime::Runtime::new().unwrap();
    let mut failed = Vec::new();
    let mut report = |name: &str, outcome: Outcome| match outcome {
        Ok(detail) => println!("PASS {name}: {detail}"),
        Err(why) => {
            println!("FAIL {name}: {why}");
            failed.push(name.to_owned());
        }
    };

    let bench = run_bench(7, 10.0);
    report("detection-rate floor", bench.as_ref().map_err(Clone::clone).and_then(detection_rate));
    report("oracle equivalence", oracle_equivalence());
    report("determinism", determinism());
    report("wire conformance", wire_conformance());
    report("staleness safety", staleness_safety());
    report(
        "conservation",
        bench.as_ref().map_err(Clone::clone).and_then(|b| conservation(&rt, b)),
    );
    report("latency", latency(&rt));
    report("http contract", http_contract(&rt));

    if failed.is_empty() {
        println!("acceptance: all criteria passed");
        std::process::ExitCode::SUCCESS
    } else {
        println!("acceptance: failed {failed:?}");
        std::process::ExitCode::FAILURE
    }
}
