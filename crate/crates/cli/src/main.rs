//! `aerolink`: ground station, on-board simulator, benchmark, recorder and
//! player in one binary.
//!
//! Exit status: 0 success, 1 usage error, 2 runtime failure.

use std::io::Write as _;
use std::net::{SocketAddr, TcpStream};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use aerolink_core::detection::mock::{MockAnswer, MockBehavior, MockDetectorServer};
use aerolink_core::detection::{DetectorConfig, DetectorKind};
use aerolink_core::pipeline::{run as run_pipeline, PipelineConfig, PipelineHandle, StreamConfig};
use aerolink_core::scene::{
    play_sequence, record_sequence, FrameSource, Resolution, SourceMode, SyntheticSource,
};
use aerolink_core::wire::encode_frame;
use aerolink_core::StreamId;
use aerolink_server::{serve, ServerConfig};
use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

#[derive(Parser, Debug)]
#[command(name = "aerolink", version, about = "UAV ground-station video pipeline")]
#[command(propagate_version = true, arg_required_else_help = true)]
struct Cli {
    #[command(flatten)]
    shared: Shared,
    #[command(subcommand)]
    command: Command,
}

/// Flags accepted by every command; they override the config file.
#[derive(Args, Debug, Clone)]
struct Shared {
    /// Pipeline configuration JSON.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// HTTP port.
    #[arg(long, global = true, env = "FLIGHTAR_PORT", default_value_t = 8080)]
    port: u16,
    /// Interface to serve on.
    #[arg(long, global = true, default_value = "0.0.0.0")]
    host: String,
    /// Scene seed for both streams [default: 0].
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run time in seconds; `bench` defaults to 10, other commands run until interrupted.
    #[arg(long = "duration-s", global = true, value_name = "SECONDS")]
    duration_s: Option<f64>,
    /// Frame size as WxH [default: 640x480].
    #[arg(long, global = true, value_name = "WxH")]
    resolution: Option<Resolution>,
    /// Source frame rate [default: 30].
    #[arg(long, global = true)]
    fps: Option<f64>,
    /// Detector implementation [default: builtin].
    #[arg(long, global = true, value_enum)]
    detector: Option<DetectorArg>,
    /// host:port of an external detector.
    #[arg(long = "external-endpoint", global = true, value_name = "ADDR")]
    external_endpoint: Option<String>,
    /// Extra latency added to every inference (fault injection) [default: 0].
    #[arg(long = "detector-delay-ms", global = true, value_name = "MS")]
    detector_delay_ms: Option<u64>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum DetectorArg {
    Builtin,
    External,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum StreamArg {
    #[value(name = "FPV", alias = "fpv")]
    Fpv,
    #[value(name = "BOTTOM", alias = "bottom")]
    Bottom,
}

impl From<StreamArg> for StreamId {
    fn from(s: StreamArg) -> Self {
        match s {
            StreamArg::Fpv => StreamId::Fpv,
            StreamArg::Bottom => StreamId::Bottom,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum AnswerArg {
    Builtin,
    Empty,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Full ground station: pipeline plus HTTP server.
    Run(ServeArgs),
    /// On-board side: render both streams and send them as FAR1 frames.
    Simulate {
        /// Ground-station ingest address.
        #[arg(long, value_name = "ADDR")]
        target: String,
    },
    /// Headless pipeline; prints one PipelineMetrics JSON document.
    Bench,
    /// Render one stream of the scene to a sequence file.
    Record {
        /// Number of frames.
        #[arg(short = 'n', long = "frames", default_value_t = 100)]
        frames: u64,
        #[arg(long, value_enum, default_value = "FPV")]
        stream: StreamArg,
        /// Output file [default: <stream>-seed<seed>.farseq].
        #[arg(short, long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Use a sequence file as the source.
    Play {
        #[arg(value_name = "PATH")]
        path: PathBuf,
        /// Print one JSON line per frame instead of serving.
        #[arg(long)]
        headless: bool,
        #[command(flatten)]
        serve: ServeArgs,
    },
    /// Reference external detector speaking FDET/FRES.
    MockDetector {
        #[arg(long, default_value = "127.0.0.1:9400", value_name = "ADDR")]
        listen: String,
        /// Delay before each reply.
        #[arg(long = "delay-ms", default_value_t = 0)]
        delay_ms: u64,
        #[arg(long, value_enum, default_value = "builtin")]
        answer: AnswerArg,
    },
}

#[derive(Args, Debug, Clone, Default)]
struct ServeArgs {
    /// Receive both streams over FAR1 at this address instead of rendering them.
    #[arg(long, value_name = "ADDR")]
    ingest: Option<String>,
    /// Where the pane layout is persisted.
    #[arg(long = "layout-file", default_value = "aerolink-layout.json", value_name = "PATH")]
    layout_file: PathBuf,
    /// Serve a built operator console from this directory.
    #[arg(long = "console-dir", value_name = "DIR")]
    console_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    ExitCode::SUCCESS
                }
                _ => {
                    let _ = e.print();
                    ExitCode::from(1)
                }
            };
        }
    };
    let quiet = matches!(cli.command, Command::Bench | Command::Record { .. })
        || matches!(cli.command, Command::Play { headless: true, .. });
    init_logging(if quiet { "warn" } else { "info" });
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn init_logging(default: &str) {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
}

fn dispatch(cli: Cli) -> Result<()> {
    let shared = cli.shared;
    match cli.command {
        Command::Run(args) => {
            let mut config = pipeline_config(&shared)?;
            if let Some(addr) = &args.ingest {
                for s in &mut config.streams {
                    s.source.mode = SourceMode::Network;
                    s.source.endpoint = Some(addr.clone());
                }
            }
            serve_until_done(&shared, &args, config)
        }
        Command::Simulate { target } => simulate(&shared, &target),
        Command::Bench => bench(&shared),
        Command::Record {
            frames,
            stream,
            out,
        } => record(&shared, frames, stream.into(), out),
        Command::Play {
            path,
            headless,
            serve,
        } => {
            if headless {
                play_headless(&shared, &path)
            } else {
                play_served(&shared, &serve, &path)
            }
        }
        Command::MockDetector {
            listen,
            delay_ms,
            answer,
        } => mock_detector(&shared, &listen, delay_ms, answer),
    }
}

/// Config file (or the synthetic default), then flags on top.
fn pipeline_config(shared: &Shared) -> Result<PipelineConfig> {
    let mut c = match &shared.config {
        Some(path) => {
            let text = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_slice::<PipelineConfig>(&text)
                .with_context(|| format!("parsing {}", path.display()))?
        }
        None => PipelineConfig::synthetic(0),
    };
    for s in c.sources_mut() {
        if let Some(seed) = shared.seed {
            s.seed = seed;
        }
        if let Some(r) = shared.resolution {
            s.resolution = r;
        }
        if let Some(fps) = shared.fps {
            s.frame_rate_hz = fps;
        }
    }
    apply_detector_flags(shared, &mut c.detector);
    c.validate()?;
    Ok(c)
}

fn apply_detector_flags(shared: &Shared, d: &mut DetectorConfig) {
    if let Some(kind) = shared.detector {
        d.kind = match kind {
            DetectorArg::Builtin => DetectorKind::BuiltinCc,
            DetectorArg::External => DetectorKind::External,
        };
    }
    if let Some(ep) = &shared.external_endpoint {
        d.endpoint = Some(ep.clone());
    }
    if let Some(ms) = shared.detector_delay_ms {
        d.artificial_delay_ms = ms;
    }
}

/// Raised by Ctrl-C.
fn interrupt_flag() -> Arc<AtomicBool> {
    let flag = Arc::new(AtomicBool::new(false));
    let f = flag.clone();
    if let Err(e) = ctrlc::set_handler(move || f.store(true, Ordering::SeqCst)) {
        tracing::warn!("no Ctrl-C handler: {e}");
    }
    flag
}

/// Sleeps until `duration` has passed or `flag` is raised.
fn wait(duration: Option<f64>, flag: &AtomicBool) {
    let deadline = duration.map(|s| Instant::now() + Duration::from_secs_f64(s.max(0.0)));
    while !flag.load(Ordering::SeqCst) && deadline.is_none_or(|d| Instant::now() < d) {
        std::thread::sleep(Duration::from_millis(20));
    }
}

fn serve_until_done(shared: &Shared, args: &ServeArgs, config: PipelineConfig) -> Result<()> {
    let interrupted = interrupt_flag();
    let pipeline = run_pipeline(config)?;
    for s in pipeline.streams() {
        if let Some(addr) = pipeline.ingest_addr(s) {
            tracing::info!("{s} ingest listening on {addr}");
        }
    }
    let bind: SocketAddr = format!("{}:{}", shared.host, shared.port)
        .parse()
        .with_context(|| format!("bad bind address {}:{}", shared.host, shared.port))?;
    let server_config = ServerConfig {
        bind,
        layout_path: Some(args.layout_file.clone()),
        console_dir: args.console_dir.clone(),
        ..ServerConfig::default()
    };
    let rt = tokio::runtime::Runtime::new().context("starting the async runtime")?;
    let served = rt.block_on(async {
        let server = serve(server_config, pipeline.clone()).await?;
        println!("serving on http://{}", server.local_addr());
        let _ = std::io::stdout().flush();
        let (d, flag) = (shared.duration_s, interrupted.clone());
        tokio::task::spawn_blocking(move || wait(d, &flag)).await?;
        server.shutdown().await?;
        anyhow::Ok(())
    });
    stop_within_budget(&pipeline);
    served
}

fn stop_within_budget(pipeline: &PipelineHandle) {
    let t0 = Instant::now();
    pipeline.stop();
    if t0.elapsed() > Duration::from_secs(1) {
        tracing::warn!("shutdown took {:?}", t0.elapsed());
    }
}

fn bench(shared: &Shared) -> Result<()> {
    let mut config = pipeline_config(shared)?;
    let duration = shared.duration_s.unwrap_or(10.0);
    if !(duration.is_finite() && duration >= 0.0) {
        bail!("--duration-s must be >= 0");
    }
    // Fixed frame budgets make counters reproducible run to run.
    for s in config.sources_mut() {
        if s.mode == SourceMode::Synthetic {
            s.max_frames = Some((duration * s.frame_rate_hz).round() as u64);
        }
    }
    let interrupted = interrupt_flag();
    let pipeline = run_pipeline(config)?;
    let deadline = Instant::now() + Duration::from_secs_f64(duration + 5.0);
    while !pipeline.wait_sources_done(Duration::from_millis(50)) {
        if interrupted.load(Ordering::SeqCst) || Instant::now() >= deadline {
            break;
        }
    }
    pipeline.stop();
    let metrics = pipeline.metrics_snapshot();
    println!("{}", serde_json::to_string(&metrics)?);
    Ok(())
}

fn record(shared: &Shared, frames: u64, stream: StreamId, out: Option<PathBuf>) -> Result<()> {
    let config = pipeline_config(shared)?;
    let source = config
        .stream(stream)
        .map(|s| s.source.clone())
        .unwrap_or_else(|| config.streams[0].source.clone());
    let out = out.unwrap_or_else(|| PathBuf::from(format!("{stream}-seed{}.farseq", source.seed)));
    record_sequence(&source, stream, frames, &out)
        .with_context(|| format!("recording to {}", out.display()))?;
    eprintln!("wrote {frames} {stream} frames to {}", out.display());
    Ok(())
}

#[derive(serde::Serialize)]
struct FrameLine {
    stream: StreamId,
    seq: u64,
    capture_ts_ns: u64,
    width: u16,
    height: u16,
    sha256: String,
}

fn play_headless(shared: &Shared, path: &PathBuf) -> Result<()> {
    let fps = shared.fps.unwrap_or(30.0);
    let mut player = play_sequence(path, fps).with_context(|| format!("opening {}", path.display()))?;
    let interrupted = interrupt_flag();
    let mut stdout = std::io::stdout().lock();
    while let Some(frame) = player.next_frame(&interrupted)? {
        let line = FrameLine {
            stream: frame.stream_id(),
            seq: frame.seq(),
            capture_ts_ns: frame.capture_ts_ns(),
            width: frame.width(),
            height: frame.height(),
            sha256: hex::encode(Sha256::digest(frame.payload())),
        };
        writeln!(stdout, "{}", serde_json::to_string(&line)?)?;
    }
    Ok(())
}

fn play_served(shared: &Shared, args: &ServeArgs, path: &PathBuf) -> Result<()> {
    let base = pipeline_config(shared)?;
    let player = play_sequence(path, 1.0).with_context(|| format!("opening {}", path.display()))?;
    let stream = player.stream_id();
    drop(player);
    let mut source = base
        .stream(stream)
        .map(|s| s.source.clone())
        .unwrap_or_default();
    source.mode = SourceMode::File;
    source.path = Some(path.display().to_string());
    let config = PipelineConfig {
        streams: vec![StreamConfig {
            stream,
            source,
            detect: base.stream(stream).is_none_or(|s| s.detect),
        }],
        ..base
    };
    serve_until_done(shared, args, config)
}

fn simulate(shared: &Shared, target: &str) -> Result<()> {
    let mut config = pipeline_config(shared)?;
    if let Some(d) = shared.duration_s {
        for s in config.sources_mut() {
            s.max_frames = Some((d * s.frame_rate_hz).round() as u64);
        }
    }
    let conn = TcpStream::connect(target).with_context(|| format!("connecting to {target}"))?;
    conn.set_nodelay(true)?;
    let conn = Arc::new(Mutex::new(conn));
    let stop = interrupt_flag();
    let mut workers = Vec::new();
    for s in &config.streams {
        let mut source = SyntheticSource::new(s.stream, &s.source)?;
        let (conn, stop) = (conn.clone(), stop.clone());
        workers.push(std::thread::spawn(move || -> Result<u64> {
            let mut sent = 0;
            while let Some(frame) = source.next_frame(&stop)? {
                let bytes = encode_frame(&frame);
                let mut c = conn.lock().unwrap_or_else(|e| e.into_inner());
                if let Err(e) = c.write_all(&bytes) {
                    stop.store(true, Ordering::SeqCst);
                    return Err(e).context("ground station connection lost");
                }
                sent += 1;
            }
            Ok(sent)
        }));
    }
    let mut total = 0;
    for w in workers {
        total += w.join().expect("sender thread panicked")?;
    }
    tracing::info!("sent {total} frames to {target}");
    Ok(())
}

fn mock_detector(shared: &Shared, listen: &str, delay_ms: u64, answer: AnswerArg) -> Result<()> {
    let mut cfg = DetectorConfig::default();
    apply_detector_flags(shared, &mut cfg);
    let answer = match answer {
        AnswerArg::Builtin => MockAnswer::Builtin(cfg),
        AnswerArg::Empty => MockAnswer::Empty,
    };
    let behavior = MockBehavior::answering(answer).delayed(Duration::from_millis(delay_ms));
    let mut server = MockDetectorServer::spawn(listen, behavior).with_context(|| format!("listening on {listen}"))?;
    println!("mock detector on {}", server.local_addr());
    let _ = std::io::stdout().flush();
    let interrupted = interrupt_flag();
    wait(shared.duration_s, &interrupted);
    server.shutdown();
    Ok(())
}
