//! Reference external detector speaking the `FDET`/`FRES` protocol.
//!
//! Useful as a template for wrapping a neural model and as a fault-injection
//! tool: answers can be delayed or withheld entirely.

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use super::protocol::{decode_request, encode_response, ProtocolError};
use super::{builtin_detections, DetectorConfig};
use crate::exec::ExecMode;
use crate::model::Detection;

const POLL: Duration = Duration::from_millis(20);

#[derive(Debug, Clone)]
pub enum MockAnswer {
    /// Zero boxes for every request.
    Empty,
    /// The same boxes for every request.
    Fixed(Vec<Detection>),
    /// Run the builtin detector on the received frame.
    Builtin(DetectorConfig),
}

#[derive(Debug, Clone)]
pub struct MockBehavior {
    pub answer: MockAnswer,
    pub delay: Duration,
    /// Read requests but never reply.
    pub stall: bool,
}

impl Default for MockBehavior {
    fn default() -> Self {
        Self {
            answer: MockAnswer::Builtin(DetectorConfig::default()),
            delay: Duration::ZERO,
            stall: false,
        }
    }
}

impl MockBehavior {
    pub fn answering(answer: MockAnswer) -> Self {
        Self {
            answer,
            ..Self::default()
        }
    }

    pub fn delayed(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    pub fn stalled(mut self) -> Self {
        self.stall = true;
        self
    }
}

pub struct MockDetectorServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    served: Arc<AtomicU64>,
    acceptor: Option<JoinHandle<()>>,
}

impl MockDetectorServer {
    pub fn spawn(endpoint: impl ToSocketAddrs, behavior: MockBehavior) -> io::Result<Self> {
        let listener = TcpListener::bind(endpoint)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let served = Arc::new(AtomicU64::new(0));
        let acceptor = {
            let stop = stop.clone();
            let served = served.clone();
            std::thread::Builder::new()
                .name("mock-detector".into())
                .spawn(move || accept_loop(listener, behavior, stop, served))?
        };
        Ok(Self {
            addr,
            stop,
            served,
            acceptor: Some(acceptor),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Requests answered so far, counted just before each reply is sent.
    pub fn served(&self) -> u64 {
        self.served.load(Ordering::Relaxed)
    }

    pub fn shutdown(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }
}

impl Drop for MockDetectorServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn accept_loop(
    listener: TcpListener,
    behavior: MockBehavior,
    stop: Arc<AtomicBool>,
    served: Arc<AtomicU64>,
) {
    let mut workers = Vec::new();
    while !stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, _)) => {
                let behavior = behavior.clone();
                let stop = stop.clone();
                let served = served.clone();
                workers.push(std::thread::spawn(move || {
                    if let Err(e) = serve_connection(stream, &behavior, &stop, &served) {
                        tracing::debug!("mock detector connection ended: {e}");
                    }
                }));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => std::thread::sleep(POLL),
            Err(e) => {
                tracing::warn!("mock detector accept failed: {e}");
                break;
            }
        }
    }
    for w in workers {
        let _ = w.join();
    }
}

fn serve_connection(
    mut stream: TcpStream,
    behavior: &MockBehavior,
    stop: &AtomicBool,
    served: &AtomicU64,
) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(POLL))?;
    let mut buf: Vec<u8> = Vec::new();
    let mut chunk = vec![0u8; 256 * 1024];
    loop {
        if stop.load(Ordering::Relaxed) {
            return Ok(());
        }
        match decode_request(&buf) {
            Ok((id, frame, used)) => {
                buf.drain(..used);
                if behavior.stall {
                    continue;
                }
                if !sleep_unless_stopped(behavior.delay, stop) {
                    return Ok(());
                }
                let detections = match &behavior.answer {
                    MockAnswer::Empty => Vec::new(),
                    MockAnswer::Fixed(d) => d.clone(),
                    MockAnswer::Builtin(cfg) => {
                        builtin_detections(&frame, cfg, ExecMode::Sequential)
                    }
                };
                served.fetch_add(1, Ordering::Relaxed);
                stream.write_all(&encode_response(id, &detections))?;
                continue;
            }
            Err(ProtocolError::Truncated { .. }) => {}
            Err(e) => return Err(io::Error::new(io::ErrorKind::InvalidData, e.to_string())),
        }
        match stream.read(&mut chunk) {
            Ok(0) => return Ok(()),
            Ok(n) => buf.extend_from_slice(&chunk[..n]),
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
            Err(e) => return Err(e),
        }
    }
}

fn sleep_unless_stopped(total: Duration, stop: &AtomicBool) -> bool {
    let deadline = std::time::Instant::now() + total;
    loop {
        if stop.load(Ordering::Relaxed) {
            return false;
        }
        let now = std::time::Instant::now();
        if now >= deadline {
            return true;
        }
        std::thread::sleep((deadline - now).min(POLL));
    }
}
