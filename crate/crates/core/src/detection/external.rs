//! Client side of the external detector protocol.

use std::io::{self, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use super::protocol::{decode_response, encode_request, ProtocolError};
use super::{DetectError, Detector};
use crate::clock::mono_now_ns;
use crate::model::{DetectionResult, Frame};

const POLL: Duration = Duration::from_millis(20);

/// Keeps one connection open and reconnects after any failure; a request
/// that times out poisons the connection, since its late reply would be
/// read as the answer to the next one.
pub struct ExternalDetector {
    endpoint: String,
    timeout: Duration,
    conn: Option<TcpStream>,
    next_id: u64,
    cancel: Arc<AtomicBool>,
    buf: Vec<u8>,
}

impl ExternalDetector {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        Self {
            endpoint: endpoint.into(),
            timeout,
            conn: None,
            next_id: 0,
            cancel: Arc::default(),
            buf: Vec::new(),
        }
    }

    pub fn with_cancel(mut self, cancel: Arc<AtomicBool>) -> Self {
        self.cancel = cancel;
        self
    }

    fn connect(&mut self) -> Result<&mut TcpStream, DetectError> {
        if self.conn.is_none() {
            let addr = self
                .endpoint
                .to_socket_addrs()
                .map_err(DetectError::Unreachable)?
                .next()
                .ok_or_else(|| {
                    DetectError::Unreachable(io::Error::new(
                        io::ErrorKind::NotFound,
                        format!("cannot resolve {}", self.endpoint),
                    ))
                })?;
            let s = TcpStream::connect_timeout(&addr, self.timeout).map_err(DetectError::Unreachable)?;
            s.set_nodelay(true).map_err(DetectError::Unreachable)?;
            s.set_read_timeout(Some(POLL)).map_err(DetectError::Unreachable)?;
            s.set_write_timeout(Some(self.timeout)).map_err(DetectError::Unreachable)?;
            self.conn = Some(s);
        }
        Ok(self.conn.as_mut().expect("just connected"))
    }

    fn round_trip(&mut self, frame: &Frame) -> Result<DetectionResult, DetectError> {
        let id = self.next_id;
        self.next_id += 1;
        let request = encode_request(id, frame);
        let t0 = Instant::now();
        let timeout = self.timeout;
        let cancel = self.cancel.clone();

        let conn = self.connect()?;
        conn.write_all(&request).map_err(|e| match e.kind() {
            io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => DetectError::Timeout(timeout),
            _ => DetectError::Unreachable(e),
        })?;

        self.buf.clear();
        let mut chunk = [0u8; 4096];
        loop {
            match decode_response(&self.buf) {
                Ok((rid, detections, _)) => {
                    if rid != id {
                        return Err(DetectError::MalformedResponse(format!(
                            "response id {rid} for request {id}"
                        )));
                    }
                    let latency = t0.elapsed().as_nanos() as u64;
                    return Ok(DetectionResult {
                        stream_id: frame.stream_id(),
                        source_seq: frame.seq(),
                        produced_ts_ns: mono_now_ns().max(frame.capture_ts_ns()),
                        inference_latency_ns: latency,
                        detections,
                    });
                }
                Err(ProtocolError::Truncated { .. }) => {}
                Err(e) => return Err(DetectError::MalformedResponse(e.to_string())),
            }
            if cancel.load(Ordering::Relaxed) {
                return Err(DetectError::Cancelled);
            }
            if t0.elapsed() >= timeout {
                return Err(DetectError::Timeout(timeout));
            }
            let conn = self.conn.as_mut().expect("connected");
            match conn.read(&mut chunk) {
                Ok(0) => {
                    return Err(DetectError::Unreachable(io::Error::new(
                        io::ErrorKind::UnexpectedEof,
                        "detector closed the connection",
                    )))
                }
                Ok(n) => self.buf.extend_from_slice(&chunk[..n]),
                Err(e)
                    if matches!(
                        e.kind(),
                        io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut | io::ErrorKind::Interrupted
                    ) => {}
                Err(e) => return Err(DetectError::Unreachable(e)),
            }
        }
    }
}

impl Detector for ExternalDetector {
    fn detect(&mut self, frame: &Frame) -> Result<DetectionResult, DetectError> {
        let res = self.round_trip(frame);
        if res.is_err() {
            self.conn = None;
        }
        res
    }
}
