//! Network ingest: a byte-stream listener that decodes concatenated `FAR1`
//! messages, resynchronizing past garbage.

use std::io::{self, Read};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use crate::model::Frame;
use crate::wire::FrameDecoder;

const POLL: Duration = Duration::from_millis(25);
const READ_CHUNK: usize = 256 * 1024;

pub struct IngestListener {
    listener: TcpListener,
    resyncs: Arc<AtomicU64>,
}

pub fn ingest_listen(endpoint: impl ToSocketAddrs) -> io::Result<IngestListener> {
    IngestListener::bind(endpoint)
}

impl IngestListener {
    pub fn bind(endpoint: impl ToSocketAddrs) -> io::Result<Self> {
        Ok(Self {
            listener: TcpListener::bind(endpoint)?,
            resyncs: Arc::default(),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Total resyncs across every connection accepted by this listener.
    pub fn resync_counter(&self) -> Arc<AtomicU64> {
        self.resyncs.clone()
    }

    /// Blocks for one connection.
    pub fn accept(&self) -> io::Result<IngestConnection> {
        let (stream, _) = self.listener.accept()?;
        IngestConnection::new(stream, self.resyncs.clone())
    }

    /// Like [`accept`](Self::accept) but gives up when `stop` is raised.
    pub fn accept_until(&self, stop: &AtomicBool) -> io::Result<Option<IngestConnection>> {
        self.listener.set_nonblocking(true)?;
        let res = loop {
            if stop.load(Ordering::Relaxed) {
                break Ok(None);
            }
            match self.listener.accept() {
                Ok((stream, _)) => {
                    stream.set_nonblocking(false)?;
                    break IngestConnection::new(stream, self.resyncs.clone()).map(Some);
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => std::thread::sleep(POLL),
                Err(e) => break Err(e),
            }
        };
        self.listener.set_nonblocking(false)?;
        res
    }
}

/// One accepted connection, iterated as a sequence of frames. Ends on EOF
/// or on any read error.
pub struct IngestConnection {
    stream: TcpStream,
    decoder: FrameDecoder,
    counted: u64,
    resyncs: Arc<AtomicU64>,
    buf: Vec<u8>,
    closed: bool,
}

impl IngestConnection {
    fn new(stream: TcpStream, resyncs: Arc<AtomicU64>) -> io::Result<Self> {
        stream.set_nodelay(true)?;
        Ok(Self {
            stream,
            decoder: FrameDecoder::new(),
            counted: 0,
            resyncs,
            buf: vec![0; READ_CHUNK],
            closed: false,
        })
    }

    /// Resyncs on this connection only.
    pub fn resyncs(&self) -> u64 {
        self.decoder.resyncs()
    }

    /// Next frame, or `None` on end of stream or when `stop` is raised.
    pub fn next_frame_until(&mut self, stop: &AtomicBool) -> Option<Frame> {
        let _ = self.stream.set_read_timeout(Some(POLL));
        loop {
            if let Some(f) = self.decoder.next_frame() {
                self.sync_resyncs();
                return Some(f);
            }
            self.sync_resyncs();
            if self.closed || stop.load(Ordering::Relaxed) {
                return None;
            }
            match self.stream.read(&mut self.buf) {
                Ok(0) => self.closed = true,
                Ok(n) => self.decoder.push(&self.buf[..n]),
                Err(e)
                    if matches!(
                        e.kind(),
                        io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut | io::ErrorKind::Interrupted
                    ) => {}
                Err(e) => {
                    tracing::debug!("ingest connection lost: {e}");
                    self.closed = true;
                }
            }
        }
    }

    fn sync_resyncs(&mut self) {
        let now = self.decoder.resyncs();
        if now > self.counted {
            self.resyncs.fetch_add(now - self.counted, Ordering::Relaxed);
            self.counted = now;
        }
    }
}

impl Iterator for IngestConnection {
    type Item = Frame;

    fn next(&mut self) -> Option<Frame> {
        let never = AtomicBool::new(false);
        self.next_frame_until(&never)
    }
}
